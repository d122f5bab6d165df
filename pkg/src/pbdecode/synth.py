"""Seeded generator for desk-scale phrase tables, lexRO files, LMs and corpora."""

from __future__ import annotations

import math
import os
import random
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .features import WeightVector


@dataclass
class SyntheticSpec:
    seed: int = 0
    n_sentences: int = 1000
    mean_length: float = 7.3
    min_length: int = 1
    max_length: int = 40
    source_vocab: int = 2000
    target_vocab: int = 2000
    zipf_exponent: float = 1.1
    rules_per_phrase: tuple[int, int] = (2, 6)
    max_target_length: int = 3
    max_phrase_length: int = 3
    # share of distinct corpus n-grams (n >= 2) that receive rules
    multiword_rate: float = 0.3
    oov_rate: float = 0.0
    lexro_coverage: float = 1.0
    lm_order: int = 3
    bigrams_per_word: int = 6
    trigrams_per_bigram: float = 0.5


@dataclass
class SyntheticData:
    phrase_table: list[str]
    lexro: list[str]
    counts: list[str]
    arpa: list[str]
    corpus: list[str]
    weights: str

    def write(self, out_dir) -> dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = {}
        for name, fname in (("phrase_table", "phrase-table.txt"), ("lexro", "lexro.txt"),
                            ("counts", "counts.txt"), ("arpa", "lm.arpa"), ("corpus", "corpus.txt")):
            path = os.path.join(out_dir, fname)
            with open(path, "w", encoding="utf-8") as f:
                lines = getattr(self, name)
                f.write("\n".join(lines) + ("\n" if lines else ""))
            paths[name] = path
        path = os.path.join(out_dir, "weights.ini")
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.weights)
        paths["weights"] = path
        return paths


DEFAULT_WEIGHTS = WeightVector((
    0.3,    # distortion
    -0.2,   # phrase penalty
    -0.3,   # word penalty
    -5.0,   # unknown word penalty
    1.0,    # LM (log10)
    0.2, 0.2, 0.2, 0.2,
    0.1, 0.1, 0.1, 0.1, 0.1, 0.1,
))


def _zipf_probs(n: int, s: float) -> np.ndarray:
    p = 1.0 / np.arange(1, n + 1) ** s
    return p / p.sum()


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _dist(r: random.Random, k: int) -> list[float]:
    # flat Dirichlet, kept well away from zero
    g = [r.expovariate(1.0) for _ in range(k)]
    t = sum(g)
    d = [x / t * 0.94 + 0.02 for x in g]
    t = sum(d)
    return [x / t for x in d]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    src_words = [f"s{i}" for i in range(spec.source_vocab)]
    tgt_words = [f"t{i}" for i in range(spec.target_vocab)]
    src_p = _zipf_probs(spec.source_vocab, spec.zipf_exponent)
    tgt_p = _zipf_probs(spec.target_vocab, spec.zipf_exponent)

    # corpus
    lengths = 1 + rng.poisson(max(spec.mean_length - 1, 0.0), size=spec.n_sentences)
    lengths = np.clip(lengths, spec.min_length, spec.max_length)
    flat = rng.choice(spec.source_vocab, size=int(lengths.sum()), p=src_p)
    oov_mask = rng.random(flat.size) < spec.oov_rate
    corpus: list[list[str]] = []
    pos = 0
    n_oov = 0
    for ln in lengths:
        sent = []
        for k in range(pos, pos + ln):
            if oov_mask[k]:
                sent.append(f"oov{n_oov}")
                n_oov += 1
            else:
                sent.append(src_words[flat[k]])
        corpus.append(sent)
        pos += ln

    # source phrases: every vocabulary word plus a share of corpus n-grams
    ngram_counts: Counter = Counter()
    for sent in corpus:
        for n in range(1, spec.max_phrase_length + 1):
            for i in range(len(sent) - n + 1):
                ng = tuple(sent[i:i + n])
                if not any(t.startswith("oov") for t in ng):
                    ngram_counts[ng] += 1
    phrases = [(w,) for w in src_words]
    multi = sorted(ng for ng in ngram_counts if len(ng) > 1)
    if multi:
        keep = rng.random(len(multi)) < spec.multiword_rate
        phrases += [ng for ng, k in zip(multi, keep) if k]

    # scalar draws use a stdlib generator seeded from the numpy one
    r = random.Random(int(rng.integers(2**63)))
    tgt_cum = np.cumsum(tgt_p).tolist()
    pt, lexro, counts = [], [], []
    lo, hi = spec.rules_per_phrase
    for src in phrases:
        k = r.randint(lo, hi)
        targets = set()
        while len(targets) < k:
            tl = r.randint(1, min(spec.max_target_length, len(src) + 1))
            targets.add(tuple(r.choices(tgt_words, cum_weights=tgt_cum, k=tl)))
        targets = sorted(targets)
        p_ts = _dist(r, k)
        c_s = ngram_counts.get(src, 0) + 1
        src_text = " ".join(src)
        for t, pts in zip(targets, p_ts):
            p_st, lex_st, lex_ts = r.uniform(0.01, 1.0), r.uniform(0.01, 1.0), r.uniform(0.01, 1.0)
            tgt_text = " ".join(t)
            scores = " ".join(_fmt(x) for x in (p_st, lex_st, pts, lex_ts))
            pt.append(f"{src_text} ||| {tgt_text} ||| {scores} ||| ||| 1 {c_s} 1")
            if r.random() < spec.lexro_coverage:
                d = _dist(r, 3) + _dist(r, 3)
                lexro.append(f"{src_text} ||| {tgt_text} ||| {' '.join(_fmt(x) for x in d)}")
        counts.append(f"{src_text} ||| {ngram_counts.get(src, 0)}")

    arpa = _random_arpa(rng, tgt_words, tgt_p, spec)
    return SyntheticData(pt, lexro, counts, arpa, [" ".join(s) for s in corpus],
                         DEFAULT_WEIGHTS.to_text())


def _random_arpa(rng, words, probs, spec: SyntheticSpec) -> list[str]:
    order = spec.lm_order
    vocab = ["<s>", "</s>", "<unk>"] + words
    uni = {}
    for w, p in zip(words, probs):
        uni[(w,)] = (math.log10(p * 0.9), -float(rng.uniform(0.05, 0.8)))
    uni[("<s>",)] = (-99.0, -float(rng.uniform(0.05, 0.8)))
    uni[("</s>",)] = (math.log10(0.05), 0.0)
    uni[("<unk>",)] = (-7.0, 0.0)
    grams = [uni]
    if order >= 2:
        bi = {}
        heads = ["<s>"] + words
        for h in heads:
            for t in rng.choice(len(words), size=spec.bigrams_per_word, p=probs, replace=False):
                bi[(h, words[t])] = (-float(rng.uniform(0.1, 2.0)), -float(rng.uniform(0.05, 0.8)))
            if rng.random() < 0.3:
                bi[(h, "</s>")] = (-float(rng.uniform(0.3, 1.5)), 0.0)
        grams.append(bi)
    for n in range(3, order + 1):
        prev = grams[-1]
        nxt = {}
        for ctx in sorted(prev):
            if ctx[-1] == "</s>" or rng.random() >= spec.trigrams_per_bigram:
                continue
            t = words[rng.choice(len(words), p=probs)]
            nxt[ctx + (t,)] = (-float(rng.uniform(0.05, 1.5)), -float(rng.uniform(0.05, 0.8)))
        grams.append(nxt)
    lines = ["\\data\\"]
    for n, g in enumerate(grams, 1):
        lines.append(f"ngram {n}={len(g)}")
    for n, g in enumerate(grams, 1):
        lines.append("")
        lines.append(f"\\{n}-grams:")
        top = n == len(grams)
        for key in sorted(g, key=lambda k: [vocab.index(x) if x in ("<s>", "</s>", "<unk>") else 3 + int(x[1:]) for x in k]):
            p, bo = g[key]
            if top:
                lines.append(f"{_fmt(p)}\t{' '.join(key)}")
            else:
                lines.append(f"{_fmt(p)}\t{' '.join(key)}\t{_fmt(bo)}")
    lines.append("")
    lines.append("\\end\\")
    return lines


def spec_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)


@dataclass
class OracleInstance:
    sentence: list[str]
    phrase_table: list[str]
    lexro: list[str]
    arpa: list[str]
    weights: WeightVector
    distortion_limit: int | None


def random_instance(seed: int, min_words: int = 4, max_words: int = 6, max_rules: int = 20,
                    distortion_limits=(0, 2, None), oov_rate: float = 0.1) -> OracleInstance:
    """A small random grammar, bigram LM and weights for oracle comparisons.

    Source words are drawn from a tiny vocabulary so sentences repeat words,
    which exercises recombination.
    """
    rng = random.Random(seed)
    n = rng.randint(min_words, max_words)
    sent = [f"oov{k}" if rng.random() < oov_rate else f"a{rng.randrange(5)}" for k in range(n)]
    tv = [f"b{i}" for i in range(6)]

    def target():
        return " ".join(rng.choice(tv) for _ in range(rng.randint(1, 2)))

    rules: dict[tuple[str, str], None] = {}
    for w in sorted({w for w in sent if not w.startswith("oov")}):
        for _ in range(rng.randint(1, 2)):
            rules[(w, target())] = None
    spans = [(i, j) for i in range(n) for j in range(i + 2, min(n, i + 3) + 1)
             if not any(t.startswith("oov") for t in sent[i:j])]
    while spans and len(rules) < max_rules and rng.random() < 0.85:
        i, j = rng.choice(spans)
        rules[(" ".join(sent[i:j]), target())] = None
    pt, lx = [], []
    for s, t in list(rules)[:max_rules]:
        probs = " ".join(str(round(rng.uniform(0.05, 1.0), 3)) for _ in range(4))
        pt.append(f"{s} ||| {t} ||| {probs}")
        lx.append(f"{s} ||| {t} ||| " + " ".join(str(round(rng.uniform(0.05, 0.9), 3)) for _ in range(6)))

    bigrams = set()
    while len(bigrams) < 8:
        bigrams.add((rng.choice(["<s>"] + tv), rng.choice(tv + ["</s>"])))
    arpa = ["\\data\\", f"ngram 1={len(tv) + 3}", f"ngram 2={len(bigrams)}", "", "\\1-grams:"]
    for w in ["<s>", "</s>", "<unk>"] + tv:
        arpa.append(f"{-round(rng.uniform(0.2, 2.0), 3)}\t{w}\t{-round(rng.uniform(0.0, 0.5), 3)}")
    arpa += ["", "\\2-grams:"]
    for a, b in sorted(bigrams):
        arpa.append(f"{-round(rng.uniform(0.05, 1.0), 3)}\t{a} {b}")
    arpa += ["", "\\end\\"]
    weights = WeightVector(tuple(round(rng.uniform(-1.0, 1.0), 3) for _ in range(15)))
    return OracleInstance(sent, pt, lx, arpa, weights, rng.choice(list(distortion_limits)))
