"""Benchmark runners and run comparison.

Every runner returns a list of row dicts; :func:`format_rows` renders them
as tab-separated text with a header line.
"""

from __future__ import annotations

import math
import os
import random
import statistics
import time
from dataclasses import dataclass

import psutil

from .driver import decode_corpus
from .search import Models, SearchParams
from .tm.build import BuildOptions, build_binary
from .tm.table import RuleTable


def physical_cores() -> int:
    n = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    try:
        n = min(n, len(os.sched_getaffinity(0)))
    except AttributeError:
        pass
    return max(n, 1)


def format_rows(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    out = ["\t".join(cols)]
    for r in rows:
        out.append("\t".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(out) + "\n"


def bench_scaling(models: Models, sentences: list[str], params: SearchParams, thread_counts,
                  repeats: int = 3, warmup: bool = True) -> list[dict]:
    """words/sec per thread count, median of ``repeats`` runs after one warm-up run."""
    if warmup:
        decode_corpus(models, sentences, params, 1)
    rows = []
    for t in thread_counts:
        runs = [decode_corpus(models, sentences, params, t).words_per_sec for _ in range(repeats)]
        rows.append({"threads": t, "words_per_sec": statistics.median(runs),
                     "min": min(runs), "max": max(runs)})
    return rows


def bench_cache(table_dir, models: Models, sentences: list[str], params: SearchParams,
                cache_sizes, threads: int = 1) -> list[dict]:
    """Hit rate and speed per static cache size; ``translations`` lets callers check invariance."""
    rows = []
    for size in cache_sizes:
        table = RuleTable(table_dir, cache_size=size)
        try:
            m = Models(table, models.lm, models.weights, models.lexro_store)
            rep = decode_corpus(m, sentences, params, threads)
        finally:
            table.close()
        rows.append({"cache_size": size, "cache_entries": rep.cache_entries,
                     "hit_rate": rep.cache_hit_rate, "words_per_sec": rep.words_per_sec,
                     "translations": rep.translations})
    return rows


def repetitive_phrase_table(n_rules: int = 10000, seed: int = 0) -> list[str]:
    """A table whose targets reuse a small vocabulary heavily, as real tables do."""
    rng = random.Random(seed)
    lines = []
    src_id = 0
    while len(lines) < n_rules:
        src = f"w{src_id % 500} w{src_id // 500}" if src_id >= 500 else f"w{src_id}"
        src_id += 1
        for k in range(min(20, n_rules - len(lines))):
            tgt = " ".join(f"x{rng.randrange(40)}" for _ in range(rng.randint(1, 3)))
            p = round(rng.choice((0.1, 0.2, 0.25, 0.5)) / (k + 1), 4)
            lines.append(f"{src} ||| {tgt} ||| {p} 0.5 {p} 0.25 ||| ||| 1 {k + 1} 1")
    return lines


def bench_codec(phrase_table, out_dir, n_lookups: int = 100_000, seed: int = 0) -> list[dict]:
    """Build the same table with both codecs and time uncached lookups."""
    rows = []
    for name, compress in (("identity", False), ("compressed", True)):
        d = os.path.join(out_dir, name)
        build_binary(phrase_table, None, None, BuildOptions(compress_target=compress), d)
        size = sum(os.path.getsize(os.path.join(d, f)) for f in ("rules.idx", "rules.dat"))
        table = RuleTable(d, cache_size=0)
        try:
            keys = list(table.source_phrases())
            keys.sort()
            rng = random.Random(seed)
            picks = [keys[rng.randrange(len(keys))] for _ in range(n_lookups)]
            clock = time.perf_counter_ns
            samples = []
            lookup = table.lookup
            for key in picks:
                t = clock()
                lookup(key)
                samples.append(clock() - t)
        finally:
            table.close()
        rows.append({"codec": name, "bytes": size, "median_lookup_ns": statistics.median(samples)})
    return rows


class CorpusMismatch(ValueError):
    pass


@dataclass
class ScoreComparison:
    sentences: int
    mean_delta: float
    max_abs_delta: float
    differing_translations: int

    def rows(self) -> list[dict]:
        return [{"sentences": self.sentences, "mean_delta": self.mean_delta,
                 "max_abs_delta": self.max_abs_delta, "differing_translations": self.differing_translations}]


def compare_scores(a_translations, a_scores, b_translations, b_scores) -> ScoreComparison:
    """Per-sentence ``score(B) - score(A)`` statistics."""
    a_translations, b_translations = list(a_translations), list(b_translations)
    a_scores, b_scores = [float(s) for s in a_scores], [float(s) for s in b_scores]
    n = len(a_translations)
    if not (len(a_scores) == n == len(b_translations) == len(b_scores)):
        raise CorpusMismatch("runs cover different numbers of sentences")
    deltas = []
    for x, y in zip(a_scores, b_scores):
        if math.isnan(x) or math.isnan(y):
            continue
        deltas.append(y - x)
    differing = sum(1 for x, y in zip(a_translations, b_translations) if x != y)
    mean = sum(deltas) / len(deltas) if deltas else 0.0
    mx = max((abs(d) for d in deltas), default=0.0)
    return ScoreComparison(n, mean, mx, differing)
