"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The desk corpus is a seeded 10k-sentence synthetic model built once per
module.  Large runs use cardinality stacks at pop-limit 10 so the whole
suite stays within a few minutes on one core.
"""

import math
import random
import statistics
import time

import pytest

from pbdecode.arena import Pool, RecyclingQueue
from pbdecode.bench import bench_codec, bench_scaling, physical_cores, repetitive_phrase_table
from pbdecode.bleu import bleu, corpus_bleu
from pbdecode.driver import decode_corpus
from pbdecode.features import parse_weights
from pbdecode.lm import BOS_ID, EOS_ID, UNK_ID, parse_arpa
from pbdecode.oracle import exhaustive_decode
from pbdecode.search import Models, SearchParams, StackConfig, decode
from pbdecode.synth import SyntheticSpec, generate_synthetic, random_instance
from pbdecode.tm.build import BuildOptions, build_binary
from pbdecode.tm.table import LexROStore, RuleTable

from conftest import ACCEPTANCE_LINES, instance_models, load_fixture_lm, synth_models

pytestmark = pytest.mark.acceptance

DESK_PARAMS = SearchParams(pop_limit=10, stack_config="cardinality", distortion_limit=6)


def verdict(cid: str, ok: bool, detail: str) -> None:
    line = f"{cid} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


class Desk:
    def __init__(self, root):
        self.data = generate_synthetic(SyntheticSpec(seed=11, n_sentences=10_000))
        self.corpus = self.data.corpus
        self.compressed = str(root / "compressed")
        self.identity = str(root / "identity")
        opts = dict(table_limit=20, cache_size=10_000)
        build_binary(self.data.phrase_table, self.data.lexro, self.data.counts,
                     BuildOptions(compress_target=True, **opts), self.compressed)
        build_binary(self.data.phrase_table, self.data.lexro, self.data.counts,
                     BuildOptions(compress_target=False, **opts), self.identity)
        self.lm = parse_arpa(self.data.arpa)
        self.weights = parse_weights(self.data.weights)
        self._runs = {}

    def models(self, table_dir=None, cache_size=0, separate=False):
        table_dir = table_dir or self.compressed
        store = LexROStore(table_dir) if separate else None
        return Models(RuleTable(table_dir, cache_size), self.lm, self.weights, store)

    def run(self, label, cache_size=0, codec="compressed", threads=1, lexro="integrated"):
        key = (cache_size, codec, threads, lexro)
        if key not in self._runs:
            table_dir = self.compressed if codec == "compressed" else self.identity
            m = self.models(table_dir, cache_size, separate=lexro == "separate")
            params = SearchParams(**{**DESK_PARAMS.__dict__, "lexro_mode": lexro})
            self._runs[key] = decode_corpus(m, self.corpus, params, threads)
        return self._runs[key]


def output_bytes(report) -> bytes:
    lines = [f"{t}\t{s!r}" for t, s in zip(report.translations, report.scores)]
    return ("\n".join(lines) + "\n").encode()


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return Desk(tmp_path_factory.mktemp("desk"))


def test_c1_oracle_equivalence(tmp_path):
    t0 = time.perf_counter()
    cases = mismatches = 0
    worst = 0.0
    for seed in range(200):
        inst = random_instance(seed, min_words=4, max_words=6, max_rules=20)
        models = instance_models(tmp_path / str(seed), inst)
        for limit in (0, 2, None):
            try:
                want = exhaustive_decode(models, inst.sentence, limit).score
            except ValueError:
                continue
            for config in StackConfig:
                got = decode(models, inst.sentence, SearchParams(pop_limit=None, distortion_limit=limit,
                                                                 stack_config=config)).score
                cases += 1
                diff = abs(got - want)
                worst = max(worst, diff)
                mismatches += diff > 1e-6
    secs = time.perf_counter() - t0
    verdict("C1", mismatches == 0 and cases >= 200 * 3 * 3 and secs < 120,
            f"oracle equivalence: {cases} decodes, {mismatches} mismatches, max |diff| {worst:.2e}, {secs:.1f}s")


def test_c2_result_invariance(desk):
    t0 = time.perf_counter()
    base = output_bytes(desk.run("base"))
    variants = {
        "cache 2000": desk.run("cache", cache_size=2000),
        "identity codec": desk.run("codec", codec="identity"),
        "8 threads": desk.run("threads", threads=8),
        "separate lexRO": desk.run("lexro", lexro="separate"),
    }
    same = {k: output_bytes(r) == base for k, r in variants.items()}
    errors = sum(len(r.errors) for r in variants.values()) + len(desk.run("base").errors)
    secs = time.perf_counter() - t0
    detail = ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())
    verdict("C2", all(same.values()) and errors == 0 and secs < 300,
            f"result invariance on {len(desk.corpus)} sentences: {detail}; {secs:.0f}s")


def test_c3_thread_scaling(desk):
    cores = physical_cores()
    sents = desk.corpus[:2000]
    rows = bench_scaling(desk.models(cache_size=2000), sents, DESK_PARAMS, list(range(1, cores + 1)), repeats=3)
    wps = [r["words_per_sec"] for r in rows]
    monotone = all(b >= 0.9 * a for a, b in zip(wps, wps[1:]))
    speedup = wps[-1] / wps[0]
    shape = " ".join(f"{r['threads']}:{r['words_per_sec']:.0f}" for r in rows)
    verdict("C3", monotone and speedup >= 0.6 * cores,
            f"thread scaling up to {cores} physical core(s): words/s {shape}; speedup {speedup:.2f}x")


def test_c4_pool_properties():
    rng = random.Random(4)
    aligns = [1, 2, 4, 8, 16, 32, 64]

    def requests():
        return [(rng.randrange(0, 9000), rng.choice(aligns)) for _ in range(rng.randint(1, 60))]

    t0 = time.perf_counter()
    failures = []
    for _ in range(1000):  # determinism after reset
        p, reqs = Pool(4096), requests()
        first = [p.alloc(s, a) for s, a in reqs]
        p.reset()
        if first != [p.alloc(s, a) for s, a in reqs]:
            failures.append("determinism")
    for _ in range(1000):  # capacity never shrinks
        p, last = Pool(4096), 4096
        for _ in range(rng.randint(1, 4)):
            for s, a in requests():
                p.alloc(s, a)
                if p.total_capacity < last:
                    failures.append("shrink")
                last = p.total_capacity
            p.reset()
            if p.total_capacity != last:
                failures.append("shrink-on-reset")
    for _ in range(1000):  # replaying a workload never grows the pool again
        p, reqs = Pool(4096), requests()
        for s, a in reqs:
            p.alloc(s, a)
        cap = p.total_capacity
        for _ in range(2):
            p.reset()
            for s, a in reqs:
                p.alloc(s, a)
        if p.total_capacity != cap:
            failures.append("growth")
    for _ in range(1000):  # LIFO recycling
        p = Pool(4096)
        q = RecyclingQueue("obj", 24, lambda: type("O", (), {"slot": None})())
        live = [q.acquire(p) for _ in range(rng.randint(1, 20))]
        back = live[:rng.randint(1, len(live))]
        for o in back:
            q.recycle(o)
        again = [q.acquire(p) for _ in back]
        if again != back[::-1]:
            failures.append("lifo")
    soak = Pool(4096)
    workload = [(rng.randrange(1, 3000), rng.choice(aligns)) for _ in range(200)]
    growth_after_first = 0
    cap1 = None
    for cycle in range(10_000):
        for s, a in workload:
            soak.alloc(s, a)
        soak.reset()
        if cycle == 0:
            cap1 = soak.total_capacity
        elif soak.total_capacity != cap1:
            growth_after_first += 1
    secs = time.perf_counter() - t0
    verdict("C4", not failures and growth_after_first == 0 and secs < 60,
            f"pool properties: 4 x 1000 cases, {len(failures)} failures; 10k soak cycles, "
            f"{growth_after_first} grew after cycle 1; {secs:.1f}s")


def test_c5_cache_behavior(desk):
    sizes = [0, 1000, 2000, 4000, 10_000]
    runs = [desk.run("cache", cache_size=s) for s in sizes]
    rates = [r.cache_hit_rate for r in runs]
    base = output_bytes(runs[0])
    identical = all(output_bytes(r) == base for r in runs)
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))
    shape = " ".join(f"{s}:{100 * r:.1f}%" for s, r in zip(sizes, rates))
    verdict("C5", monotone and identical,
            f"cache hit rates {shape}; outputs {'identical' if identical else 'DIFFER'} at every size")


def test_c6_codec_tradeoff(tmp_path):
    rows = {r["codec"]: r for r in bench_codec(repetitive_phrase_table(10_000), tmp_path, n_lookups=100_000)}
    ident, comp = rows["identity"], rows["compressed"]
    ok = ident["bytes"] > comp["bytes"] and ident["median_lookup_ns"] <= comp["median_lookup_ns"]
    verdict("C6", ok, f"codec: identity {ident['bytes']} B / {ident['median_lookup_ns'] / 1000:.1f} us, "
                      f"compressed {comp['bytes']} B / {comp['median_lookup_ns'] / 1000:.1f} us per lookup")


def test_c7_lm_fixtures():
    m1, m2, m3 = (load_fixture_lm(f"order{k}.arpa") for k in (1, 2, 3))
    a, b = m2.index("a"), m2.index("b")
    x, y, z = m3.index("x"), m3.index("y"), m3.index("z")
    checks = [
        (m1, (), m1.index("a"), -1.5),
        (m1, (), EOS_ID, -0.5),
        (m1, (), m1.index("nope"), -2.5),
        (m2, (BOS_ID,), a, -0.4),
        (m2, (a,), a, -0.2),
        (m2, (a,), b, -0.30103 + -1.0),
        (m2, (b,), EOS_ID, -0.6),
        (m2, (BOS_ID,), EOS_ID, -0.5 + -1.2),
        (m2, (a,), UNK_ID, -0.30103 + -2.0),
        (m2, (b,), a, -0.1 + -0.7),
        (m3, (BOS_ID, x), y, -0.1),
        (m3, (x, y), z, -0.05),
        (m3, (BOS_ID, x), z, -0.35 + (-0.2 + -1.3)),
        (m3, (x, y), EOS_ID, -0.12 + -0.45),
        (m3, (x, y), x, -0.12 + (-0.15 + -0.9)),
        (m3, (y, z), EOS_ID, -1.5),
        (m3, (BOS_ID,), y, -0.25 + -1.1),
        (m3, (BOS_ID, x), UNK_ID, -0.35 + (-0.2 + -3.0)),
    ]
    wrong = [(ctx, w, m.score_word(ctx, w)[0], want) for m, ctx, w, want in checks if m.score_word(ctx, w)[0] != want]
    sentence = m3.score_sentence(["x", "y", "z"]) == ((-0.5 + -0.1) + -0.05) + -1.5
    verdict("C7", not wrong and sentence,
            f"LM fixtures: {len(checks) + 1} hand-computed queries over orders 1-3, {len(wrong) + (not sentence)} differ")


def test_c8_pop_limit_tradeoff(desk):
    sents = desk.corpus[:200]
    models = desk.models(cache_size=2000)
    rows = []
    for pl in (10, 50, 100, 400, 1000):
        params = SearchParams(pop_limit=pl, stack_config="cardinality", distortion_limit=6)
        times = []
        for _ in range(3):
            rep = decode_corpus(models, sents, params)
            times.append(rep.wall_seconds)
        rows.append((pl, statistics.fmean(rep.scores), statistics.median(times)))
    scores_ok = all(b[1] >= a[1] for a, b in zip(rows, rows[1:]))
    times_ok = all(b[2] > a[2] for a, b in zip(rows, rows[1:]))
    shape = " ".join(f"{pl}:{s:.3f}/{t:.2f}s" for pl, s, t in rows)
    verdict("C8", scores_ok and times_ok, f"pop-limit mean score/time {shape}")


def test_c9_bleu(tmp_path):
    refs = ["the cat sat on the mat", "a dog barked", "it rains today"]
    hyps = ["the cat sat on mat", "a dog barked loudly", "it rains"]
    identity = bleu(refs, refs)
    fixture = corpus_bleu(hyps, refs).score
    expected = math.exp(1 - 12 / 11) * (10 / 11 * 6 / 8 * 3 / 5 * 1 / 3) ** 0.25

    data = generate_synthetic(SyntheticSpec(seed=21, n_sentences=200, mean_length=4, min_length=3, max_length=5,
                                            rules_per_phrase=(2, 3), source_vocab=300, target_vocab=300))
    models = synth_models(tmp_path, data)
    oracle_refs = [exhaustive_decode(models, s, 6).translation for s in data.corpus]
    by_pop = {}
    for pl in (10, 400):
        params = SearchParams(pop_limit=pl, distortion_limit=6)
        by_pop[pl] = bleu([decode(models, s, params).translation for s in data.corpus], oracle_refs)
    ok = identity == 1.0 and abs(fixture - expected) <= 1e-9 and by_pop[400] >= by_pop[10]
    verdict("C9", ok, f"BLEU identity {identity:.6f}, fixture {fixture:.12f}, "
                      f"oracle refs: pop 10 {by_pop[10]:.4f} <= pop 400 {by_pop[400]:.4f}")
