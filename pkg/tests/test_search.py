import itertools
import math
import random

import numpy as np
import pytest

from pbdecode import features as F
from pbdecode.oracle import _allowed, exhaustive_decode, score_derivation
from pbdecode.search import (
    DecodeError,
    Hypothesis,
    Models,
    SearchParams,
    SentenceTooLong,
    Stack,
    StackConfig,
    cardinality,
    collect_options,
    decode,
    distortion_check,
    estimate_future,
    leftmost_uncovered,
    prepare_options,
    recombine,
    span_mask,
    stack_key,
)
from pbdecode.synth import random_instance

from conftest import UNIT_WEIGHTS, instance_models, make_models

CONFIGS = list(StackConfig)
EXACT = dict(pop_limit=None, beam_size=None)


def hyp(coverage, end_pos, score=0.0, lm_state=(), start=0, lexro=None, done=False):
    h = Hypothesis()
    h.coverage, h.end_pos, h.score, h.lm_state = coverage, end_pos, score, lm_state
    h.card = cardinality(coverage)
    h.start, h.lexro, h.done = start, lexro, done
    return h


class TestCoverage:
    def test_helpers(self):
        assert span_mask(1, 3) == 0b110
        assert cardinality(0b1011) == 3
        assert leftmost_uncovered(0b0111) == 3
        assert leftmost_uncovered(0) == 0


class TestCollectOptions:
    def test_single_known_token(self, tiny_models):
        opts = collect_options(tiny_models.table, ["haus"])
        assert list(opts) == [(0, 1)]
        assert [r.target for r in opts[(0, 1)]] == [("house",)]

    def test_single_oov(self, tiny_models):
        opts = collect_options(tiny_models.table, ["xyz"])
        (r,) = opts[(0, 1)]
        assert r.passthrough and r.target == ("xyz",)
        assert F.penalties(r)["unknown_penalty"] == 1

    def test_every_span_matches_lookup(self, tiny_models):
        toks = "das haus ist klein xyz das".split()
        opts = collect_options(tiny_models.table, toks)
        for i in range(len(toks)):
            for j in range(i + 1, len(toks) + 1):
                direct = tiny_models.table.lookup(toks[i:j])
                if direct:
                    assert opts[(i, j)] == direct
                elif j == i + 1:
                    assert opts[(i, j)][0].passthrough
                else:
                    assert (i, j) not in opts

    def test_table_limit_truncates(self, tiny_models):
        opts = collect_options(tiny_models.table, ["das"], table_limit=1)
        assert [r.target for r in opts[(0, 1)]] == [("the",)]


class TestDistortionCheck:
    def test_monotone_always_allowed(self):
        for limit in (0, 1, 6, None):
            assert distortion_check(0b111, 2, (3, 5), limit)

    def test_long_jump(self):
        assert not distortion_check(0b1, 0, (8, 9), 6)
        assert distortion_check(0b1, 0, (8, 9), None)

    def test_limit_zero_only_monotone(self):
        assert not distortion_check(0b1, 0, (2, 3), 0)
        assert not distortion_check(0b100, 2, (0, 1), 0)

    def test_matches_independent_check(self):
        # the oracle's list-based check, every state of sentences up to 7 words
        for n in range(1, 8):
            spans = [(i, j) for i in range(n) for j in range(i + 1, n + 1)]
            for cov in range(1 << n):
                ends = [k for k in range(n) if cov >> k & 1] or [-1]
                if cov == 0:
                    ends = [-1]
                covered = [bool(cov >> k & 1) for k in range(n)]
                if all(covered):
                    continue
                for e in ends:
                    for i, j in spans:
                        if cov & span_mask(i, j):
                            continue
                        for limit in (0, 1, 2, 3, None):
                            assert distortion_check(cov, e, (i, j), limit) == _allowed(covered, e + 1, i, j, limit)

    def test_group_check_soundness(self):
        # the check reads only (coverage, end_pos): every member of a group gets the group's answer
        rng = random.Random(0)
        for _ in range(300):
            n = rng.randint(2, 8)
            cov = rng.randrange(1, (1 << n) - 1)
            e = rng.choice([k for k in range(n) if cov >> k & 1])
            members = [hyp(cov, e, score=rng.random(), lm_state=(rng.randrange(5),), start=rng.randrange(n))
                       for _ in range(5)]
            for i, j in [(i, j) for i in range(n) for j in range(i + 1, n + 1)]:
                if cov & span_mask(i, j):
                    continue
                for limit in (0, 2, 4):
                    group = distortion_check(cov, e, (i, j), limit)
                    assert all(distortion_check(h.coverage, h.end_pos, (i, j), limit) == group for h in members)


class TestStackKey:
    def test_initial(self):
        root = hyp(0, -1)
        assert stack_key(StackConfig.CARDINALITY, root) == 0
        assert stack_key(StackConfig.COVERAGE, root) == 0
        assert stack_key(StackConfig.COVERAGE_ENDPOS, root) == (0, -1)

    def test_end_pos_distinguishes_only_endpos_config(self):
        a, b = hyp(0b11, 0), hyp(0b11, 1)
        assert stack_key(StackConfig.COVERAGE, a) == stack_key(StackConfig.COVERAGE, b)
        assert stack_key(StackConfig.COVERAGE_ENDPOS, a) != stack_key(StackConfig.COVERAGE_ENDPOS, b)

    def test_cardinality_merges_coverages(self):
        a, b = hyp(0b0011, 1), hyp(0b1100, 3)
        assert stack_key(StackConfig.CARDINALITY, a) == stack_key(StackConfig.CARDINALITY, b)
        assert stack_key(StackConfig.COVERAGE, a) != stack_key(StackConfig.COVERAGE, b)


class TestRecombine:
    def test_outcomes(self):
        s = Stack(1)
        assert recombine(s, hyp(0b1, 0, score=-2.0)) == "inserted"
        assert recombine(s, hyp(0b1, 0, score=-1.0)) == "merged-replaced"
        assert recombine(s, hyp(0b1, 0, score=-5.0)) == "merged-kept-existing"
        assert len(s) == 1
        assert next(iter(s.hyps.values())).score == -1.0

    def test_different_lm_state_kept_apart(self):
        s = Stack(1)
        recombine(s, hyp(0b1, 0, lm_state=(1,)))
        assert recombine(s, hyp(0b1, 0, lm_state=(2,))) == "inserted"
        assert len(s) == 2

    def test_off(self):
        s = Stack(1, recombination=False)
        recombine(s, hyp(0b1, 0))
        assert recombine(s, hyp(0b1, 0)) == "inserted"
        assert len(s) == 2

    def test_complete_hypotheses_share_key(self):
        a = hyp(0b11, 1, lm_state=(1,), done=True)
        b = hyp(0b11, 0, lm_state=(2,), done=True)
        assert a.recombination_key() == b.recombination_key()


class TestFutureCost:
    def _future(self, models, toks):
        opts = prepare_options(collect_options(models.table, toks), models.lm, models.weights)
        return opts, estimate_future(len(toks), opts)

    def test_full_coverage_zero(self, tiny_models):
        _, fc = self._future(tiny_models, ["das", "haus"])
        assert fc.estimate(0b11) == 0.0

    def test_single_word_gap(self, tiny_models):
        opts, fc = self._future(tiny_models, ["das", "haus"])
        assert fc.estimate(0b01) == opts[(1, 2)][0].estimate
        assert fc.estimate(0b01) == max(o.estimate for o in opts[(1, 2)])

    @pytest.mark.parametrize("seed", range(20))
    def test_dp_matches_brute_force_segmentation(self, tmp_path, seed):
        inst = random_instance(seed)
        models = instance_models(tmp_path, inst)
        opts, fc = self._future(models, inst.sentence)
        n = len(inst.sentence)
        best_span = {s: o[0].estimate for s, o in opts.items()}

        def brute(i, j):
            best = -math.inf
            for cuts in itertools.product([0, 1], repeat=j - i - 1):
                pts = [i] + [i + 1 + k for k, c in enumerate(cuts) if c] + [j]
                segs = list(zip(pts, pts[1:]))
                if all(s in best_span for s in segs):
                    best = max(best, sum(best_span[s] for s in segs))
            return best

        for i in range(n):
            for j in range(i + 1, n + 1):
                assert fc.gap(i, j) == pytest.approx(brute(i, j), abs=1e-9)
        for cov in range(1 << n):
            gaps, k = 0.0, 0
            while k < n:
                if cov >> k & 1:
                    k += 1
                    continue
                m = k
                while m < n and not cov >> m & 1:
                    m += 1
                gaps += brute(k, m)
                k = m
            assert fc.estimate(cov) == pytest.approx(gaps, abs=1e-9)


class TestDecodeExamples:
    def test_empty(self, tiny_models):
        r = decode(tiny_models, "")
        assert (r.translation, r.score) == ("", 0.0)

    def test_one_rule_by_hand(self, tmp_path):
        lexro = [0.7, 0.2, 0.1, 0.6, 0.3, 0.1]
        m = make_models(tmp_path, ["haus ||| house ||| 0.8 0.7 0.9 0.6"],
                        ["haus ||| house ||| " + " ".join(map(str, lexro))])
        r = decode(m, "haus")
        assert r.translation == "house"

        def q(p):
            return float(np.float32(math.log(p)))

        fv = [0.0] * 15
        fv[F.PHRASE] = 1.0
        fv[F.WORD] = 1.0
        fv[F.LM] = (-0.3 + -1.1) + -0.6
        fv[5:9] = [q(0.9), q(0.8), q(0.6), q(0.7)]
        fv[F.LEXRO + 0] = q(0.7)
        fv[F.LEXRO + 3] = q(0.6)
        assert r.features == pytest.approx(fv, abs=1e-12)
        assert r.score == pytest.approx(F.total_score(fv, UNIT_WEIGHTS), abs=1e-9)

    def test_deterministic(self, small_synth):
        data, models = small_synth
        p = SearchParams(pop_limit=50)
        for s in data.corpus[:20]:
            a, b = decode(models, s, p), decode(models, s, p)
            assert (a.translation, a.score, a.features) == (b.translation, b.score, b.features)

    def test_too_long(self, tiny_models):
        with pytest.raises(SentenceTooLong):
            decode(tiny_models, "das " * 5, SearchParams(max_sentence_length=4))

    def test_separate_mode_needs_store(self, tiny_models):
        with pytest.raises(DecodeError):
            decode(tiny_models, "das", SearchParams(lexro_mode="separate"))

    def test_bad_params(self):
        with pytest.raises(ValueError):
            SearchParams(pop_limit=0)
        with pytest.raises(ValueError):
            SearchParams(distortion_limit=-1)
        with pytest.raises(ValueError):
            SearchParams(stack_config="bogus")

    def test_pop_limit_one_single_cube(self, tiny_models):
        trace = []
        r = decode(tiny_models, "das", SearchParams(pop_limit=1), trace=trace)
        assert len(trace) == 1
        assert trace[0][2:4] == (0, 0)
        # the corner is the best-estimated rule
        opts = prepare_options(collect_options(tiny_models.table, ["das"]), tiny_models.lm, tiny_models.weights)
        assert r.translation == " ".join(opts[(0, 1)][0].rule.target)

    def test_beam_size_one_still_translates(self, small_synth):
        data, models = small_synth
        r = decode(models, data.corpus[0], SearchParams(beam_size=1))
        assert r.translation


CRAFTED_PT = [
    "das ||| the ||| 0.6 0.5 0.7 0.4",
    "das ||| that ||| 0.3 0.2 0.2 0.1",
    "haus ||| house ||| 0.8 0.7 0.9 0.6",
    "haus ||| home ||| 0.1 0.2 0.1 0.3",
    "klein ||| small ||| 0.7 0.6 0.8 0.5",
    "klein ||| little ||| 0.2 0.3 0.15 0.2",
    "ist ||| is ||| 0.9 0.8 0.9 0.8",
    "das haus ||| the house ||| 0.5 0.4 0.6 0.3",
    "haus ist ||| house is ||| 0.3 0.3 0.3 0.3",
    "ist klein ||| is small ||| 0.4 0.4 0.5 0.4",
    "klein ist ||| small is ||| 0.2 0.2 0.2 0.2",
    "das haus ist ||| the house is ||| 0.2 0.3 0.2 0.3",
]
CRAFTED_LX = [f"{line.split(' ||| ')[0]} ||| {line.split(' ||| ')[1]} ||| 0.5 0.2 0.3 0.6 0.1 0.3" for line in CRAFTED_PT[::2]]


class TestOracleEquivalence:
    @pytest.mark.parametrize("config", CONFIGS)
    @pytest.mark.parametrize("limit", [0, 2, None])
    def test_crafted_four_words(self, tmp_path, config, limit):
        m = make_models(tmp_path, CRAFTED_PT, CRAFTED_LX)
        for sent in ("das haus ist klein", "klein ist das haus", "das klein haus ist"):
            got = decode(m, sent, SearchParams(stack_config=config, distortion_limit=limit, **EXACT))
            want = exhaustive_decode(m, sent, limit)
            assert got.score == pytest.approx(want.score, abs=1e-6)

    @pytest.mark.parametrize("seed", range(25))
    def test_random_instances(self, tmp_path, seed):
        inst = random_instance(seed)
        m = instance_models(tmp_path, inst)
        want = exhaustive_decode(m, inst.sentence, inst.distortion_limit)
        for config in CONFIGS:
            got = decode(m, inst.sentence, SearchParams(stack_config=config,
                                                        distortion_limit=inst.distortion_limit, **EXACT))
            assert got.score == pytest.approx(want.score, abs=1e-6)

    @pytest.mark.parametrize("seed", range(15))
    def test_recombination_on_off(self, tmp_path, seed):
        inst = random_instance(100 + seed, min_words=5, max_words=5)
        m = instance_models(tmp_path, inst)
        on = decode(m, inst.sentence, SearchParams(distortion_limit=inst.distortion_limit, **EXACT))
        off = decode(m, inst.sentence, SearchParams(distortion_limit=inst.distortion_limit,
                                                    recombination=False, **EXACT))
        assert on.score == pytest.approx(off.score, abs=1e-9)
        assert on.score == pytest.approx(exhaustive_decode(m, inst.sentence, inst.distortion_limit).score, abs=1e-6)


class TestProperties:
    @pytest.mark.parametrize("seed", range(20))
    def test_visited_set_and_cube_order(self, tmp_path, seed):
        inst = random_instance(200 + seed)
        m = instance_models(tmp_path, inst)
        for config in CONFIGS:
            for pop_limit in (3, None):
                trace = []
                decode(m, inst.sentence, SearchParams(stack_config=config, pop_limit=pop_limit,
                                                      distortion_limit=inst.distortion_limit), trace=trace)
                by_stack = {}
                for key, cid, hi, ri, est, *_ in trace:
                    by_stack.setdefault(key, []).append(((cid, hi, ri), est))
                for pops in by_stack.values():
                    coords = [c for c, _ in pops]
                    assert len(coords) == len(set(coords))
                    ests = [e for _, e in pops]
                    assert all(a >= b for a, b in zip(ests, ests[1:]))
                    if pop_limit is not None:
                        assert len(pops) <= pop_limit

    def test_coverage_discipline(self, small_synth):
        data, models = small_synth
        for s in data.corpus[:40]:
            r = decode(models, s, SearchParams(pop_limit=20))
            n = len(s.split())
            covered = [0] * n
            for (i, j), _ in r.derivation:
                for k in range(i, j):
                    covered[k] += 1
            assert covered == [1] * n

    def test_score_decomposition(self, small_synth):
        data, models = small_synth
        for s in data.corpus[:40]:
            r = decode(models, s, SearchParams(pop_limit=20))
            score, fv = score_derivation(models, r.derivation, len(s.split()))
            assert r.score == pytest.approx(score, abs=1e-9)
            assert F.total_score(r.features, models.weights) == pytest.approx(r.score, abs=1e-9)
            assert r.features == pytest.approx(fv, abs=1e-9)
            assert r.translation == " ".join(w for _, rule in r.derivation for w in rule.target)

    @pytest.mark.parametrize("c", [2.0, 0.5])
    def test_ranking_invariance(self, small_synth, c):
        data, models = small_synth
        scaled = Models(models.table, models.lm, models.weights.scaled(c), models.lexro_store)
        p = SearchParams(pop_limit=30)
        for s in data.corpus[:60]:
            a, b = decode(models, s, p), decode(scaled, s, p)
            assert a.translation == b.translation
            # powers of two scale every float exactly
            assert b.score == c * a.score

    def test_integrated_and_separate_lexro_identical(self, small_synth):
        data, models = small_synth
        for s in data.corpus[:40]:
            ta, tb = [], []
            a = decode(models, s, SearchParams(pop_limit=30), trace=ta)
            b = decode(models, s, SearchParams(pop_limit=30, lexro_mode="separate"), trace=tb)
            assert ta == tb
            assert (a.translation, a.score, a.features) == (b.translation, b.score, b.features)

    def test_limit_zero_matches_monotone_oracle(self, small_synth):
        data, models = small_synth
        for s in data.corpus[:60]:
            toks = s.split()
            got = decode(models, toks, SearchParams(distortion_limit=0, **EXACT))
            assert got.score == pytest.approx(monotone_oracle(models, toks), abs=1e-6)


def monotone_oracle(models, toks):
    """Viterbi over left-to-right segmentations; every orientation is monotone."""
    lm, w = models.lm, models.weights
    opts = collect_options(models.table, toks)
    n = len(toks)
    # position -> {lm_state: best score}
    chart = [dict() for _ in range(n + 1)]
    chart[0][lm.begin_state()] = 0.0
    for i in range(n):
        for state, base in chart[i].items():
            for j in range(i + 1, n + 1):
                for r in opts.get((i, j), ()):
                    fv = [0.0] * 15
                    fv[F.PHRASE] = 1
                    fv[F.WORD] = len(r.target)
                    fv[F.UNKNOWN] = 1 if r.passthrough else 0
                    fv[5:9] = r.tm_scores
                    fv[F.LEXRO] = r.lexro_scores[0]
                    fv[F.LEXRO + 3] = r.lexro_scores[3]
                    st = state
                    for t in r.target:
                        s, st = lm.score_word(st, lm.index(t))
                        fv[F.LM] += s
                    if j == n:
                        fv[F.LM] += lm.score_word(st, 2)[0]
                    total = base + F.total_score(fv, w)
                    if total > chart[j].get(st, -math.inf):
                        chart[j][st] = total
    return max(chart[n].values())


def test_tiny_grammar_sanity(tiny_models):
    r = decode(tiny_models, "das haus ist klein", SearchParams(**EXACT))
    assert r.translation.split()[0] == "the"
