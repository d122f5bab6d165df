"""Stack decoding with cube pruning.

Coverage vectors are Python ints used as bitsets (bit i = source word i).
Hypotheses are grouped into stacks by one of three keys: the number of
covered words, the coverage vector, or the coverage vector plus the end
position of the last translated source word.  Each stack is expanded once,
in an order where every parent stack precedes its children, by popping at
most ``pop_limit`` (hypothesis, rule) pairs from a best-first queue over
cubes.
"""

from __future__ import annotations

import enum
import heapq
import math
import struct
import time
from dataclasses import dataclass, field

from . import features as F
from .arena import PoolPair
from .lm import EOS_ID, NGramModel
from .tm.rules import TranslationRule

NEG_INF = float("-inf")
_DELTA = struct.Struct("<15d")
HYP_SLOT_SIZE = _DELTA.size


class StackConfig(str, enum.Enum):
    CARDINALITY = "cardinality"
    COVERAGE = "coverage"
    COVERAGE_ENDPOS = "coverage-endpos"


class DecodeError(RuntimeError):
    pass


class SentenceTooLong(DecodeError):
    pass


@dataclass
class SearchParams:
    pop_limit: int | None = 400  # None: unlimited
    distortion_limit: int | None = 6  # None: unlimited
    beam_size: int | None = None  # None: unlimited
    stack_config: StackConfig = StackConfig.COVERAGE_ENDPOS
    table_limit: int | None = None  # further truncation of looked-up collections
    max_sentence_length: int = 200
    recombination: bool = True
    lexro_mode: str = "integrated"  # or "separate"
    oov_floor: float = F.DEFAULT_OOV_FLOOR
    profile: bool = False

    def __post_init__(self):
        self.stack_config = StackConfig(self.stack_config)
        if self.pop_limit is not None and self.pop_limit < 1:
            raise ValueError("pop_limit must be >= 1")
        if self.distortion_limit is not None and self.distortion_limit < 0:
            raise ValueError("distortion_limit must be >= 0 or None")
        if self.beam_size is not None and self.beam_size < 1:
            raise ValueError("beam_size must be >= 1 or None")
        if self.lexro_mode not in ("integrated", "separate"):
            raise ValueError("lexro_mode must be 'integrated' or 'separate'")


@dataclass
class Models:
    table: object  # RuleTable or anything with lookup() and max_phrase_len
    lm: NGramModel
    weights: F.WeightVector
    lexro_store: object | None = None


# -- coverage -------------------------------------------------------------

def span_mask(start: int, end: int) -> int:
    return ((1 << (end - start)) - 1) << start


def cardinality(coverage: int) -> int:
    return coverage.bit_count()


def leftmost_uncovered(coverage: int) -> int:
    return (~coverage & (coverage + 1)).bit_length() - 1


def distortion_check(coverage: int, end_pos: int, span: tuple[int, int], limit: int | None) -> bool:
    """Can a rule over ``span`` extend a hypothesis at (coverage, end_pos)?

    The jump from the previous end must be within ``limit``, and if the rule
    leaves the leftmost uncovered word behind, that word must still be
    reachable from the rule's end within ``limit``.
    """
    if limit is None:
        return True
    start, end = span
    if abs(start - end_pos - 1) > limit:
        return False
    first_gap = leftmost_uncovered(coverage)
    if first_gap < start and end - first_gap > limit:
        return False
    return True


# -- hypotheses -------------------------------------------------------------

class Hypothesis:
    __slots__ = ("parent", "rule", "start", "end", "coverage", "card", "end_pos", "lm_state",
                 "lexro", "score", "future", "total", "done", "slot", "pool")

    def __init__(self):
        self.slot = None

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end

    def recombination_key(self):
        # a complete hypothesis has no future: anything sharing its stack is comparable
        if self.done:
            return (self.coverage,)
        # the previous rule's span start and next-direction lexRO scores decide
        # how the following rule is scored, so they are part of the state
        return (self.coverage, self.end_pos, self.lm_state, self.start, self.lexro)

    def delta(self) -> tuple[float, ...]:
        """This hypothesis's own feature contributions, read back from its pool slot."""
        if self.parent is None:
            return (0.0,) * F.N_FEATURES
        return _DELTA.unpack_from(self.pool.view(self.slot))

    def derivation(self) -> list["Hypothesis"]:
        out = []
        h = self
        while h.parent is not None:
            out.append(h)
            h = h.parent
        out.reverse()
        return out

    def accumulated(self) -> list[float]:
        fv = [0.0] * F.N_FEATURES
        for h in self.derivation():
            for i, v in enumerate(h.delta()):
                fv[i] += v
        return fv


def stack_key(config: StackConfig, hyp: Hypothesis):
    if config is StackConfig.CARDINALITY:
        return hyp.card
    if config is StackConfig.COVERAGE:
        return hyp.coverage
    return (hyp.coverage, hyp.end_pos)


def _order_key(config: StackConfig, key):
    if config is StackConfig.CARDINALITY:
        return key
    if config is StackConfig.COVERAGE:
        return (key.bit_count(), key)
    return (key[0].bit_count(), key[0], key[1])


class Stack:
    """Hypotheses sharing a stack key, at most one per recombination key."""

    INSERTED, KEPT_EXISTING, REPLACED = "inserted", "merged-kept-existing", "merged-replaced"

    def __init__(self, key, recombination: bool = True):
        self.key = key
        self.recombination = recombination
        self.hyps: dict = {}
        self._n = 0

    def __len__(self):
        return len(self.hyps)

    def add(self, hyp: Hypothesis):
        """Insert ``hyp``; returns (outcome, loser or None)."""
        if not self.recombination:
            self._n += 1
            self.hyps[self._n] = hyp
            return self.INSERTED, None
        k = hyp.recombination_key()
        old = self.hyps.get(k)
        if old is None:
            self.hyps[k] = hyp
            return self.INSERTED, None
        if hyp.score > old.score:
            self.hyps[k] = hyp
            return self.REPLACED, old
        return self.KEPT_EXISTING, hyp


def recombine(stack: Stack, hyp: Hypothesis) -> str:
    return stack.add(hyp)[0]


# -- translation options and future costs -------------------------------

def passthrough_rule(token: str, floor: float = F.DEFAULT_OOV_FLOOR) -> TranslationRule:
    return TranslationRule((token,), (token,), (floor,) * F.N_TM, (F.UNIFORM_LEXRO,) * F.N_LEXRO,
                           0.0, True)


def collect_options(table, tokens, stats=None, table_limit: int | None = None,
                    oov_floor: float = F.DEFAULT_OOV_FLOOR) -> dict[tuple[int, int], tuple]:
    """Rule collections for every span up to the table's longest source phrase.

    A single word with no rules gets a pass-through rule; longer spans with
    no rules are left out.
    """
    n = len(tokens)
    max_len = max(1, getattr(table, "max_phrase_len", n) or 1)
    opts = {}
    for i in range(n):
        for j in range(i + 1, min(n, i + max_len) + 1):
            coll = table.lookup(tokens[i:j], stats)
            if coll:
                if table_limit is not None:
                    coll = coll[:table_limit]
                opts[(i, j)] = coll
            elif j == i + 1:
                opts[(i, j)] = (passthrough_rule(tokens[i], oov_floor),)
    return opts


def rule_features(rule: TranslationRule) -> list[float]:
    """Context-independent part of a rule's feature vector."""
    fv = [0.0] * F.N_FEATURES
    fv[F.PHRASE] = 1.0
    fv[F.WORD] = float(len(rule.target))
    fv[F.UNKNOWN] = 1.0 if rule.passthrough else 0.0
    fv[F.TM:F.TM + F.N_TM] = rule.tm_scores
    return fv


class Option:
    """A rule prepared for one sentence."""

    __slots__ = ("rule", "lm_ids", "static", "estimate", "tm", "n_words", "unknown", "lexro", "lexro_next")

    def __init__(self, rule, lm: NGramModel, w: F.WeightVector, lexro=None):
        self.rule = rule
        self.lm_ids = lm.indices(rule.target)
        self.tm = rule.tm_scores
        self.n_words = float(len(rule.target))
        self.unknown = 1.0 if rule.passthrough else 0.0
        self.lexro = rule.lexro_scores if lexro is None else tuple(lexro)
        self.lexro_next = self.lexro[3:]
        self.static = F.total_score(rule_features(rule), w)
        lm_est, _ = lm.score_phrase(lm.null_state(), self.lm_ids)
        self.estimate = self.static + w[F.LM] * lm_est


def prepare_options(opts, lm: NGramModel, w: F.WeightVector, lexro_store=None) -> dict[tuple[int, int], list[Option]]:
    """Wrap and order each span's rules; ``lexro_store`` replaces the in-rule lexRO scores."""
    out = {}
    for span, coll in opts.items():
        if lexro_store is None:
            prepared = [Option(r, lm, w) for r in coll]
        else:
            prepared = [Option(r, lm, w, None if r.passthrough else lexro_store.lookup(r.source, r.target))
                        for r in coll]
        prepared.sort(key=lambda o: -o.estimate)  # stable: p(t|s) order breaks ties
        out[span] = prepared
    return out


class FutureCosts:
    """Best estimated score for covering each gap of the source sentence."""

    def __init__(self, n: int, span_best: dict[tuple[int, int], float]):
        self.n = n
        self.full = (1 << n) - 1
        best = [[NEG_INF] * (n + 1) for _ in range(n + 1)]
        for length in range(1, n + 1):
            for i in range(0, n - length + 1):
                j = i + length
                v = span_best.get((i, j), NEG_INF)
                for k in range(i + 1, j):
                    c = best[i][k] + best[k][j]
                    if c > v:
                        v = c
                best[i][j] = v
        self.table = best
        self._memo: dict[int, float] = {}

    def gap(self, i: int, j: int) -> float:
        return self.table[i][j]

    def estimate(self, coverage: int) -> float:
        memo = self._memo.get(coverage)
        if memo is not None:
            return memo
        total = 0.0
        n, table = self.n, self.table
        i = 0
        while i < n:
            if coverage >> i & 1:
                i += 1
                continue
            j = i
            while j < n and not coverage >> j & 1:
                j += 1
            total += table[i][j]
            i = j
        self._memo[coverage] = total
        return total


def estimate_future(n: int, options: dict[tuple[int, int], list[Option]]) -> FutureCosts:
    return FutureCosts(n, {span: opts[0].estimate for span, opts in options.items() if opts})


# -- decoding ---------------------------------------------------------------

@dataclass
class DecodeResult:
    translation: str
    score: float
    features: list[float]
    derivation: list[tuple[tuple[int, int], TranslationRule]] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    error: str | None = None


_PHASES = ("memory", "lm", "phrase_table", "lexro", "search")


def decode(models: Models, sentence, params: SearchParams | None = None,
           pools: PoolPair | None = None, lookup_stats=None, trace: list | None = None) -> DecodeResult:
    """Translate one tokenized sentence.

    ``trace``, when given, receives ``(stack_key, cube_id, hyp_idx, rule_idx,
    estimate, score, lexro_features)`` for every pop, in pop order.
    """
    params = params or SearchParams()
    tokens = sentence.split() if isinstance(sentence, str) else list(sentence)
    n = len(tokens)
    if n == 0:
        return DecodeResult("", 0.0, [0.0] * F.N_FEATURES)
    if n > params.max_sentence_length:
        raise SentenceTooLong(f"sentence has {n} tokens, limit {params.max_sentence_length}")
    own_pools = pools is None
    if own_pools:
        pools = PoolPair()
    try:
        return _Search(models, tokens, params, pools, lookup_stats, trace).run()
    finally:
        if own_pools:
            pools.reset_ephemeral()


class _Search:
    def __init__(self, models, tokens, params, pools, lookup_stats, trace):
        self.models = models
        self.tokens = tokens
        self.n = len(tokens)
        self.params = params
        self.pools = pools
        self.lookup_stats = lookup_stats
        self.trace = trace
        self.timing = dict.fromkeys(_PHASES, 0.0) if params.profile else None
        self.stats = {"pops": 0, "hypotheses": 0, "recombined": 0, "distortion_checks": 0,
                      "stacks": 0, "lm_calls": 0}
        self.queue = pools.queue("hypothesis", HYP_SLOT_SIZE, Hypothesis)
        self.lm_memo: dict = {}

    def run(self) -> DecodeResult:
        m, p = self.models, self.params
        clock = time.perf_counter
        t0 = clock()
        opts = collect_options(m.table, self.tokens, self.lookup_stats, p.table_limit, p.oov_floor)
        if self.timing is not None:
            self.timing["phrase_table"] += clock() - t0
            t1 = clock()
        store = None
        if p.lexro_mode == "separate":
            if m.lexro_store is None:
                raise DecodeError("separate lexRO scoring needs a lexRO store")
            store = m.lexro_store
        self.options = prepare_options(opts, m.lm, m.weights, store)
        if self.timing is not None:
            self.timing["lm"] += clock() - t1
        self.future = estimate_future(self.n, self.options)
        self.spans = sorted(self.options)
        self.span_masks = [((i, j), span_mask(i, j)) for i, j in self.spans]
        best = self._search()
        if best is None:
            raise DecodeError("no complete hypothesis survived pruning")
        deriv = best.derivation()
        fv = best.accumulated()
        translation = " ".join(w for h in deriv for w in h.rule.target)
        stats = dict(self.stats)
        if self.timing is not None:
            total = clock() - t0
            accounted = sum(v for k, v in self.timing.items() if k != "search")
            self.timing["search"] = max(total - accounted, 0.0)
            stats["timing"] = dict(self.timing)
        return DecodeResult(translation, best.score, fv, [(h.span, h.rule) for h in deriv], stats)

    def _new_root(self) -> Hypothesis:
        h = self.queue.acquire(self.pools.ephemeral)
        h.pool = self.pools.ephemeral
        h.parent = None
        h.rule = None
        h.start, h.end = F.START_SPAN
        h.coverage = 0
        h.card = 0
        h.end_pos = -1
        h.lm_state = self.models.lm.begin_state()
        h.lexro = None
        h.done = self.n == 0
        h.score = 0.0
        h.future = self.future.estimate(0)
        h.total = h.score + h.future
        return h

    def _search(self):
        p = self.params
        config = p.stack_config
        n = self.n
        layers: list[dict] = [dict() for _ in range(n + 1)]
        root = self._new_root()
        rk = stack_key(config, root)
        layers[0][rk] = Stack(rk, p.recombination)
        layers[0][rk].add(root)
        for c in range(n):
            layer = layers[c]
            for key in sorted(layer, key=lambda k: _order_key(config, k)):
                self._expand(layer[key], layers)
                self.stats["stacks"] += 1
        best = None
        for stack in layers[n].values():
            self.stats["stacks"] += 1
            for h in stack.hyps.values():
                if best is None or h.score > best.score:
                    best = h
        return best

    def _expand(self, stack: Stack, layers) -> None:
        p = self.params
        m = self.models
        w = m.weights.values
        lm = m.lm
        config = p.stack_config
        fut = self.future
        fut_est = fut.estimate
        full = fut.full
        n = self.n
        timing = self.timing
        clock = time.perf_counter
        trace = self.trace
        stats = self.stats

        hyps = list(stack.hyps.values())
        if p.beam_size is not None and len(hyps) > p.beam_size:
            hyps.sort(key=lambda h: -h.total)
            for h in hyps[p.beam_size:]:
                self.queue.recycle(h)
            hyps = hyps[:p.beam_size]

        # one distortion check per (coverage, end_pos) group and span
        groups: dict[tuple[int, int], list] = {}
        for h in hyps:
            g = groups.get((h.coverage, h.end_pos))
            if g is None:
                groups[(h.coverage, h.end_pos)] = [h]
            else:
                g.append(h)
        cubes: dict[tuple[int, int], list] = {}
        limit = p.distortion_limit
        checks = 0
        for (cov, e), members in groups.items():
            first_gap = (~cov & (cov + 1)).bit_length() - 1
            for span, mask in self.span_masks:
                if cov & mask:
                    continue
                checks += 1
                i, j = span
                if limit is not None:
                    if abs(i - e - 1) > limit:
                        continue
                    if first_gap < i and j - first_gap > limit:
                        continue
                f = fut_est(cov | mask)
                lst = cubes.get(span)
                if lst is None:
                    lst = cubes[span] = []
                for h in members:
                    lst.append((h.score + f, h))
        stats["distortion_checks"] += checks

        cube_list = []
        heap = []
        for cid, span in enumerate(sorted(cubes)):
            entries = cubes[span]
            entries.sort(key=lambda t: -t[0])  # stable
            opts = self.options[span]
            cube_list.append((span, entries, opts, len(entries), len(opts)))
            heap.append((-(entries[0][0] + opts[0].estimate), cid, 0, 0))
        heapq.heapify(heap)
        seen = set()

        pop_limit = p.pop_limit if p.pop_limit is not None else -1
        pops = 0
        lm_memo = self.lm_memo
        w_dist, w_lm = w[F.DISTORTION], w[F.LM]
        wl = w[F.LEXRO:F.LEXRO + F.N_LEXRO]
        pool = self.pools.ephemeral
        queue = self.queue
        acquire = queue.acquire
        pack = _DELTA.pack_into
        blocks = pool._blocks
        heappop, heappush = heapq.heappop, heapq.heappush
        recombination = p.recombination
        cardinality_cfg = config is StackConfig.CARDINALITY
        coverage_cfg = config is StackConfig.COVERAGE
        hyp_count = recombined = lm_calls = 0

        while heap and pops != pop_limit:
            neg_est, cid, hi, ri = heappop(heap)
            pops += 1
            span, entries, opts, n_h, n_r = cube_list[cid]
            # neighbours first so the cube frontier is complete even if we stop here
            if hi + 1 < n_h and (cid, hi + 1, ri) not in seen:
                seen.add((cid, hi + 1, ri))
                heappush(heap, (-(entries[hi + 1][0] + opts[ri].estimate), cid, hi + 1, ri))
            if ri + 1 < n_r and (cid, hi, ri + 1) not in seen:
                seen.add((cid, hi, ri + 1))
                heappush(heap, (-(entries[hi][0] + opts[ri + 1].estimate), cid, hi, ri + 1))

            h = entries[hi][1]
            o = opts[ri]
            i, j = span
            cov = h.coverage | (((1 << (j - i)) - 1) << i)
            complete = cov == full

            if timing is not None:
                t = clock()
            key = (h.lm_state, o.lm_ids, complete)
            lmv = lm_memo.get(key)
            if lmv is None:
                lm_calls += 1
                lm_score, lm_state = lm.score_phrase(h.lm_state, o.lm_ids)
                if complete:
                    s2, lm_state = lm.score_word(lm_state, EOS_ID)
                    lm_score += s2
                lm_memo[key] = (lm_score, lm_state)
            else:
                lm_score, lm_state = lmv
            if timing is not None:
                t2 = clock()
                timing["lm"] += t2 - t

            # orientation of this rule w.r.t. the previous one, scored on both rules
            lx = o.lexro
            if i == h.end:
                orient = 0
            elif j == h.start:
                orient = 1
            else:
                orient = 2
            lx_vals = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
            lx_vals[orient] = lx[orient]
            if h.lexro is not None:
                lx_vals[3 + orient] = h.lexro[orient]
            lx_score = wl[orient] * lx_vals[orient] + wl[3 + orient] * lx_vals[3 + orient]
            if complete:
                fo = 3 if j == n else 5
                lx_vals[fo] += lx[fo]
                lx_score += wl[fo] * lx[fo]
            if timing is not None:
                t3 = clock()
                timing["lexro"] += t3 - t2

            dist = -abs(i - h.end)
            score = h.score + o.static + w_dist * dist + w_lm * lm_score + lx_score
            if trace is not None:
                trace.append((stack.key, cid, hi, ri, -neg_est, score, tuple(lx_vals)))

            nh = acquire(pool)
            nh.pool = pool
            nh.parent = h
            nh.rule = o.rule
            nh.start = i
            nh.end = j
            nh.coverage = cov
            card = nh.card = h.card + j - i
            nh.end_pos = j - 1
            nh.lm_state = lm_state
            nh.lexro = None if complete else o.lexro_next
            nh.done = complete
            nh.score = score
            nh.future = 0.0 if complete else fut_est(cov)
            nh.total = score + nh.future
            a = nh.slot
            tm = o.tm
            pack(blocks[a.block].view, a.offset, float(dist), 1.0, o.n_words, o.unknown, lm_score,
                 tm[0], tm[1], tm[2], tm[3], *lx_vals)
            if timing is not None:
                t4 = clock()
                timing["memory"] += t4 - t3
            hyp_count += 1

            dkey = card if cardinality_cfg else (cov if coverage_cfg else (cov, j - 1))
            layer = layers[card]
            dst = layer.get(dkey)
            if dst is None:
                dst = layer[dkey] = Stack(dkey, recombination)
            if recombination:
                rkey = (cov,) if complete else (cov, j - 1, lm_state, i, nh.lexro)
                old = dst.hyps.get(rkey)
                if old is None:
                    dst.hyps[rkey] = nh
                else:
                    recombined += 1
                    if score > old.score:
                        dst.hyps[rkey] = nh
                        queue.recycle(old)
                    else:
                        queue.recycle(nh)
            else:
                dst.add(nh)
        stats["pops"] += pops
        stats["hypotheses"] += hyp_count
        stats["recombined"] += recombined
        stats["lm_calls"] += lm_calls
