"""Exhaustive reference decoder for short sentences.

Walks every derivation the distortion limit allows, keeping a running
feature vector along the current path, and returns the best complete one.
There is no pruning, no recombination, no future cost and no pooling, so
the result is the true maximum of the model score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import features as F
from .lm import EOS_ID
from .tm.rules import TranslationRule

MAX_ORACLE_LENGTH = 8


class OracleRefused(ValueError):
    pass


@dataclass
class OracleResult:
    score: float
    features: list[float]
    derivation: list[tuple[tuple[int, int], TranslationRule]] = field(default_factory=list)
    explored: int = 0

    @property
    def translation(self) -> str:
        return " ".join(w for _, r in self.derivation for w in r.target)


def _rules_by_span(table, tokens, oov_floor):
    n = len(tokens)
    max_len = max(1, getattr(table, "max_phrase_len", n) or 1)
    spans = {}
    for i in range(n):
        for j in range(i + 1, min(n, i + max_len) + 1):
            coll = table.lookup(tuple(tokens[i:j]))
            if coll:
                spans[(i, j)] = list(coll)
            elif j == i + 1:
                spans[(i, j)] = [TranslationRule((tokens[i],), (tokens[i],), (oov_floor,) * F.N_TM,
                                                 (F.UNIFORM_LEXRO,) * F.N_LEXRO, 0.0, True)]
    return spans


def _allowed(covered: list[bool], prev_end: int, start: int, end: int, limit: int | None) -> bool:
    if limit is None:
        return True
    if abs(start - prev_end) > limit:
        return False
    first_gap = covered.index(False)
    # jumping past the first gap is fine only if we can still come back to it
    if first_gap < start and end - first_gap > limit:
        return False
    return True


def score_derivation(models, derivation, n: int) -> tuple[float, list[float]]:
    """Model score and feature vector of a complete derivation, from scratch."""
    fv = [0.0] * F.N_FEATURES
    lm = models.lm
    prev = F.START_SPAN
    prev_rule = None
    state = lm.begin_state()
    for span, rule in derivation:
        fv[F.DISTORTION] += F.distortion_penalty(prev[1] - 1, span[0])
        pen = F.penalties(rule)
        fv[F.PHRASE] += pen["phrase_penalty"]
        fv[F.WORD] += pen["word_penalty"]
        fv[F.UNKNOWN] += pen["unknown_penalty"]
        for k in range(F.N_TM):
            fv[F.TM + k] += rule.tm_scores[k]
        o = F.classify_orientation(prev, span)
        fv[F.LEXRO + F.lexro_index(o, F.Direction.PREVIOUS)] += F.lexro_score(rule, o, F.Direction.PREVIOUS)
        if prev_rule is not None:
            fv[F.LEXRO + F.lexro_index(o, F.Direction.NEXT)] += F.lexro_score(prev_rule, o, F.Direction.NEXT)
        for w in rule.target:
            s, state = lm.score_word(state, lm.index(w))
            fv[F.LM] += s
        prev, prev_rule = span, rule
    if prev_rule is not None:
        o = F.final_orientation(prev, n)
        fv[F.LEXRO + F.lexro_index(o, F.Direction.NEXT)] += F.lexro_score(prev_rule, o, F.Direction.NEXT)
    s, _ = lm.score_word(state, EOS_ID)
    fv[F.LM] += s
    return F.total_score(fv, models.weights), fv


def exhaustive_decode(models, sentence, distortion_limit: int | None = None,
                      oov_floor: float = F.DEFAULT_OOV_FLOOR) -> OracleResult:
    """Best derivation over all segmentations, orderings and rule choices."""
    tokens = sentence.split() if isinstance(sentence, str) else list(sentence)
    n = len(tokens)
    if n > MAX_ORACLE_LENGTH:
        raise OracleRefused(f"sentence has {n} tokens; the exhaustive oracle accepts at most {MAX_ORACLE_LENGTH}")
    if n == 0:
        return OracleResult(0.0, [0.0] * F.N_FEATURES)
    spans = _rules_by_span(models.table, tokens, oov_floor)
    lm = models.lm
    w = models.weights

    covered = [False] * n
    path: list[tuple[tuple[int, int], TranslationRule]] = []
    best = {"score": float("-inf"), "path": None, "fv": None}
    explored = 0

    def walk(prev_span, prev_rule, state, fv, n_covered):
        nonlocal explored
        if n_covered == n:
            # close the sentence: final next-orientation and </s>
            done = list(fv)
            o = F.final_orientation(prev_span, n)
            done[F.LEXRO + F.lexro_index(o, F.Direction.NEXT)] += F.lexro_score(prev_rule, o, F.Direction.NEXT)
            done[F.LM] += lm.score_word(state, EOS_ID)[0]
            score = F.total_score(done, w)
            if score > best["score"]:
                best.update(score=score, path=list(path), fv=done)
            return
        for (i, j), rules in spans.items():
            if any(covered[i:j]) or not _allowed(covered, prev_span[1], i, j, distortion_limit):
                continue
            o = F.classify_orientation(prev_span, (i, j))
            for k in range(i, j):
                covered[k] = True
            for rule in rules:
                explored += 1
                nfv = list(fv)
                nfv[F.DISTORTION] += F.distortion_penalty(prev_span[1] - 1, i)
                nfv[F.PHRASE] += 1
                nfv[F.WORD] += len(rule.target)
                nfv[F.UNKNOWN] += 1 if rule.passthrough else 0
                for k in range(F.N_TM):
                    nfv[F.TM + k] += rule.tm_scores[k]
                nfv[F.LEXRO + o] += rule.lexro_scores[o]
                if prev_rule is not None:
                    nfv[F.LEXRO + 3 + o] += prev_rule.lexro_scores[3 + o]
                st = state
                for tok in rule.target:
                    s, st = lm.score_word(st, lm.index(tok))
                    nfv[F.LM] += s
                path.append(((i, j), rule))
                walk((i, j), rule, st, nfv, n_covered + j - i)
                path.pop()
            for k in range(i, j):
                covered[k] = False

    walk(F.START_SPAN, None, lm.begin_state(), [0.0] * F.N_FEATURES, 0)
    if best["path"] is None:
        raise OracleRefused("no derivation satisfies the distortion limit")
    return OracleResult(best["score"], best["fv"], best["path"], explored)
