"""Corpus-level BLEU-4 against a single reference per line."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass


class BLEUError(ValueError):
    pass


@dataclass
class BLEUResult:
    score: float
    precisions: list[float]
    matches: list[int]
    totals: list[int]
    hyp_length: int
    ref_length: int
    brevity_penalty: float


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_n: int = 4) -> BLEUResult:
    """Clipped n-gram matches and lengths are summed over the corpus first.

    Any zero precision makes the score 0 (no smoothing).
    """
    hypotheses, references = list(hypotheses), list(references)
    if len(hypotheses) != len(references):
        raise BLEUError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise BLEUError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = hyp.split() if isinstance(hyp, str) else list(hyp)
        r = ref.split() if isinstance(ref, str) else list(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BLEUResult(score, precisions, matches, totals, hyp_len, ref_len, bp)


def bleu(hypotheses, references) -> float:
    return corpus_bleu(hypotheses, references).score
