from __future__ import annotations

from typing import NamedTuple


class TranslationRule(NamedTuple):
    """One source phrase -> target phrase entry.

    ``tm_scores`` are natural logs of p(t|s), p(s|t), lex(t|s), lex(s|t);
    ``lexro_scores`` are natural logs ordered mono/swap/disc for the previous
    direction, then mono/swap/disc for the next direction.
    """

    source: tuple[str, ...]
    target: tuple[str, ...]
    tm_scores: tuple[float, ...]
    lexro_scores: tuple[float, ...]
    source_count: float = 0.0
    passthrough: bool = False


# a TargetPhraseCollection is a tuple of rules sharing one source phrase,
# sorted by p(t|s) descending
TargetPhraseCollection = tuple
