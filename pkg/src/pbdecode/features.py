"""Feature functions of the log-linear model and their weights.

Feature vectors are plain tuples/lists of 15 floats in this order::

    0  distortion           -|next_start - prev_end - 1|
    1  phrase penalty       1 per rule
    2  word penalty         target length
    3  unknown-word penalty 1 per pass-through rule
    4  language model       log10
    5-8  TM                 ln p(t|s), ln p(s|t), ln lex(t|s), ln lex(s|t)
    9-14 lexRO              ln of mono/swap/disc (previous), mono/swap/disc (next)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

N_FEATURES = 15
DISTORTION, PHRASE, WORD, UNKNOWN, LM = 0, 1, 2, 3, 4
TM = 5
LEXRO = 9
N_TM = 4
N_LEXRO = 6

# names used in weight files, with their arity, in vector order
WEIGHT_NAMES = (
    ("Distortion0", 1),
    ("PhrasePenalty0", 1),
    ("WordPenalty0", 1),
    ("UnknownWordPenalty0", 1),
    ("LM0", 1),
    ("TranslationModel0", N_TM),
    ("LexicalReordering0", N_LEXRO),
)

FEATURE_LABELS = (
    "distortion", "phrase_penalty", "word_penalty", "unknown_penalty", "lm",
    "tm_p_t_s", "tm_p_s_t", "tm_lex_t_s", "tm_lex_s_t",
    "lexro_mono_prev", "lexro_swap_prev", "lexro_disc_prev",
    "lexro_mono_next", "lexro_swap_next", "lexro_disc_next",
)

UNIFORM_LEXRO = math.log(1.0 / 3.0)
DEFAULT_OOV_FLOOR = math.log(1e-9)


class ConfigError(ValueError):
    pass


class Orientation(enum.IntEnum):
    MONOTONE = 0
    SWAP = 1
    DISCONTINUOUS = 2


class Direction(enum.IntEnum):
    PREVIOUS = 0
    NEXT = 1


# sentinel span "before" the sentence: a rule starting at 0 is monotone
START_SPAN = (-1, 0)


@dataclass(frozen=True)
class WeightVector:
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != N_FEATURES:
            raise ConfigError(f"expected {N_FEATURES} weights, got {len(self.values)}")

    def __getitem__(self, i):
        return self.values[i]

    def __len__(self):
        return N_FEATURES

    def scaled(self, c: float) -> "WeightVector":
        return WeightVector(tuple(c * v for v in self.values))

    @classmethod
    def from_mapping(cls, mapping: dict[str, list[float]]) -> "WeightVector":
        vals: list[float] = []
        for name, arity in WEIGHT_NAMES:
            if name not in mapping:
                raise ConfigError(f"missing weight {name}")
            got = mapping[name]
            if len(got) != arity:
                raise ConfigError(f"{name} needs {arity} values, got {len(got)}")
            vals.extend(got)
        extra = set(mapping) - {n for n, _ in WEIGHT_NAMES}
        if extra:
            raise ConfigError(f"unknown weights: {', '.join(sorted(extra))}")
        return cls(tuple(vals))

    def to_text(self) -> str:
        out, i = [], 0
        for name, arity in WEIGHT_NAMES:
            out.append(f"{name}= " + " ".join(repr(v) for v in self.values[i:i + arity]))
            i += arity
        return "\n".join(out) + "\n"


def parse_weights(text: str) -> WeightVector:
    """Parse ``Name= v1 v2 ...`` lines; ``#`` starts a comment, ``[weight]`` headers are skipped."""
    mapping: dict[str, list[float]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"weights line {lineno}: missing '='")
        name, _, rest = line.partition("=")
        try:
            mapping[name.strip()] = [float(v) for v in rest.split()]
        except ValueError:
            raise ConfigError(f"weights line {lineno}: non-numeric weight") from None
    return WeightVector.from_mapping(mapping)


def load_weights(path) -> WeightVector:
    with open(path, encoding="utf-8") as f:
        return parse_weights(f.read())


def distortion_penalty(prev_end: int, next_start: int) -> int:
    return -abs(next_start - prev_end - 1)


def classify_orientation(prev: tuple[int, int], cur: tuple[int, int]) -> Orientation:
    """Orientation of ``cur`` relative to the previously translated span.

    The same value is the "next" orientation of the previous rule.
    """
    if cur[0] == prev[1]:
        return Orientation.MONOTONE
    if cur[1] == prev[0]:
        return Orientation.SWAP
    return Orientation.DISCONTINUOUS


def final_orientation(last: tuple[int, int], length: int) -> Orientation:
    return Orientation.MONOTONE if last[1] == length else Orientation.DISCONTINUOUS


def lexro_index(orientation: int, direction: int) -> int:
    return 3 * direction + orientation


def lexro_score(rule, orientation: int, direction: int) -> float:
    return rule.lexro_scores[3 * direction + orientation]


def penalties(rule) -> dict[str, int]:
    return {
        "phrase_penalty": 1,
        "word_penalty": len(rule.target),
        "unknown_penalty": 1 if rule.passthrough else 0,
    }


def total_score(fv, w: WeightVector) -> float:
    if len(fv) != N_FEATURES:
        raise ConfigError(f"feature vector has arity {len(fv)}, expected {N_FEATURES}")
    total = 0.0
    for f, l in zip(fv, w.values):
        total += f * l
    return total
