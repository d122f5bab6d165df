"""Readers for the Moses-style ``|||`` text files the model compiler consumes."""

from __future__ import annotations

import math
from typing import Iterable, Iterator, NamedTuple

SEP = "|||"


class TextFormatError(ValueError):
    def __init__(self, name: str, lineno: int, msg: str):
        super().__init__(f"{name} line {lineno}: {msg}")
        self.lineno = lineno


class PhraseEntry(NamedTuple):
    lineno: int
    source: tuple[str, ...]
    target: tuple[str, ...]
    # p(s|t), lex(s|t), p(t|s), lex(t|s) as probabilities
    probs: tuple[float, float, float, float]
    counts: tuple[float, ...]


def _fields(line: str) -> list[str]:
    return [f.strip() for f in line.split(SEP)]


def _probs(toks: list[str], n: int, name: str, lineno: int) -> tuple[float, ...]:
    if len(toks) != n:
        raise TextFormatError(name, lineno, f"expected {n} scores, got {len(toks)}")
    try:
        vals = tuple(float(t) for t in toks)
    except ValueError:
        raise TextFormatError(name, lineno, "non-numeric score") from None
    for v in vals:
        if not (0.0 < v <= 1.0) or math.isnan(v):
            raise TextFormatError(name, lineno, f"probability {v} outside (0, 1]")
    return vals


def parse_phrase_table(lines: Iterable[str], name: str = "phrase table") -> Iterator[PhraseEntry]:
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        f = _fields(line)
        if len(f) < 3:
            raise TextFormatError(name, lineno, "expected at least 3 '|||' fields")
        src, tgt = tuple(f[0].split()), tuple(f[1].split())
        if not src or not tgt:
            raise TextFormatError(name, lineno, "empty source or target phrase")
        probs = _probs(f[2].split(), 4, name, lineno)
        counts: tuple[float, ...] = ()
        if len(f) >= 5 and f[4]:
            try:
                counts = tuple(float(t) for t in f[4].split())
            except ValueError:
                raise TextFormatError(name, lineno, "non-numeric count field") from None
        yield PhraseEntry(lineno, src, tgt, probs, counts)


def parse_lexro(lines: Iterable[str], name: str = "lexro") -> dict[tuple[tuple[str, ...], tuple[str, ...]], tuple[float, ...]]:
    table = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        f = _fields(line)
        if len(f) != 3:
            raise TextFormatError(name, lineno, "expected 'src ||| tgt ||| 6 probabilities'")
        src, tgt = tuple(f[0].split()), tuple(f[1].split())
        if not src or not tgt:
            raise TextFormatError(name, lineno, "empty source or target phrase")
        table[(src, tgt)] = _probs(f[2].split(), 6, name, lineno)
    return table


def parse_counts(lines: Iterable[str], name: str = "counts") -> dict[tuple[str, ...], float]:
    counts = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        f = _fields(line)
        if len(f) != 2:
            raise TextFormatError(name, lineno, "expected 'src ||| count'")
        src = tuple(f[0].split())
        try:
            c = float(f[1])
        except ValueError:
            raise TextFormatError(name, lineno, "non-numeric count") from None
        if not src or c < 0:
            raise TextFormatError(name, lineno, "empty phrase or negative count")
        counts[src] = c
    return counts


def format_rule_line(source, target, probs, counts=()) -> str:
    p = " ".join(repr(x) for x in probs)
    c = " ".join(repr(x) for x in counts)
    return f"{' '.join(source)} ||| {' '.join(target)} ||| {p} ||| ||| {c}"
