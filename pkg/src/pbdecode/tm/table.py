"""Read side of the compiled rule table."""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

from ..features import N_LEXRO, UNIFORM_LEXRO
from . import codec as codecs
from .build import LEXRO_MAGIC, RULES_MAGIC
from .probing import SEPARATOR_ID, ProbingReader, TableFormatError

__all__ = ["RuleTable", "LexROStore", "LookupStats", "TableFormatError", "open_table"]

_LEXRO_BODY = struct.Struct("<6f")


@dataclass
class LookupStats:
    lookups: int = 0
    cache_hits: int = 0
    decodes: int = 0
    absent: int = 0

    def merge(self, other: "LookupStats") -> None:
        self.lookups += other.lookups
        self.cache_hits += other.cache_hits
        self.decodes += other.decodes
        self.absent += other.absent

    @property
    def hit_rate(self) -> float:
        return self.cache_hits / self.lookups if self.lookups else 0.0


def _read_vocab(path: str, crc: int) -> list[str]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except FileNotFoundError:
        raise TableFormatError(f"missing vocabulary {path}") from None
    if zlib.crc32(raw) != crc:
        raise TableFormatError("vocabulary checksum mismatch")
    return raw.decode("utf-8").splitlines()


class RuleTable:
    """Load-on-demand rule table with a static cache.

    The hash index and vocabulary are loaded at open; the payload file is
    memory-mapped and records are decoded per lookup.  Phrases listed in the
    cache manifest are decoded once at open and served from a dict.
    """

    def __init__(self, directory, cache_size: int | None = None):
        self.directory = str(directory)
        self.reader = ProbingReader(os.path.join(self.directory, "rules"), RULES_MAGIC)
        h = self.reader.header
        if h.codec not in (codecs.IDENTITY, codecs.COMPRESSED):
            raise TableFormatError(f"unknown codec id {h.codec}")
        if h.lexro_arity != N_LEXRO:
            raise TableFormatError(f"lexRO arity {h.lexro_arity} not supported")
        self.codec = h.codec
        self.table_limit = h.table_limit
        self.max_phrase_len = h.max_key_len
        self.words = _read_vocab(os.path.join(self.directory, "vocab.txt"), h.vocab_crc)
        self.vocab = {w: i for i, w in enumerate(self.words)}
        self.cache: dict[tuple[str, ...], tuple] = {}
        manifest = os.path.join(self.directory, "cache.txt")
        if os.path.exists(manifest):
            with open(manifest, encoding="utf-8") as f:
                phrases = [tuple(line.split()) for line in f if line.strip()]
            if cache_size is not None:
                phrases = phrases[:max(cache_size, 0)]
            for src in phrases:
                coll = self._load(src)
                if coll is None:
                    raise TableFormatError(f"cache manifest phrase {' '.join(src)!r} not in table")
                self.cache[src] = coll

    @property
    def cache_entries(self) -> int:
        return len(self.cache)

    def _load(self, source: tuple[str, ...]):
        get = self.vocab.get
        ids = []
        for t in source:
            i = get(t)
            if i is None:
                return None
            ids.append(i)
        body = self.reader.find(ids)
        if body is None:
            return None
        return codecs.decode_targets(body, self.codec, self.words, source)

    def lookup(self, source, stats: LookupStats | None = None):
        source = tuple(source)
        hit = self.cache.get(source)
        if stats is not None:
            stats.lookups += 1
            if hit is not None:
                stats.cache_hits += 1
        if hit is not None:
            return hit
        coll = self._load(source)
        if stats is not None:
            if coll is None:
                stats.absent += 1
            else:
                stats.decodes += 1
        return coll

    def source_phrases(self):
        for ids, _ in self.reader.items():
            yield tuple(self.words[i] for i in ids)

    def close(self):
        self.reader.close()


def open_table(directory, cache_size: int | None = None) -> RuleTable:
    return RuleTable(directory, cache_size)


class LexROStore:
    """The lexRO distributions as a separate probing file keyed by (source, target)."""

    def __init__(self, directory):
        self.directory = str(directory)
        self.reader = ProbingReader(os.path.join(self.directory, "lexro"), LEXRO_MAGIC)
        self.words = _read_vocab(os.path.join(self.directory, "vocab.txt"), self.reader.header.vocab_crc)
        self.vocab = {w: i for i, w in enumerate(self.words)}
        self.fallback = (codecs.f32(UNIFORM_LEXRO),) * N_LEXRO
        self.queries = 0

    def lookup(self, source, target) -> tuple[float, ...]:
        self.queries += 1
        get = self.vocab.get
        key = []
        for t in source:
            i = get(t)
            if i is None:
                return self.fallback
            key.append(i)
        key.append(SEPARATOR_ID)
        for t in target:
            i = get(t)
            if i is None:
                return self.fallback
            key.append(i)
        body = self.reader.find(key)
        if body is None:
            return self.fallback
        return _LEXRO_BODY.unpack(body)
