"""Encoding of one source phrase's target collection.

identity
    ``u32 n_rules, f32 source_count`` then per rule
    ``u32 tlen, tlen x u32 word id, 4 x f32 tm, 6 x f32 lexro``, little-endian.
compressed
    the same fields with every integer as an unsigned LEB128 varint, the
    whole record run through raw deflate.
"""

from __future__ import annotations

import struct
import zlib
from functools import lru_cache

from .rules import TranslationRule

IDENTITY = 0
COMPRESSED = 1
CODECS = {"identity": IDENTITY, "compressed": COMPRESSED}
N_SCORES = 10

_HEAD = struct.Struct("<If")
_U32 = struct.Struct("<I")
_F32 = struct.Struct("<f")
_SCORES = struct.Struct("<10f")


class CodecError(ValueError):
    pass


def f32(x: float) -> float:
    return _F32.unpack(_F32.pack(x))[0]


def encode_varint(n: int, out: bytearray) -> None:
    if n < 0:
        raise ValueError("varint must be non-negative")
    while n >= 0x80:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    out.append(n)


def decode_varint(buf, pos: int) -> tuple[int, int]:
    n = shift = 0
    while True:
        b = buf[pos]
        pos += 1
        n |= (b & 0x7F) << shift
        if b < 0x80:
            return n, pos
        shift += 7
        if shift > 63:
            raise CodecError("varint too long")


@lru_cache(maxsize=None)
def _rule_struct(tlen: int) -> struct.Struct:
    return struct.Struct(f"<{tlen}I10f")


def encode_targets(rules, codec: int, vocab: dict[str, int]) -> bytes:
    count = rules[0].source_count if rules else 0.0
    if codec == IDENTITY:
        out = bytearray(_HEAD.pack(len(rules), count))
        for r in rules:
            ids = [vocab[w] for w in r.target]
            out += _U32.pack(len(ids))
            out += _rule_struct(len(ids)).pack(*ids, *r.tm_scores, *r.lexro_scores)
        return bytes(out)
    if codec == COMPRESSED:
        out = bytearray()
        encode_varint(len(rules), out)
        out += _F32.pack(count)
        for r in rules:
            encode_varint(len(r.target), out)
            for w in r.target:
                encode_varint(vocab[w], out)
            out += _SCORES.pack(*r.tm_scores, *r.lexro_scores)
        c = zlib.compressobj(9, zlib.DEFLATED, -15)
        return c.compress(bytes(out)) + c.flush()
    raise CodecError(f"unknown codec {codec}")


def decode_targets(data, codec: int, words, source: tuple[str, ...]) -> tuple[TranslationRule, ...]:
    try:
        if codec == IDENTITY:
            return _decode_identity(data, words, source)
        if codec == COMPRESSED:
            try:
                raw = zlib.decompress(bytes(data), -15)
            except zlib.error as e:
                raise CodecError(f"corrupt compressed record: {e}") from None
            return _decode_compressed(raw, words, source)
    except (struct.error, IndexError) as e:
        raise CodecError(f"corrupt record: {e}") from None
    raise CodecError(f"unknown codec {codec}")


def _decode_identity(data, words, source):
    n, count = _HEAD.unpack_from(data, 0)
    pos = _HEAD.size
    rules = []
    for _ in range(n):
        tlen = _U32.unpack_from(data, pos)[0]
        pos += 4
        if tlen == 0 or tlen > 4096:
            raise CodecError(f"bad target length {tlen}")
        st = _rule_struct(tlen)
        vals = st.unpack_from(data, pos)
        pos += st.size
        rules.append(TranslationRule(
            source, tuple([words[i] for i in vals[:tlen]]),
            vals[tlen:tlen + 4], vals[tlen + 4:], count))
    if pos != len(data):
        raise CodecError(f"{len(data) - pos} trailing bytes in record")
    return tuple(rules)


def _decode_compressed(raw, words, source):
    n, pos = decode_varint(raw, 0)
    count = _F32.unpack_from(raw, pos)[0]
    pos += 4
    rules = []
    for _ in range(n):
        tlen, pos = decode_varint(raw, pos)
        if tlen == 0 or tlen > 4096:
            raise CodecError(f"bad target length {tlen}")
        ids = []
        for _ in range(tlen):
            i, pos = decode_varint(raw, pos)
            ids.append(i)
        vals = _SCORES.unpack_from(raw, pos)
        pos += _SCORES.size
        rules.append(TranslationRule(
            source, tuple([words[i] for i in ids]), vals[:4], vals[4:], count))
    if pos != len(raw):
        raise CodecError(f"{len(raw) - pos} trailing bytes in record")
    return tuple(rules)
