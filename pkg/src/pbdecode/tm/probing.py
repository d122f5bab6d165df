"""Linear-probing hash files keyed by sequences of u32 ids.

An ``.idx`` file holds a 64-byte header followed by ``n_slots`` slots of
``u64 fingerprint, u64 offset, u32 length, u32 flags``.  The ``.dat`` file
holds the records; each record starts with ``u16 key_len, key_len x u32``
so a fingerprint match is always confirmed against the exact key.
See docs/FORMAT.md for the byte layout.
"""

from __future__ import annotations

import hashlib
import mmap
import os
import struct
import zlib

FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHBBIHHQQQQIIII")
assert HEADER.size == 64
SLOT = struct.Struct("<QQII")
KEYLEN = struct.Struct("<H")
OCCUPIED = 1
SEPARATOR_ID = 0xFFFFFFFF


class TableFormatError(IOError):
    pass


def fingerprint(ids, bits: int = 64) -> int:
    h = hashlib.blake2b(" ".join(map(str, ids)).encode("ascii"), digest_size=8).digest()
    fp = int.from_bytes(h, "little")
    if bits < 64:
        fp &= (1 << bits) - 1
    return fp


def pack_key(ids) -> bytes:
    return KEYLEN.pack(len(ids)) + struct.pack(f"<{len(ids)}I", *ids)


class Header:
    fields = ("magic", "version", "codec", "fp_bits", "table_limit", "tm_arity",
              "lexro_arity", "n_keys", "n_rules", "n_slots", "payload_size",
              "index_crc", "vocab_crc", "max_key_len", "header_crc")

    def __init__(self, **kw):
        for f in self.fields:
            setattr(self, f, kw.get(f, 0))

    def pack(self) -> bytes:
        vals = [getattr(self, f) for f in self.fields]
        vals[-1] = 0
        body = HEADER.pack(*vals)
        crc = zlib.crc32(body[:60])
        return body[:60] + struct.pack("<I", crc)

    @classmethod
    def unpack(cls, buf: bytes, magic: bytes) -> "Header":
        if len(buf) < HEADER.size:
            raise TableFormatError("truncated header")
        vals = HEADER.unpack_from(buf, 0)
        h = cls(**dict(zip(cls.fields, vals)))
        if h.magic != magic:
            raise TableFormatError(f"bad magic {h.magic!r}, expected {magic!r}")
        if h.version != FORMAT_VERSION:
            raise TableFormatError(f"format version {h.version}, expected {FORMAT_VERSION}")
        if zlib.crc32(buf[:60]) != h.header_crc:
            raise TableFormatError("header checksum mismatch")
        return h


def write_table(prefix: str, magic: bytes, records, header: Header, load_factor: float = 0.5) -> Header:
    """Write ``prefix.idx`` and ``prefix.dat``.

    ``records`` is a sequence of ``(key ids, body bytes)``.
    """
    if not 0.0 < load_factor < 1.0:
        raise ValueError("load factor must be in (0, 1)")
    n = len(records)
    n_slots = 1
    while n_slots * load_factor < max(n, 1):
        n_slots <<= 1
    slots = bytearray(SLOT.size * n_slots)
    mask = n_slots - 1
    offset = 0
    max_key = 0
    seen_fps = set()
    collisions = 0
    with open(prefix + ".dat", "wb") as dat:
        for ids, body in records:
            rec = pack_key(ids) + body
            fp = fingerprint(ids, header.fp_bits)
            # equal fingerprints are told apart by the exact key stored in each record
            if fp in seen_fps:
                collisions += 1
            seen_fps.add(fp)
            i = fp & mask
            while SLOT.unpack_from(slots, i * SLOT.size)[3] & OCCUPIED:
                i = (i + 1) & mask
            SLOT.pack_into(slots, i * SLOT.size, fp, offset, len(rec), OCCUPIED)
            dat.write(rec)
            offset += len(rec)
            max_key = max(max_key, len(ids))
    header.magic = magic
    header.version = FORMAT_VERSION
    header.n_keys = n
    header.n_slots = n_slots
    header.payload_size = offset
    header.index_crc = zlib.crc32(slots)
    header.max_key_len = max_key
    header.collisions = collisions
    with open(prefix + ".idx", "wb") as idx:
        idx.write(header.pack())
        idx.write(slots)
    return header


class ProbingReader:
    """Read side: index held in memory, payload memory-mapped."""

    def __init__(self, prefix: str, magic: bytes):
        try:
            with open(prefix + ".idx", "rb") as f:
                buf = f.read()
        except FileNotFoundError as e:
            raise TableFormatError(f"missing index file {e.filename}") from None
        self.header = h = Header.unpack(buf, magic)
        if h.fp_bits < 1 or h.fp_bits > 64:
            raise TableFormatError(f"bad fingerprint width {h.fp_bits}")
        if h.n_slots & (h.n_slots - 1) or not h.n_slots:
            raise TableFormatError("slot count is not a power of two")
        expect = HEADER.size + SLOT.size * h.n_slots
        if len(buf) != expect:
            raise TableFormatError(f"index file is {len(buf)} bytes, expected {expect}")
        self.slots = buf[HEADER.size:]
        if zlib.crc32(self.slots) != h.index_crc:
            raise TableFormatError("index checksum mismatch")
        self.mask = h.n_slots - 1
        size = os.path.getsize(prefix + ".dat")
        if size != h.payload_size:
            raise TableFormatError(f"payload is {size} bytes, expected {h.payload_size}")
        if size:
            with open(prefix + ".dat", "rb") as f:
                self.payload = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
        else:
            self.payload = b""
        self.probes = 0

    def find(self, ids) -> bytes | None:
        """Body bytes stored under ``ids``, or None."""
        fp = fingerprint(ids, self.header.fp_bits)
        key = pack_key(ids)
        klen = len(key)
        slots, payload, mask = self.slots, self.payload, self.mask
        i = fp & mask
        unpack = SLOT.unpack_from
        while True:
            sfp, off, length, flags = unpack(slots, i * 24)
            self.probes += 1
            if not flags & OCCUPIED:
                return None
            if sfp == fp and payload[off:off + klen] == key:
                return payload[off + klen:off + length]
            i = (i + 1) & mask

    def items(self):
        """Yield ``(key ids, body)`` for every stored record."""
        for i in range(self.header.n_slots):
            _, off, length, flags = SLOT.unpack_from(self.slots, i * 24)
            if flags & OCCUPIED:
                (n,) = KEYLEN.unpack_from(self.payload, off)
                ids = struct.unpack_from(f"<{n}I", self.payload, off + 2)
                yield ids, self.payload[off + 2 + 4 * n:off + length]

    def close(self):
        if isinstance(self.payload, mmap.mmap):
            self.payload.close()
