"""Model compiler: text phrase table + lexRO file -> binary rule table."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import time
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from ..features import N_LEXRO, N_TM, UNIFORM_LEXRO
from . import codec as codecs
from .probing import SEPARATOR_ID, Header, write_table
from .rules import TranslationRule
from .text import parse_counts, parse_lexro, parse_phrase_table

log = logging.getLogger(__name__)

RULES_MAGIC = b"SWPT"
LEXRO_MAGIC = b"SWLR"
_LEXRO_BODY = struct.Struct("<6f")


@dataclass
class BuildOptions:
    table_limit: int = 100
    compress_target: bool = True
    cache_size: int = 0
    hash_load_factor: float = 0.5
    # fingerprint width; below 64 only to force collisions in tests
    fingerprint_bits: int = 64

    def __post_init__(self):
        if self.table_limit < 1:
            raise ValueError("table_limit must be >= 1")
        if self.cache_size < 0:
            raise ValueError("cache_size must be >= 0")
        if not 0.0 < self.hash_load_factor < 1.0:
            raise ValueError("hash_load_factor must be in (0, 1)")
        if not 1 <= self.fingerprint_bits <= 64:
            raise ValueError("fingerprint_bits must be in [1, 64]")


@dataclass
class BuildReport:
    source_phrases: int = 0
    rules_read: int = 0
    rules_kept: int = 0
    rules_pruned: int = 0
    lexro_fallback: int = 0
    lexro_fallback_fraction: float = 0.0
    max_quantization_error: float = 0.0
    cache_entries: int = 0
    fingerprint_collisions: int = 0
    cache_selection: str = "counts"
    codec: str = "compressed"
    payload_bytes: int = 0
    index_bytes: int = 0
    lexro_store_bytes: int = 0
    seconds: float = 0.0
    notes: list[str] = field(default_factory=list)


def prune(targets: dict, table_limit: int) -> list:
    """Targets ordered by p(t|s) descending (ties: target tokens), first ``table_limit``."""
    return sorted(targets, key=lambda t: (-targets[t][0], t))[:table_limit]


def build_cache_manifest(counts: dict[tuple[str, ...], float], cache_size: int) -> list[tuple[str, ...]]:
    """The ``cache_size`` source phrases with the highest count.

    Ties go to the lexicographically smaller space-joined phrase.
    """
    if cache_size <= 0:
        return []
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], " ".join(kv[0])))
    return [src for src, _ in ranked[:cache_size]]


def _read(src) -> list[str]:
    if src is None:
        return []
    if isinstance(src, (list, tuple)):
        return list(src)
    with open(src, encoding="utf-8") as f:
        return f.read().splitlines()


def _ln(p: float) -> float:
    return math.log(p)


def build_binary(phrase_table, lexro, counts, options: BuildOptions, out_dir) -> BuildReport:
    """Compile text inputs into ``out_dir``.

    Each input is a path or a list of lines; ``lexro`` and ``counts`` may be
    None.
    """
    t0 = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    report = BuildReport(codec="compressed" if options.compress_target else "identity")
    codec = codecs.COMPRESSED if options.compress_target else codecs.IDENTITY

    lexro_table = parse_lexro(_read(lexro))
    counts_map = parse_counts(_read(counts)) if counts is not None else None

    vocab: dict[str, int] = {}
    words: list[str] = []

    def ids(tokens):
        out = []
        for t in tokens:
            i = vocab.get(t)
            if i is None:
                i = vocab[t] = len(words)
                words.append(t)
            out.append(i)
        return out

    grouped: dict[tuple, dict] = defaultdict(dict)
    pt_counts: dict[tuple, float] = {}
    for e in parse_phrase_table(_read(phrase_table)):
        report.rules_read += 1
        p_st, lex_st, p_ts, lex_ts = e.probs
        grouped[e.source][e.target] = (p_ts, (p_ts, p_st, lex_ts, lex_st))
        if len(e.counts) >= 2:
            # lines of one source phrase should agree; max keeps input order irrelevant
            pt_counts[e.source] = max(pt_counts.get(e.source, 0.0), e.counts[1])

    if counts_map is not None:
        source_counts = {s: counts_map.get(s, 0.0) for s in grouped}
    elif pt_counts:
        report.cache_selection = "phrase-table count field"
        source_counts = {s: pt_counts.get(s, 0.0) for s in grouped}
    else:
        report.cache_selection = "p(t|s) mass"
        source_counts = None

    max_err = 0.0
    uniform = codecs.f32(UNIFORM_LEXRO)
    collections: dict[tuple, list[TranslationRule]] = {}
    ranking: dict[tuple, float] = {}
    for src in sorted(grouped):
        targets = grouped[src]
        kept = prune(targets, options.table_limit)
        report.rules_pruned += len(targets) - len(kept)
        if source_counts is None:
            raw_count = sum(targets[t][0] for t in kept)
        else:
            raw_count = source_counts[src]
        ranking[src] = raw_count
        count = codecs.f32(raw_count)
        rules = []
        for tgt in kept:
            tm = []
            for p in targets[tgt][1]:
                v = _ln(p)
                q = codecs.f32(v)
                max_err = max(max_err, abs(q - v))
                tm.append(q)
            dist = lexro_table.get((src, tgt))
            if dist is None:
                report.lexro_fallback += 1
                lx = (uniform,) * N_LEXRO
            else:
                lx = []
                for p in dist:
                    v = _ln(p)
                    q = codecs.f32(v)
                    max_err = max(max_err, abs(q - v))
                    lx.append(q)
                lx = tuple(lx)
            rules.append(TranslationRule(src, tgt, tuple(tm), lx, count))
        collections[src] = rules
        report.rules_kept += len(rules)
    report.source_phrases = len(collections)
    report.max_quantization_error = max_err
    if report.rules_kept:
        report.lexro_fallback_fraction = report.lexro_fallback / report.rules_kept

    # ids are assigned in sorted source order so vocab is independent of file order
    records = []
    for src, rules in collections.items():
        key = ids(src)
        for r in rules:
            ids(r.target)
        records.append((key, codecs.encode_targets(rules, codec, vocab)))

    vocab_bytes = ("\n".join(words) + "\n").encode("utf-8") if words else b""
    with open(os.path.join(out_dir, "vocab.txt"), "wb") as f:
        f.write(vocab_bytes)

    header = Header(codec=codec, fp_bits=options.fingerprint_bits, table_limit=options.table_limit,
                    tm_arity=N_TM, lexro_arity=N_LEXRO, n_rules=report.rules_kept,
                    vocab_crc=zlib.crc32(vocab_bytes))
    header = write_table(os.path.join(out_dir, "rules"), RULES_MAGIC, records, header,
                         options.hash_load_factor)
    report.payload_bytes = header.payload_size
    report.fingerprint_collisions = header.collisions
    report.index_bytes = os.path.getsize(os.path.join(out_dir, "rules.idx"))

    # the separate-file lexRO store holds the same quantized values
    lx_records = []
    for src, rules in collections.items():
        for r in rules:
            if (src, r.target) in lexro_table:
                key = [vocab[w] for w in src] + [SEPARATOR_ID] + [vocab[w] for w in r.target]
                lx_records.append((key, _LEXRO_BODY.pack(*r.lexro_scores)))
    lx_header = Header(fp_bits=options.fingerprint_bits, lexro_arity=N_LEXRO,
                       n_rules=len(lx_records), vocab_crc=zlib.crc32(vocab_bytes))
    lx_header = write_table(os.path.join(out_dir, "lexro"), LEXRO_MAGIC, lx_records, lx_header,
                            options.hash_load_factor)
    report.lexro_store_bytes = lx_header.payload_size

    manifest = build_cache_manifest(ranking, options.cache_size)
    report.cache_entries = len(manifest)
    with open(os.path.join(out_dir, "cache.txt"), "w", encoding="utf-8") as f:
        for src in manifest:
            f.write(" ".join(src) + "\n")

    report.seconds = time.perf_counter() - t0
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(asdict(report), f, indent=2)
    log.info("built %d source phrases, %d rules (%s codec) in %.2fs", report.source_phrases,
             report.rules_kept, report.codec, report.seconds)
    return report
