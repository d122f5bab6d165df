"""Command-line entry point: ``pbdecode <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile

from . import __version__
from .features import ConfigError


def _read_lines(path):
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def _overrides(args) -> dict:
    return {
        "threads": args.threads,
        "pop_limit": args.pop_limit,
        "distortion_limit": args.distortion_limit,
        "stack": args.stack,
        "cache_size": args.cache_size,
        "report": args.report,
        "scores": args.scores,
        "lexro": args.lexro,
    }


def _load_config(args):
    from .driver import DecoderConfig

    cfg = DecoderConfig.from_ini(args.config, _overrides(args))
    if getattr(args, "input", None):
        cfg.input = args.input
    if getattr(args, "output", None):
        cfg.output = args.output
    return cfg


def cmd_compile(args):
    from .tm.build import BuildOptions, build_binary

    opts = BuildOptions(table_limit=args.table_limit, compress_target=args.compress == "on",
                        cache_size=args.cache_size, hash_load_factor=args.load_factor)
    report = build_binary(args.pt, args.lexro, args.counts, opts, args.out)
    print(json.dumps(report.__dict__, indent=2))


def cmd_decode(args):
    from .driver import run

    report = run(_load_config(args))
    if not args.report:
        sys.stderr.write(report.to_text())
    return 1 if report.errors and args.strict else 0


def cmd_oracle(args):
    from .driver import load_models
    from .oracle import exhaustive_decode

    cfg = _load_config(args)
    cfg.validate()
    models = load_models(cfg).models
    limit = cfg.search.distortion_limit
    for line in _read_lines(args.input):
        res = exhaustive_decode(models, line, limit)
        print(f"{res.translation}\t{res.score!r}\t{res.explored}")


def cmd_bleu(args):
    from .bleu import corpus_bleu

    res = corpus_bleu(_read_lines(args.hypotheses), _read_lines(args.references))
    print(f"bleu\t{res.score:.6f}")
    for n, p in enumerate(res.precisions, 1):
        print(f"p{n}\t{p:.6f}")
    print(f"brevity_penalty\t{res.brevity_penalty:.6f}")
    print(f"hyp_length\t{res.hyp_length}")
    print(f"ref_length\t{res.ref_length}")


def cmd_gen(args):
    from .synth import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(seed=args.seed, n_sentences=args.sentences, mean_length=args.mean_length,
                         source_vocab=args.source_vocab, target_vocab=args.target_vocab,
                         oov_rate=args.oov_rate)
    paths = generate_synthetic(spec).write(args.out)
    for k, v in paths.items():
        print(f"{k}\t{v}")


def _preloaded(args):
    from .driver import load_models

    cfg = _load_config(args)
    cfg.validate()
    return cfg, load_models(cfg).models


def cmd_bench_scaling(args):
    from .bench import bench_scaling, format_rows, physical_cores

    cfg, models = _preloaded(args)
    counts = args.thread_list or list(range(1, physical_cores() + 1))
    rows = bench_scaling(models, _read_lines(args.input), cfg.search, counts, args.repeats)
    sys.stdout.write(format_rows(rows))


def cmd_bench_cache(args):
    from .bench import bench_cache, format_rows

    cfg, models = _preloaded(args)
    sizes = args.sizes or [0, 1000, 2000, 4000, 10000]
    rows = bench_cache(cfg.table, models, _read_lines(args.input), cfg.search, sizes, cfg.threads)
    base = rows[0]["translations"]
    for r in rows:
        r["identical_output"] = int(r.pop("translations") == base)
    sys.stdout.write(format_rows(rows))


def cmd_bench_codec(args):
    from .bench import bench_codec, format_rows, repetitive_phrase_table

    table = args.phrase_table or repetitive_phrase_table(args.rules, args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        rows = bench_codec(table, args.out or tmp, args.lookups, args.seed)
    sys.stdout.write(format_rows(rows))


def cmd_compare(args):
    from .bench import compare_scores, format_rows

    cmp = compare_scores(_read_lines(args.a_output), _read_lines(args.a_scores),
                         _read_lines(args.b_output), _read_lines(args.b_scores))
    sys.stdout.write(format_rows(cmp.rows()))


def _decoder_flags(p):
    p.add_argument("--config", required=True, help="decoder INI file")
    p.add_argument("--threads", type=int)
    p.add_argument("--pop-limit", help="integer or unlimited")
    p.add_argument("--distortion-limit", help="integer or unlimited")
    p.add_argument("--stack", choices=["cardinality", "coverage", "coverage-endpos"])
    p.add_argument("--cache-size", help="integer; default: the whole cache manifest")
    p.add_argument("--lexro", choices=["integrated", "separate"])
    p.add_argument("--report", help="write a text report here and key/value rows to REPORT.tsv")
    p.add_argument("--scores", help="write one model score per line here")
    p.add_argument("--input", help="source sentences (default: stdin)")
    p.add_argument("--output", help="translations (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbdecode", description="Phrase-based decoder with cube pruning.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a text phrase table into the binary format")
    p.add_argument("--pt", required=True, help="text phrase table")
    p.add_argument("--lexro", help="lexRO distributions (missing rules get a uniform one)")
    p.add_argument("--counts", help="source phrase counts for cache selection")
    p.add_argument("--out", required=True)
    p.add_argument("--table-limit", type=int, default=100)
    p.add_argument("--cache-size", type=int, default=0)
    p.add_argument("--compress", choices=["on", "off"], default="on")
    p.add_argument("--load-factor", type=float, default=0.5)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("decode", help="translate stdin (or --input) to stdout (or --output)")
    _decoder_flags(p)
    p.add_argument("--strict", action="store_true", help="exit 1 if any sentence failed")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("oracle", help="exhaustive decoding of short sentences")
    _decoder_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bleu", help="corpus BLEU-4")
    p.add_argument("hypotheses")
    p.add_argument("references")
    p.set_defaults(func=cmd_bleu)

    p = sub.add_parser("gen", help="generate a synthetic model and corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sentences", type=int, default=10000)
    p.add_argument("--mean-length", type=float, default=7.3)
    p.add_argument("--source-vocab", type=int, default=2000)
    p.add_argument("--target-vocab", type=int, default=2000)
    p.add_argument("--oov-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench-scaling", help="words/sec per thread count")
    _decoder_flags(p)
    p.add_argument("--thread-list", type=int, nargs="+")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench_scaling)

    p = sub.add_parser("bench-cache", help="hit rate per static cache size")
    _decoder_flags(p)
    p.add_argument("--sizes", type=int, nargs="+")
    p.set_defaults(func=cmd_bench_cache)

    p = sub.add_parser("bench-codec", help="file size and lookup time per codec")
    p.add_argument("--phrase-table")
    p.add_argument("--rules", type=int, default=10000)
    p.add_argument("--lookups", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_codec)

    p = sub.add_parser("compare", help="per-sentence score deltas between two runs")
    p.add_argument("a_output")
    p.add_argument("a_scores")
    p.add_argument("b_output")
    p.add_argument("b_scores")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (ConfigError, OSError, ValueError) as e:
        print(f"pbdecode: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
