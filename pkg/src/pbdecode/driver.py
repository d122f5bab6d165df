"""Batch decoding: configuration, model loading, parallel workers, reporting.

Workers are processes forked after the models are loaded, so every worker
reads the same memory-mapped table and the same LM without copying it.
The corpus is read up front; workers claim sentence indices from one shared
counter and post ``(index, result)`` messages back.  The parent drops each
result into a slot indexed by sentence id and writes the slots in order.
"""

from __future__ import annotations

import configparser
import logging
import multiprocessing as mp
import os
import queue as queue_mod
import sys
import time
from dataclasses import dataclass, field, fields

from .arena import PoolPair
from .features import ConfigError, load_weights
from .lm import load_arpa
from .search import Models, SearchParams, StackConfig, decode
from .tm.table import LexROStore, LookupStats, RuleTable, TableFormatError

log = logging.getLogger(__name__)

ERROR_MARKER = "<decode-error>"
PHASES = ("memory", "lm", "phrase_table", "lexro", "search")


def _limit(value: str) -> int | None:
    v = value.strip().lower()
    if v in ("none", "unlimited", "inf", "-1"):
        return None
    return int(v)


# config key -> (attribute, parser); dashes and underscores are interchangeable
_KEYS = {
    "table": ("table", str),
    "lm": ("lm", str),
    "weights": ("weights", str),
    "threads": ("threads", int),
    "input": ("input", str),
    "output": ("output", str),
    "report": ("report", str),
    "scores": ("scores", str),
    "cache_size": ("cache_size", _limit),
    "pop_limit": ("pop_limit", _limit),
    "distortion_limit": ("distortion_limit", _limit),
    "beam_size": ("beam_size", _limit),
    "stack": ("stack_config", StackConfig),
    "table_limit": ("table_limit", _limit),
    "max_sentence_length": ("max_sentence_length", int),
    "lexro": ("lexro_mode", str),
    "instrument_locks": ("instrument_locks", lambda v: v.strip().lower() in ("1", "true", "yes", "on")),
}
_SEARCH_FIELDS = {f.name for f in fields(SearchParams)}


@dataclass
class DecoderConfig:
    table: str = ""
    lm: str = ""
    weights: str = ""
    search: SearchParams = field(default_factory=SearchParams)
    threads: int = 1
    cache_size: int | None = None  # None: use the table's whole manifest
    input: str | None = None  # None or "-": stdin
    output: str | None = None  # None or "-": stdout
    report: str | None = None
    scores: str | None = None
    instrument_locks: bool = False

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("table", "lm", "weights"):
            path = getattr(self, name)
            if not path:
                raise ConfigError(f"no {name} path configured")
            if not os.path.exists(path):
                raise ConfigError(f"{name} path does not exist: {path}")
        if self.input not in (None, "-") and not os.path.exists(self.input):
            raise ConfigError(f"input path does not exist: {self.input}")

    def apply(self, key: str, value) -> None:
        k = key.strip().lower().replace("-", "_")
        if k not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, conv = _KEYS[k]
        if isinstance(value, str):
            try:
                value = conv(value)
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {e}") from None
        if attr in _SEARCH_FIELDS:
            setattr(self.search, attr, value)
            try:
                self.search.__post_init__()
            except ValueError as e:
                raise ConfigError(str(e)) from None
        else:
            setattr(self, attr, value)

    @classmethod
    def from_ini(cls, path, overrides: dict | None = None) -> "DecoderConfig":
        """Read a ``key = value`` file; a section header is optional.

        Relative paths resolve against the file's directory.  ``overrides``
        (already parsed or raw strings) win over the file.
        """
        with open(path, encoding="utf-8") as f:
            text = f.read()
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text if text.lstrip().startswith("[") else "[decoder]\n" + text)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        cfg = cls()
        base = os.path.dirname(os.path.abspath(path))
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.apply(key, value)
        for name in ("table", "lm", "weights", "input", "output", "report", "scores"):
            v = getattr(cfg, name)
            if v and v != "-" and not os.path.isabs(v):
                setattr(cfg, name, os.path.join(base, v))
        for key, value in (overrides or {}).items():
            if value is not None:
                cfg.apply(key, value)
        return cfg


@dataclass
class RunReport:
    sentences: int = 0
    words: int = 0
    threads: int = 1
    load_seconds: float = 0.0
    wall_seconds: float = 0.0
    worker_seconds: float = 0.0
    phases: dict = field(default_factory=lambda: dict.fromkeys(PHASES + ("misc",), 0.0))
    lookups: int = 0
    cache_hits: int = 0
    cache_entries: int = 0
    pool: dict = field(default_factory=dict)
    pool_resets: int = 0
    lock_acquisitions: int = 0
    instrumented: bool = False
    errors: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    translations: list = field(default_factory=list)

    @property
    def words_per_sec(self) -> float:
        return self.words / self.wall_seconds if self.wall_seconds > 0 else 0.0

    @property
    def cache_hit_rate(self) -> float:
        return self.cache_hits / self.lookups if self.lookups else 0.0

    @property
    def locks_per_sentence(self) -> float:
        return self.lock_acquisitions / self.sentences if self.sentences else 0.0

    def phase_percentages(self) -> dict[str, float]:
        total = self.worker_seconds
        if total <= 0:
            return dict.fromkeys(self.phases, 0.0)
        return {k: 100.0 * v / total for k, v in self.phases.items()}

    def rows(self) -> list[tuple[str, object]]:
        rows = [
            ("sentences", self.sentences),
            ("words", self.words),
            ("threads", self.threads),
            ("load_seconds", f"{self.load_seconds:.6f}"),
            ("wall_seconds", f"{self.wall_seconds:.6f}"),
            ("words_per_sec", f"{self.words_per_sec:.3f}"),
            ("cache_entries", self.cache_entries),
            ("cache_lookups", self.lookups),
            ("cache_hits", self.cache_hits),
            ("cache_hit_rate", f"{self.cache_hit_rate:.6f}"),
            ("errors", len(self.errors)),
            ("pool_resets", self.pool_resets),
        ]
        for k, v in sorted(self.pool.items()):
            rows.append((f"pool_{k}", v))
        for k, v in self.phase_percentages().items():
            rows.append((f"phase_{k}_pct", f"{v:.2f}"))
        if self.instrumented:
            rows.append(("lock_acquisitions", self.lock_acquisitions))
            rows.append(("locks_per_sentence", f"{self.locks_per_sentence:.3f}"))
        return rows

    def to_tsv(self) -> str:
        return "".join(f"{k}\t{v}\n" for k, v in self.rows())

    def to_text(self) -> str:
        pct = self.phase_percentages()
        lines = [
            f"Decoded {self.sentences} sentences ({self.words} words) with {self.threads} worker(s)",
            f"  model load     {self.load_seconds:10.3f} s (excluded from speed)",
            f"  decoding wall  {self.wall_seconds:10.3f} s",
            f"  speed          {self.words_per_sec:10.1f} words/s",
            f"  cache hit rate {100 * self.cache_hit_rate:10.2f} % ({self.cache_entries} entries)",
            "  time profile (share of worker time):",
        ]
        for k in PHASES + ("misc",):
            lines.append(f"    {k:<13}{pct.get(k, 0.0):7.2f} %")
        if self.errors:
            lines.append(f"  {len(self.errors)} sentence(s) failed:")
            for idx, msg in self.errors[:20]:
                lines.append(f"    line {idx + 1}: {msg}")
        return "\n".join(lines) + "\n"


# -- model loading ------------------------------------------------------------

@dataclass
class LoadedModels:
    models: Models
    seconds: float


def load_models(config: DecoderConfig) -> LoadedModels:
    t0 = time.perf_counter()
    try:
        table = RuleTable(config.table, config.cache_size)
    except (OSError, TableFormatError) as e:
        raise ConfigError(f"cannot open rule table {config.table}: {e}") from e
    try:
        lm = load_arpa(config.lm)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot load language model {config.lm}: {e}") from e
    try:
        weights = load_weights(config.weights)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot load weights {config.weights}: {e}") from e
    store = None
    if config.search.lexro_mode == "separate":
        try:
            store = LexROStore(config.table)
        except (OSError, TableFormatError) as e:
            raise ConfigError(f"cannot open lexRO store in {config.table}: {e}") from e
    return LoadedModels(Models(table, lm, weights, store), time.perf_counter() - t0)


# -- workers --------------------------------------------------------------------

class LocalCursor:
    def __init__(self, n: int):
        self.n = n
        self.value = 0
        self.acquisitions = 0

    def next(self) -> int | None:
        self.acquisitions += 1
        if self.value >= self.n:
            return None
        i = self.value
        self.value += 1
        return i


class ListCursor:
    """Hands out a fixed list of indices."""

    def __init__(self, indices):
        self.indices = list(indices)
        self.pos = 0
        self.acquisitions = 0

    def next(self) -> int | None:
        self.acquisitions += 1
        if self.pos >= len(self.indices):
            return None
        self.pos += 1
        return self.indices[self.pos - 1]


class SharedCursor:
    """Next-sentence counter shared between processes."""

    def __init__(self, n: int, ctx):
        self.n = n
        self.counter = ctx.Value("q", 0)
        self.acquisitions = 0

    def next(self) -> int | None:
        with self.counter.get_lock():
            self.acquisitions += 1
            i = self.counter.value
            if i >= self.n:
                return None
            self.counter.value = i + 1
        return i


@dataclass
class WorkerSummary:
    worker: int
    sentences: int = 0
    seconds: float = 0.0
    phases: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    lookup: LookupStats = field(default_factory=LookupStats)
    pool: dict = field(default_factory=dict)
    pool_resets: int = 0
    max_sentence_high_water: int = 0
    lock_acquisitions: int = 0


def worker_loop(models: Models, sentences, params: SearchParams, cursor, post,
                pools: PoolPair | None = None, worker: int = 0, on_claim=None) -> WorkerSummary:
    """Decode sentences claimed from ``cursor`` until it runs dry.

    ``post(index, translation, score, error, words)`` receives each result.
    The ephemeral pool is reset after every sentence.
    """
    pools = pools or PoolPair()
    summary = WorkerSummary(worker)
    stats = summary.lookup
    t_start = time.perf_counter()
    while True:
        idx = cursor.next()
        if idx is None:
            break
        if on_claim is not None:
            on_claim(idx)
        tokens = sentences[idx].split()
        try:
            res = decode(models, tokens, params, pools=pools, lookup_stats=stats)
            translation, score, error = res.translation, res.score, None
            timing = res.stats.get("timing")
            if timing:
                for k in PHASES:
                    summary.phases[k] += timing.get(k, 0.0)
        except Exception as e:  # noqa: BLE001 - one bad sentence must not stop the run
            translation, score, error = ERROR_MARKER, float("nan"), f"{type(e).__name__}: {e}"
        t = time.perf_counter()
        hw = pools.ephemeral.in_use
        if hw > summary.max_sentence_high_water:
            summary.max_sentence_high_water = hw
        pools.reset_ephemeral()
        summary.phases["memory"] += time.perf_counter() - t
        summary.pool_resets += 1
        summary.sentences += 1
        post(idx, translation, score, error, len(tokens))
    summary.seconds = time.perf_counter() - t_start
    summary.pool = {
        "ephemeral_capacity": pools.ephemeral.total_capacity,
        "ephemeral_high_water": pools.ephemeral.high_water_mark,
        "persistent_capacity": pools.persistent.total_capacity,
    }
    summary.lock_acquisitions = cursor.acquisitions
    return summary


def _process_main(wid, models, sentences, params, cursor, results, claimed):
    def post(idx, translation, score, error, words):
        # the queue put is the second critical section
        cursor.acquisitions += 1
        results.put(("result", idx, translation, score, error, words))

    def on_claim(idx):
        claimed[wid] = idx

    try:
        summary = worker_loop(models, sentences, params, cursor, post, worker=wid, on_claim=on_claim)
    except BaseException as e:  # noqa: BLE001
        results.put(("crash", wid, f"{type(e).__name__}: {e}"))
        raise
    claimed[wid] = -1
    results.put(("done", wid, summary))


def decode_corpus(models: Models, sentences: list[str], params: SearchParams, threads: int = 1,
                  instrument_locks: bool = False) -> RunReport:
    """Decode ``sentences`` with preloaded models; no I/O."""
    n = len(sentences)
    report = RunReport(sentences=n, threads=threads, instrumented=instrument_locks)
    slots: list = [None] * n
    scores: list = [None] * n
    errors: dict[int, str] = {}
    words = 0
    summaries: list[WorkerSummary] = []
    t0 = time.perf_counter()

    if n == 0:
        pass
    elif threads == 1:
        cursor = LocalCursor(n)

        def post(idx, translation, score, error, nw):
            cursor.acquisitions += 1
            slots[idx] = translation
            scores[idx] = score
            if error:
                errors[idx] = error

        summaries.append(worker_loop(models, sentences, params, cursor, post))
        words = sum(len(s.split()) for s in sentences)
    else:
        ctx = mp.get_context("fork")
        cursor = SharedCursor(n, ctx)
        results = ctx.Queue()
        claimed = ctx.Array("q", [-1] * threads)
        procs = [ctx.Process(target=_process_main,
                             args=(w, models, sentences, params, cursor, results, claimed),
                             daemon=True)
                 for w in range(threads)]
        for p in procs:
            p.start()
        finished = set()
        received = 0
        while len(finished) < threads:
            try:
                msg = results.get(timeout=0.5)
            except queue_mod.Empty:
                for w, p in enumerate(procs):
                    if w not in finished and not p.is_alive() and p.exitcode not in (None, 0):
                        finished.add(w)
                        lost = claimed[w]
                        if lost >= 0 and slots[lost] is None:
                            slots[lost] = ERROR_MARKER
                            scores[lost] = float("nan")
                            errors[lost] = f"worker {w} died (exit code {p.exitcode})"
                continue
            kind = msg[0]
            if kind == "result":
                _, idx, translation, score, error, nw = msg
                slots[idx] = translation
                scores[idx] = score
                words += nw
                received += 1
                if error:
                    errors[idx] = error
            elif kind == "done":
                finished.add(msg[1])
                summaries.append(msg[2])
            elif kind == "crash":
                log.error("worker %d crashed: %s", msg[1], msg[2])
        for p in procs:
            p.join()
        # a dead worker loses its unflushed results; redo those here, in order
        missing = [idx for idx in range(n) if slots[idx] is None]
        if missing:
            log.warning("re-decoding %d sentence(s) lost with a dead worker", len(missing))
            cursor = ListCursor(missing)

            def post(idx, translation, score, error, nw):
                slots[idx] = translation
                scores[idx] = score
                if error:
                    errors[idx] = error

            summaries.append(worker_loop(models, sentences, params, cursor, post, worker=threads))
        words = sum(len(s.split()) for s in sentences)

    report.wall_seconds = time.perf_counter() - t0 if n else 0.0
    report.words = words
    report.translations = slots
    report.scores = scores
    report.errors = sorted(errors.items())
    lookup = LookupStats()
    for s in summaries:
        lookup.merge(s.lookup)
        report.worker_seconds += s.seconds
        for k, v in s.phases.items():
            report.phases[k] += v
        report.pool_resets += s.pool_resets
        report.lock_acquisitions += s.lock_acquisitions
        for k, v in s.pool.items():
            report.pool[k] = max(report.pool.get(k, 0), v)
        report.pool["max_sentence_high_water"] = max(report.pool.get("max_sentence_high_water", 0),
                                                     s.max_sentence_high_water)
    accounted = sum(report.phases[k] for k in PHASES)
    if accounted > report.worker_seconds:
        # clock granularity; scale down so shares never exceed the total
        scale = report.worker_seconds / accounted if accounted else 0.0
        for k in PHASES:
            report.phases[k] *= scale
        accounted = report.worker_seconds
    report.phases["misc"] = report.worker_seconds - accounted
    report.lookups = lookup.lookups
    report.cache_hits = lookup.cache_hits
    report.cache_entries = getattr(models.table, "cache_entries", 0)
    return report


def read_sentences(path: str | None) -> list[str]:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def write_lines(path: str | None, lines) -> None:
    text = "".join(f"{line}\n" for line in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def run(config: DecoderConfig, models: LoadedModels | None = None) -> RunReport:
    """Decode ``config.input`` to ``config.output`` and write the report."""
    config.validate()
    loaded = models or load_models(config)
    sentences = read_sentences(config.input)
    search = config.search
    if not search.profile:
        search = SearchParams(**{**{f: getattr(search, f) for f in _SEARCH_FIELDS}, "profile": True})
    report = decode_corpus(loaded.models, sentences, search, config.threads, config.instrument_locks)
    report.load_seconds = loaded.seconds
    write_lines(config.output, report.translations)
    if config.scores:
        write_lines(config.scores, (repr(s) for s in report.scores))
    if config.report:
        with open(config.report, "w", encoding="utf-8") as f:
            f.write(report.to_text())
        with open(config.report + ".tsv", "w", encoding="utf-8") as f:
            f.write(report.to_tsv())
    for idx, msg in report.errors:
        log.warning("sentence %d failed: %s", idx + 1, msg)
    return report
