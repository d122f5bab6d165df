import os
from pathlib import Path

import pytest

from pbdecode.features import WeightVector
from pbdecode.lm import load_arpa, parse_arpa
from pbdecode.search import Models
from pbdecode.tm.build import BuildOptions, build_binary
from pbdecode.tm.table import LexROStore, RuleTable

FIXTURES = Path(__file__).parent / "fixtures"

# a bigram LM over the targets used by the small hand-made grammars
TINY_ARPA = """\\data\\
ngram 1=7
ngram 2=4

\\1-grams:
-99\t<s>\t-0.3
-1.0\t</s>
-3.0\t<unk>
-0.8\tthe\t-0.2
-1.1\thouse\t-0.25
-1.2\tsmall\t-0.1
-1.6\tis\t-0.15

\\2-grams:
-0.3\t<s> the
-0.4\tthe small
-0.5\tsmall house
-0.6\thouse </s>

\\end\\
""".splitlines()

TINY_PT = [
    "das ||| the ||| 0.6 0.5 0.7 0.4",
    "das ||| that ||| 0.3 0.2 0.2 0.1",
    "haus ||| house ||| 0.8 0.7 0.9 0.6",
    "klein ||| small ||| 0.7 0.6 0.8 0.5",
    "klein ||| little ||| 0.2 0.3 0.15 0.2",
    "ist ||| is ||| 0.9 0.8 0.9 0.8",
    "das haus ||| the house ||| 0.5 0.4 0.6 0.3",
]

UNIT_WEIGHTS = WeightVector((0.5, -0.3, -0.2, -1.0, 1.0, 0.3, 0.2, 0.2, 0.1,
                             0.1, 0.1, 0.1, 0.1, 0.1, 0.1))


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


def load_fixture_lm(name: str):
    return load_arpa(fixture_path(name))


def make_models(out_dir, phrase_table, lexro=None, arpa=TINY_ARPA, weights=UNIT_WEIGHTS,
                counts=None, with_store=False, cache_size=None, **build_opts):
    out_dir = str(out_dir)
    build_binary(phrase_table, lexro, counts, BuildOptions(**build_opts), out_dir)
    table = RuleTable(out_dir, cache_size)
    store = LexROStore(out_dir) if with_store else None
    return Models(table, parse_arpa(arpa), weights, store)


@pytest.fixture
def tiny_models(tmp_path):
    return make_models(tmp_path / "tiny", TINY_PT)


@pytest.fixture(autouse=True)
def _no_debug_env(monkeypatch):
    # tests opt in to pool poisoning explicitly
    monkeypatch.delenv("PBDECODE_DEBUG", raising=False)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_report_header(config):
    return f"cpu count: {os.cpu_count()}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def instance_models(out_dir, inst, with_store=False):
    """Models for a ``synth.random_instance`` grammar."""
    return make_models(out_dir, inst.phrase_table, inst.lexro, arpa=inst.arpa,
                       weights=inst.weights, with_store=with_store, table_limit=20)


def synth_models(out_dir, data, cache_size=None, with_store=False, **build_opts):
    from pbdecode.features import parse_weights

    build_opts.setdefault("table_limit", 20)
    return make_models(out_dir, data.phrase_table, data.lexro, arpa=data.arpa,
                       weights=parse_weights(data.weights), counts=data.counts,
                       with_store=with_store, cache_size=cache_size, **build_opts)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A 300-sentence synthetic model shared by the search and driver tests."""
    from pbdecode.synth import SyntheticSpec, generate_synthetic

    data = generate_synthetic(SyntheticSpec(seed=5, n_sentences=300, source_vocab=400, target_vocab=400))
    models = synth_models(tmp_path_factory.mktemp("small_synth"), data, with_store=True, cache_size=200)
    return data, models
