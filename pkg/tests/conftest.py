from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
FIXTURES = TESTS / "fixtures"
sys.path.insert(0, str(TESTS))

from skillforge.corpus import load_corpus, posting_spans  # noqa: E402
from skillforge.taxonomy import load_taxonomy  # noqa: E402


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(FIXTURES / "corpus.conll")


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy(FIXTURES / "skills.csv", FIXTURES / "relations.csv")


@pytest.fixture
def backend(corpus, taxonomy):
    from fakes import FakeBackend

    gold = {
        sp.surface: taxonomy[sp.gold_link].preferred_label
        for p in corpus
        for sp in posting_spans(p)
        if sp.gold_link
    }
    return FakeBackend([s for p in corpus for s in p.sentences], gold)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[2].rstrip(':'))):
            terminalreporter.write_line(line)
