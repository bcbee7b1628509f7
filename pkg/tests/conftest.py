import shutil
from pathlib import Path

import pytest

from vidfuse.similarity import HashingEmbeddingProvider

DATA = Path(__file__).parent / "data"
TINY = DATA / "tiny"

_criteria: dict[str, dict] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    ident, title = marker.args
    entry = _criteria.setdefault(ident, {"title": title, "passed": 0, "failed": 0})
    entry["failed" if call.excinfo is not None else "passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for ident in sorted(_criteria):
        e = _criteria[ident]
        status = "PASS" if e["failed"] == 0 else "FAIL"
        terminalreporter.write_line(
            f"{ident} {status} {e['title']} ({e['passed']} passed, {e['failed']} failed)"
        )


@pytest.fixture
def tiny(tmp_path):
    """A writable copy of the tiny replay fixture."""
    dst = tmp_path / "tiny"
    shutil.copytree(TINY, dst, ignore=shutil.ignore_patterns("out", "golden"))
    return dst


@pytest.fixture
def hashing():
    return HashingEmbeddingProvider(token_dim=16, sentence_dim=8, seed=0)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)
