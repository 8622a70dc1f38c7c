import numpy as np
import pytest

from xmodal.batch import DescriptorCache
from xmodal.corpus import CorpusConfig, generate_corpus

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    """8 pieces x 10 segments at toy scale."""
    return generate_corpus(CorpusConfig(n_pieces=8, n_composers=2, segments_per_piece=10), seed=3)


@pytest.fixture(scope="session")
def cache():
    return DescriptorCache()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
