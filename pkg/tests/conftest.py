import numpy as np
import pytest

from ctvseg.diffcore.tensor import precision
from ctvseg.textenc import FrozenLM, Vocabulary


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.default()


@pytest.fixture(scope="session")
def tiny_lm(vocab):
    """Untrained, frozen 16-wide LM; structure, not quality, is under test."""
    with precision(np.float32):
        lm = FrozenLM(len(vocab), dim=16, layers=1, heads=2, capacity=48, rng=np.random.default_rng(0))
    lm.set_frozen(True)
    return lm


ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
