import pytest

from braggcomb.blochcore import CombParams
from braggcomb.kicklaw import build_kick_law

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def comb():
    return CombParams(1.0)


@pytest.fixture(scope="session")
def kick():
    return build_kick_law()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
