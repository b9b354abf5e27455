"""All eleven acceptance criteria at their stated tolerances.

Each criterion prints one PASS/FAIL line (also collected into the terminal
summary). Criteria 7 and 8 share one ensemble through the module context.
"""
import pytest

from braggcomb.acceptance import TITLES, Context, run_criterion
from conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def ctx():
    return Context()


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(TITLES))
def test_criterion(ctx, number):
    r = run_criterion(number, ctx)
    line = r.summary()
    print(line)
    for detail in r.lines():
        print(detail)
    ACCEPTANCE_LINES.append(line)
    assert r.passed, "\n".join([line] + r.lines())
