import numpy as np
import pytest

from wbic import ChainConfig

_CRITERIA: dict = {}


@pytest.fixture
def record_criterion():
    """Record a PASS/FAIL line for an acceptance criterion, printed in the summary."""

    def record(number, passed, detail):
        _CRITERIA[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quick_chain():
    return ChainConfig(burn_in=2000, thin=5, draws=1000, step_std_init=0.1, seed=11)
