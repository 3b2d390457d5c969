import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gjnsim.model import DistributionSpec as D
from gjnsim.model import NetworkSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_RESULTS = {}


@pytest.fixture
def record_criterion():
    """Register the outcome of one acceptance criterion for the terminal summary."""
    def rec(number: int, title: str, passed: bool, detail: str = ""):
        _RESULTS[number] = (title, bool(passed), detail)
        print(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
    return rec


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")


@pytest.fixture
def mm1():
    return NetworkSpec([D.exponential(0.5)], [D.exponential(1.0)], [[0.0]])


@pytest.fixture
def tandem_critical_second():
    return NetworkSpec([D.exponential(0.5), None], [D.exponential(1.0), D.exponential(1.0)],
                       [[0.0, 1.0], [0.0, 0.0]])


@pytest.fixture
def tandem_strong():
    return NetworkSpec([D.exponential(0.5), None], [D.exponential(1.0), D.exponential(1.5)],
                       [[0.0, 1.0], [0.0, 0.0]])


@pytest.fixture
def feedback3():
    return NetworkSpec(
        [D.exponential(0.3), D.gamma(2.0, 2.5), None],
        [D.exponential(2.0), D.uniform(0.2, 0.8), D.lognormal(np.log(0.5) - 0.125, 0.5)],
        [[0.0, 0.3, 0.2], [0.1, 0.0, 0.3], [0.2, 0.0, 0.1]])
