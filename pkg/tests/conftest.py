import sys

import numpy as np
import pytest

from fldisc.presets import audit_points, unicycle_preset


@pytest.fixture(scope="session")
def preset():
    return unicycle_preset()


@pytest.fixture(scope="session")
def chart_states():
    """100 seeded states on the chart of the unicycle transformation."""
    return audit_points(100, seed=7)[:, :5]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
