import numpy as np
import pytest

from qgheat import alpha_engine as ae
from qgheat import graph_model as gm

# coarse grid over the route-agreement window, shared by several modules
MID_GRID = ae.default_t_grid(1.0, 0.05, 5.0, 20)


@pytest.fixture(scope="session")
def suite():
    return gm.reference_suite()


@pytest.fixture(scope="session")
def mid_table():
    return ae.build_alpha_table(1.0, ae.SELECTED_CONVENTION, MID_GRID, n_max=200)


@pytest.fixture(scope="session")
def small_t_table():
    """Unit-length table reaching down to t = 1e-3 (for small-time behaviour)."""
    return ae.build_alpha_table(1.0, ae.SELECTED_CONVENTION, ae.default_t_grid(1.0, 1e-3, 1.0, 10), n_max=40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
