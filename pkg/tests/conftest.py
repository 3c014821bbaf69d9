import numpy as np
import pytest

from sparsemsv.panels import ReturnPanel
from sparsemsv.simulate import DgpSpec, simulate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def msv_panel():
    """A seeded 400 x 2 panel from the MSV simulator."""
    return simulate(DgpSpec("msv", 2, 400, seed=3)).panel


def random_panel(rng, T, p):
    return ReturnPanel(rng.standard_normal((T, p)))


def pytest_configure(config):
    from helpers import ACCEPTANCE_KEY

    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from helpers import ACCEPTANCE_KEY

    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
