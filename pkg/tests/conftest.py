import numpy as np
import pytest

from transmon_pe.passport import generate_passport, ideal_passport
from transmon_pe.physics import SensorParams, passport_flux_axis

# Lines printed by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def params():
    return SensorParams()


@pytest.fixture(scope="session")
def ideal_grid(params):
    return ideal_passport(params)


@pytest.fixture(scope="session")
def real_grid(params):
    return generate_passport(params, seed=1)


@pytest.fixture(scope="session")
def small_grid(params):
    """Coarse ideal passport for fast estimator tests (41 fluxes, 121 delays)."""
    phi1, step = passport_flux_axis(params)
    return ideal_passport(params, phi1=phi1, phi_step=4 * step, n_flux=41, n_tau=121)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
