import numpy as np
import pytest

from iongate.normal_modes import IonPair


@pytest.fixture(scope="session")
def be_pair():
    return IonPair.from_species("Be")


@pytest.fixture(scope="session")
def be_mg():
    return IonPair.from_species("Be", "Mg25")


def random_pair(rng, mu_max=20.0):
    return IonPair.from_amu(9.0, 9.0 * rng.uniform(1.0, mu_max), 2 * np.pi * rng.uniform(0.5, 5.0) * 1e6)


_GROUND_STATES = {}


def ground_state_on(grid, ions):
    """Imaginary-time ground state, computed once per grid."""
    from iongate.schrodinger_sim import imaginary_time_ground_state

    key = (grid.n1, grid.n2, grid.x1_min, grid.x1_max, grid.x2_min, grid.x2_max, ions.m1, ions.mass_ratio)
    if key not in _GROUND_STATES:
        _GROUND_STATES[key] = imaginary_time_ground_state(grid, ions)
    return _GROUND_STATES[key]


ACCEPTANCE = []


def record_criterion(name, passed, detail):
    ACCEPTANCE.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
