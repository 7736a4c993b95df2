import numpy as np
import pytest

from cbrw import model_a, model_b
from cbrw.front_geometry import solve_r_on_ray
from cbrw.malthusian import malthusian_parameter
from cbrw.phi_solver import c_star, solve_phi_system


@pytest.fixture(scope="session")
def model_b_setup():
    m = model_b()
    nu = malthusian_parameter(m).nu
    r = float(solve_r_on_ray(m.kernel, nu, [1.0])[0])
    cs = c_star(m, nu, r)
    table = solve_phi_system(m, nu, theta=cs.value)
    return m, nu, r, cs, table


@pytest.fixture(scope="session")
def model_a_nu():
    return malthusian_parameter(model_a()).nu


# criterion lines from the acceptance tests, repeated at the end of the run
# (xfailed tests do not show their captured output otherwise)
CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
