import numpy as np
import pytest

from cbrw import model_a, model_b
from cbrw.renewal_oracle import (
    OracleError, build_grid, inhomogeneous_term, inhomogeneous_term_excursion, solve_front_cdf,
)


@pytest.fixture(scope="module")
def grid_a():
    return build_grid(model_a(), h=0.01, T=6.0)


def test_two_forms_of_inhomogeneous_term(grid_a):
    for u in (0.0, 2.0, 4.0):
        a = inhomogeneous_term(grid_a, u)
        b = inhomogeneous_term_excursion(grid_a, u)
        assert np.max(np.abs(a - b)) < 5e-4


def test_solution_properties(grid_a):
    e2 = solve_front_cdf(grid_a, 2.0).E
    e4 = solve_front_cdf(grid_a, 4.0).E
    assert np.all((e2 >= 0) & (e2 <= 1))
    assert np.all(e4 <= e2 + 1e-12)
    assert e2[0] == 0.0


def test_h_refinement():
    coarse = solve_front_cdf(build_grid(model_b(), h=0.02, T=5.0), 2.0).E[-1]
    fine = solve_front_cdf(build_grid(model_b(), h=0.01, T=5.0), 2.0).E[-1]
    assert abs(coarse - fine) < 2 * 0.02


def test_rejects_multi_catalyst():
    from cbrw.branching_model import Catalyst
    m = model_b()
    m2 = m.with_catalysts(list(m.catalysts) + [Catalyst((4,), 0.5, m.catalysts[0].offspring)])
    with pytest.raises(OracleError):
        build_grid(m2)
