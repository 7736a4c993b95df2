import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbrw import model_a, model_b
from cbrw.branching_model import Catalyst, OffspringLaw
from cbrw.malthusian import malthusian_parameter
from cbrw.phi_solver import (
    PhiError, PhiGridError, ChiCorrection, c_star, chi, chi_correction, extend_phi,
    phi_limit, predicted_cdf, solve_phi_system,
)


def test_table_invariants(model_b_setup):
    m, nu, r, cs, tab = model_b_setup
    assert tab.phi(0.0) == 1.0
    vals = tab.phi_values[:, 0]
    assert np.all(np.diff(vals) <= 1e-15)
    assert np.all((vals > 0) & (vals <= 1))
    assert tab.slope_check() < 0.01
    assert tab.theta[0] == pytest.approx(cs.value)
    with pytest.raises(PhiGridError):
        tab.phi(1e9)


def test_limit_and_extrapolation(model_b_setup):
    tab = model_b_setup[4]
    assert tab.limit[0] == pytest.approx(0.25, abs=1e-9)
    est, spread = tab.tail_extrapolation()
    assert abs(est - 0.25) < 0.01 + spread


def test_gauge(model_b_setup):
    m, nu, r, cs, tab = model_b_setup
    lam = np.exp(tab.x[tab.x < tab.x[-1] - 1.0])
    for c in (0.5, 2.0):
        other = solve_phi_system(m, nu, theta=c * cs.value)
        assert np.max(np.abs(other.phi(lam / max(c, 1)) - tab.phi(c * lam / max(c, 1)))) < 1e-4


def test_extend_off_catalyst(model_b_setup):
    m, nu, r, cs, tab = model_b_setup
    ext = extend_phi(m, tab, 5)
    assert ext.phi(0.0) == 1.0
    assert ext.limit[0] == pytest.approx(0.25, abs=1e-6)
    # from x = 5 the walk first has to reach the catalyst: less mass near lam = 0
    lam = np.array([1e-2, 1.0, 100.0])
    assert np.all(ext.phi(lam) >= tab.phi(lam))
    same = extend_phi(m, tab, 0)
    assert np.array_equal(same.ell, tab.ell)


def test_c_star_model_a(model_a_nu):
    cs = c_star(model_a(), model_a_nu, mc_samples=200_000, seed=5)
    assert cs.F00_nu == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-10)
    assert cs.G1_nu == pytest.approx(2 / (model_a_nu + 2), abs=1e-12)
    assert cs.value > 0
    assert cs.recompute() == cs.value
    assert cs.moment == pytest.approx(cs.moment_exact, rel=1e-8)
    assert abs(cs.moment_mc / cs.moment - 1) < 0.01


def test_c_star_shrinks_with_strong_catalyst():
    # nu grows without bound as alpha -> 1, so the moment term blows up and c* -> 0
    vals = []
    for a in (0.5, 0.8, 0.95):
        m = model_b().with_catalysts([Catalyst((0,), a, OffspringLaw((0.2, 0.0, 0.8)))])
        nu = malthusian_parameter(m).nu
        vals.append(c_star(m, nu).value)
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 0.05


def test_c_star_refuses_multi():
    m = model_b()
    m2 = m.with_catalysts(list(m.catalysts) + [Catalyst((3,), 0.5, m.catalysts[0].offspring)])
    with pytest.raises(PhiError):
        c_star(m2, 0.3)


def test_chi():
    corr = ChiCorrection(True, math.log(1 + math.sqrt(2)), math.sqrt(2) - 1)
    assert chi(corr, 0.0, 0.5) == pytest.approx(0.5)
    assert np.all(chi(ChiCorrection(False, None, 0.3), [1.0, 2.0], [0.1, -4.0]) == 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 100), st.floats(-20, 20))
def test_chi_periodic(t, y):
    h = 0.568825
    corr = ChiCorrection(True, h, 0.166190)
    v = float(chi(corr, t, y))
    assert 0 <= v < h
    assert float(chi(corr, t + h / corr.nu, y)) == pytest.approx(v, abs=1e-8) or \
        abs(abs(float(chi(corr, t + h / corr.nu, y)) - v) - h) < 1e-8


def test_predicted_cdf(model_b_setup):
    m, nu, r, cs, tab = model_b_setup
    corr = chi_correction(nu, [r])
    y = np.array([-8.0, 0.0, 12.0])
    v = predicted_cdf(tab, corr, 60.0, y, scale=r)
    assert np.all((v >= 0) & (v <= 1))
    assert v[-1] > 0.99
    # shifting by one lattice period scales the argument by e^{-r*}
    y0 = 0.3
    lhs = predicted_cdf(tab, corr, 60.0, y0 + corr.span)
    arg = math.exp(-y0 + float(chi(corr, 60.0, y0)))
    assert lhs == pytest.approx(tab.phi(math.exp(-corr.span) * arg), abs=1e-12)


def test_two_catalyst_system():
    law = OffspringLaw((0.2, 0.0, 0.8))
    m = model_b().with_catalysts([Catalyst((0,), 0.5, law), Catalyst((2,), 0.5, law)])
    nu = malthusian_parameter(m).nu
    tab = solve_phi_system(m, nu, theta=1.0)
    assert tab.phi_values.shape[1] == 2
    assert np.allclose(tab.limit, phi_limit(m))
    assert tab.theta[0] == pytest.approx(1.0)
    # the two catalysts are mirror images about x = 1
    assert np.allclose(tab.phi_values[:, 0], tab.phi_values[:, 1], atol=1e-10)


def test_extend_limit_matches_probe(model_b_setup):
    from cbrw.simulator import extinction_probe
    m, nu, r, cs, tab = model_b_setup
    ext = extend_phi(m, tab, 5)
    est = extinction_probe(m.with_start(5), 4000, 500, master_seed=6)
    assert abs(est.fraction - ext.limit[0]) < 0.02
