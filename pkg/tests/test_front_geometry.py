import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from cbrw.front_geometry import (
    BelowMeanError, chernoff_bound, classify_points, front_shape, lattice_span, limit_shape_point,
    membership, rate_function, solve_r_on_ray, tail_asymptotic,
)
from cbrw.lattice_walk import cumulant, nearest_neighbour_kernel

K1 = nearest_neighbour_kernel(1)
K2 = nearest_neighbour_kernel(2)


def test_r_model_a():
    r = solve_r_on_ray(K1, math.sqrt(2) - 1, [1.0])
    assert r[0] == pytest.approx(math.log(1 + math.sqrt(2)), abs=1e-13)
    z = limit_shape_point(K1, math.sqrt(2) - 1, r)
    assert z[0] == pytest.approx((math.sqrt(2) - 1) / r[0], abs=1e-13)


def test_lattice_span():
    assert lattice_span([0.7]) == pytest.approx(0.7)
    assert lattice_span([0.4, 0.2]) == pytest.approx(0.2)
    assert lattice_span([1.0, math.sqrt(2)]) is None


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2.0))
def test_rate_function_legendre(theta):
    val, lam, D = rate_function(K1, [1.0], theta)
    h = cumulant(K1, [lam])
    assert h.grad[0] == pytest.approx(theta, rel=1e-10)
    assert val == pytest.approx(theta * lam - h.value, rel=1e-10, abs=1e-14)
    # Legendre: Lambda(theta) >= theta s - H(s) for any s
    for s in (0.3 * lam, 1.7 * lam + 0.1):
        assert val >= theta * s - cumulant(K1, [s]).value - 1e-12


def test_below_mean():
    with pytest.raises(BelowMeanError):
        rate_function(K1, [1.0], -0.1)


def test_chernoff_and_asymptotic():
    t = 200.0
    for theta in (0.6, 0.8, 1.0):
        x = theta * t
        k = np.arange(x, x + 400)
        exact = float(np.sum(special.ive(k, t)))   # P(S = k) = e^{-t} I_k(t)
        assert chernoff_bound(K1, [1.0], t, x) >= exact
        assert tail_asymptotic(K1, [1.0], t, x) / exact == pytest.approx(1.0, abs=0.02)


def test_shape_2d_membership():
    nu = 0.05
    shape = front_shape(K2, nu, n=180)
    assert shape.mesh < 0.04
    # points on the front sit in the band; far outside is O, the origin is Q
    z = shape.z[0]
    assert membership(shape, z, 1e-3) == "band"
    assert membership(shape, 3 * z, 1e-3) == "O"
    assert membership(shape, [0, 0], 1e-3) == "Q"
    # eps above nu empties Q_eps; nothing is that far out either
    labels = classify_points(shape, [[0, 0], 3 * z], 10.0)
    assert list(labels) == ["band", "band"]
