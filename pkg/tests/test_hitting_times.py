import numpy as np
import pytest

from cbrw.hitting_times import (
    HittingError, hitting_law, laplace_linear_system, laplace_mc, nn_return_transform,
    sample_taboo_hitting, total_hitting_probability,
)
from cbrw.lattice_walk import nearest_neighbour_kernel, validate_kernel

K1 = nearest_neighbour_kernel(1)


@pytest.mark.parametrize("lam", [0.01, 0.3, 2.0])
def test_linear_system_closed_form(lam):
    v = laplace_linear_system(K1, 0, 0, (), True, lam, tol=1e-13).value
    assert v == pytest.approx(nn_return_transform(lam), abs=1e-10)


def test_law_transform_and_derivative():
    law = hitting_law(K1, 0, 0, (), True, n_max=3000)
    assert law.transform(0.5) == pytest.approx(nn_return_transform(0.5), abs=1e-12)
    h = 1e-5
    fd = (nn_return_transform(0.5 + h) - nn_return_transform(0.5 - h)) / (2 * h)
    assert law.transform_derivative(0.5) == pytest.approx(fd, rel=1e-7)


def test_mc_transform():
    smp = sample_taboo_hitting(K1, 0, 0, (), True, horizon=500.0, n=200_000, seed=3)
    tr = laplace_mc(smp, 0.4)
    assert abs(tr.value - nn_return_transform(0.4)) < 4 * tr.std_err + tr.bias_bound


def test_taboo_ruin():
    p, _ = total_hitting_probability(K1, 1, 0, [3])
    assert p == pytest.approx(2 / 3, abs=1e-4)
    with pytest.raises(HittingError):
        laplace_linear_system(K1, 1, 3, [3], False, 1.0)


def test_drifted_return():
    k = validate_kernel([([1], 0.8), ([-1], 0.2)], 1.0)
    p, flagged = total_hitting_probability(k, 0, 0, (), True)
    assert p == pytest.approx(0.4, abs=2e-4)


def test_2d_law_vs_system():
    k = nearest_neighbour_kernel(2)
    law = hitting_law(k, (0, 0), (0, 0), (), True, n_max=400)
    v = laplace_linear_system(k, (0, 0), (0, 0), (), True, 1.0, tol=1e-12).value
    assert law.transform(1.0) == pytest.approx(v, abs=1e-10)


def test_density_integrates_to_cdf():
    law = hitting_law(K1, 0, 0, (), True, n_max=400)
    t = np.linspace(0, 20, 4001)
    dens = law.density(t)
    cdf = law.cdf(t)
    integ = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(t))])
    assert np.max(np.abs(integ + cdf[0] - cdf)) < 1e-5
