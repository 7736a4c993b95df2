import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cbrw.lattice_walk import (
    NegativeRateError, RateSumError, SpanError, ZeroOffsetError, cumulant, exact_marginal,
    nearest_neighbour_kernel, sample_displacements, validate_kernel, walk_tail_table,
)


def test_validate_errors():
    with pytest.raises(ZeroOffsetError):
        validate_kernel([([0], 1.0)], 1.0)
    with pytest.raises(NegativeRateError):
        validate_kernel([([1], 1.5), ([-1], -0.5)], 1.0)
    with pytest.raises(RateSumError):
        validate_kernel([([1], 0.5), ([-1], 0.4)], 1.0)
    with pytest.raises(SpanError):
        validate_kernel([([2], 0.5), ([-2], 0.5)], 1.0)


def test_cumulant_nn():
    k = nearest_neighbour_kernel(1)
    rep = cumulant(k, [np.log(1 + np.sqrt(2))])
    assert rep.value == pytest.approx(np.sqrt(2) - 1, abs=1e-14)
    assert rep.grad[0] == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 2.0), min_size=2, max_size=4), st.floats(-1.5, 1.5))
def test_cumulant_convex_and_gradient(rates, s):
    offs = [1, -1, 2, -3][: len(rates)]
    k = validate_kernel(list(zip(offs, rates)), sum(rates))
    assert cumulant(k, [0.0]).value == pytest.approx(0.0, abs=1e-12)
    h = 1e-5
    fd = (cumulant(k, [s + h]).value - cumulant(k, [s - h]).value) / (2 * h)
    rep = cumulant(k, [s])
    assert rep.grad[0] == pytest.approx(fd, rel=1e-6, abs=1e-8)
    assert rep.hess[0, 0] > 0


def test_exact_marginal_skellam():
    k = nearest_neighbour_kernel(1)
    tab = exact_marginal(k, 7.0)
    for x in (-3, 0, 2, 9):
        assert tab.prob([x]) == pytest.approx(stats.skellam.pmf(x, 3.5, 3.5), abs=1e-12)
    assert tab.total() == pytest.approx(1.0, abs=1e-11)


def test_walk_tail_table_matches_skellam():
    k = nearest_neighbour_kernel(1)
    tail = walk_tail_table(k, [5.0, 20.0], [0.0, 3.0, 8.0])
    for i, t in enumerate((5.0, 20.0)):
        for j, x in enumerate((0, 3, 8)):
            assert tail[i, j] == pytest.approx(stats.skellam.sf(x, t / 2, t / 2), abs=1e-11)


def test_sample_displacements_mean():
    k = validate_kernel([([1], 0.7), ([-1], 0.3)], 1.0)
    disp, _ = sample_displacements(k, 10.0, 20000, seed=1)
    assert disp[:, 0].mean() == pytest.approx(4.0, abs=0.1)
