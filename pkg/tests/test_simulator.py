import numpy as np
import pytest
from scipy import stats

from cbrw import model_a, model_b
from cbrw.branching_model import Catalyst, OffspringLaw
from cbrw.lattice_walk import exact_marginal
from cbrw.simulator import Ensemble, extinction_probe, run, run_ensemble


def test_determinism_and_split():
    m = model_b()
    a = run_ensemble(m, 60, 20.0, checkpoints=[10, 20], master_seed=11)
    b = run_ensemble(m, 60, 20.0, checkpoints=[10, 20], master_seed=11, block=7)
    assert np.array_equal(a.m_alive, b.m_alive, equal_nan=True)
    left = run_ensemble(m, 25, 20.0, checkpoints=[10, 20], master_seed=11)
    right = run_ensemble(m, 35, 20.0, checkpoints=[10, 20], master_seed=11, start_index=25)
    merged = Ensemble.merge([right, left])
    assert np.array_equal(merged.pop, a.pop)
    assert np.array_equal(merged.m_running, a.m_running)


def test_running_max_monotone():
    e = run_ensemble(model_b(), 200, 20.0, checkpoints=np.arange(1, 21), master_seed=2)
    assert np.all(np.diff(e.m_running, axis=1) >= 0)
    alive = e.pop > 0
    assert np.all(e.m_alive[alive] <= e.m_running[alive])
    assert np.all(np.isnan(e.m_alive[~alive]))


def test_pure_walk_reduction():
    m = model_b().with_catalysts([Catalyst((0,), 0.0, OffspringLaw((0.2, 0.0, 0.8)))])
    e = run_ensemble(m, 20_000, 6.0, master_seed=4)
    assert np.all(e.pop == 1)
    x = e.m_alive[:, 0, 0].astype(int)
    tab = exact_marginal(m.kernel, 6.0)
    ks = np.arange(-8, 9)
    obs = np.array([np.sum(x == k) for k in ks] + [np.sum(np.abs(x) > 8)])
    exp = np.array([tab.prob([k]) for k in ks] + [1 - sum(tab.prob([k]) for k in ks)]) * x.size
    chi2 = np.sum((obs - exp) ** 2 / exp)
    assert stats.chi2.sf(chi2, ks.size) > 1e-3


def test_model_a_never_dies():
    e = run_ensemble(model_a(), 300, 8.0, checkpoints=np.arange(1, 9), master_seed=1)
    assert not e.extinct.any()
    assert np.all(np.diff(e.pop, axis=1) >= 0)
    assert extinction_probe(model_a(), 500, 200, master_seed=1).fraction == 0.0


def test_non_branching_probe():
    m = model_b().with_catalysts([Catalyst((0,), 0.0, OffspringLaw((0.2, 0.0, 0.8)))])
    est = extinction_probe(m, 100)
    assert est.non_branching and est.fraction == 0.0


def test_growth_rate():
    e = run_ensemble(model_b(), 3000, 30.0, checkpoints=[15, 30], master_seed=8)
    nu = np.sqrt(1.36) - 1
    rate = (np.log(e.pop[:, 1].mean()) - np.log(e.pop[:, 0].mean())) / 15
    assert rate == pytest.approx(nu, rel=0.15)


def test_single_run_and_snapshot(tmp_path):
    rec = run(model_b(), 15.0, checkpoints=[5, 15], seed=3, snapshot=True)
    assert rec.times.tolist() == [5.0, 15.0]
    if not rec.extinct:
        assert len(rec.snapshot) == rec.pop[-1]
    e = run_ensemble(model_b(), 5, 10.0, checkpoints=[5, 10], master_seed=1)
    e.to_csv(tmp_path / "r.csv", header="x")
    back = Ensemble.from_csv(tmp_path / "r.csv")
    assert np.array_equal(back.pop, e.pop)
    assert np.array_equal(back.m_alive, e.m_alive, equal_nan=True)
