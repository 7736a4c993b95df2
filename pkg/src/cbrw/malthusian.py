"""Supercriticality and the Malthusian parameter nu.

nu is the root of Perron(D(lam)) = 1 where
``d_ij(lam) = delta_ij a_i m_i G_i*(lam) + (1 - a_i) G_i*(lam) Fbar*_ij(lam)``,
``G_i*(lam) = beta_i / (lam + beta_i)`` and ``Fbar_ij`` is the after-exit
hitting law of w_j from w_i under taboo on the other catalysts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .branching_model import CbrwModel
from .hitting_times import (
    hitting_law,
    laplace_linear_system,
    laplace_mc,
    sample_taboo_hitting,
    total_hitting_probability,
)

__all__ = [
    "MalthusianError",
    "IndeterminateCriticalityError",
    "LinearSystemTransforms",
    "HittingLawTransforms",
    "MonteCarloTransforms",
    "CriticalityMatrix",
    "MalthusianResult",
    "perron_root",
    "perron_vector",
    "criticality_matrix",
    "is_supercritical",
    "supercriticality_margin",
    "malthusian_parameter",
]


class MalthusianError(RuntimeError):
    pass


class IndeterminateCriticalityError(MalthusianError):
    pass


class _Transforms:
    """Base for the Fbar*_ij providers; subclasses fill ``_fbar``."""

    std_err_available = False

    def __init__(self, model: CbrwModel):
        self.model = model
        self._cache = {}
        self._inf = {}

    def taboo(self, j):
        return [c.position for k, c in enumerate(self.model.catalysts) if k != j]

    def fbar(self, i, j, lam):
        key = (i, j, float(lam))
        if key not in self._cache:
            self._cache[key] = self._fbar(i, j, float(lam))
        return self._cache[key]

    def fbar_se(self, i, j, lam):
        return 0.0

    def fbar_inf(self, i, j):
        if (i, j) not in self._inf:
            m = self.model
            self._inf[(i, j)] = total_hitting_probability(
                m.kernel, m.catalysts[i].position, m.catalysts[j].position, self.taboo(j), True)[0]
        return self._inf[(i, j)]

    def fbar_inf_se(self, i, j):
        return 0.0


class LinearSystemTransforms(_Transforms):
    def __init__(self, model, tol=1e-12):
        super().__init__(model)
        self.tol = tol

    def _fbar(self, i, j, lam):
        m = self.model
        return laplace_linear_system(m.kernel, m.catalysts[i].position, m.catalysts[j].position,
                                     self.taboo(j), True, lam, tol=self.tol).value


class HittingLawTransforms(_Transforms):
    """Transforms from exact jump-count laws; accurate for lam >> q e^{-n_max}."""

    def __init__(self, model, n_max=2000):
        super().__init__(model)
        self.n_max = n_max
        self.laws = {}

    def law(self, i, j):
        if (i, j) not in self.laws:
            m = self.model
            self.laws[(i, j)] = hitting_law(m.kernel, m.catalysts[i].position,
                                            m.catalysts[j].position, self.taboo(j), True,
                                            n_max=self.n_max)
        return self.laws[(i, j)]

    def _fbar(self, i, j, lam):
        return float(self.law(i, j).transform(lam))


class MonteCarloTransforms(_Transforms):
    std_err_available = True

    def __init__(self, model, n=1_000_000, horizon=1000.0, seed=0):
        super().__init__(model)
        self.samples = {}
        ss = np.random.SeedSequence(seed)
        N = model.n_catalysts
        seeds = ss.generate_state(N * N)
        for i in range(N):
            for j in range(N):
                self.samples[(i, j)] = sample_taboo_hitting(
                    model.kernel, model.catalysts[i].position, model.catalysts[j].position,
                    self.taboo(j), True, horizon=horizon, n=n, seed=int(seeds[i * N + j]))

    def _fbar(self, i, j, lam):
        return laplace_mc(self.samples[(i, j)], lam).value

    def fbar_se(self, i, j, lam):
        return laplace_mc(self.samples[(i, j)], lam).std_err

    def fbar_inf(self, i, j):
        s = self.samples[(i, j)]
        return float(np.mean(s.hit))

    def fbar_inf_se(self, i, j):
        p = self.fbar_inf(i, j)
        return math.sqrt(p * (1 - p) / self.samples[(i, j)].n) + self.samples[(i, j)].n_censored / self.samples[(i, j)].n


def perron_root(matrix, tol=1e-13, max_iter=100_000):
    return perron_vector(matrix, tol, max_iter)[0]


def perron_vector(matrix, tol=1e-13, max_iter=100_000):
    """Dominant eigenvalue and eigenvector of a nonnegative square matrix.

    Power iteration on M + I (the shift removes periodicity); the
    Collatz-Wielandt ratios bracket the root and the loop stops once the
    bracket is relatively tighter than ``tol``.
    """
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(M < 0):
        raise ValueError("matrix must be nonnegative")
    n = M.shape[0]
    if not np.any(M):
        return 0.0, np.full(n, 1.0 / n)
    A = M + np.eye(n)
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        w = A @ v
        pos = v > 0
        ratios = w[pos] / v[pos]
        lo, hi = ratios.min(), ratios.max()
        v = w / w.sum()
        if hi - lo <= tol * hi:
            return float(0.5 * (lo + hi) - 1.0), v
    raise MalthusianError("power iteration did not converge")


@dataclass
class CriticalityMatrix:
    lam: float
    entries: np.ndarray
    std_err: np.ndarray | None = None


def criticality_matrix(model: CbrwModel, lam: float, transforms=None) -> CriticalityMatrix:
    if transforms is None:
        transforms = LinearSystemTransforms(model)
    N = model.n_catalysts
    a, m, b = model.alphas, model.means, model.betas
    g = b / (lam + b)
    D = np.empty((N, N))
    se = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            D[i, j] = (1 - a[i]) * g[i] * transforms.fbar(i, j, lam)
            se[i, j] = (1 - a[i]) * g[i] * transforms.fbar_se(i, j, lam)
        D[i, i] += a[i] * m[i] * g[i]
    return CriticalityMatrix(lam, D, se)


def supercriticality_margin(model: CbrwModel, transforms=None):
    """(Perron(D(0+)) - 1, standard error)."""
    if transforms is None:
        transforms = LinearSystemTransforms(model)
    N = model.n_catalysts
    a, m = model.alphas, model.means
    D = np.diag(a * m)
    se = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            D[i, j] += (1 - a[i]) * transforms.fbar_inf(i, j)
            se[i, j] = (1 - a[i]) * transforms.fbar_inf_se(i, j)
    rho = perron_root(D)
    # crude propagation: Perron root is monotone in every entry
    err = perron_root(D + se) - rho if np.any(se) else 0.0
    return rho - 1.0, err


def is_supercritical(model: CbrwModel, transforms=None, n_sigma=3.0, atol=1e-9) -> bool:
    margin, err = supercriticality_margin(model, transforms)
    if abs(margin) <= max(n_sigma * err, atol):
        raise IndeterminateCriticalityError(
            f"Perron(D(0+)) - 1 = {margin:.3g} is within noise ({err:.3g}); model is near-critical")
    return margin > 0


@dataclass
class MalthusianResult:
    nu: float
    perron_at_nu: float
    bracket: tuple
    supercritical: bool
    margin: float
    trace: list = field(default_factory=list)
    eigenvector: np.ndarray | None = None


def malthusian_parameter(model: CbrwModel, transforms=None, tol=1e-12, lam_cap=None,
                         lam_floor=1e-8) -> MalthusianResult:
    """Root of lam -> Perron(D(lam)) - 1, which is continuous and decreasing."""
    if transforms is None:
        transforms = LinearSystemTransforms(model)
    margin, err = supercriticality_margin(model, transforms)
    if margin <= max(3 * err, 1e-9):
        raise MalthusianError(f"model is not supercritical (margin {margin:.3g})")
    q = model.kernel.q
    lam_cap = 10.0 * q * max(1.0, float(np.max(model.means))) if lam_cap is None else lam_cap
    trace = []

    def f(lam):
        val = perron_root(criticality_matrix(model, lam, transforms).entries)
        trace.append((lam, val))
        return val - 1.0

    hi = q
    while f(hi) > 0:
        hi *= 2
        if hi > lam_cap:
            raise MalthusianError("no bracket below lam_cap")
    lo = hi / 2
    while f(lo) <= 0:
        lo /= 2
        if lo < lam_floor:
            raise MalthusianError("no bracket above lam_floor")
    nu = optimize.brentq(f, lo, hi, xtol=tol * max(1.0, lo), rtol=4 * np.finfo(float).eps)
    D = criticality_matrix(model, nu, transforms).entries
    rho, vec = perron_vector(D)
    trace.sort()
    return MalthusianResult(nu=float(nu), perron_at_nu=rho, bracket=(lo, hi), supercritical=True,
                            margin=margin, trace=trace, eigenvector=vec)
