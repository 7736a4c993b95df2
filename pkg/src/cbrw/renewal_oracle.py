"""Renewal-equation oracle for E(t;u) = P_0(M_t > u), single catalyst at 0 on Z.

E(t;u) = a int (1 - f(1 - E(t-s;u))) dG1(s) + (1-a) int E(t-s;u) dG11(s) + I(t;u)

with G1 = Exp(beta), G11 = G1 * Fbar_00 and the inhomogeneous term I built
from the walk tail P_0(S(t) > u).  Solved by forward time stepping with a
first-order trapezoidal Stieltjes rule.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .branching_model import CbrwModel, pgf_complement
from .hitting_times import HittingLaw, hitting_law
from .lattice_walk import _poisson_cutoff, walk_tail_table

__all__ = [
    "OracleError",
    "VolterraGrid",
    "build_grid",
    "exp_convolved_cdf",
    "inhomogeneous_term",
    "inhomogeneous_term_excursion",
    "solve_front_cdf",
    "FrontCdfSolution",
]


class OracleError(ValueError):
    pass


def exp_convolved_cdf(law: HittingLaw, beta: float, t):
    """CDF of E + tau, E ~ Exp(beta) independent of tau ~ ``law`` (beta >= q)."""
    t = np.asarray(t, dtype=float)
    rho = min(law.q / beta, 1.0)
    n = np.arange(law.weights.size)
    k_max = max(_poisson_cutoff(beta * float(np.max(t, initial=0.0)), 1e-16), law.n_max)
    k = np.arange(k_max + 1)
    if rho >= 1.0:
        c = np.zeros(k_max + 1)
        c[: law.n_max + 1] = law.weights
    else:
        fail = k[:, None] - n[None, :]
        nb = np.where(fail >= 0, stats.nbinom.pmf(np.maximum(fail, 0), np.maximum(n, 1), rho), 0.0)
        nb[:, 0] = (k == 0)
        c = nb @ law.weights
    # P(Gamma(k + 1, beta) <= t) = P(Poisson(beta t) >= k + 1)
    return stats.poisson.sf(k[None, :], beta * t[..., None]) @ c


@dataclass
class VolterraGrid:
    h: float
    T: float
    t: np.ndarray
    beta: float
    alpha: float
    G1: np.ndarray      # CDF values on the grid
    F00: np.ndarray
    Fbar00: np.ndarray
    G11: np.ndarray
    G1F00: np.ndarray
    law: HittingLaw
    model: CbrwModel


def build_grid(model: CbrwModel, h=0.01, T=12.0) -> VolterraGrid:
    if model.dimension != 1 or model.n_catalysts != 1:
        raise OracleError("the renewal oracle covers d = 1 with a single catalyst")
    if model.catalysts[0].position != (0,):
        raise OracleError("catalyst must sit at the origin")
    n = int(round(T / h))
    t = h * np.arange(n + 1)
    c = model.catalysts[0]
    beta = c.beta(model.kernel.q)
    law = hitting_law(model.kernel, 0, 0, (), True, t_max=T, tail_eps=1e-16)
    G1 = -np.expm1(-beta * t)
    Fbar = law.cdf(t)
    F = law.with_holding().cdf(t)
    G11 = exp_convolved_cdf(law, beta, t)
    G1F = exp_convolved_cdf(law.with_holding(), beta, t)
    return VolterraGrid(h, float(t[-1]), t, beta, c.alpha, G1, F, Fbar, G11, G1F, law, model)


def _stieltjes(values, cdf):
    """Trapezoid rule for int_0^{t_n} v(t_n - s) dC(s) at every grid node.

    ``values[j] = v(t_j)``; returns the array over n.
    """
    dC = np.diff(cdf)
    avg = 0.5 * (values[1:] + values[:-1])  # v on [t_j, t_{j+1}]
    # node n: sum_k dC[k] avg[n-1-k] = conv(dC, avg)[n-1]
    m = values.size
    out = np.zeros(m)
    out[1:] = np.convolve(dC, avg)[: m - 1]
    return out


def inhomogeneous_term(grid: VolterraGrid, u: float, tail=None):
    """I(t;u) on the grid from the three-term definition."""
    if u < 0:
        raise OracleError("u must be non-negative")
    if tail is None:
        tail = walk_tail_table(grid.model.kernel, grid.t, [u])[:, 0]
    a = grid.alpha
    return tail - _stieltjes(tail, grid.F00) - a * (_stieltjes(tail, grid.G1) - _stieltjes(tail, grid.G1F00))


def _excursion_tail(kernel, times, u, tail_eps=1e-15):
    """e(s;u) = P(after-exit walk from 0 has not returned to 0 by s and S(s) > u)."""
    times = np.asarray(times, dtype=float)
    n_max = _poisson_cutoff(kernel.q * float(times.max(initial=0.0)), tail_eps)
    R = (n_max + 1) * kernel.max_step + 1
    x = np.arange(-R, R + 1)
    mass = np.zeros(x.size)
    mass[R] = 1.0
    shifts = [int(o[0]) for o in kernel.offsets]
    probs = kernel.jump_probs

    def step(m):
        out = np.zeros_like(m)
        for sh, p in zip(shifts, probs):
            out += p * np.roll(m, sh)
        return out

    mass = step(mass)
    mass[R] = 0.0
    tails = np.empty(n_max + 1)
    sel = x > u
    for n in range(n_max + 1):
        tails[n] = mass[sel].sum()
        mass = step(mass)
        mass[R] = 0.0
    w = stats.poisson.pmf(np.arange(n_max + 1)[None, :], kernel.q * times[:, None])
    return w @ tails


def inhomogeneous_term_excursion(grid: VolterraGrid, u: float):
    """I(t;u) = (1 - a) int e(t - v; u) dG1(v): the contribution of the first excursion.

    An independent route to the same function, used to cross-check the
    three-term form.
    """
    e = _excursion_tail(grid.model.kernel, grid.t, u)
    return (1 - grid.alpha) * _stieltjes(e, grid.G1)


@dataclass
class FrontCdfSolution:
    t: np.ndarray
    u: float
    E: np.ndarray
    I: np.ndarray
    h: float

    def to_csv(self, path, header=None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["t", "u", "E", "I"])
            for ti, e, i in zip(self.t, self.E, self.I):
                w.writerow([repr(float(ti)), repr(float(self.u)), repr(float(e)), repr(float(i))])


def solve_front_cdf(grid: VolterraGrid, u: float, I=None, tol=1e-15, max_iter=200) -> FrontCdfSolution:
    """Forward time stepping of the renewal equation for E(.;u)."""
    law = grid.model.catalysts[0].offspring
    m = law.mean
    dG1 = np.diff(grid.G1)
    dG11 = np.diff(grid.G11)
    a = grid.alpha
    # contraction of the implicit step: derivative wrt E_n is a m dG1[0]/2 + (1-a) dG11[0]/2
    if a * m * dG1[0] / 2 + (1 - a) * dG11[0] / 2 >= 1:
        raise OracleError("time step too large for the implicit update to contract")
    if I is None:
        I = inhomogeneous_term(grid, u)
    n = grid.t.size
    E = np.zeros(n)
    B = np.zeros(n)  # 1 - f(1 - E)
    E[0] = I[0]
    B[0] = pgf_complement(law, E[0])
    for k in range(1, n):
        # sum over segments j = 0..k-1 of dG[j] * (v(t_{k-j}) + v(t_{k-j-1})) / 2,
        # the j = 0 segment holds the unknown value at t_k
        Bk = B[k - 1::-1][:k]     # B[k-1], ..., B[0]
        Ek = E[k - 1::-1][:k]
        known_b = 0.5 * (dG1[:k] @ Bk) + 0.5 * (dG1[1:k] @ Bk[:-1] if k > 1 else 0.0)
        known_e = 0.5 * (dG11[:k] @ Ek) + 0.5 * (dG11[1:k] @ Ek[:-1] if k > 1 else 0.0)
        base = a * known_b + (1 - a) * known_e + I[k]
        e = E[k - 1]
        for _ in range(max_iter):
            b = float(pgf_complement(law, e))
            new = base + 0.5 * a * dG1[0] * b + 0.5 * (1 - a) * dG11[0] * e
            if abs(new - e) <= tol:
                e = new
                break
            e = new
        E[k] = min(max(e, 0.0), 1.0)
        B[k] = pgf_complement(law, E[k])
    return FrontCdfSolution(grid.t, float(u), E, I, grid.h)
