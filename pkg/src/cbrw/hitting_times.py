"""Taboo hitting times of the walk: Monte Carlo, truncated linear systems,
and an exact jump-count representation.

Convention: ``F_{x,w}`` counts the holding time at the start, the after-exit
law ``Fbar_{w,w}`` starts its clock at the first jump, so that
``F_{w,w} = Exp(q) * Fbar_{w,w}``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse, stats
from scipy.sparse.linalg import spsolve

from .lattice_walk import JumpKernel, TableTooLargeError, _poisson_cutoff

__all__ = [
    "HittingError",
    "TabooHittingSamples",
    "HittingTransform",
    "HittingLaw",
    "sample_taboo_hitting",
    "laplace_mc",
    "laplace_linear_system",
    "hitting_law",
    "nn_return_transform",
    "total_hitting_probability",
]

HIT, TABOO, CENSORED = 0, 1, 2


class HittingError(ValueError):
    pass


def _pt(x, d):
    p = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if p.shape != (d,):
        raise HittingError(f"point {x!r} does not have dimension {d}")
    return p


def _taboo_array(taboo, d):
    pts = [_pt(w, d) for w in (taboo or [])]
    return np.array(pts, dtype=np.int64).reshape(len(pts), d)


def _check_target(target, taboo_arr):
    if len(taboo_arr) and np.any(np.all(taboo_arr == target, axis=1)):
        raise HittingError("target lies in the taboo set")


@dataclass
class TabooHittingSamples:
    start: tuple
    target: tuple
    taboo: tuple
    after_exit: bool
    horizon: float
    status: np.ndarray  # 0 hit, 1 absorbed in taboo, 2 censored at horizon
    tau: np.ndarray     # hitting time, nan unless status == 0
    seed: int | None = None

    @property
    def n(self) -> int:
        return int(self.status.size)

    @property
    def hit(self) -> np.ndarray:
        return self.status == HIT

    @property
    def n_censored(self) -> int:
        return int(np.count_nonzero(self.status == CENSORED))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed} horizon={self.horizon!r}\n")
            w = csv.writer(fh)
            w.writerow(["hit", "status", "tau"])
            for s, t in zip(self.status, self.tau):
                w.writerow([int(s == HIT), int(s), "" if np.isnan(t) else repr(float(t))])


@dataclass
class HittingTransform:
    lam: float
    value: float
    std_err: float
    method: str
    bias_bound: float = 0.0
    radius: int | None = None


@numba.njit(cache=True)
def _hitting_kernel(offsets, cum, q, start, target, taboo, after_exit, horizon, n, seed):
    np.random.seed(seed)
    d = offsets.shape[1]
    status = np.empty(n, dtype=np.int8)
    tau = np.full(n, np.nan)
    pos = np.empty(d, dtype=np.int64)
    for i in range(n):
        for c in range(d):
            pos[c] = start[c]
        t = 0.0
        first = after_exit
        while True:
            if not first:
                same = True
                for c in range(d):
                    if pos[c] != target[c]:
                        same = False
                        break
                if same:
                    status[i] = 0
                    tau[i] = t
                    break
                bad = False
                for k in range(taboo.shape[0]):
                    hit_k = True
                    for c in range(d):
                        if pos[c] != taboo[k, c]:
                            hit_k = False
                            break
                    if hit_k:
                        bad = True
                        break
                if bad:
                    status[i] = 1
                    break
                t += np.random.exponential(1.0 / q)
                if t > horizon:
                    status[i] = 2
                    break
            first = False
            u = np.random.random()
            j = 0
            while j < cum.size - 1 and u >= cum[j]:
                j += 1
            for c in range(d):
                pos[c] += offsets[j, c]
    return status, tau


def sample_taboo_hitting(kernel: JumpKernel, start, target, taboo=(), after_exit=False,
                         horizon=None, n=10_000, seed=0, lam_hint=None) -> TabooHittingSamples:
    """Simulate first hitting of ``target`` avoiding ``taboo``.

    With ``after_exit`` the walk makes one jump at time 0 before it can hit
    anything.  ``horizon`` defaults to ``50 / lam_hint``.
    """
    d = kernel.dimension
    s, tg, tb = _pt(start, d), _pt(target, d), _taboo_array(taboo, d)
    _check_target(tg, tb)
    if horizon is None:
        if lam_hint is None:
            raise HittingError("give a horizon or lam_hint")
        horizon = 50.0 / lam_hint
    if horizon <= 0:
        raise HittingError("horizon must be positive")
    cum = np.cumsum(kernel.jump_probs)
    cum[-1] = 1.0
    status, tau = _hitting_kernel(kernel.offsets, cum, kernel.q, s, tg, tb,
                                  bool(after_exit), float(horizon), int(n), int(seed) % (2**32))
    return TabooHittingSamples(tuple(s), tuple(tg), tuple(map(tuple, tb)), bool(after_exit),
                               float(horizon), status, tau, seed)


def laplace_mc(samples: TabooHittingSamples, lam: float) -> HittingTransform:
    """Mean of exp(-lam tau) 1{hit}; censoring adds bias at most exp(-lam horizon)."""
    if lam < 0:
        raise HittingError("lam must be non-negative")
    if lam == 0 and samples.n_censored:
        raise HittingError("lam = 0 with censored samples: bias is unbounded")
    vals = np.where(samples.hit, np.exp(-lam * np.nan_to_num(samples.tau)), 0.0)
    n = samples.n
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    bias = math.exp(-lam * samples.horizon) * samples.n_censored / n
    return HittingTransform(lam, float(vals.mean()), se, "mc", bias_bound=bias)


def _solve_box(kernel, start, target, taboo, lam, radius):
    d = kernel.dimension
    side = 2 * radius + 1
    ncell = side**d
    if ncell > 4_000_000:
        raise TableTooLargeError(f"box with {ncell} cells")
    centre = start
    coords = np.stack(np.unravel_index(np.arange(ncell), (side,) * d), axis=1) - radius + centre
    fixed = np.zeros(ncell, dtype=bool)
    rhs = np.zeros(ncell)

    def index(pts):
        rel = pts - centre + radius
        ok = np.all((rel >= 0) & (rel < side), axis=1)
        idx = np.full(len(pts), -1, dtype=np.int64)
        idx[ok] = np.ravel_multi_index(tuple(rel[ok].T), (side,) * d)
        return idx

    ti = index(target[None, :])[0]
    if ti < 0:
        raise HittingError("target outside the box")
    fixed[ti] = True
    rhs[ti] = 1.0
    if len(taboo):
        bi = index(taboo)
        fixed[bi[bi >= 0]] = True
    free = ~fixed
    rows, cols, vals = [np.arange(ncell)], [np.arange(ncell)], [np.where(free, lam + kernel.q, 1.0)]
    b = rhs.copy()
    for off, rate in zip(kernel.offsets, kernel.rates):
        nb = index(coords + off)
        use = free & (nb >= 0)
        # neighbours that are fixed move to the right-hand side
        to_rhs = use & fixed[np.maximum(nb, 0)]
        b[to_rhs] += rate * rhs[nb[to_rhs]]
        keep = use & ~to_rhs
        rows.append(np.nonzero(keep)[0])
        cols.append(nb[keep])
        vals.append(np.full(int(keep.sum()), -rate))
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(ncell, ncell))
    u = spsolve(A.tocsc(), b)
    return u, index


def laplace_linear_system(kernel: JumpKernel, start, target, taboo=(), after_exit=False,
                          lam=1.0, radius=None, tol=1e-8, max_radius=None) -> HittingTransform:
    """Laplace transform of the (taboo) hitting time via a box-truncated system.

    The box edge absorbs to 0, so each value is a lower bound; the radius is
    doubled until two successive values differ by less than ``tol``.
    """
    if lam <= 0:
        raise HittingError("lam must be positive for the truncated system")
    d = kernel.dimension
    s, tg, tb = _pt(start, d), _pt(target, d), _taboo_array(taboo, d)
    _check_target(tg, tb)
    spread = [np.max(np.abs(tg - s))] + [np.max(np.abs(w - s)) for w in tb]
    need = int(max(spread)) + 2 * kernel.max_step
    if radius is None:
        radius = max(16, need)
    if max_radius is None:
        max_radius = 4096 if d == 1 else (512 if d == 2 else 64)
    radius = max(radius, need)
    prev = None
    while True:
        u, index = _solve_box(kernel, s, tg, tb, lam, radius)
        if after_exit:
            nb = index(s[None, :] + kernel.offsets)
            val = float(np.sum(kernel.jump_probs * np.where(nb >= 0, u[np.maximum(nb, 0)], 0.0)))
        else:
            val = float(u[index(s[None, :])[0]])
        if prev is not None and abs(val - prev) < tol:
            return HittingTransform(lam, val, 0.0, "linear_system", radius=radius)
        prev = val
        if 2 * radius > max_radius:
            raise HittingError(f"no convergence to tol={tol} within radius {max_radius}")
        radius *= 2


def nn_return_transform(lam, q=1.0):
    """Closed form of Fbar*_{0,0} for the symmetric nearest-neighbour walk on Z."""
    a = np.asarray(lam, dtype=float) + q
    return (a - np.sqrt(a * a - q * q)) / q


@dataclass
class HittingLaw:
    """Law of a (taboo) hitting time as a mixture of Gamma(n, q) laws.

    ``weights[n]`` is the probability that the target is hit after exactly
    ``n`` holding times (``n = 0`` is an atom at time 0).  The weights are
    exact first-passage probabilities of the embedded jump chain; mass not
    yet resolved after ``n_max`` jumps is kept in ``unresolved``.
    """

    weights: np.ndarray
    q: float
    unresolved: float

    @property
    def n_max(self) -> int:
        return self.weights.size - 1

    @property
    def resolved_mass(self) -> float:
        return float(self.weights.sum())

    def with_holding(self) -> "HittingLaw":
        """Exp(q) * this law: every Gamma index shifts by one."""
        return HittingLaw(np.concatenate([[0.0], self.weights]), self.q, self.unresolved)

    def transform(self, lam):
        lam = np.asarray(lam, dtype=float)
        n = np.arange(self.weights.size)
        ratio = self.q / (self.q + lam[..., None])
        return np.sum(self.weights * ratio**n, axis=-1)

    def transform_derivative(self, lam):
        lam = np.asarray(lam, dtype=float)
        n = np.arange(self.weights.size)
        ratio = self.q / (self.q + lam[..., None])
        return -np.sum(self.weights * n * ratio**n / (self.q + lam[..., None]), axis=-1)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        n = np.arange(1, self.weights.size)
        out = self.weights[0] * (t >= 0)
        if n.size:
            out = out + stats.gamma.cdf(t[..., None], n, scale=1.0 / self.q) @ self.weights[1:]
        return out

    def density(self, t):
        """Density of the absolutely continuous part (the atom is excluded)."""
        t = np.asarray(t, dtype=float)
        n = np.arange(1, self.weights.size)
        return self.q * stats.poisson.pmf(n - 1, self.q * t[..., None]) @ self.weights[1:]

    def exp_convolved_density(self, beta: float, t):
        """Density of E + tau with E ~ Exp(beta) independent, beta >= q.

        Uniformised at rate beta: the first event ends E, each later event is
        a real jump with probability q / beta.
        """
        t = np.asarray(t, dtype=float)
        if beta < self.q * (1 - 1e-12):
            raise HittingError("beta must be at least q")
        rho = min(self.q / beta, 1.0)
        n = np.arange(self.weights.size)
        k_max = _poisson_cutoff(beta * float(np.max(t, initial=0.0)), 1e-17) + 1
        k_max = max(k_max, self.n_max)
        k = np.arange(k_max + 1)
        # c[k] = P(tau ends at the k-th uniformised event after E)
        if rho >= 1.0:
            c = np.zeros(k_max + 1)
            m = min(k_max, self.n_max)
            c[: m + 1] = self.weights[: m + 1]
        else:
            fail = k[:, None] - n[None, :]
            nb = np.where(fail >= 0, stats.nbinom.pmf(np.maximum(fail, 0), np.maximum(n, 1), rho), 0.0)
            nb[:, 0] = (k == 0)
            c = nb @ self.weights
        return beta * stats.poisson.pmf(k[None, :], beta * t[..., None]) @ c


def hitting_law(kernel: JumpKernel, start, target, taboo=(), after_exit=False,
                n_max=None, t_max=None, tail_eps=1e-15, max_cells=20_000_000) -> HittingLaw:
    """Exact jump-count law of the hitting time (see :class:`HittingLaw`).

    Either ``n_max`` or ``t_max`` must be given; with ``t_max`` the jump count
    is cut where the Poisson(q t_max) tail drops below ``tail_eps``.
    """
    d = kernel.dimension
    s, tg, tb = _pt(start, d), _pt(target, d), _taboo_array(taboo, d)
    _check_target(tg, tb)
    if n_max is None:
        if t_max is None:
            raise HittingError("give n_max or t_max")
        n_max = _poisson_cutoff(kernel.q * t_max, tail_eps)
    w = np.zeros(n_max + 1)
    if not after_exit and np.array_equal(s, tg):
        w[0] = 1.0
        return HittingLaw(w, kernel.q, 0.0)
    reach = n_max * kernel.max_step + 1
    span = max([np.max(np.abs(tg - s))] + [np.max(np.abs(x - s)) for x in tb])
    radius = int(reach + span)
    side = 2 * radius + 1
    if side**d > max_cells:
        raise TableTooLargeError(f"box with {side}^{d} cells exceeds cap {max_cells}")
    axes = tuple(range(d))
    mass = np.zeros((side,) * d)
    ti = tuple(tg - s + radius)
    tbi = [tuple(x - s + radius) for x in tb]
    mass[(radius,) * d] = 1.0
    shifts = [tuple(int(v) for v in off) for off in kernel.offsets]
    probs = kernel.jump_probs

    def step(m):
        out = np.zeros_like(m)
        for sh, p in zip(shifts, probs):
            out += p * np.roll(m, sh, axis=axes)
        return out

    if after_exit:
        mass = step(mass)
        w[0] = mass[ti]
        mass[ti] = 0.0
        for b in tbi:
            mass[b] = 0.0
    for n in range(1, n_max + 1):
        mass = step(mass)
        w[n] = mass[ti]
        mass[ti] = 0.0
        for b in tbi:
            mass[b] = 0.0
    return HittingLaw(w, kernel.q, float(mass.sum()))


def total_hitting_probability(kernel: JumpKernel, start, target, taboo=(), after_exit=False,
                              lams=None, tol=1e-8):
    """F(inf) for a taboo hitting law.

    A recurrent walk with an empty taboo set hits surely, so the value is 1.
    Otherwise the transform is evaluated on a decreasing lam sequence and
    extrapolated to 0 (Richardson in sqrt(lam) for d = 1, plain last value
    otherwise); the second return value flags the extrapolation.
    """
    d = kernel.dimension
    if kernel.is_recurrent() and len(_taboo_array(taboo, d)) == 0:
        return 1.0, False
    if lams is None:
        lams = [4e-2 / 4**k for k in range(4)]
    vals = [laplace_linear_system(kernel, start, target, taboo, after_exit, lam, tol=tol,
                                  max_radius=1 << 15 if d == 1 else 512).value for lam in lams]
    lams = np.asarray(lams, dtype=float)
    # recurrent d = 1: expansion in sqrt(lam); transient: analytic in lam
    h = np.sqrt(lams) if (kernel.is_recurrent() and d == 1) else lams
    if d == 2 and kernel.is_recurrent():
        return float(vals[-1]), True
    coef = np.polyfit(h, vals, len(vals) - 1)
    return float(np.clip(coef[-1], 0.0, 1.0)), True
