"""The phi fixed point, the constant c*, the lattice correction chi and the
predicted front-fluctuation CDF.

Unknowns are stored as w_j(x) = 1 - phi(e^x; w_j) on a uniform grid in
x = log(lam).  In these variables the system reads

    w_j(x) = a_j int (1 - f_j(1 - w_j(x - s))) g_j(s) ds
             + (1 - a_j) sum_k int w_k(x - s) K_jk(s) ds,

with g_j the density of nu * Exp(beta_j) and K_jk the density of
nu * (Exp(beta_j) + tau_jk), tau_jk the after-exit taboo hitting time.
Both integrals only look to the left (s >= 0), so the grid is filled by
marching from small lam, where w_j(x) = theta_j e^x holds to second order.
Between nodes, ell = log(w e^{-x}) is interpolated linearly; this is exact
for both the small-lam regime (ell constant) and the large-lam regime
(ell with slope -1).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from .branching_model import CbrwModel, pgf_complement
from .hitting_times import (
    hitting_law,
    laplace_linear_system,
    sample_taboo_hitting,
    total_hitting_probability,
)
from .lattice_walk import TableTooLargeError, _poisson_cutoff, cumulant
from .malthusian import perron_vector

__all__ = [
    "PhiError",
    "PhiGridError",
    "PhiTable",
    "CStar",
    "ChiCorrection",
    "GridSpec",
    "solve_phi_system",
    "phi_residual",
    "phi_limit",
    "extend_phi",
    "c_star",
    "chi",
    "chi_correction",
    "predicted_cdf",
]


class PhiError(RuntimeError):
    pass


class PhiGridError(PhiError):
    pass


@dataclass(frozen=True)
class GridSpec:
    lam_min: float = 1e-8
    lam_max: float = 1e8
    per_decade: int = 64

    @property
    def step(self) -> float:
        return math.log(10.0) / self.per_decade

    @property
    def x(self) -> np.ndarray:
        n = int(round(math.log10(self.lam_max / self.lam_min) * self.per_decade))
        return math.log(self.lam_min) + self.step * np.arange(n + 1)


def _taboo(model, k):
    return [c.position for i, c in enumerate(model.catalysts) if i != k]


def _poly_complement(law):
    """Coefficients c_n of 1 - f(1 - w) = sum_{n >= 1} c_n w^n."""
    p = law.array
    K = p.size - 1
    c = np.zeros(K + 1)
    for k in range(1, K + 1):
        for n in range(1, k + 1):
            c[n] -= p[k] * math.comb(k, n) * (-1) ** n
    return c


# ---------------------------------------------------------------- densities

def _mixture_densities(model, nu, t_nodes):
    """K_jk on the time nodes from exact jump-count hitting laws."""
    N = model.n_catalysts
    betas = model.betas
    t_max = float(t_nodes.max())
    out = np.empty((N, N) + t_nodes.shape)
    fbar_nu = np.empty((N, N))
    for j in range(N):
        n_max = _poisson_cutoff(betas[j] * t_max, 1e-17) + 1
        for k in range(N):
            law = hitting_law(model.kernel, model.catalysts[j].position, model.catalysts[k].position,
                              _taboo(model, k), True, n_max=n_max)
            out[j, k] = law.exp_convolved_density(betas[j], t_nodes.ravel()).reshape(t_nodes.shape)
            fbar_nu[j, k] = float(law.transform(nu))
    return out, fbar_nu


def _ctmc_densities(model, nu, t_nodes):
    """K_jk from the killed Markov chain and matrix exponentials.

    Independent of the jump-count route: the density of absorption at w_k is
    sum_x P_x(t) q(x, w_k) with P propagated by expm_multiply.  The nodes must
    form rows of arithmetic progressions (one row per Gauss node).
    """
    kern = model.kernel
    d = kern.dimension
    N = model.n_catalysts
    betas = model.betas
    t_max = float(t_nodes.max())
    out = np.empty((N, N) + t_nodes.shape)
    fbar_nu = np.empty((N, N))
    W = [np.array(c.position) for c in model.catalysts]
    for j in range(N):
        R = (_poisson_cutoff(kern.q * t_max, 1e-17) + 2) * kern.max_step
        R += int(max(np.max(np.abs(w - W[j])) for w in W))
        side = 2 * R + 1
        n_sites = side**d
        if n_sites > 3_000_000:
            raise TableTooLargeError("CTMC box too large")
        coords = np.stack(np.unravel_index(np.arange(n_sites), (side,) * d), axis=1) - R + W[j]
        absorbing = np.zeros(n_sites, dtype=bool)
        widx = []
        for w in W:
            idx = np.ravel_multi_index(tuple(w - W[j] + R), (side,) * d)
            absorbing[idx] = True
            widx.append(idx)
        # state n_sites is "at w_j before the exit jump"
        n_states = n_sites + 1
        rows, cols, vals = [], [], []
        rates_in = np.zeros((N, n_states))
        live = ~absorbing
        for off, rate in zip(kern.offsets, kern.rates):
            dest = coords + off
            rel = dest - W[j] + R
            ok = np.all((rel >= 0) & (rel < side), axis=1) & live
            di = np.full(n_sites, -1)
            di[ok] = np.ravel_multi_index(tuple(rel[ok].T), (side,) * d)
            src = np.nonzero(ok)[0]
            rows.append(src)
            cols.append(di[src])
            vals.append(np.full(src.size, rate))
            # exit jump from the pre-exit state at rate beta * p(y)
            e = W[j] + off
            ei = np.ravel_multi_index(tuple(e - W[j] + R), (side,) * d)
            rows.append(np.array([n_sites]))
            cols.append(np.array([ei]))
            vals.append(np.array([betas[j] * rate / kern.q]))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        diag = np.zeros(n_states)
        np.add.at(diag, rows, vals)
        Q = sparse.csr_matrix((vals, (rows, cols)), shape=(n_states, n_states))
        Q = Q - sparse.diags(diag)
        for k in range(N):
            mask = cols == widx[k]
            np.add.at(rates_in[k], rows[mask], vals[mask])
        A = Q.T.tocsr()
        p0 = np.zeros(n_states)
        p0[n_sites] = 1.0
        for row in range(t_nodes.shape[0]):
            ts = t_nodes[row]
            start = expm_multiply(A * ts[0], p0) if ts[0] > 0 else p0
            if ts.size > 1:
                traj = expm_multiply(A, start, start=0.0, stop=ts[-1] - ts[0], num=ts.size, endpoint=True)
            else:
                traj = start[None, :]
            for k in range(N):
                out[j, k, row] = traj @ rates_in[k]
        for k in range(N):
            fb = laplace_linear_system(kern, W[j], W[k], _taboo(model, k), True, nu, tol=1e-13).value
            fbar_nu[j, k] = fb
    return out, fbar_nu


# ---------------------------------------------------------------- quadrature

@dataclass
class _Quadrature:
    """Per-offset quadrature weights on the segments s in [m D, (m+1) D]."""

    sigma: np.ndarray       # Gauss nodes within a segment, shape (L,)
    KW: np.ndarray          # (N, N, M, L) kernel * Gauss weight
    GW: np.ndarray          # (N, M, L)
    cumKe: np.ndarray       # (N, N, M + 1): int_0^{m D} e^{-s} K_jk(s) ds
    Kstar1: np.ndarray      # (N, N): int_0^inf e^{-s} K_jk(s) ds
    b: np.ndarray           # (N,): beta_j / nu
    poly: list              # coefficients of 1 - f_j(1 - w)


def _build_quadrature(model, nu, step, M, order, source):
    xi, wq = np.polynomial.legendre.leggauss(order)
    sigma = 0.5 * step * (xi + 1.0)
    wseg = 0.5 * step * wq
    s_nodes = step * np.arange(M)[:, None] + sigma[None, :]          # (M, L)
    t_nodes = (s_nodes / nu).T                                       # rows: fixed Gauss node
    if source == "mixture":
        dens, fbar_nu = _mixture_densities(model, nu, t_nodes)
    elif source == "ctmc":
        dens, fbar_nu = _ctmc_densities(model, nu, t_nodes)
    else:
        raise ValueError(f"unknown density source {source!r}")
    dens = np.swapaxes(dens, -1, -2) / nu                            # (N, N, M, L), s units
    KW = dens * wseg
    betas = model.betas
    b = betas / nu
    GW = (b[:, None, None] * np.exp(-b[:, None, None] * s_nodes[None])) * wseg
    es = np.exp(-s_nodes)
    seg = np.einsum("jkml,ml->jkm", KW, es)
    cumKe = np.concatenate([np.zeros(seg.shape[:2] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    gstar = betas / (nu + betas)
    Kstar1 = gstar[:, None] * fbar_nu
    poly = [_poly_complement(c.offspring) for c in model.catalysts]
    return _Quadrature(sigma, KW, GW, cumKe, Kstar1, b, poly)


def _left_tail(quad, theta, x, S, j):
    """Contribution of s > S D (where w_k = theta_k e^{x - s}) to equation j."""
    ex = math.exp(x)
    lin = float(np.sum(theta * (quad.Kstar1[j] - quad.cumKe[j, :, S])))
    return lin * ex


def _nl_tail(quad, theta_j, x, S_val, j):
    b = quad.b[j]
    c = quad.poly[j]
    tot = 0.0
    for n in range(1, c.size):
        if c[n] != 0.0:
            tot += c[n] * (theta_j * math.exp(x)) ** n * b * math.exp(-(b + n) * S_val) / (b + n)
    return tot


@dataclass
class PhiTable:
    """Solved w = 1 - phi on the x = log(lam) grid, one column per site."""

    x: np.ndarray
    ell: np.ndarray          # (n, S) log(w e^{-x})
    theta: np.ndarray        # (S,) small-lam slopes
    nu: float
    sites: list
    limit: np.ndarray        # lam -> infinity limit of phi per site
    residual: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.x)

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.x[:, None] + self.ell)

    @property
    def phi_values(self) -> np.ndarray:
        return 1.0 - self.w

    def site_index(self, site) -> int:
        site = tuple(int(v) for v in np.atleast_1d(site))
        for i, s in enumerate(self.sites):
            if s == site:
                return i
        raise KeyError(f"site {site} not in table")

    def w_at(self, lam, site=0):
        j = site if isinstance(site, (int, np.integer)) else self.site_index(site)
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape)
        pos = lam > 0
        x = np.log(np.where(pos, lam, 1.0))
        if np.any(pos & (x > self.x[-1] + 1e-12)):
            raise PhiGridError(f"lam above the grid maximum {math.exp(self.x[-1]):.3g}")
        left = pos & (x < self.x[0])
        mid = pos & ~left
        out[left] = self.theta[j] * lam[left]
        if np.any(mid):
            ell = np.interp(x[mid], self.x, self.ell[:, j])
            out[mid] = np.exp(x[mid] + ell)
        return out

    def phi(self, lam, site=0):
        """phi(lam; site); lam = 0 gives 1."""
        return 1.0 - self.w_at(lam, site)

    def tail_extrapolation(self, site=0):
        """Estimate of lim phi from the grid alone, with a spread.

        The approach to the limit is slow, roughly (log lam)^{-1/2}, because the
        return time to the catalyst has a heavy tail; cubic fits in
        (log lam)^{-1/2} over two windows give the estimate and its spread.
        """
        j = site if isinstance(site, (int, np.integer)) else self.site_index(site)
        x = self.x
        ph = self.phi_values[:, j]
        top = x[-1]
        ests = []
        for frac in (0.3, 0.55):
            sel = x > frac * top
            if sel.sum() < 8 or top <= 0:
                raise PhiError("grid too short for tail extrapolation")
            ests.append(np.polyfit(x[sel] ** -0.5, ph[sel], 3)[-1])
        return float(np.mean(ests)), float(abs(ests[0] - ests[1]))

    def slope_check(self, site=0):
        """Relative gap between (1 - phi(lam))/lam at the two smallest nodes and theta."""
        j = site if isinstance(site, (int, np.integer)) else self.site_index(site)
        est = np.exp(self.ell[:2, j])
        return float(np.max(np.abs(est / self.theta[j] - 1.0)))

    def to_csv(self, path, header=None) -> None:
        d = len(self.sites[0])
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow([f"site{i}" for i in range(d)] + ["lam", "phi"])
            phis = self.phi_values
            for j, s in enumerate(self.sites):
                for i in range(self.x.size):
                    w.writerow(list(s) + [repr(float(np.exp(self.x[i]))), repr(float(phis[i, j]))])


def _default_theta(model, nu, theta, fbar_nu):
    N = model.n_catalysts
    if theta is None:
        theta = 1.0
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size == N and N > 1:
        return theta
    # theta must be a Perron vector of D(nu); only its scale is free
    g = model.betas / (nu + model.betas)
    D = np.diag(model.alphas * model.means * g) + ((1 - model.alphas) * g)[:, None] * fbar_nu
    rho, v = perron_vector(D)
    return float(theta[0]) * v / v[0]


def solve_phi_system(model: CbrwModel, nu: float, theta=None, grid: GridSpec | None = None,
                     order: int = 8, source: str = "mixture", tol: float = 1e-15,
                     max_iter: int = 500, check_residual: bool = False) -> PhiTable:
    """March the phi system over the log-lam grid.

    ``theta`` fixes the gauge (small-lam slope of 1 - phi at w_1); for N > 1
    the full vector is the Perron vector of D(nu) scaled to theta_1.
    """
    if nu <= 0:
        raise PhiError("nu must be positive (supercritical model)")
    grid = GridSpec() if grid is None else grid
    x = grid.x
    n = x.size
    step = grid.step
    N = model.n_catalysts
    quad = _build_quadrature(model, nu, step, n - 1, order, source)
    fbar_nu = quad.Kstar1 / (model.betas / (nu + model.betas))[:, None]
    theta = _default_theta(model, nu, theta, fbar_nu)
    if np.any(theta <= 0):
        raise PhiError("theta must be positive")
    a = model.alphas
    laws = [c.offspring for c in model.catalysts]
    sig = quad.sigma / step
    L = sig.size
    ell = np.empty((n, N))
    Wseg = np.empty((n - 1, L, N))     # w on segment p (between x_p and x_{p+1})
    Bseg = np.empty((n - 1, L, N))     # 1 - f_j(1 - w_j) on segment p
    log_theta = np.log(theta)

    for i in range(n):
        xi = x[i]
        known = np.empty(N)
        for j in range(N):
            lin = 0.0
            nl = 0.0
            if i >= 2:
                # segments p = 0..i-2 at offsets m = i-1-p = 1..i-1 (reversed)
                Kr = quad.KW[j, :, i - 1:0:-1, :]          # (N, i-1, L), m = i-1..1
                lin = float(np.einsum("kml,mlk->", Kr, Wseg[: i - 1]))
                Gr = quad.GW[j, i - 1:0:-1, :]
                nl = float(np.einsum("ml,ml->", Gr, Bseg[: i - 1, :, j]))
            lin += _left_tail(quad, theta, xi, i, j)
            nl += _nl_tail(quad, theta[j], xi, i * step, j)
            known[j] = a[j] * nl + (1 - a[j]) * lin
        if i == 0:
            w_i = known
            ell[0] = np.log(w_i) - xi
            continue
        # segment p = i-1 holds the unknown ell_i
        cur = ell[i - 1].copy()
        for it in range(max_iter):
            seg_ell = cur[None, :] * (1 - sig[:, None]) + ell[i - 1][None, :] * sig[:, None]
            seg_w = np.exp(xi - quad.sigma[:, None] + seg_ell)          # (L, N)
            w_new = known.copy()
            for j in range(N):
                bj = pgf_complement(laws[j], seg_w[:, j])
                w_new[j] += a[j] * float(quad.GW[j, 0] @ bj)
                w_new[j] += (1 - a[j]) * float(np.einsum("kl,lk->", quad.KW[j, :, 0, :], seg_w))
            new = np.log(w_new) - xi
            if np.max(np.abs(new - cur)) <= tol:
                cur = new
                break
            cur = new
        else:
            raise PhiError(f"fixed point at node {i} did not converge")
        ell[i] = cur
        seg_ell = cur[None, :] * (1 - sig[:, None]) + ell[i - 1][None, :] * sig[:, None]
        Wseg[i - 1] = np.exp(xi - quad.sigma[:, None] + seg_ell)
        for j in range(N):
            Bseg[i - 1, :, j] = pgf_complement(laws[j], Wseg[i - 1, :, j])
    if np.any(~np.isfinite(ell)):
        raise PhiError("non-finite values in the solution")
    sites = [c.position for c in model.catalysts]
    table = PhiTable(x=x, ell=ell, theta=theta, nu=float(nu), sites=sites,
                     limit=phi_limit(model), info={"order": order, "source": source,
                                                   "step": step, "log_theta": log_theta})
    if np.any(np.diff(table.phi_values, axis=0) > 1e-12):
        raise PhiError("phi is not monotone in lam")
    if check_residual:
        table.residual = phi_residual(model, table)
    return table


def phi_residual(model: CbrwModel, table: PhiTable, order: int = 13, source: str = "ctmc") -> float:
    """Max over nodes and sites of |w - RHS(w)| with fresh quadrature.

    The right-hand side is re-evaluated on the solved interpolant using a
    different Gauss order and, by default, kernel densities computed from
    matrix exponentials instead of jump-count mixtures.
    """
    x = table.x
    n = x.size
    step = x[1] - x[0]
    N = model.n_catalysts
    quad = _build_quadrature(model, table.nu, step, n - 1, order, source)
    theta = table.theta
    a = model.alphas
    laws = [c.offspring for c in model.catalysts]
    sig = quad.sigma / step
    ell = table.ell
    seg_ell = ell[1:, None, :] * (1 - sig[None, :, None]) + ell[:-1, None, :] * sig[None, :, None]
    Wseg = np.exp(x[1:, None, None] - quad.sigma[None, :, None] + seg_ell)
    Bseg = np.stack([pgf_complement(laws[j], Wseg[:, :, j]) for j in range(N)], axis=-1)
    w = table.w
    worst = 0.0
    for i in range(n):
        for j in range(N):
            lin = 0.0
            nl = 0.0
            if i >= 1:
                Kr = quad.KW[j, :, i - 1::-1, :][:, :i]           # m = i-1..0 for p = 0..i-1
                lin = float(np.einsum("kml,mlk->", Kr, Wseg[:i]))
                Gr = quad.GW[j, i - 1::-1, :][:i]
                nl = float(np.einsum("ml,ml->", Gr, Bseg[:i, :, j]))
            lin += _left_tail(quad, theta, x[i], i, j)
            nl += _nl_tail(quad, theta[j], x[i], i * step, j)
            rhs = a[j] * nl + (1 - a[j]) * lin
            worst = max(worst, abs(w[i, j] - rhs))
    return worst


def phi_limit(model: CbrwModel, tol=1e-14, max_iter=100_000) -> np.ndarray:
    """lim_{lam -> inf} phi(lam; w_j): the algebraic limit of the system.

    With lam = infinity every integral collapses to its total mass:
    w_j = a_j (1 - f_j(1 - w_j)) + (1 - a_j) sum_k Fbar_jk(inf) w_k, iterated
    from w = 1 down to the largest fixed point.
    """
    N = model.n_catalysts
    F = np.empty((N, N))
    for j in range(N):
        for k in range(N):
            F[j, k] = total_hitting_probability(model.kernel, model.catalysts[j].position,
                                                model.catalysts[k].position, _taboo(model, k), True)[0]
    a = model.alphas
    laws = [c.offspring for c in model.catalysts]
    w = np.ones(N)
    for _ in range(max_iter):
        new = np.array([a[j] * pgf_complement(laws[j], w[j]) for j in range(N)]) + (1 - a) * (F @ w)
        new = np.minimum(new, 1.0)
        if np.max(np.abs(new - w)) < tol:
            w = new
            break
        w = new
    return 1.0 - w


def extend_phi(model: CbrwModel, table: PhiTable, site, order: int = 8) -> PhiTable:
    """phi(lam; x) for a start site x outside the catalyst set.

    w(x_i; x) = sum_k int w_k(x_i - s) dF_{x,w_k}(s / nu), with the hitting laws
    including the holding time at x.  Returns a one-site table on the same grid.
    """
    site = tuple(int(v) for v in np.atleast_1d(site))
    if model.catalyst_index(site) is not None:
        j = model.catalyst_index(site)
        return PhiTable(table.x, table.ell[:, [j]], table.theta[[j]], table.nu, [site],
                        table.limit[[j]], table.residual, dict(table.info))
    x = table.x
    n = x.size
    step = x[1] - x[0]
    nu = table.nu
    N = model.n_catalysts
    xi, wq = np.polynomial.legendre.leggauss(order)
    sigma = 0.5 * step * (xi + 1.0)
    wseg = 0.5 * step * wq
    s_nodes = step * np.arange(n - 1)[:, None] + sigma[None, :]
    t_nodes = s_nodes / nu
    q = model.kernel.q
    kern_w = np.empty((N, n - 1, order))
    Fstar = np.empty(N)
    Finf = np.empty(N)
    for k in range(N):
        n_max = _poisson_cutoff(q * float(t_nodes.max()), 1e-17) + 1
        law = hitting_law(model.kernel, site, model.catalysts[k].position, _taboo(model, k), False,
                          n_max=n_max)
        kern_w[k] = law.density(t_nodes.ravel()).reshape(t_nodes.shape) / nu * wseg
        Fstar[k] = float(law.transform(nu))
        Finf[k] = total_hitting_probability(model.kernel, site, model.catalysts[k].position,
                                            _taboo(model, k), False)[0]
    sig = sigma / step
    ell = table.ell
    seg_ell = ell[1:, None, :] * (1 - sig[None, :, None]) + ell[:-1, None, :] * sig[None, :, None]
    Wseg = np.exp(x[1:, None, None] - sigma[None, :, None] + seg_ell)     # (n-1, L, N)
    es = np.exp(-s_nodes)
    cum = np.concatenate([np.zeros((N, 1)), np.cumsum(np.einsum("kml,ml->km", kern_w, es), axis=1)], axis=1)
    w_out = np.empty(n)
    for i in range(n):
        tot = 0.0
        if i >= 1:
            Kr = kern_w[:, i - 1::-1, :][:, :i]
            tot = float(np.einsum("kml,mlk->", Kr, Wseg[:i]))
        tot += math.exp(x[i]) * float(np.sum(table.theta * (Fstar - cum[:, i])))
        w_out[i] = tot
    theta_x = float(np.sum(table.theta * Fstar))
    limit = 1.0 - float(np.sum(Finf * (1.0 - table.limit)))
    return PhiTable(x, (np.log(w_out) - x)[:, None], np.array([theta_x]), nu, [site],
                    np.array([limit]), None, dict(table.info))


# ---------------------------------------------------------------- c*, chi, CDF

@dataclass
class CStar:
    value: float
    F00_nu: float
    G1_nu: float
    H_prime_r: float
    moment: float             # int s e^{-nu s} dG(s), finite-difference route
    moment_exact: float       # same, from the exact jump-count law
    moment_mc: float | None
    moment_mc_se: float | None
    r: float
    alpha: float
    with_sqrt2: float         # the variant carrying an extra 1/sqrt(2) factor

    def recompute(self) -> float:
        return (math.exp(-self.r) * (1 - self.F00_nu) * (1 - self.alpha * self.G1_nu)
                / ((1 - math.exp(-self.r)) * self.H_prime_r * self.moment))


def c_star(model: CbrwModel, nu: float, r: float | None = None, mc_samples: int = 0,
           seed: int = 0) -> CStar:
    """Tail constant of the front for a single catalyst on Z.

    c* = e^{-r} (1 - F*_00(nu)) (1 - a G1*(nu)) / ((1 - e^{-r}) H'(r) int s e^{-nu s} dG(s)),
    G = a m G1 + (1 - a) G1 * Fbar_00.
    """
    if model.n_catalysts != 1:
        raise PhiError("c* is only available for a single catalyst")
    if model.dimension != 1:
        raise PhiError("c* is only available on Z")
    kern = model.kernel
    cat = model.catalysts[0]
    w0 = cat.position
    q = kern.q
    a, m, beta = cat.alpha, cat.offspring.mean, cat.beta(q)
    if r is None:
        from .front_geometry import solve_r_on_ray
        r = float(solve_r_on_ray(kern, nu, [1.0])[0])

    def fbar(lam):
        return laplace_linear_system(kern, w0, w0, (), True, lam, tol=1e-14).value

    def Gstar(lam):
        return beta / (lam + beta) * (a * m + (1 - a) * fbar(lam))

    def fd(h):
        return -(Gstar(nu + h) - Gstar(nu - h)) / (2 * h)

    h = 1e-3
    moment = (4 * fd(h / 2) - fd(h)) / 3
    law = hitting_law(kern, w0, w0, (), True, n_max=4000)
    fb_nu = float(law.transform(nu))
    dfb = float(law.transform_derivative(nu))
    g1 = beta / (nu + beta)
    dg1 = -beta / (nu + beta) ** 2
    moment_exact = -(dg1 * (a * m + (1 - a) * fb_nu) + (1 - a) * g1 * dfb)
    moment_mc = se = None
    if mc_samples:
        rng = np.random.default_rng(seed)
        smp = sample_taboo_hitting(kern, w0, w0, (), True, horizon=60.0 / nu, n=mc_samples,
                                   seed=int(rng.integers(2**32)))
        e1 = rng.exponential(1 / beta, size=mc_samples)
        e2 = rng.exponential(1 / beta, size=mc_samples)
        tot = e2 + np.nan_to_num(smp.tau)
        vals = a * m * e1 * np.exp(-nu * e1) + (1 - a) * np.where(smp.hit, tot * np.exp(-nu * tot), 0.0)
        moment_mc = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(mc_samples))
    F00 = q / (nu + q) * fbar(nu)
    Hp = float(cumulant(kern, [r]).grad[0])
    val = math.exp(-r) * (1 - F00) * (1 - a * g1) / ((1 - math.exp(-r)) * Hp * moment)
    return CStar(val, F00, g1, Hp, moment, moment_exact, moment_mc, se, r, a, val / math.sqrt(2))


@dataclass(frozen=True)
class ChiCorrection:
    lattice: bool
    span: float | None
    nu: float


def chi_correction(nu: float, r, span=None) -> ChiCorrection:
    from .front_geometry import lattice_span
    if span is None:
        span = lattice_span(r)
    return ChiCorrection(span is not None, span, float(nu))


def chi(corr: ChiCorrection, t, y):
    """r* frac(nu t / r* + y / r*) on a lattice, 0 otherwise."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if not corr.lattice:
        return np.zeros(np.broadcast(t, y).shape)
    h = corr.span
    f = np.mod(corr.nu * t / h + y / h, 1.0)
    # mod of a tiny negative number rounds to 1.0
    return h * np.where(f >= 1.0, 0.0, f)


def predicted_cdf(table: PhiTable, corr: ChiCorrection, t: float, y, site=0, scale: float = 1.0):
    """phi(e^{-s y + chi(t; s y)}; x) with s = ``scale``.

    ``scale = 1`` is the general form for M_t(r) - nu t; on Z with the front
    measured in sites, ``scale = r`` gives the form for M_t - mu t.
    """
    y = np.asarray(y, dtype=float)
    z = scale * y
    arg = np.exp(-z + chi(corr, t, z))
    return table.phi(arg, site)
