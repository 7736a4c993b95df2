"""Directional geometry of the front: the surface R = {H(r) = nu}, the
limit shape z(r), rate functions along r, and walk tail estimates."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import optimize

from .lattice_walk import JumpKernel, cumulant

__all__ = [
    "GeometryError",
    "BelowMeanError",
    "DirectionalRate",
    "FrontShape",
    "solve_r_on_ray",
    "limit_shape_point",
    "lattice_span",
    "directional_rate",
    "rate_function",
    "chernoff_bound",
    "tail_asymptotic",
    "sample_directions",
    "front_shape",
    "membership",
    "classify_points",
]

O_EPS, Q_EPS, BAND = "O", "Q", "band"


class GeometryError(ValueError):
    pass


class BelowMeanError(GeometryError):
    pass


def _H_ray(kernel, r, s):
    rep = cumulant(kernel, s * r)
    return rep.value, float(rep.grad @ r), float(r @ rep.hess @ r)


def solve_r_on_ray(kernel: JumpKernel, nu: float, direction, tol=1e-13) -> np.ndarray:
    """r = s n with s > 0 and H(s n) = nu."""
    n = np.atleast_1d(np.asarray(direction, dtype=float))
    norm = np.linalg.norm(n)
    if norm == 0:
        raise GeometryError("direction must be nonzero")
    n = n / norm
    if nu <= 0:
        raise GeometryError("nu must be positive")
    hi = 1.0
    while _H_ray(kernel, n, hi)[0] < nu:
        hi *= 2.0
        if hi > 1e6:
            raise GeometryError("H does not reach nu along this ray")
    s = optimize.brentq(lambda s: _H_ray(kernel, n, s)[0] - nu, 0.0, hi, xtol=1e-15, rtol=1e-15)
    for _ in range(3):
        h, dh, _ = _H_ray(kernel, n, s)
        if dh <= 0 or abs(h - nu) <= tol * nu:
            break
        s -= (h - nu) / dh
    return s * n


def limit_shape_point(kernel: JumpKernel, nu: float, r) -> np.ndarray:
    """z(r) = nu grad H(r) / <grad H(r), r>."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    g = cumulant(kernel, r).grad
    denom = float(g @ r)
    if denom <= 0:
        raise GeometryError("<grad H(r), r> must be positive")
    return nu * g / denom


def lattice_span(r, tol=1e-9, max_den=1000):
    """Span r* of <Z^d, r>, or None when the coordinate ratios are not rational.

    Ratios count as rational when a fraction with denominator <= ``max_den``
    matches to ``tol``; irrationals miss by ~1/max_den^2, far above ``tol``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    k = int(np.argmax(np.abs(r)))
    ref = r[k]
    if ref == 0:
        raise GeometryError("r must be nonzero")
    nums, dens = [], []
    for v in r:
        ratio = v / ref
        fr = Fraction(ratio).limit_denominator(max_den)
        if abs(float(fr) - ratio) > tol:
            return None
        nums.append(fr.numerator)
        dens.append(fr.denominator)
    g = 0
    for a in nums:
        g = math.gcd(g, abs(a))
    lcm = 1
    for b in dens:
        lcm = lcm * b // math.gcd(lcm, b)
    return abs(ref) * g / lcm


@dataclass
class DirectionalRate:
    kernel: JumpKernel
    r: np.ndarray
    nu: float
    theta0: float
    span: float | None

    @property
    def mean(self) -> float:
        return _H_ray(self.kernel, self.r, 0.0)[1]

    def H(self, s):
        return _H_ray(self.kernel, self.r, s)

    def rate(self, theta):
        return rate_function(self.kernel, self.r, theta)


def directional_rate(kernel: JumpKernel, nu: float, direction, span=None) -> DirectionalRate:
    r = solve_r_on_ray(kernel, nu, direction)
    theta0 = _H_ray(kernel, r, 1.0)[1]
    if span is None:
        span = lattice_span(r)
    return DirectionalRate(kernel, r, nu, theta0, span)


def rate_function(kernel: JumpKernel, r, theta: float, tol=1e-12, max_iter=100):
    """(Lambda_r(theta), lambda_r(theta), D_r(theta)) for theta at or above the mean.

    lambda solves H_r'(s) = theta; Newton steps, falling back to bisection
    whenever a step leaves the current bracket.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    _, mean, var0 = _H_ray(kernel, r, 0.0)
    scale = max(1.0, abs(mean))
    if theta < mean - 1e-14 * scale:
        raise BelowMeanError(f"theta={theta} is below the mean {mean}")
    if abs(theta - mean) <= 1e-14 * scale:
        return 0.0, 0.0, var0
    lo, hi = 0.0, 1.0
    while _H_ray(kernel, r, hi)[1] < theta:
        lo, hi = hi, 2.0 * hi
    s = 0.5 * (lo + hi)
    for _ in range(max_iter):
        _, d1, d2 = _H_ray(kernel, r, s)
        f = d1 - theta
        if f > 0:
            hi = s
        else:
            lo = s
        if abs(f) <= tol * max(1.0, abs(theta)):
            break
        step = s - f / d2 if d2 > 0 else None
        s = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
    h, _, d2 = _H_ray(kernel, r, s)
    return theta * s - h, s, d2


def chernoff_bound(kernel: JumpKernel, r, t: float, x: float) -> float:
    """exp(-t Lambda_r(x / t)) >= P(<S(t), r> >= x)."""
    if t < 0:
        raise GeometryError("t must be non-negative")
    if t == 0:
        return 1.0 if x <= 0 else 0.0
    lam_val = rate_function(kernel, r, x / t)[0]
    return math.exp(-t * lam_val)


def tail_asymptotic(kernel: JumpKernel, r, t: float, x: float, lattice: bool = True, span=None):
    """Exact-asymptotics approximation of P(<S(t), r> >= x), theta = x / t > mean.

    Lattice form ``h e^{-t Lambda} / ((1 - e^{-lambda h}) sqrt(2 pi t D))`` with span
    ``h`` (``x`` on the lattice); non-lattice form ``e^{-t Lambda} / (lambda sqrt(2 pi t D))``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    theta = x / t
    lam_val, lam, D = rate_function(kernel, r, theta)
    if lam <= 0:
        raise BelowMeanError("tail asymptotic needs theta strictly above the mean")
    base = math.exp(-t * lam_val) / math.sqrt(2 * math.pi * t * D)
    if lattice:
        h = lattice_span(r) if span is None else span
        if h is None:
            raise GeometryError("r is not a lattice direction")
        return base * h / (1.0 - math.exp(-lam * h))
    return base / lam


def sample_directions(d: int, n: int | None = None) -> np.ndarray:
    """Unit directions: +-1 in d = 1, uniform angles in d = 2, Fibonacci sphere otherwise."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        n = 720 if n is None else n
        a = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    n = 2000 if n is None else n
    if d != 3:
        rng = np.random.default_rng(0)
        v = rng.standard_normal((n, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    golden = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(golden) * np.sin(phi), np.sin(golden) * np.sin(phi), np.cos(phi)], axis=1)


@dataclass
class FrontShape:
    nu: float
    directions: np.ndarray
    r: np.ndarray
    z: np.ndarray
    theta0: np.ndarray
    span: list

    @property
    def mesh(self) -> float:
        """Largest angle (radians) between a direction and its nearest neighbour."""
        if self.directions.shape[1] == 1:
            return 0.0
        c = np.clip(self.directions @ self.directions.T, -1, 1)
        np.fill_diagonal(c, -1)
        return float(np.max(np.arccos(c.max(axis=1))))

    def to_csv(self, path) -> None:
        d = self.directions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"n{i}" for i in range(d)] + [f"r{i}" for i in range(d)]
                       + [f"z{i}" for i in range(d)] + ["theta0", "r_star"])
            for k in range(len(self.directions)):
                w.writerow([repr(float(v)) for v in self.directions[k]]
                           + [repr(float(v)) for v in self.r[k]]
                           + [repr(float(v)) for v in self.z[k]]
                           + [repr(float(self.theta0[k])),
                              "" if self.span[k] is None else repr(float(self.span[k]))])


def front_shape(kernel: JumpKernel, nu: float, directions=None, n=None) -> FrontShape:
    if directions is None:
        directions = sample_directions(kernel.dimension, n)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    rs, zs, th, sp = [], [], [], []
    for n_vec in directions:
        r = solve_r_on_ray(kernel, nu, n_vec)
        rs.append(r)
        zs.append(limit_shape_point(kernel, nu, r))
        th.append(_H_ray(kernel, r, 1.0)[1])
        sp.append(lattice_span(r))
    return FrontShape(nu, directions / np.linalg.norm(directions, axis=1, keepdims=True),
                      np.array(rs), np.array(zs), np.array(th), sp)


def classify_points(shape: FrontShape, points, eps: float) -> np.ndarray:
    """Vectorised :func:`membership`: returns an array of 'O', 'Q' or 'band'."""
    if len(shape.r) == 0:
        raise GeometryError("empty direction sample")
    if eps < 0:
        raise GeometryError("eps must be non-negative")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    best = np.max(pts @ shape.r.T, axis=1)
    out = np.full(len(pts), BAND, dtype=object)
    out[best > shape.nu + eps] = O_EPS
    if eps < shape.nu:
        out[best < shape.nu - eps] = Q_EPS
    return out


def membership(shape: FrontShape, point, eps: float) -> str:
    """'O' if <x, r> > nu + eps for some sampled r, 'Q' if <x, r> < nu - eps for all, else 'band'."""
    return str(classify_points(shape, [point], eps)[0])
