"""Continuous-time random walk on Z^d with finitely many jump offsets.

The walk holds an Exp(q) time at every site and then jumps by offset ``y``
with probability ``rate(y) / q``.  Everything downstream (hitting times,
cumulants, the branching system) is built on :class:`JumpKernel`.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "KernelError",
    "ZeroOffsetError",
    "NegativeRateError",
    "RateSumError",
    "SpanError",
    "TableTooLargeError",
    "JumpKernel",
    "CumulantReport",
    "MarginalTable",
    "validate_kernel",
    "nearest_neighbour_kernel",
    "cumulant",
    "sample_path",
    "sample_displacements",
    "exact_marginal",
    "walk_tail_table",
]


class KernelError(ValueError):
    """Base class for invalid jump kernels."""


class ZeroOffsetError(KernelError):
    pass


class NegativeRateError(KernelError):
    pass


class RateSumError(KernelError):
    pass


class SpanError(KernelError):
    pass


class TableTooLargeError(RuntimeError):
    pass


@dataclass(frozen=True)
class JumpKernel:
    """Validated jump kernel; build it with :func:`validate_kernel`."""

    offsets: np.ndarray  # (J, d) int64
    rates: np.ndarray  # (J,) float64
    q: float

    @property
    def dimension(self) -> int:
        return self.offsets.shape[1]

    @property
    def jump_probs(self) -> np.ndarray:
        return self.rates / self.q

    @property
    def mean_jump(self) -> np.ndarray:
        """E[Y], the mean of a single jump."""
        return self.jump_probs @ self.offsets

    @property
    def drift(self) -> np.ndarray:
        """q E[Y], the mean velocity of the walk."""
        return self.rates @ self.offsets

    @property
    def max_step(self) -> int:
        return int(np.abs(self.offsets).max())

    def is_recurrent(self) -> bool:
        """Zero drift in dimension one or two (finite support, so finite variance)."""
        return self.dimension <= 2 and bool(np.allclose(self.drift, 0.0, atol=1e-14))

    def as_records(self) -> list[dict]:
        return [
            {"offset": [int(v) for v in o], "rate": float(r)}
            for o, r in zip(self.offsets, self.rates)
        ]


@dataclass
class CumulantReport:
    s: np.ndarray
    value: float
    grad: np.ndarray
    hess: np.ndarray


def _bareiss_det(mat: list[list[int]]) -> int:
    """Exact integer determinant (fraction-free elimination)."""
    a = [row[:] for row in mat]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def _spans_lattice(offsets: np.ndarray) -> bool:
    # the offsets generate Z^d iff the gcd of all d x d minors is 1
    d = offsets.shape[1]
    rows = [[int(v) for v in o] for o in offsets]
    g = 0
    for combo in itertools.combinations(rows, d):
        g = math.gcd(g, abs(_bareiss_det(list(combo))))
        if g == 1:
            return True
    return False


def _parse_jumps(jumps) -> list[tuple[tuple[int, ...], float]]:
    if isinstance(jumps, Mapping):
        items = list(jumps.items())
    else:
        items = []
        for entry in jumps:
            if isinstance(entry, Mapping):
                items.append((entry["offset"], entry["rate"]))
            else:
                off, rate = entry
                items.append((off, rate))
    out = []
    for off, rate in items:
        off = np.atleast_1d(np.asarray(off))
        if not np.all(np.equal(np.mod(off, 1), 0)):
            raise KernelError(f"offset {off.tolist()} is not an integer vector")
        out.append((tuple(int(v) for v in off), float(rate)))
    return out


def validate_kernel(jumps, q: float, rtol: float = 1e-12) -> JumpKernel:
    """Check a raw jump specification and return a :class:`JumpKernel`.

    Parameters
    ----------
    jumps : mapping or iterable
        Either ``{offset: rate}`` or a sequence of ``(offset, rate)`` pairs /
        ``{"offset": ..., "rate": ...}`` records.  Scalar offsets are read as
        one-dimensional.
    q : float
        Total jump rate; the rates must add up to it.

    Raises
    ------
    ZeroOffsetError, NegativeRateError, RateSumError, SpanError
        One class per violated invariant.
    """
    parsed = _parse_jumps(jumps)
    if not parsed:
        raise KernelError("kernel has no jumps")
    if q <= 0 or not np.isfinite(q):
        raise RateSumError(f"total rate q must be positive and finite, got {q}")
    dims = {len(o) for o, _ in parsed}
    if len(dims) != 1:
        raise KernelError(f"offsets have mixed dimensions {sorted(dims)}")
    seen = set()
    for off, rate in parsed:
        if all(v == 0 for v in off):
            raise ZeroOffsetError("zero offset is not a jump")
        if off in seen:
            raise KernelError(f"duplicate offset {list(off)}")
        seen.add(off)
        if not rate > 0:
            raise NegativeRateError(f"rate {rate} for offset {list(off)} must be positive")
    offsets = np.array([o for o, _ in parsed], dtype=np.int64)
    rates = np.array([r for _, r in parsed], dtype=float)
    total = rates.sum()
    if abs(total - q) > rtol * q:
        raise RateSumError(f"rates sum to {total!r}, expected q={q!r}")
    if not _spans_lattice(offsets):
        raise SpanError("offsets do not generate Z^d; the walk is not irreducible")
    return JumpKernel(offsets=offsets, rates=rates, q=float(q))


def nearest_neighbour_kernel(d: int = 1, q: float = 1.0) -> JumpKernel:
    """Symmetric simple random walk with total rate ``q``."""
    jumps = []
    for i in range(d):
        for sgn in (1, -1):
            e = [0] * d
            e[i] = sgn
            jumps.append((e, q / (2 * d)))
    return validate_kernel(jumps, q)


def cumulant(kernel: JumpKernel, s) -> CumulantReport:
    """H(s) = sum_y (exp(<s, y>) - 1) q(0, y) with gradient and Hessian."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (kernel.dimension,):
        raise ValueError(f"s must have shape ({kernel.dimension},)")
    y = kernel.offsets.astype(float)
    w = kernel.rates * np.exp(y @ s)
    value = float(w.sum() - kernel.q)
    grad = w @ y
    hess = (y * w[:, None]).T @ y
    return CumulantReport(s=s, value=value, grad=grad, hess=hess)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_path(kernel: JumpKernel, start, horizon: float, seed=None):
    """Sample one trajectory on ``[0, horizon]``.

    Returns ``(times, positions)``: jump epochs (with 0 prepended) and the
    site occupied from each epoch on.  Conditional on the number of jumps,
    the epochs of a Poisson process are uniform order statistics, which is
    how they are drawn here.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    rng = _as_rng(seed)
    start = np.atleast_1d(np.asarray(start, dtype=np.int64))
    n = rng.poisson(kernel.q * horizon) if horizon > 0 else 0
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.0, horizon, size=n))])
    idx = rng.choice(len(kernel.rates), size=n, p=kernel.jump_probs)
    steps = kernel.offsets[idx]
    positions = np.vstack([start[None, :], start[None, :] + np.cumsum(steps, axis=0)])
    return times, positions


def sample_displacements(kernel: JumpKernel, t: float, n: int, seed=None):
    """Draw ``n`` independent copies of S(t) - S(0); also returns jump counts."""
    rng = _as_rng(seed)
    counts = rng.poisson(kernel.q * t, size=n)
    per_offset = rng.multinomial(counts, kernel.jump_probs)
    return per_offset @ kernel.offsets, counts


@dataclass
class MarginalTable:
    """Probability table of S(t) - S(0) on the box ``[-radius, radius]^d``."""

    t: float
    radius: int
    probs: np.ndarray  # d-dimensional array, axis length 2*radius+1
    tail_eps: float
    truncated_mass: float = field(default=0.0)

    @property
    def dimension(self) -> int:
        return self.probs.ndim

    def points(self) -> np.ndarray:
        grids = np.meshgrid(*[np.arange(-self.radius, self.radius + 1)] * self.dimension, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def prob(self, point) -> float:
        point = np.atleast_1d(point)
        if np.any(np.abs(point) > self.radius):
            return 0.0
        return float(self.probs[tuple(int(v) + self.radius for v in point)])

    def total(self) -> float:
        return float(self.probs.sum())

    def mean(self) -> np.ndarray:
        return self.probs.ravel() @ self.points()

    def covariance(self) -> np.ndarray:
        pts = self.points().astype(float)
        p = self.probs.ravel()
        mu = p @ pts
        c = pts - mu
        return (c * p[:, None]).T @ c

    def tail(self, x: float, direction=None, strict: bool = False) -> float:
        """P(<S, r> >= x), or ``> x`` when ``strict``."""
        vals = self.points() @ (np.ones(1) if direction is None else np.asarray(direction, float))
        p = self.probs.ravel()
        mask = vals > x if strict else vals >= x - 1e-12 * max(1.0, abs(x))
        return float(p[mask].sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dimension)] + ["probability"])
            for pt, p in zip(self.points(), self.probs.ravel()):
                if p > 0:
                    w.writerow([*pt.tolist(), repr(float(p))])


def _poisson_cutoff(mean: float, tail_eps: float) -> int:
    """Smallest n with P(Poisson(mean) > n) < tail_eps (isf loses accuracy below ~1e-16)."""
    if mean == 0:
        return 0
    n = int(mean + 10.0 * math.sqrt(mean) + 10)
    if tail_eps >= 1e-15:
        n = int(stats.poisson.isf(tail_eps, mean))
    while stats.poisson.logsf(n, mean) > math.log(tail_eps):
        n += max(1, int(math.sqrt(mean)))
    return n + 1


def _convolution_powers(kernel: JumpKernel, n_max: int, max_cells: int):
    """Yield (n, pmf of Y_1 + ... + Y_n) on a fixed box, n = 0..n_max."""
    d = kernel.dimension
    radius = n_max * kernel.max_step
    side = 2 * radius + 1
    if side**d > max_cells:
        raise TableTooLargeError(f"table with {side}^{d} cells exceeds cap {max_cells}")
    pmf = np.zeros((side,) * d)
    pmf[(radius,) * d] = 1.0
    probs = kernel.jump_probs
    yield 0, pmf, radius
    for n in range(1, n_max + 1):
        new = np.zeros_like(pmf)
        for off, p in zip(kernel.offsets, probs):
            new += p * np.roll(pmf, shift=tuple(int(v) for v in off), axis=tuple(range(d)))
        pmf = new
        yield n, pmf, radius


def exact_marginal(kernel: JumpKernel, t: float, tail_eps: float = 1e-12,
                   max_cells: int = 20_000_000) -> MarginalTable:
    """Law of S(t) - S(0) as a Poisson mixture of n-fold jump convolutions.

    The Poisson series is cut where its remaining mass drops below
    ``tail_eps``; the box is large enough that no truncated mass leaks
    through its edge, so every entry is exact up to that cut.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if not 0 < tail_eps < 1:
        raise ValueError("tail_eps must lie in (0, 1)")
    n_max = _poisson_cutoff(kernel.q * t, tail_eps)
    weights = stats.poisson.pmf(np.arange(n_max + 1), kernel.q * t)
    acc = None
    for n, pmf, radius in _convolution_powers(kernel, n_max, max_cells):
        if acc is None:
            acc = np.zeros_like(pmf)
        acc += weights[n] * pmf
    truncated = float(stats.poisson.sf(n_max, kernel.q * t))
    return MarginalTable(t=t, radius=radius, probs=acc, tail_eps=tail_eps, truncated_mass=truncated)


def walk_tail_table(kernel: JumpKernel, times, thresholds, direction=None,
                    strict: bool = True, tail_eps: float = 1e-13,
                    max_cells: int = 20_000_000) -> np.ndarray:
    """P_0(<S(t), r> > u) for every pair in ``times x thresholds``.

    Computes the n-fold convolution tails once and mixes them with Poisson
    weights for each time; this is what the renewal oracle needs on a fine
    time grid.  ``strict=False`` gives ``>=`` instead.
    """
    times = np.asarray(times, dtype=float)
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    r = np.ones(1) if direction is None else np.asarray(direction, dtype=float)
    n_max = _poisson_cutoff(kernel.q * float(times.max(initial=0.0)), tail_eps)
    tails = np.empty((n_max + 1, thresholds.size))
    vals = None
    for n, pmf, radius in _convolution_powers(kernel, n_max, max_cells):
        if vals is None:
            d = kernel.dimension
            grids = np.meshgrid(*[np.arange(-radius, radius + 1)] * d, indexing="ij")
            vals = sum(g * r[i] for i, g in enumerate(grids)).ravel()
        flat = pmf.ravel()
        for k, u in enumerate(thresholds):
            mask = vals > u if strict else vals >= u - 1e-12 * max(1.0, abs(u))
            tails[n, k] = flat[mask].sum()
    weights = stats.poisson.pmf(np.arange(n_max + 1)[None, :], kernel.q * times[:, None])
    return weights @ tails
