"""Ensemble statistics checked against the predicted front law, the strong law
and the limit shape.

Fronts are measured along a unit direction n.  With r = s n on the surface
H = nu, M_t(r) - nu t = s (M_t(n) - (nu / s) t), so an empirical sample of
M_t(n) - (nu / s) t is compared with ``predicted_cdf(..., scale=s)``.  On Z
this is the usual M_t - mu t against phi(e^{-r y + r{mu t + y}}).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .front_geometry import O_EPS, Q_EPS, FrontShape, classify_points
from .simulator import Ensemble

__all__ = [
    "VerificationError",
    "EmpiricalCdf",
    "ComparisonReport",
    "StrongLawReport",
    "ShapeReport",
    "empirical_front_cdf",
    "compare_to_theorem",
    "conditional_prediction",
    "strong_law_check",
    "cloud_shape_check",
    "write_report",
    "default_y_grid",
]


class VerificationError(ValueError):
    pass


def default_y_grid() -> np.ndarray:
    return np.round(np.arange(-8.0, 8.0 + 1e-9, 0.05), 10)


@dataclass
class EmpiricalCdf:
    """Sorted values of M_t(n) - speed * t.

    ``n_dead`` runs (extinct, or filtered out by the survival proxy when the
    unconditional variant is requested) sit at -infinity.
    """

    values: np.ndarray
    t: float
    direction: int
    speed: float
    n_dead: int = 0

    @property
    def n(self) -> int:
        return self.values.size + self.n_dead

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        below = np.searchsorted(self.values, y, side="right")
        return (below + self.n_dead) / self.n


def empirical_front_cdf(ens: Ensemble, t: float, direction: int = 0, speed: float = 0.0,
                        survival_filter: bool = True) -> EmpiricalCdf:
    """CDF of the alive-max front minus speed * t.

    With ``survival_filter`` only runs passing the non-extinction proxy are
    kept; otherwise every run counts and runs with no particle alive sit at
    -infinity (the unconditional law, extinction atom included).
    """
    c = ens.checkpoint(t)
    m = ens.m_alive[:, c, direction]
    if survival_filter:
        keep = ens.survivors(t)
        if not keep.any():
            raise VerificationError(f"no surviving runs at t={t}")
        vals = m[keep]
        dead = 0
    else:
        ok = ~ens.truncated
        alive = np.isfinite(m) & ok
        vals = m[alive]
        dead = int(np.sum(ok & ~alive))
        if vals.size + dead == 0:
            raise VerificationError("no usable runs")
    return EmpiricalCdf(np.sort(vals - speed * ens.times[c]), float(ens.times[c]), direction,
                        float(speed), dead)


def conditional_prediction(predicted, limit: float):
    """Law given survival: (phi - phi(inf)) / (1 - phi(inf))."""
    return lambda y: (np.asarray(predicted(y)) - limit) / (1.0 - limit)


@dataclass
class ComparisonReport:
    raw: float
    best_shift: float
    shift: float
    n: int
    t: float
    y: np.ndarray = field(repr=False)
    empirical: np.ndarray = field(repr=False)
    predicted: np.ndarray = field(repr=False)


def _sup(ecdf, predicted, y, delta=0.0):
    return float(np.max(np.abs(ecdf(y) - predicted(y - delta))))


def compare_to_theorem(ecdf, predicted, y_grid=None, max_shift: float = 2.0) -> ComparisonReport:
    """Raw sup-distance on the grid and the best sup-distance over horizontal shifts.

    The shift minimises sup_y |F_emp(y) - F_pred(y - delta)|: a coarse scan
    locates the basin and golden-section search refines it.
    """
    y = default_y_grid() if y_grid is None else np.asarray(y_grid, dtype=float)
    emp = np.asarray(ecdf(y), dtype=float)
    pred = np.asarray(predicted(y), dtype=float)
    raw = float(np.max(np.abs(emp - pred)))
    f = lambda dl: _sup(ecdf, predicted, y, dl)
    scan = np.linspace(-max_shift, max_shift, 81)
    vals = np.array([f(s) for s in scan])
    i = int(np.argmin(vals))
    lo, hi = scan[max(i - 1, 0)], scan[min(i + 1, scan.size - 1)]
    best_d, best = scan[i], vals[i]
    if hi > lo:
        d = optimize.minimize_scalar(f, bracket=(lo, scan[i], hi), method="golden",
                                     options={"xtol": 1e-4}) if lo < scan[i] < hi else None
        if d is not None and lo <= d.x <= hi and d.fun < best:
            best_d, best = float(d.x), float(d.fun)
    if raw <= best:
        best_d, best = 0.0, raw
    n = ecdf.n if hasattr(ecdf, "n") else 0
    t = ecdf.t if hasattr(ecdf, "t") else float("nan")
    return ComparisonReport(raw, float(best), float(best_d), n, t, y, emp, pred)


@dataclass
class StrongLawReport:
    t: np.ndarray
    median: np.ndarray
    q90: np.ndarray
    n: np.ndarray
    deviations: np.ndarray = field(repr=False)   # at the last checkpoint


def strong_law_check(ens: Ensemble, speed: float, direction: int = 0, times=None) -> StrongLawReport:
    """|M_t / t - speed| over surviving runs at each requested checkpoint."""
    times = ens.times[ens.times > 0] if times is None else np.asarray(times, dtype=float)
    if len(times) < 2:
        raise VerificationError("need at least two checkpoints")
    med, q90, cnt = [], [], []
    dev = np.array([])
    for t in times:
        c = ens.checkpoint(t)
        keep = ens.survivors(t)
        dev = np.abs(ens.m_alive[keep, c, direction] / ens.times[c] - speed)
        if dev.size == 0:
            raise VerificationError(f"no surviving runs at t={t}")
        med.append(np.median(dev))
        q90.append(np.quantile(dev, 0.9))
        cnt.append(dev.size)
    return StrongLawReport(np.asarray(times, dtype=float), np.array(med), np.array(q90), np.array(cnt), dev)


@dataclass
class ShapeReport:
    t: float
    eps: float
    particle_fraction_in_O: float
    run_fraction_outside_Q: float
    n_particles: int
    n_runs: int


def cloud_shape_check(ens: Ensemble, shape: FrontShape, eps: float, t: float | None = None) -> ShapeReport:
    """Particles of surviving runs at the snapshot time, scaled by 1/t and
    classified against the sampled shape."""
    if ens.snapshots is None:
        raise VerificationError("ensemble was run without snapshots")
    t = float(ens.times[-1]) if t is None else float(t)
    if not np.isclose(t, ens.times[-1]):
        raise VerificationError("snapshots are taken at the last checkpoint only")
    keep = ens.survivors(t)
    n_in_o = n_tot = n_out_q = n_runs = 0
    for i in np.nonzero(keep)[0]:
        pts = ens.snapshots[i]
        if pts is None or len(pts) == 0:
            continue
        lab = classify_points(shape, pts / t, eps)
        n_in_o += int(np.sum(lab == O_EPS))
        n_tot += len(pts)
        n_out_q += int(np.any(lab != Q_EPS))
        n_runs += 1
    if n_runs == 0:
        raise VerificationError("no surviving runs with snapshots")
    return ShapeReport(t, float(eps), n_in_o / n_tot, n_out_q / n_runs, n_tot, n_runs)


def write_report(path, reports, header=None) -> None:
    """Report CSV: one row per (t, direction, y) plus summary rows per comparison.

    ``reports`` is a list of (direction_label, ComparisonReport).
    """
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["t", "direction", "y", "empirical", "predicted", "abs_diff"])
        for label, rep in reports:
            for y, e, p in zip(rep.y, rep.empirical, rep.predicted):
                w.writerow([repr(rep.t), label, repr(float(y)), repr(float(e)), repr(float(p)),
                            repr(float(abs(e - p)))])
        for label, rep in reports:
            w.writerow([repr(rep.t), label, "summary_raw_sup", repr(rep.raw), "", ""])
            w.writerow([repr(rep.t), label, "summary_best_shift_sup", repr(rep.best_shift), "", ""])
            w.writerow([repr(rep.t), label, "summary_shift", repr(rep.shift), "", ""])
            w.writerow([repr(rep.t), label, "summary_n", str(rep.n), "", ""])
