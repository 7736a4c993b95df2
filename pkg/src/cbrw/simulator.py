"""Exact event-driven simulation of the catalytic branching random walk.

Particles off the catalysts all ring at rate q, and the particles sitting on
catalyst w_k all ring at rate beta_k, so the next event can be drawn from the
aggregated rates (Gillespie) and the particle picked uniformly inside its
class.  Off-catalyst positions live in an array with swap-remove; catalysts
only store a head count.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
from scipy import stats

from .branching_model import CbrwModel

__all__ = [
    "RunRecord",
    "Ensemble",
    "ExtinctionEstimate",
    "run",
    "run_ensemble",
    "extinction_probe",
    "run_rng",
    "default_directions",
]

@numba.njit(cache=True, nogil=True)
def _sample_index(cum, rng):
    u = rng.random()
    i = 0
    while i < cum.size - 1 and u >= cum[i]:
        i += 1
    return i


@numba.njit(cache=True, nogil=True)
def _grow(pos):
    out = np.empty((2 * pos.shape[0], pos.shape[1]), dtype=pos.dtype)
    out[: pos.shape[0]] = pos
    return out


@numba.njit(cache=True, nogil=True)
def _find_catalyst(p, cats):
    for k in range(cats.shape[0]):
        same = True
        for c in range(cats.shape[1]):
            if cats[k, c] != p[c]:
                same = False
                break
        if same:
            return k
    return -1


@numba.njit(cache=True, nogil=True)
def _simulate(rng, start, offsets, jump_cum, q, cats, alphas, betas, off_cum,
              checkpoints, dirs, pop_cap, snapshot,
              pop_out, alive_out, run_out, occ_out, visit_out, snap_buf):
    """One run; fills the per-checkpoint output rows, returns
    (status, end_time, n_snapshot) with status 0 normal, 1 extinct, 2 truncated."""
    d = start.size
    N = cats.shape[0]
    nd = dirs.shape[0]
    n_chk = checkpoints.size
    pos = np.empty((1024, d), dtype=np.int64)
    n_off = 0
    cnt = np.zeros(N, dtype=np.int64)
    running = np.empty(nd)
    for r in range(nd):
        s = 0.0
        for c in range(d):
            s += start[c] * dirs[r, c]
        running[r] = s
    t = 0.0
    last_visit = -1.0
    k0 = _find_catalyst(start, cats)
    if k0 >= 0:
        cnt[k0] = 1
        last_visit = 0.0
    else:
        for c in range(d):
            pos[0, c] = start[c]
        n_off = 1
    pop = 1
    ci = 0
    status = 0
    n_snap = 0
    newp = np.empty(d, dtype=np.int64)
    while True:
        total = q * n_off
        for k in range(N):
            total += betas[k] * cnt[k]
        if total > 0.0:
            t_next = t - math.log(1.0 - rng.random()) / total
        else:
            t_next = np.inf
        while ci < n_chk and checkpoints[ci] < t_next:
            pop_out[ci] = pop
            for r in range(nd):
                best = -np.inf
                for i in range(n_off):
                    s = 0.0
                    for c in range(d):
                        s += pos[i, c] * dirs[r, c]
                    if s > best:
                        best = s
                for k in range(N):
                    if cnt[k] > 0:
                        s = 0.0
                        for c in range(d):
                            s += cats[k, c] * dirs[r, c]
                        if s > best:
                            best = s
                alive_out[ci, r] = best if pop > 0 else np.nan
                run_out[ci, r] = running[r]
            for k in range(N):
                occ_out[ci, k] = cnt[k]
            visit_out[ci] = last_visit
            if snapshot and ci == n_chk - 1:
                m = 0
                for i in range(n_off):
                    for c in range(d):
                        snap_buf[m, c] = pos[i, c]
                    m += 1
                for k in range(N):
                    for _ in range(cnt[k]):
                        for c in range(d):
                            snap_buf[m, c] = cats[k, c]
                        m += 1
                n_snap = m
            ci += 1
        if ci == n_chk:
            break
        if pop == 0:
            status = 1
            break
        t = t_next
        u = rng.random() * total
        if u < q * n_off:
            i = min(int(u / q), n_off - 1)
            j = _sample_index(jump_cum, rng)
            for c in range(d):
                newp[c] = pos[i, c] + offsets[j, c]
            k = _find_catalyst(newp, cats)
            if k >= 0:
                n_off -= 1
                for c in range(d):
                    pos[i, c] = pos[n_off, c]
                cnt[k] += 1
                last_visit = t
            else:
                for c in range(d):
                    pos[i, c] = newp[c]
        else:
            u -= q * n_off
            k = 0
            while k < N - 1 and u >= betas[k] * cnt[k]:
                u -= betas[k] * cnt[k]
                k += 1
            last_visit = t
            cnt[k] -= 1
            if rng.random() < alphas[k]:
                xi = _sample_index(off_cum[k], rng)
                cnt[k] += xi
                pop += xi - 1
                if pop > pop_cap:
                    status = 2
                    break
                continue
            j = _sample_index(jump_cum, rng)
            for c in range(d):
                newp[c] = cats[k, c] + offsets[j, c]
            k2 = _find_catalyst(newp, cats)
            if k2 >= 0:
                cnt[k2] += 1
            else:
                if n_off == pos.shape[0]:
                    pos = _grow(pos)
                for c in range(d):
                    pos[n_off, c] = newp[c]
                n_off += 1
        for r in range(nd):
            s = 0.0
            for c in range(d):
                s += newp[c] * dirs[r, c]
            if s > running[r]:
                running[r] = s
    if pop == 0:
        status = 1
    # fill checkpoints after extinction
    while ci < n_chk:
        pop_out[ci] = 0
        for r in range(nd):
            alive_out[ci, r] = np.nan
            run_out[ci, r] = running[r]
        for k in range(N):
            occ_out[ci, k] = 0
        visit_out[ci] = last_visit
        ci += 1
    return status, t, n_snap


@numba.njit(cache=True, nogil=True)
def _probe(rng, start, offsets, jump_cum, q, cats, alphas, betas, off_cum, pop_cap, horizon):
    """Run until extinction (1), population >= pop_cap (0) or horizon (-1)."""
    d = start.size
    N = cats.shape[0]
    pos = np.empty((1024, d), dtype=np.int64)
    n_off = 0
    cnt = np.zeros(N, dtype=np.int64)
    k0 = _find_catalyst(start, cats)
    if k0 >= 0:
        cnt[k0] = 1
    else:
        for c in range(d):
            pos[0, c] = start[c]
        n_off = 1
    pop = 1
    t = 0.0
    newp = np.empty(d, dtype=np.int64)
    while True:
        if pop == 0:
            return 1
        if pop >= pop_cap:
            return 0
        total = q * n_off
        for k in range(N):
            total += betas[k] * cnt[k]
        t -= math.log(1.0 - rng.random()) / total
        if t > horizon:
            return -1
        u = rng.random() * total
        if u < q * n_off:
            i = min(int(u / q), n_off - 1)
            j = _sample_index(jump_cum, rng)
            for c in range(d):
                newp[c] = pos[i, c] + offsets[j, c]
            k = _find_catalyst(newp, cats)
            if k >= 0:
                n_off -= 1
                for c in range(d):
                    pos[i, c] = pos[n_off, c]
                cnt[k] += 1
            else:
                for c in range(d):
                    pos[i, c] = newp[c]
        else:
            u -= q * n_off
            k = 0
            while k < N - 1 and u >= betas[k] * cnt[k]:
                u -= betas[k] * cnt[k]
                k += 1
            cnt[k] -= 1
            if rng.random() < alphas[k]:
                xi = _sample_index(off_cum[k], rng)
                cnt[k] += xi
                pop += xi - 1
                continue
            j = _sample_index(jump_cum, rng)
            for c in range(d):
                newp[c] = cats[k, c] + offsets[j, c]
            k2 = _find_catalyst(newp, cats)
            if k2 >= 0:
                cnt[k2] += 1
            else:
                if n_off == pos.shape[0]:
                    pos = _grow(pos)
                for c in range(d):
                    pos[n_off, c] = newp[c]
                n_off += 1


def _arrays(model: CbrwModel):
    k = model.kernel
    offsets = np.asarray(k.offsets, dtype=np.int64)
    jump_cum = np.cumsum(k.jump_probs)
    jump_cum[-1] = 1.0
    cats = model.positions
    K = max(c.offspring.array.size for c in model.catalysts)
    off_cum = np.ones((model.n_catalysts, K))
    for i, c in enumerate(model.catalysts):
        cs = np.cumsum(c.offspring.array)
        off_cum[i, : cs.size] = cs
        off_cum[i, cs.size - 1:] = 1.0
    return (np.asarray(model.start, dtype=np.int64), offsets, jump_cum, float(k.q), cats,
            model.alphas.astype(float), model.betas.astype(float), off_cum)


def run_rng(master_seed: int, index: int) -> np.random.Generator:
    """Run ``index`` draws from the PCG64 stream keyed by (master_seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(index)])))


def default_directions(d: int) -> np.ndarray:
    """+-e_i for every axis."""
    eye = np.eye(d)
    return np.concatenate([eye, -eye])


@dataclass
class RunRecord:
    index: int
    master_seed: int | None
    times: np.ndarray
    pop: np.ndarray
    m_alive: np.ndarray      # (n_chk, n_dir), nan once extinct
    m_running: np.ndarray
    occupancy: np.ndarray    # (n_chk, N)
    last_visit: np.ndarray   # time of the latest catalyst visit up to each checkpoint
    extinct: bool
    truncated: bool
    end_time: float
    snapshot: np.ndarray | None = None


@dataclass
class Ensemble:
    """Columnar store of many runs sharing checkpoints and directions."""

    indices: np.ndarray
    times: np.ndarray
    directions: np.ndarray
    pop: np.ndarray          # (n, n_chk)
    m_alive: np.ndarray      # (n, n_chk, n_dir)
    m_running: np.ndarray
    occupancy: np.ndarray    # (n, n_chk, N)
    last_visit: np.ndarray   # (n, n_chk)
    extinct: np.ndarray
    truncated: np.ndarray
    end_time: np.ndarray
    snapshots: list | None = None
    master_seed: int | None = None

    def __len__(self):
        return self.indices.size

    def __getitem__(self, i) -> RunRecord:
        return RunRecord(int(self.indices[i]), self.master_seed, self.times, self.pop[i],
                         self.m_alive[i], self.m_running[i], self.occupancy[i], self.last_visit[i],
                         bool(self.extinct[i]), bool(self.truncated[i]), float(self.end_time[i]),
                         None if self.snapshots is None else self.snapshots[i])

    @property
    def records(self) -> list:
        return [self[i] for i in range(len(self))]

    def checkpoint(self, t) -> int:
        hit = np.nonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))[0]
        if hit.size == 0:
            raise KeyError(f"checkpoint t={t} not recorded")
        return int(hit[0])

    def survivors(self, t=None) -> np.ndarray:
        """Non-extinction proxy at checkpoint t: alive, and a catalyst visit in [t/2, t]."""
        c = len(self.times) - 1 if t is None else self.checkpoint(t)
        tc = self.times[c]
        return (self.pop[:, c] > 0) & (self.last_visit[:, c] >= 0.5 * tc) & ~self.truncated

    @classmethod
    def merge(cls, parts) -> "Ensemble":
        parts = sorted(parts, key=lambda e: int(e.indices[0]) if len(e) else -1)
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        snaps = None
        if all(p.snapshots is not None for p in parts):
            snaps = [s for p in parts for s in p.snapshots]
        return cls(cat("indices"), parts[0].times, parts[0].directions, cat("pop"),
                   cat("m_alive"), cat("m_running"), cat("occupancy"), cat("last_visit"),
                   cat("extinct"), cat("truncated"), cat("end_time"), snaps, parts[0].master_seed)

    def to_csv(self, path, header=None) -> None:
        nd = self.directions.shape[0]
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["run_index", "t", "pop"] + [f"M_alive_{r}" for r in range(nd)]
                       + [f"M_running_{r}" for r in range(nd)] + ["last_visit", "extinct", "truncated"])
            for i in range(len(self)):
                for c, t in enumerate(self.times):
                    w.writerow([int(self.indices[i]), repr(float(t)), int(self.pop[i, c])]
                               + [repr(float(v)) for v in self.m_alive[i, c]]
                               + [repr(float(v)) for v in self.m_running[i, c]]
                               + [repr(float(self.last_visit[i, c])), int(self.extinct[i]),
                                  int(self.truncated[i])])

    @classmethod
    def from_csv(cls, path) -> "Ensemble":
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        head, body = rows[0], rows[1:]
        nd = sum(h.startswith("M_alive_") for h in head)
        data = np.array(body, dtype=float)
        idx = data[:, 0].astype(np.int64)
        runs = np.unique(idx)
        times = np.unique(data[:, 1])
        n, nc = runs.size, times.size
        data = data[np.lexsort((data[:, 1], data[:, 0]))].reshape(n, nc, -1)
        return cls(runs, times, np.zeros((nd, 0)),
                   data[:, :, 2].astype(np.int64), data[:, :, 3:3 + nd], data[:, :, 3 + nd:3 + 2 * nd],
                   np.zeros((n, nc, 0), dtype=np.int64), data[:, :, 3 + 2 * nd],
                   data[:, 0, -2].astype(bool), data[:, 0, -1].astype(bool), np.full(n, np.nan))


def _run_block(model, indices, master_seed, checkpoints, dirs, pop_cap, snapshot):
    arrs = _arrays(model)
    n, nc, nd, N = len(indices), checkpoints.size, dirs.shape[0], model.n_catalysts
    pop = np.zeros((n, nc), dtype=np.int64)
    alive = np.empty((n, nc, nd))
    running = np.empty((n, nc, nd))
    occ = np.zeros((n, nc, N), dtype=np.int64)
    visit = np.empty((n, nc))
    ext = np.zeros(n, dtype=bool)
    trunc = np.zeros(n, dtype=bool)
    end = np.empty(n)
    snaps = [] if snapshot else None
    d = model.dimension
    buf = np.empty((pop_cap + 1 if snapshot else 1, d), dtype=np.int64)
    for i in range(n):
        status, t_end, n_snap = _simulate(run_rng(master_seed, indices[i]), *arrs, checkpoints, dirs, pop_cap, snapshot,
                                          pop[i], alive[i], running[i], occ[i], visit[i], buf)
        ext[i] = status == 1
        trunc[i] = status == 2
        end[i] = t_end
        if snapshot:
            snaps.append(buf[:n_snap].copy() if status != 2 else None)
    return Ensemble(np.asarray(indices, dtype=np.int64), checkpoints, dirs, pop, alive, running, occ,
                    visit, ext, trunc, end, snaps, master_seed)


def _prepare(model, horizon, checkpoints, directions):
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if checkpoints is None:
        checkpoints = [horizon]
    chk = np.unique(np.asarray(checkpoints, dtype=float))
    if chk[0] < 0 or chk[-1] > horizon + 1e-12:
        raise ValueError("checkpoints must lie in [0, horizon]")
    dirs = default_directions(model.dimension) if directions is None else directions
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if dirs.shape[1] != model.dimension:
        raise ValueError("directions have the wrong dimension")
    return chk, dirs


def run(model: CbrwModel, horizon: float, pop_cap: int = 10_000_000, checkpoints=None,
        directions=None, seed: int = 0, snapshot: bool = False) -> RunRecord:
    """Single run: run 0 of the stream family keyed by ``seed``."""
    if pop_cap < 1:
        raise ValueError("pop_cap must be at least 1")
    chk, dirs = _prepare(model, horizon, checkpoints, directions)
    return _run_block(model, [0], int(seed), chk, dirs, pop_cap, snapshot)[0]


def run_ensemble(model: CbrwModel, n: int, horizon: float, pop_cap: int = 10_000_000,
                 checkpoints=None, directions=None, master_seed: int = 0, start_index: int = 0,
                 threads: int = 1, snapshot: bool = False, block: int = 2000) -> Ensemble:
    """Runs start_index .. start_index + n - 1; run i is reproducible from (master_seed, i)."""
    if pop_cap < 1:
        raise ValueError("pop_cap must be at least 1")
    chk, dirs = _prepare(model, horizon, checkpoints, directions)
    idx = np.arange(start_index, start_index + n)
    chunks = [idx[i:i + block] for i in range(0, n, block)]
    work = lambda c: _run_block(model, c, master_seed, chk, dirs, pop_cap, snapshot)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    if not parts:
        raise ValueError("n must be positive")
    return Ensemble.merge(parts)


@dataclass
class ExtinctionEstimate:
    fraction: float
    ci: tuple
    n: int
    n_extinct: int
    n_undetermined: int
    pop_cap: int
    non_branching: bool


def extinction_probe(model: CbrwModel, n: int = 10_000, pop_cap: int = 500, master_seed: int = 0,
                     horizon: float = 1e6, confidence: float = 0.95) -> ExtinctionEstimate:
    """Fraction of runs that die out before reaching ``pop_cap``; Wilson interval.

    A run whose particles have all wandered off the catalysts can stay
    undecided for a long time (return times have a heavy tail), so runs are
    stopped at ``horizon``; undecided runs count as surviving and are reported
    in ``n_undetermined`` so the fraction can be bracketed.
    """
    non_branching = bool(np.all(model.alphas == 0))
    if non_branching:
        # a lone walker never dies and never multiplies
        return ExtinctionEstimate(0.0, (0.0, 0.0), n, 0, n, int(pop_cap), True)
    arrs = _arrays(model)
    out = np.array([_probe(run_rng(master_seed, i), *arrs, int(pop_cap), float(horizon))
                    for i in range(n)])
    k = int(np.sum(out == 1))
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = k / n
    den = 1 + z**2 / n
    centre = (p + z**2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n * n)) / den
    return ExtinctionEstimate(p, (centre - half, centre + half), n, k, int(np.sum(out == -1)),
                              int(pop_cap), non_branching)
