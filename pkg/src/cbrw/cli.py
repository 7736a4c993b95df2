"""Command-line front end.

    cbrw validate   CONFIG          check a model config
    cbrw malthusian CONFIG          nu, supercriticality margin
    cbrw shape      CONFIG          limit shape along sampled directions
    cbrw ldp        CONFIG          rate function and walk tail estimates
    cbrw phi        CONFIG          phi table, c*, predicted front CDF
    cbrw oracle     CONFIG          renewal-equation E(t;u) (d=1, one catalyst)
    cbrw simulate   CONFIG          Monte Carlo ensemble and extinction probe
    cbrw verify     CONFIG          compare simulate + phi outputs

CONFIG is a JSON file or the name of a shipped preset (model_a, model_b,
model_2d).  Exit codes: 0 ok, 2 bad config, 3 missing upstream artifact,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .branching_model import ModelError, load_preset, model_from_config, model_to_config, validate_model
from .front_geometry import (
    GeometryError,
    chernoff_bound,
    front_shape,
    rate_function,
    sample_directions,
    solve_r_on_ray,
    tail_asymptotic,
)
from .hitting_times import HittingError
from .lattice_walk import KernelError, TableTooLargeError, walk_tail_table
from .malthusian import (
    HittingLawTransforms,
    LinearSystemTransforms,
    MalthusianError,
    MonteCarloTransforms,
    malthusian_parameter,
)
from .phi_solver import GridSpec, PhiError, PhiTable, c_star, chi_correction, predicted_cdf, solve_phi_system
from .renewal_oracle import OracleError, build_grid, solve_front_cdf
from .simulator import Ensemble, extinction_probe, run_ensemble
from .verification import (
    VerificationError,
    compare_to_theorem,
    conditional_prediction,
    empirical_front_cdf,
    strong_law_check,
    write_report,
)

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4

NUMERIC_ERRORS = (MalthusianError, PhiError, GeometryError, HittingError, OracleError,
                  VerificationError, TableTooLargeError, ArithmeticError)


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class ExperimentConfig:
    model_cfg: dict
    name: str = "model"
    directions: str | list = "auto"
    seed: int = 0
    horizon: float = 60.0
    checkpoints: list = field(default_factory=lambda: [30.0, 60.0])
    ensemble_size: int = 1000
    pop_cap: int = 10_000_000
    probe_size: int = 10_000
    probe_cap: int = 500
    lam_min: float = 1e-8
    lam_max: float = 1e8
    per_decade: int = 64
    y_min: float = -8.0
    y_max: float = 8.0
    y_step: float = 0.05
    volterra_h: float = 0.01
    volterra_T: float = 10.0
    volterra_u: list = field(default_factory=lambda: [2.0, 3.0, 5.0])
    ldp_t: float = 200.0
    ldp_theta: list = field(default_factory=lambda: [0.6, 0.8, 1.0])
    threads: int = 0
    output: str = "out"

    _FIELDS = ("name", "directions", "seed", "horizon", "checkpoints", "ensemble_size", "pop_cap",
               "probe_size", "probe_cap", "lam_min", "lam_max", "per_decade", "y_min", "y_max",
               "y_step", "volterra_h", "volterra_T", "volterra_u", "ldp_t", "ldp_theta", "threads",
               "output")

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("kernel", "catalysts"):
            if key not in cfg:
                raise ConfigError(f"config is missing '{key}'")
        model_cfg = {k: cfg[k] for k in ("kernel", "catalysts", "start") if k in cfg}
        out = cls(model_cfg)
        for k in cls._FIELDS:
            if k in cfg:
                setattr(out, k, cfg[k])
        for k in ("horizon", "lam_min", "lam_max", "y_step", "volterra_h", "volterra_T", "ldp_t"):
            if not float(getattr(out, k)) > 0:
                raise ConfigError(f"'{k}' must be positive")
        for k in ("ensemble_size", "pop_cap", "probe_size", "probe_cap", "per_decade"):
            if int(getattr(out, k)) < 1:
                raise ConfigError(f"'{k}' must be a positive integer")
        if any(float(c) > float(out.horizon) or float(c) < 0 for c in out.checkpoints):
            raise ConfigError("checkpoints must lie in [0, horizon]")
        return out

    def to_dict(self, model) -> dict:
        d = model_to_config(model)
        for k in self._FIELDS:
            d[k] = getattr(self, k)
        return d


def load_config(spec: str) -> tuple:
    try:
        if os.path.exists(spec):
            with open(spec) as fh:
                raw = json.load(fh)
        else:
            raw = load_preset(spec)
    except FileNotFoundError:
        raise ConfigError(f"no config file or preset named {spec!r}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(raw)
    try:
        model = model_from_config(cfg.model_cfg)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model section: {exc!r}") from None
    return cfg, model


def _directions(cfg, model) -> np.ndarray:
    d = model.dimension
    spec = cfg.directions
    if isinstance(spec, str):
        if spec == "auto":
            return sample_directions(d)
        if spec.startswith("auto:"):
            return sample_directions(d, int(spec.split(":", 1)[1]))
        raise ConfigError(f"unknown directions spec {spec!r}")
    arr = np.atleast_2d(np.asarray(spec, dtype=float))
    if arr.shape[1] != d:
        raise ConfigError("directions have the wrong dimension")
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def _header(cfg, extra="") -> str:
    return f"cbrw {__version__} master_seed={cfg.seed} model={cfg.name}{(' ' + extra) if extra else ''}"


def _write_rows(path, header, cols, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _fmt(x):
    return f"{x:.6f}"


def _front_direction(model, nu):
    """Unit direction used for fronts and its r on the surface H = nu."""
    d = model.dimension
    n = np.zeros(d)
    n[0] = 1.0
    r = solve_r_on_ray(model.kernel, nu, n)
    return n, r


def cmd_validate(cfg, model, args, out):
    rep = validate_model(model)
    canon = cfg.to_dict(model)
    with open(os.path.join(out, "config.canonical.json"), "w") as fh:
        json.dump(canon, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"validate: ok d={rep.dimension} N={rep.n_catalysts} q={rep.q} "
          f"beta={rep.betas} m={rep.offspring_means}")


def _transforms(model, method, seed):
    if method == "exact":
        return LinearSystemTransforms(model)
    if method == "law":
        return HittingLawTransforms(model)
    return MonteCarloTransforms(model, seed=seed)


def _nu(model):
    return malthusian_parameter(model).nu


def cmd_malthusian(cfg, model, args, out):
    res = malthusian_parameter(model, _transforms(model, args.method, cfg.seed))
    rows = [[args.method, res.nu, res.perron_at_nu, res.margin]]
    msg = f"malthusian: nu={_fmt(res.nu)} margin={_fmt(res.margin)}"
    if model.dimension == 1:
        r = float(solve_r_on_ray(model.kernel, res.nu, [1.0])[0])
        msg += f" r={_fmt(r)} mu={_fmt(res.nu / r)}"
    _write_rows(os.path.join(out, "malthusian.csv"), _header(cfg), ["method", "nu", "perron_at_nu", "margin"], rows)
    print(msg)


def cmd_shape(cfg, model, args, out):
    nu = _nu(model)
    shape = front_shape(model.kernel, nu, _directions(cfg, model))
    shape.to_csv(os.path.join(out, "shape.csv"))
    print(f"shape: nu={_fmt(nu)} directions={len(shape.directions)} mesh={shape.mesh:.4f}")


def cmd_ldp(cfg, model, args, out):
    nu = _nu(model)
    n, r = _front_direction(model, nu)
    t = float(cfg.ldp_t)
    rows = []
    worst = 0.0
    for th in cfg.ldp_theta:
        lam_val, lam, D = rate_function(model.kernel, n, float(th))
        x = th * t
        bound = chernoff_bound(model.kernel, n, t, x)
        asym = tail_asymptotic(model.kernel, n, t, x, span=1.0) if model.dimension == 1 else float("nan")
        exact = float("nan")
        if model.dimension == 1:
            exact = float(walk_tail_table(model.kernel, [t], [x], strict=False)[0, 0])
            worst = max(worst, abs(asym / exact - 1))
        rows.append([float(th), lam_val, lam, D, bound, asym, exact])
    _write_rows(os.path.join(out, "ldp.csv"), _header(cfg, f"t={t}"),
                ["theta", "Lambda", "lambda", "D", "chernoff", "asymptotic", "exact"], rows)
    msg = f"ldp: t={t} thetas={len(rows)}"
    if model.dimension == 1:
        msg += f" max_rel_err_asymptotic={worst:.4f}"
    print(msg)


def _solve_phi(cfg, model):
    nu = _nu(model)
    n, r = _front_direction(model, nu)
    theta, cs = None, None
    if model.n_catalysts == 1 and model.dimension == 1:
        cs = c_star(model, nu, float(r[0]))
        theta = cs.value
    grid = GridSpec(float(cfg.lam_min), float(cfg.lam_max), int(cfg.per_decade))
    table = solve_phi_system(model, nu, theta=theta, grid=grid, check_residual=True)
    return nu, n, r, table, cs


def cmd_phi(cfg, model, args, out):
    nu, n, r, table, cs = _solve_phi(cfg, model)
    table.to_csv(os.path.join(out, "phi.csv"), header=_header(cfg))
    s = float(np.linalg.norm(r))
    corr = chi_correction(nu, r)
    meta = {"nu": nu, "r": r.tolist(), "direction": n.tolist(), "scale": s,
            "theta": table.theta.tolist(), "limit": table.limit.tolist(),
            "residual": table.residual, "lattice": corr.lattice,
            "span": None if corr.span is None else float(corr.span),
            "c_star": None if cs is None else cs.value}
    with open(os.path.join(out, "phi_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    y = np.round(np.arange(cfg.y_min, cfg.y_max + 1e-9, cfg.y_step), 10)
    rows = []
    for t in cfg.checkpoints:
        vals = predicted_cdf(table, corr, float(t), y, scale=s)
        rows.extend([float(t), float(yy), float(v)] for yy, v in zip(y, vals))
    _write_rows(os.path.join(out, "predicted_cdf.csv"), _header(cfg), ["t", "y", "value"], rows)
    msg = f"phi: nu={_fmt(nu)} residual={table.residual:.2e} limit={_fmt(table.limit[0])}"
    if cs is not None:
        msg += f" c_star={_fmt(cs.value)}"
    print(msg)


def cmd_oracle(cfg, model, args, out):
    grid = build_grid(model, h=float(cfg.volterra_h), T=float(cfg.volterra_T))
    rows = []
    last = []
    for u in cfg.volterra_u:
        sol = solve_front_cdf(grid, float(u))
        rows.extend([float(t), float(u), float(e)] for t, e in zip(sol.t, sol.E))
        last.append(f"E(T;{u:g})={sol.E[-1]:.6f}")
    _write_rows(os.path.join(out, "oracle.csv"), _header(cfg, f"h={cfg.volterra_h}"), ["t", "u", "E"], rows)
    print(f"oracle: T={grid.T:g} " + " ".join(last))


def cmd_simulate(cfg, model, args, out):
    dirs = np.concatenate([np.eye(model.dimension), -np.eye(model.dimension)])
    threads = cfg.threads or os.cpu_count() or 1
    ens = run_ensemble(model, int(cfg.ensemble_size), float(cfg.horizon), pop_cap=int(cfg.pop_cap),
                       checkpoints=[float(c) for c in cfg.checkpoints], directions=dirs,
                       master_seed=int(cfg.seed), threads=int(threads))
    ens.to_csv(os.path.join(out, "runs.csv"), header=_header(cfg))
    probe = extinction_probe(model, int(cfg.probe_size), int(cfg.probe_cap), master_seed=int(cfg.seed) + 1)
    _write_rows(os.path.join(out, "extinction.csv"), _header(cfg),
                ["n", "pop_cap", "n_extinct", "n_undetermined", "fraction", "ci_low", "ci_high"],
                [[probe.n, probe.pop_cap, probe.n_extinct, probe.n_undetermined, probe.fraction,
                  float(probe.ci[0]), float(probe.ci[1])]])
    print(f"simulate: runs={len(ens)} survivors={int(ens.survivors().sum())} "
          f"truncated={int(ens.truncated.sum())} extinction={probe.fraction:.4f} "
          f"[{probe.ci[0]:.4f}, {probe.ci[1]:.4f}]")


def _read_phi(out):
    path = os.path.join(out, "phi.csv")
    mpath = os.path.join(out, "phi_meta.json")
    if not (os.path.exists(path) and os.path.exists(mpath)):
        raise MissingArtifact("phi.csv / phi_meta.json not found: run `cbrw phi` first")
    with open(mpath) as fh:
        meta = json.load(fh)
    with open(path) as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    head, body = rows[0], rows[1:]
    d = sum(h.startswith("site") for h in head)
    sites = list(dict.fromkeys(tuple(int(v) for v in r[:d]) for r in body))
    data = np.array([[float(v) for v in r[d:]] for r in body])
    n = data.shape[0] // len(sites)
    lam = data[:n, 0]
    w = 1.0 - data[:, 1].reshape(len(sites), n).T
    x = np.log(lam)
    table = PhiTable(x, np.log(w) - x[:, None], np.asarray(meta["theta"]), meta["nu"], sites,
                     np.asarray(meta["limit"]), meta["residual"])
    return table, meta


def cmd_verify(cfg, model, args, out):
    rpath = os.path.join(out, "runs.csv")
    if not os.path.exists(rpath):
        raise MissingArtifact("runs.csv not found: run `cbrw simulate` first")
    table, meta = _read_phi(out)
    ens = Ensemble.from_csv(rpath)
    nu, s = meta["nu"], meta["scale"]
    corr = chi_correction(nu, meta["r"], meta["span"])
    speed = nu / s
    reports = []
    lines = []
    y = np.round(np.arange(cfg.y_min, cfg.y_max + 1e-9, cfg.y_step), 10)
    for t in ens.times:
        pred = lambda yy, t=t: predicted_cdf(table, corr, float(t), yy, scale=s)
        rep_u = compare_to_theorem(empirical_front_cdf(ens, t, 0, speed, False), pred, y)
        rep_c = compare_to_theorem(empirical_front_cdf(ens, t, 0, speed, True),
                                   conditional_prediction(pred, float(table.limit[0])), y)
        reports += [("unconditional", rep_u), ("conditional", rep_c)]
        lines.append(f"t={t:g} raw={rep_u.raw:.4f} best_shift={rep_u.best_shift:.4f} "
                     f"conditional_raw={rep_c.raw:.4f}")
    write_report(os.path.join(out, "report.csv"), reports, header=_header(cfg))
    sl = strong_law_check(ens, speed) if len(ens.times) >= 2 else None
    msg = "verify: " + "; ".join(lines)
    if sl is not None:
        msg += f"; strong_law_q90={sl.q90[-1]:.4f}"
    print(msg)


COMMANDS = {
    "validate": cmd_validate,
    "malthusian": cmd_malthusian,
    "shape": cmd_shape,
    "ldp": cmd_ldp,
    "phi": cmd_phi,
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbrw", description="Catalytic branching random walk toolkit")
    p.add_argument("--version", action="version", version=f"cbrw {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON config file or preset name")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        sp.add_argument("--out", default=None, help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (overrides config)")
        if name == "malthusian":
            sp.add_argument("--method", choices=("exact", "law", "mc"), default="exact")
        if name == "simulate":
            sp.add_argument("--n", type=int, default=None, help="ensemble size (overrides config)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, model = load_config(args.config)
    except (ConfigError, ModelError, KernelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    if getattr(args, "n", None) is not None:
        cfg.ensemble_size = args.n
    os.makedirs(cfg.output, exist_ok=True)
    try:
        COMMANDS[args.command](cfg, model, args, cfg.output)
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
