"""Catalysts, offspring laws and whole-model validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .lattice_walk import JumpKernel, validate_kernel

__all__ = [
    "ModelError",
    "DuplicateCatalystError",
    "AlphaRangeError",
    "OffspringLawError",
    "OffspringLaw",
    "Catalyst",
    "CbrwModel",
    "ModelReport",
    "pgf",
    "pgf_derivative",
    "pgf_complement",
    "mean",
    "validate_model",
    "model_from_config",
    "model_to_config",
    "load_preset",
    "model_a",
    "model_b",
    "model_2d",
]


class ModelError(ValueError):
    pass


class DuplicateCatalystError(ModelError):
    pass


class AlphaRangeError(ModelError):
    pass


class OffspringLawError(ModelError):
    pass


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution, ``pmf[k] = P(xi = k)``."""

    pmf: tuple

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise OffspringLawError("pmf must be a non-empty vector")
        if np.any(p < 0):
            raise OffspringLawError(f"pmf has negative entries: {p.tolist()}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise OffspringLawError(f"pmf sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "pmf", tuple(float(v) for v in p))

    @classmethod
    def from_dict(cls, probs: dict) -> "OffspringLaw":
        k_max = max(int(k) for k in probs)
        p = np.zeros(k_max + 1)
        for k, v in probs.items():
            p[int(k)] = v
        return cls(tuple(p))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.pmf)

    @property
    def mean(self) -> float:
        p = self.array
        return float(np.arange(p.size) @ p)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(len(self.pmf), size=size, p=self.array)


def pgf(law: OffspringLaw, s) -> float:
    """f(s) = sum_k p_k s^k on [0, 1]."""
    s_arr = np.asarray(s, dtype=float)
    if np.any((s_arr < 0) | (s_arr > 1)):
        raise ValueError("pgf argument must lie in [0, 1]")
    return np.polynomial.polynomial.polyval(s_arr, law.array)


def pgf_derivative(law: OffspringLaw, s) -> float:
    p = law.array
    return np.polynomial.polynomial.polyval(np.asarray(s, dtype=float), np.arange(1, p.size) * p[1:])


def pgf_complement(law: OffspringLaw, w):
    """1 - f(1 - w), accurate for tiny w where the direct form cancels."""
    w = np.asarray(w, dtype=float)
    k = np.arange(1, law.array.size)
    with np.errstate(divide="ignore"):
        lg = np.log1p(-np.clip(w, 0.0, 1.0))[..., None]
    return -np.expm1(k * lg) @ law.array[1:]


def mean(law: OffspringLaw) -> float:
    return law.mean


@dataclass(frozen=True)
class Catalyst:
    position: tuple
    alpha: float
    offspring: OffspringLaw

    def beta(self, q: float) -> float:
        """Exit rate from the catalyst, q / (1 - alpha)."""
        return q / (1.0 - self.alpha)


@dataclass(frozen=True)
class CbrwModel:
    kernel: JumpKernel
    catalysts: tuple
    start: tuple

    @property
    def dimension(self) -> int:
        return self.kernel.dimension

    @property
    def n_catalysts(self) -> int:
        return len(self.catalysts)

    @property
    def positions(self) -> np.ndarray:
        return np.array([c.position for c in self.catalysts], dtype=np.int64)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.catalysts])

    @property
    def betas(self) -> np.ndarray:
        return np.array([c.beta(self.kernel.q) for c in self.catalysts])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.offspring.mean for c in self.catalysts])

    def catalyst_index(self, site) -> int | None:
        site = tuple(int(v) for v in np.atleast_1d(site))
        for k, c in enumerate(self.catalysts):
            if c.position == site:
                return k
        return None

    def with_start(self, start) -> "CbrwModel":
        return CbrwModel(self.kernel, self.catalysts, tuple(int(v) for v in np.atleast_1d(start)))

    def with_catalysts(self, catalysts) -> "CbrwModel":
        return CbrwModel(self.kernel, tuple(catalysts), self.start)


@dataclass
class ModelReport:
    valid: bool
    dimension: int
    n_catalysts: int
    q: float
    betas: list
    offspring_means: list
    notes: list = field(default_factory=list)


def validate_model(model: CbrwModel) -> ModelReport:
    """Check the whole model; raises a :class:`ModelError` subclass on failure."""
    k = model.kernel
    validate_kernel([(o, r) for o, r in zip(k.offsets, k.rates)], k.q)
    if model.n_catalysts < 1:
        raise ModelError("at least one catalyst is required")
    d = k.dimension
    if len(model.start) != d:
        raise ModelError(f"start point has dimension {len(model.start)}, kernel has {d}")
    seen = {}
    for i, c in enumerate(model.catalysts):
        if len(c.position) != d:
            raise ModelError(f"catalyst {i} position has wrong dimension")
        if c.position in seen:
            raise DuplicateCatalystError(
                f"catalysts {seen[c.position]} and {i} share position {list(c.position)}")
        seen[c.position] = i
        if not 0.0 <= c.alpha < 1.0:
            raise AlphaRangeError(f"catalyst {i}: alpha={c.alpha} outside [0, 1)")
    return ModelReport(
        valid=True,
        dimension=d,
        n_catalysts=model.n_catalysts,
        q=k.q,
        betas=model.betas.tolist(),
        offspring_means=model.means.tolist(),
        notes=[
            "finite jump support: exponential moments of all orders exist",
            "finite offspring support: E xi log(xi + 1) < infinity",
        ],
    )


def model_from_config(cfg: dict) -> CbrwModel:
    """Build a model from the JSON config layout (kernel / catalysts / start)."""
    kcfg = cfg["kernel"]
    kernel = validate_kernel(kcfg["jumps"], float(kcfg["q"]))
    cats = []
    for i, c in enumerate(cfg["catalysts"]):
        try:
            law = OffspringLaw(tuple(c["offspring_pmf"]))
        except OffspringLawError as exc:
            raise OffspringLawError(f"catalyst {i}: {exc}") from None
        pos = tuple(int(v) for v in np.atleast_1d(c["position"]))
        cats.append(Catalyst(pos, float(c["alpha"]), law))
    start = cfg.get("start", cats[0].position if cats else [0] * kernel.dimension)
    model = CbrwModel(kernel, tuple(cats), tuple(int(v) for v in np.atleast_1d(start)))
    validate_model(model)
    return model


def model_to_config(model: CbrwModel) -> dict:
    return {
        "kernel": {"q": model.kernel.q, "jumps": model.kernel.as_records()},
        "catalysts": [
            {"position": list(c.position), "alpha": c.alpha, "offspring_pmf": list(c.offspring.pmf)}
            for c in model.catalysts
        ],
        "start": list(model.start),
    }


def load_preset(name: str) -> dict:
    """Raw JSON config of a shipped preset (``model_a``, ``model_b``, ``model_2d``)."""
    text = resources.files("cbrw.presets").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def model_a() -> CbrwModel:
    """d=1 nearest-neighbour walk, q=1, one catalyst at 0, alpha=1/2, binary splitting."""
    return model_from_config(load_preset("model_a"))


def model_b() -> CbrwModel:
    """As :func:`model_a` but the offspring law is {0: 0.2, 2: 0.8}."""
    return model_from_config(load_preset("model_b"))


def model_2d() -> CbrwModel:
    """d=2 nearest-neighbour walk with a single Model-B-style catalyst at the origin."""
    return model_from_config(load_preset("model_2d"))
