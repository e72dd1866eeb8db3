"""Offspring laws, environment presets, and sampled environment paths.

A reproduction law here is always linear-fractional,

    f(s) = r + (1 - r) * q / (1 - p*s),        p + q = 1,  p*q > 0,

so a law is pinned down by (p, r).  The two derived scalars that drive
everything downstream are the log mean x = ln f'(1) = ln((1-r)p/q) and the
standardized second moment eta = f''(1)/f'(1)^2 = 2/(1-r).

Laws are stored as (x, r) rather than (p, r): heavy-tailed presets produce
|x| large enough that p = e^x/(1+e^x) rounds to 1.0 in float64, while the
downstream algebra only ever needs e^{-x} and eta, both exact in (x, r).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.special import expit

__all__ = [
    "OffspringLaw",
    "law_from_params",
    "EnvSpec",
    "EnvironmentPath",
    "sample_environment",
    "estimate_rho",
    "PRESETS",
]


@dataclass(frozen=True)
class OffspringLaw:
    """One linear-fractional reproduction law, parameterized by (log mean, r)."""

    x: float  # ln f'(1)
    r: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.x):
            raise ValueError(f"log mean must be finite, got {self.x}")
        if not 0.0 <= self.r < 1.0:
            raise ValueError(f"r must lie in [0, 1), got {self.r}")

    @property
    def p(self) -> float:
        return float(expit(self.x - math.log1p(-self.r)))

    @property
    def q(self) -> float:
        return float(expit(-(self.x - math.log1p(-self.r))))

    @property
    def eta(self) -> float:
        return 2.0 / (1.0 - self.r)

    @property
    def step_gap(self) -> float:
        """e^{-x} - 1 + eta/2 = e^{-x} + r/(1-r): the per-step growth of 1/(1-f(0)) chains."""
        return math.exp(-self.x) + self.r / (1.0 - self.r)

    def pgf(self, s):
        """Evaluate f(s) = r + (1-r) q / (1 - p s)."""
        return self.r + (1.0 - self.r) * self.q / (1.0 - self.p * np.asarray(s))


def law_from_params(p: float, r: float = 0.0) -> OffspringLaw:
    """Build a law from the natural (p, r) parameters, validating ranges."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must lie in [0, 1), got {r}")
    x = math.log1p(-r) + math.log(p) - math.log1p(-p)
    return OffspringLaw(x=x, r=r)


# ---------------------------------------------------------------------------
# presets

PRESET_CRITICAL_GEOMETRIC = "critical-geometric-deterministic"
PRESET_BERNOULLI = "symmetric-bernoulli-X"
PRESET_GAUSSIAN = "gaussian-X"
PRESET_LAPLACE = "laplace-X"
PRESET_STABLE = "skewed-stable-X"

PRESETS = (
    PRESET_CRITICAL_GEOMETRIC,
    PRESET_BERNOULLI,
    PRESET_GAUSSIAN,
    PRESET_LAPLACE,
    PRESET_STABLE,
)

_PRESET_DEFAULTS: dict[str, dict[str, float]] = {
    PRESET_CRITICAL_GEOMETRIC: {},
    PRESET_BERNOULLI: {"h": 1.0},
    PRESET_GAUSSIAN: {"mean": 0.0, "sigma": 1.0},
    PRESET_LAPLACE: {"mean": 0.0, "scale": 1.0},
    PRESET_STABLE: {"alpha": 1.5, "beta": 0.5, "scale": 1.0, "r_max": 0.0},
}

# Second-moment conditions on the conditioned-walk functionals are not
# machine-checked; this records the working belief per preset.
A2_STATUS: dict[str, str] = {
    PRESET_CRITICAL_GEOMETRIC: "not applicable: degenerate walk violates the positivity condition",
    PRESET_BERNOULLI: "believed (bounded steps); lattice walk, so conditioned-measure sampling is refused",
    PRESET_GAUSSIAN: "believed (light tails, finite variance)",
    PRESET_LAPLACE: "believed (exponential tails, finite variance)",
    PRESET_STABLE: "unknown (heavy tails; moment conditions not verified)",
}


def _sample_stable(alpha: float, beta: float, shape, rng: np.random.Generator) -> np.ndarray:
    """Chambers-Mallows-Stuck draw of a strictly alpha-stable variable (alpha != 1)."""
    v = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    w = rng.exponential(1.0, shape)
    t = beta * np.tan(np.pi * alpha / 2.0)
    theta0 = np.arctan(t) / alpha
    scale = (1.0 + t * t) ** (1.0 / (2.0 * alpha))
    return (
        scale
        * np.sin(alpha * (v + theta0))
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos(v - alpha * (v + theta0)) / w) ** ((1.0 - alpha) / alpha)
    )


@dataclass(frozen=True)
class EnvSpec:
    """Which preset generates the i.i.d. laws, with preset-specific parameters.

    ``target_rho`` is documentation only (the positivity parameter the preset
    is believed to satisfy); nothing is derived from it.
    """

    preset: str
    params: Mapping[str, float] = field(default_factory=dict)
    target_rho: float | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose one of {PRESETS}")
        defaults = _PRESET_DEFAULTS[self.preset]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown params {sorted(unknown)} for preset {self.preset!r}")
        merged = {**defaults, **{k: float(v) for k, v in self.params.items()}}
        object.__setattr__(self, "params", merged)
        if self.preset == PRESET_BERNOULLI and merged["h"] <= 0:
            raise ValueError("step size h must be positive")
        if self.preset == PRESET_GAUSSIAN and merged["sigma"] <= 0:
            raise ValueError("sigma must be positive")
        if self.preset == PRESET_LAPLACE and merged["scale"] <= 0:
            raise ValueError("scale must be positive")
        if self.preset == PRESET_STABLE:
            if not (0.0 < merged["alpha"] <= 2.0) or merged["alpha"] == 1.0:
                raise ValueError("alpha must lie in (0, 2] and differ from 1")
            if not -1.0 <= merged["beta"] <= 1.0:
                raise ValueError("beta must lie in [-1, 1]")
            if merged["scale"] <= 0:
                raise ValueError("scale must be positive")
            if not 0.0 <= merged["r_max"] < 1.0:
                raise ValueError("r_max must lie in [0, 1)")

    # -- classification ----------------------------------------------------

    @property
    def continuous_x(self) -> bool:
        """True when the log-mean increment has a continuous law (no lattice atoms)."""
        return self.preset in (PRESET_GAUSSIAN, PRESET_LAPLACE, PRESET_STABLE)

    @property
    def violates_positivity(self) -> bool:
        """True for the degenerate preset whose walk never goes positive."""
        return self.preset == PRESET_CRITICAL_GEOMETRIC

    @property
    def rho_exact(self) -> float | None:
        """lim P(S_n > 0) where a closed form exists, else None."""
        if self.preset == PRESET_CRITICAL_GEOMETRIC:
            return 0.0
        if self.preset in (PRESET_BERNOULLI, PRESET_GAUSSIAN, PRESET_LAPLACE):
            if self.params.get("mean", 0.0) == 0.0:
                return 0.5
            return None
        if self.preset == PRESET_STABLE:
            a, b = self.params["alpha"], self.params["beta"]
            return 0.5 + math.atan(b * math.tan(math.pi * a / 2.0)) / (math.pi * a)
        return None

    @property
    def a2_note(self) -> str:
        return A2_STATUS[self.preset]

    # -- sampling ----------------------------------------------------------

    def draw_x(self, shape, rng: np.random.Generator) -> np.ndarray:
        """Draw walk increments (= per-law log means) of the given shape."""
        p = self.params
        if self.preset == PRESET_CRITICAL_GEOMETRIC:
            return np.zeros(shape)
        if self.preset == PRESET_BERNOULLI:
            return p["h"] * (2.0 * rng.integers(0, 2, shape) - 1.0)
        if self.preset == PRESET_GAUSSIAN:
            return rng.normal(p["mean"], p["sigma"], shape)
        if self.preset == PRESET_LAPLACE:
            return rng.laplace(p["mean"], p["scale"], shape)
        return p["scale"] * _sample_stable(p["alpha"], p["beta"], shape, rng)

    def draw_r(self, shape, rng: np.random.Generator) -> np.ndarray:
        """Draw the extra mass-at-zero parameters (zero except for the skewed preset)."""
        if self.preset == PRESET_STABLE and self.params["r_max"] > 0.0:
            return rng.uniform(0.0, self.params["r_max"], shape)
        return np.zeros(shape)

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        out = {"preset": self.preset, "params": dict(self.params)}
        if self.target_rho is not None:
            out["target_rho"] = self.target_rho
        return out

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "EnvSpec":
        extra = set(d) - {"preset", "params", "target_rho"}
        if extra:
            raise ValueError(f"unknown EnvSpec keys {sorted(extra)}")
        return cls(
            preset=d["preset"],
            params=dict(d.get("params", {})),
            target_rho=d.get("target_rho"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# environment paths


@dataclass(frozen=True)
class EnvironmentPath:
    """A sampled environment of length n with prefix arrays for O(1)-ish queries.

    walk[k]   = S_k (length n+1, walk[0] = 0)
    b_prefix  = W with b_m = exp(b_shift) * W[m], where
                b_m = (1/2) * sum_{j<m} eta_{j+1} e^{-S_j}.
    The shift is the running max of -S_j over the path, so every stored term
    lies in (0, eta/2] and the prefix sums never overflow.
    """

    x: np.ndarray
    r: np.ndarray
    walk: np.ndarray
    b_shift: float
    b_prefix: np.ndarray

    @property
    def n(self) -> int:
        return len(self.x)

    @cached_property
    def eta(self) -> np.ndarray:
        return 2.0 / (1.0 - self.r)

    @cached_property
    def step_gap(self) -> np.ndarray:
        """Per-law e^{-x} + r/(1-r) (see OffspringLaw.step_gap)."""
        return np.exp(-self.x) + self.r / (1.0 - self.r)

    @cached_property
    def log_step_gap(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.logaddexp(-self.x, np.log(self.r) - np.log1p(-self.r))

    @cached_property
    def laws(self) -> tuple[OffspringLaw, ...]:
        return tuple(OffspringLaw(float(xi), float(ri)) for xi, ri in zip(self.x, self.r))

    @property
    def b(self) -> np.ndarray:
        """Materialized b_m values; may overflow to inf for extreme walks (use log_b)."""
        return np.exp(self.b_shift) * self.b_prefix

    def log_b(self, m: int) -> float:
        if self.b_prefix[m] == 0.0:
            return -np.inf
        return self.b_shift + math.log(self.b_prefix[m])

    def serialize(self) -> bytes:
        return self.x.tobytes() + self.r.tobytes()


def build_path(x: np.ndarray, r: np.ndarray | None = None) -> EnvironmentPath:
    """Assemble the prefix arrays for given increments (and optional r values)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("need a nonempty 1-d array of increments")
    if r is None:
        r = np.zeros_like(x)
    else:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != x.shape:
            raise ValueError("r must match x in shape")
    walk = np.empty(len(x) + 1)
    walk[0] = 0.0
    np.cumsum(x, out=walk[1:])
    shift = float(-walk[:-1].min())
    eta_half = 1.0 / (1.0 - r)
    terms = eta_half * np.exp(-(walk[:-1] + shift))
    prefix = np.empty(len(x) + 1)
    prefix[0] = 0.0
    np.cumsum(terms, out=prefix[1:])
    for arr in (x, r, walk, prefix):
        arr.setflags(write=False)
    return EnvironmentPath(x=x, r=r, walk=walk, b_shift=shift, b_prefix=prefix)


def sample_environment(spec: EnvSpec, n: int, rng: np.random.Generator) -> EnvironmentPath:
    """Draw n i.i.d. laws per the preset and build the prefix arrays."""
    if n < 1:
        raise ValueError("environment length must be >= 1")
    x = spec.draw_x(n, rng)
    r = spec.draw_r(n, rng)
    return build_path(x, r)


def estimate_rho(
    spec: EnvSpec,
    horizon: int,
    replicas: int,
    rng: np.random.Generator,
    chunk: int = 256,
) -> tuple[float, float]:
    """Monte Carlo Cesaro average (1/H) sum_k P(S_k > 0) with its standard error."""
    if horizon < 1 or replicas < 1:
        raise ValueError("horizon and replicas must be >= 1")
    fracs = np.empty(replicas)
    done = 0
    while done < replicas:
        m = min(chunk, replicas - done)
        s = np.cumsum(spec.draw_x((m, horizon), rng), axis=1)
        fracs[done : done + m] = (s > 0).mean(axis=1)
        done += m
    rho_hat = float(fracs.mean())
    se = float(fracs.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("nan")
    return rho_hat, se
