"""Random-walk fluctuation machinery: minima, ladder structure, renewal functions.

The renewal functions drive the change of measure that conditions a walk to
stay negative (resp. nonnegative) forever:

    V(x) = 1 + E #{j >= 1 : descending ladder height >= -x}
    U(x) = 1 + E #{j >= 1 : ascending ladder height  <  x}

both estimated by Monte Carlo with a finite horizon; V(0) = U(0) = 1 by
convention.  Beyond the calibrated grid, queries extrapolate a power law
fitted on the top decade of the grid (exact asymptotics for finite-variance
walks, where both functions grow linearly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .env import EnvSpec

__all__ = [
    "leftmost_min_index",
    "LadderStats",
    "ladder_epochs",
    "RenewalTable",
    "estimate_renewals",
    "arcsine_cdf",
]


def leftmost_min_index(s, m: int, n: int) -> int:
    """Smallest i in [m, n] with s[j] >= s[i] for all j in [m, n]."""
    s = np.asarray(s)
    if not 0 <= m <= n < len(s):
        raise ValueError(f"need 0 <= m <= n < {len(s)}, got ({m}, {n})")
    return int(np.argmin(s[m : n + 1])) + m


@dataclass(frozen=True)
class LadderStats:
    """Strict descending (gamma) and ascending (Gamma) ladder epochs and heights."""

    gamma_epochs: np.ndarray
    gamma_heights: np.ndarray
    big_gamma_epochs: np.ndarray
    big_gamma_heights: np.ndarray
    horizon: int


def _strict_records(s: np.ndarray, descending: bool) -> np.ndarray:
    acc = np.minimum.accumulate(s) if descending else np.maximum.accumulate(s)
    if descending:
        new = s[1:] < acc[:-1]
    else:
        new = s[1:] > acc[:-1]
    return np.concatenate([[0], np.flatnonzero(new) + 1])


def ladder_epochs(s) -> LadderStats:
    """Record times of strict new minima / maxima of a walk with s[0] = 0."""
    s = np.asarray(s, dtype=np.float64)
    if len(s) == 0 or s[0] != 0.0:
        raise ValueError("need a walk with s[0] = 0")
    g = _strict_records(s, descending=True)
    gg = _strict_records(s, descending=False)
    return LadderStats(
        gamma_epochs=g,
        gamma_heights=s[g],
        big_gamma_epochs=gg,
        big_gamma_heights=s[gg],
        horizon=len(s) - 1,
    )


@dataclass
class RenewalTable:
    """Grid estimates of V and U with standard errors, plus the lattice constant D.

    ``v_at`` / ``u_at`` interpolate linearly on the grid and extrapolate a
    fitted power law beyond it (events counted in ``extrapolations``).
    """

    grid: np.ndarray
    v: np.ndarray
    v_se: np.ndarray
    u: np.ndarray
    u_se: np.ndarray
    d_hat: float
    replicas: int
    horizon: int
    truncation_bias_v: float  # mean extra ladder count found when doubling the horizon
    truncation_bias_u: float
    extrapolations: int = 0
    _vexp: tuple[float, float] = field(default=(1.0, 1.0), repr=False)
    _uexp: tuple[float, float] = field(default=(1.0, 1.0), repr=False)

    def __post_init__(self):
        self._vexp = self._fit_power(self.v)
        self._uexp = self._fit_power(self.u)

    def _fit_power(self, vals: np.ndarray) -> tuple[float, float]:
        x = self.grid
        top = x >= x[-1] / 10.0
        if top.sum() < 2 or x[-1] <= 0:
            return 1.0, 1.0
        lx, lv = np.log(x[top]), np.log(vals[top])
        slope, intercept = np.polyfit(lx, lv, 1)
        return float(slope), float(math.exp(intercept))

    def _query(self, x, vals: np.ndarray, exp_fit: tuple[float, float]):
        x = np.asarray(x, dtype=np.float64)
        out = np.interp(x, self.grid, vals)
        beyond = x > self.grid[-1]
        if np.any(beyond):
            self.extrapolations += int(np.sum(beyond))
            slope, coef = exp_fit
            out = np.where(beyond, coef * np.maximum(x, 1e-300) ** slope, out)
        neg = x < 0
        if np.any(neg):
            out = np.where(neg, 0.0, out)
        return out

    def v_at(self, x):
        return self._query(x, self.v, self._vexp)

    def u_at(self, x):
        return self._query(x, self.u, self._uexp)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("x,V,V_se,U,U_se\n")
            for i in range(len(self.grid)):
                fh.write(
                    f"{self.grid[i]!r},{self.v[i]!r},{self.v_se[i]!r},"
                    f"{self.u[i]!r},{self.u_se[i]!r}\n"
                )


def _ladder_counts(s_block: np.ndarray, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-path counts of descending heights >= -x and ascending heights < x, plus zero hits."""
    reps = s_block.shape[0]
    cnt_v = np.empty((reps, len(grid)))
    cnt_u = np.empty((reps, len(grid)))
    zeros = np.empty(reps)
    for i in range(reps):
        s = s_block[i]
        run_min = np.minimum.accumulate(s)
        desc = s[1:][s[1:] < run_min[:-1]]
        run_max = np.maximum.accumulate(s)
        asc = s[1:][s[1:] > run_max[:-1]]
        cnt_v[i] = (desc[None, :] >= -grid[:, None]).sum(axis=1) if len(desc) else 0.0
        cnt_u[i] = (asc[None, :] < grid[:, None]).sum(axis=1) if len(asc) else 0.0
        zeros[i] = np.count_nonzero(s[1:] == 0.0)
    return cnt_v, cnt_u, zeros


def estimate_renewals(
    spec: EnvSpec,
    grid,
    replicas: int,
    horizon: int,
    rng: np.random.Generator,
    doubling_frac: float = 0.1,
    chunk_budget: int = 8_000_000,
) -> RenewalTable:
    """Monte Carlo estimates of V, U on a grid, with truncation-bias diagnostics."""
    grid = np.asarray(grid, dtype=np.float64)
    if len(grid) == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("grid must be nonempty, increasing, and >= 0")
    if replicas < 1 or horizon < 1:
        raise ValueError("replicas and horizon must be >= 1")
    n_double = int(round(doubling_frac * replicas))
    cnt_v = np.empty((replicas, len(grid)))
    cnt_u = np.empty((replicas, len(grid)))
    zeros = np.empty(replicas)
    bias_v = bias_u = 0.0
    chunk = max(1, chunk_budget // max(horizon, 1))
    done = 0
    while done < replicas:
        b = min(chunk, replicas - done)
        doubled = min(b, max(0, n_double - done))  # first n_double replicas get 2x horizon
        h = 2 * horizon if doubled > 0 else horizon
        x = spec.draw_x((b, h), rng)
        s = np.concatenate([np.zeros((b, 1)), np.cumsum(x, axis=1)], axis=1)
        cv, cu, z = _ladder_counts(s[:, : horizon + 1], grid)
        cnt_v[done : done + b], cnt_u[done : done + b], zeros[done : done + b] = cv, cu, z
        if doubled > 0:
            cv2, cu2, _ = _ladder_counts(s[:doubled], grid)
            bias_v += float(np.sum(cv2[:, -1] - cv[:doubled, -1]))
            bias_u += float(np.sum(cu2[:, -1] - cu[:doubled, -1]))
        done += b
    sqrt_r = math.sqrt(replicas)
    v = 1.0 + cnt_v.mean(axis=0)
    u = 1.0 + cnt_u.mean(axis=0)
    # enforce the x = 0 convention exactly (strict ladder heights never sit at 0
    # for continuous walks, but lattice walks can land there)
    at_zero = grid == 0.0
    v[at_zero] = 1.0
    u[at_zero] = 1.0
    return RenewalTable(
        grid=grid,
        v=v,
        v_se=cnt_v.std(axis=0, ddof=1) / sqrt_r if replicas > 1 else np.zeros(len(grid)),
        u=u,
        u_se=cnt_u.std(axis=0, ddof=1) / sqrt_r if replicas > 1 else np.zeros(len(grid)),
        d_hat=float(zeros.mean()),
        replicas=replicas,
        horizon=horizon,
        truncation_bias_v=bias_v / max(n_double, 1),
        truncation_bias_u=bias_u / max(n_double, 1),
    )


def default_horizon(grid_max: float) -> int:
    """Diffusive settling time for ladder counts at level grid_max."""
    return max(1024, int(64 * grid_max**2))


def arcsine_cdf(t, rho: float):
    """Generalized arcsine CDF I_t(1 - rho, rho): the limit law of argmin/n."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr < 0.0) | (t_arr > 1.0)):
        raise ValueError("t must lie in [0, 1]")
    out = betainc(1.0 - rho, rho, t_arr)
    return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out
