"""Sampling environments conditioned to stay negative / nonnegative, and the
limit variables of the bottleneck laws.

The minus measure weights ordinary paths by U(-S_k) on the event that the
walk is strictly negative for its first k steps; the plus measure weights by
V(S_p) on the event of staying nonnegative for p steps.  Joint draws are
independent products.  Sampling is plain rejection (polynomially decaying
acceptance, fine at desk scale) followed by self-normalized importance
weighting with the estimated renewal functions; an opt-in sequential
resampling fallback covers constraint lengths where rejection starves.

Limit variables, in terms of the minus-side prefix sums
W_l = sum_{j<=l} (eta_j/2) e^{S^-_j} and the plus-side b-prefix:

    survival ratio  Xi_R = e^{-S^+_R} / (e^{-S^+_R} + b^+_R + W_inf)   R >= 0
                    Xi_R = 1 / (1 + e^{-S^-_|R|} (W_inf - W_|R|))      R < 0
    part-1 limit parameter  Theta_R = 1 - Xi_R                (see ledger:
        the limit pgf is s((1-x)/(1-xs))^2 with x the *complement* of the
        survival-ratio limit)
    part-2 limit parameter  theta_R = q^+_R = 1 - e^{-S^+_R}/(b^+_inf - b^+_R)   R >= 0
                            theta_R = 1 - e^{S^-_|R|}/(b^+_inf + W_|R|)          R < 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvSpec, EnvironmentPath, build_path
from .errors import AcceptanceStarvationError
from .fluctuation import RenewalTable, default_horizon, estimate_renewals
from .lf import _seg_log_ab

__all__ = [
    "WeightedPath",
    "LimitDraw",
    "LimitBatch",
    "sample_minus",
    "sample_plus",
    "limit_qplus",
    "limit_zeta_minus",
    "sample_theta_right",
    "sample_theta_left",
    "sample_limit_batches",
    "limit_pgf",
    "build_renewal_table",
]

_STARVATION_FLOOR = 1e-4
_MIN_PROPOSALS = 200_000
_TAIL_WINDOW = 64


@dataclass(frozen=True)
class WeightedPath:
    """One constrained environment with its renewal importance weight."""

    env: EnvironmentPath
    weight: float
    side: str  # "minus" | "plus"
    constraint_len: int


@dataclass(frozen=True)
class LimitDraw:
    """One weighted draw of a limit variable with its truncation diagnostics."""

    value: float
    weight: float
    steps: int
    last_increment: float
    converged: bool


def limit_pgf(theta: float, s: float) -> float:
    """The limit generating function s ((1-theta)/(1-theta*s))^2."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    return s * ((1.0 - theta) / (1.0 - theta * s)) ** 2


# ---------------------------------------------------------------------------
# constrained-path generation


def _guard_continuous(spec: EnvSpec) -> None:
    if not spec.continuous_x:
        raise ValueError(
            f"preset {spec.preset!r} has a lattice walk (D > 0); "
            "conditioned-measure sampling needs a continuous preset"
        )


def _rejection_block(
    spec: EnvSpec, length: int, batch: int, rng: np.random.Generator, side: str
) -> tuple[np.ndarray, dict]:
    """Accumulate `batch` increment rows whose walks satisfy the side constraint."""
    rows: list[np.ndarray] = []
    got = 0
    proposals = 0
    chunk = max(512, min(batch * 4, max(1, 4_000_000 // length)))
    while got < batch:
        x = spec.draw_x((chunk, length), rng)
        s = np.cumsum(x, axis=1)
        if side == "minus":
            ok = s.max(axis=1) < 0.0
        else:
            ok = s.min(axis=1) >= 0.0
        proposals += chunk
        hits = x[ok]
        if len(hits):
            rows.append(hits[: batch - got])
            got += len(rows[-1])
        if proposals >= _MIN_PROPOSALS and got / proposals < _STARVATION_FLOOR:
            raise AcceptanceStarvationError(
                f"{side}-side rejection acceptance {got / proposals:.2e} < {_STARVATION_FLOOR:.0e} "
                f"at constraint length {length}; lower the length or use the smc fallback"
            )
    x = np.concatenate(rows, axis=0)
    return x, {"proposals": proposals, "accepted": batch, "acceptance": batch / proposals}


def _smc_block(
    spec: EnvSpec, length: int, batch: int, rng: np.random.Generator, side: str
) -> tuple[np.ndarray, dict]:
    """Sequential resampling with killing at the constraint; multinomial refill."""
    n_part = max(4 * batch, 1024)
    x = np.empty((n_part, length))
    s = np.zeros(n_part)
    resamples = 0
    for t in range(length):
        x[:, t] = spec.draw_x(n_part, rng)
        s += x[:, t]
        bad = (s >= 0.0) if side == "minus" else (s < 0.0)
        n_bad = int(bad.sum())
        if n_bad:
            alive = np.flatnonzero(~bad)
            if len(alive) == 0:
                raise AcceptanceStarvationError(
                    f"smc fallback lost every particle at step {t} ({side} side)"
                )
            src = alive[rng.integers(0, len(alive), n_bad)]
            x[bad, : t + 1] = x[src, : t + 1]
            s[bad] = s[src]
            resamples += n_bad
    pick = rng.integers(0, n_part, batch)
    return x[pick], {
        "proposals": n_part,
        "accepted": batch,
        "acceptance": float("nan"),
        "smc_resamples": resamples,
    }


def _constrained_block(
    spec: EnvSpec,
    length: int,
    batch: int,
    rng: np.random.Generator,
    side: str,
    fallback: str,
) -> tuple[np.ndarray, np.ndarray, dict]:
    _guard_continuous(spec)
    if length < 1 or batch < 1:
        raise ValueError("constraint length and batch must be >= 1")
    stats: dict
    if fallback == "smc":
        try:
            x, stats = _rejection_block(spec, length, batch, rng, side)
            stats["used_fallback"] = False
        except AcceptanceStarvationError:
            x, stats = _smc_block(spec, length, batch, rng, side)
            stats["used_fallback"] = True
    elif fallback == "error":
        x, stats = _rejection_block(spec, length, batch, rng, side)
        stats["used_fallback"] = False
    elif fallback == "force-smc":  # test hook
        x, stats = _smc_block(spec, length, batch, rng, side)
        stats["used_fallback"] = True
    else:
        raise ValueError(f"unknown fallback mode {fallback!r}")
    r = spec.draw_r(x.shape, rng)  # independent of the walk, so drawn post-acceptance
    return x, r, stats


def build_renewal_table(
    spec: EnvSpec,
    constraint_len: int,
    rng: np.random.Generator,
    replicas: int = 1500,
    grid_max: float | None = None,
) -> RenewalTable:
    """Renewal table sized for weights of paths constrained for `constraint_len` steps."""
    _guard_continuous(spec)
    if grid_max is None:
        probe = np.abs(spec.draw_x(2048, rng))
        sigma = float(np.median(probe) * 1.4826)
        grid_max = max(8.0, 2.5 * sigma * math.sqrt(constraint_len))
    grid = np.concatenate([[0.0], np.geomspace(grid_max / 512.0, grid_max, 79)])
    return estimate_renewals(spec, grid, replicas, default_horizon(min(grid_max, 64.0)), rng)


def _weighted_paths(
    x: np.ndarray, r: np.ndarray, side: str, table: RenewalTable
) -> list[WeightedPath]:
    ends = x.sum(axis=1)
    w = table.u_at(-ends) if side == "minus" else table.v_at(ends)
    w = np.asarray(w, dtype=np.float64)
    w = w / w.mean()  # self-normalized within the batch
    return [
        WeightedPath(env=build_path(x[i], r[i]), weight=float(w[i]), side=side, constraint_len=x.shape[1])
        for i in range(len(x))
    ]


def sample_minus(
    spec: EnvSpec,
    k: int,
    batch: int,
    rng: np.random.Generator,
    table: RenewalTable | None = None,
    fallback: str = "error",
) -> tuple[list[WeightedPath], dict]:
    """Environments whose walk stays strictly negative for k steps, weighted by U(-S_k)."""
    sub = rng.spawn(2)
    if table is None:
        table = build_renewal_table(spec, k, sub[1])
    x, r, stats = _constrained_block(spec, k, batch, sub[0], "minus", fallback)
    return _weighted_paths(x, r, "minus", table), stats


def sample_plus(
    spec: EnvSpec,
    p: int,
    batch: int,
    rng: np.random.Generator,
    table: RenewalTable | None = None,
    fallback: str = "error",
) -> tuple[list[WeightedPath], dict]:
    """Environments whose walk stays nonnegative for p steps, weighted by V(S_p)."""
    sub = rng.spawn(2)
    if table is None:
        table = build_renewal_table(spec, p, sub[1])
    x, r, stats = _constrained_block(spec, p, batch, sub[0], "plus", fallback)
    return _weighted_paths(x, r, "plus", table), stats


# ---------------------------------------------------------------------------
# single-path limit functionals (spec'd operations; the batch pipeline below
# vectorizes the same formulas)


def _stop_index(tail: np.ndarray, start: int, tol: float) -> tuple[int, bool]:
    """First index l >= start with in-horizon remaining tail < tol."""
    hit = np.flatnonzero(tail[start:] < tol)
    if len(hit) == 0:
        return len(tail) - 1, False
    return int(hit[0]) + start, True


def limit_qplus(plus_env: EnvironmentPath, R: int, tol: float = 1e-8, max_n: int = 10_000) -> LimitDraw:
    """lim_n f_{R,n}(0) along one (plus-side) environment, with truncation diagnostics."""
    if R < 0:
        raise ValueError("R must be >= 0")
    L = min(max_n, plus_env.n)
    if L <= R:
        raise ValueError(f"environment too short: need length > R = {R}")
    s_arr = plus_env.walk
    # remaining-change bound at l: A_l + e^{S_R}(b_L - b_l), all relative to index R;
    # the prefix difference is only a stopping diagnostic, so its rounding is harmless
    idx_l = np.arange(R + 1, L + 1)
    w_pref = plus_env.b_prefix
    with np.errstate(divide="ignore"):
        log_b_tail = s_arr[R] + plus_env.b_shift + np.log(w_pref[L] - w_pref[idx_l])
    rem = np.exp(np.logaddexp(s_arr[R] - s_arr[idx_l], log_b_tail))
    idx, found = _stop_index(rem, 0, tol)
    steps = idx + R + 1
    value = -math.expm1(-_seg_log_ab(plus_env, R, L))  # f_{R,L}(0)
    if steps > R + 1:
        last_inc = math.exp(
            -(s_arr[steps - 1] - s_arr[R])
            + float(plus_env.log_step_gap[steps - 1])
            - _seg_log_ab(plus_env, R, steps - 1)
            - _seg_log_ab(plus_env, R, steps)
        )
    else:
        last_inc = value
    converged = found and rem[-1] < tol
    return LimitDraw(value=value, weight=1.0, steps=steps, last_increment=last_inc, converged=converged)


def _minus_w_terms(env: EnvironmentPath) -> np.ndarray:
    """(eta_j / 2) e^{S_j} for j = 1..n on a (minus-side) environment."""
    return (1.0 / (1.0 - env.r)) * np.exp(env.walk[1:])


def limit_zeta_minus(
    minus_env: EnvironmentPath, s: float, tol: float = 1e-8, max_l: int = 10_000
) -> LimitDraw:
    """lim_l (1 - f^-_{l,0}(s)) e^{-S_l} = 1/(1/(1-s) + W_inf) along one minus path."""
    if not 0.0 <= s < 1.0:
        raise ValueError(f"s must lie in [0, 1), got {s}")
    L = min(max_l, minus_env.n)
    if L < 1:
        raise ValueError("environment too short")
    w = np.cumsum(_minus_w_terms(minus_env)[:L])
    tail = w[-1] - w
    idx, found = _stop_index(tail, 0, tol)
    steps = idx + 1
    zeta = lambda wl: 1.0 / (1.0 / (1.0 - s) + wl)
    prev = zeta(w[idx - 1]) if idx >= 1 else zeta(0.0)
    window = w[-1] - (w[L - _TAIL_WINDOW - 1] if L > _TAIL_WINDOW else 0.0)
    return LimitDraw(
        value=float(zeta(w[-1])),
        weight=1.0,
        steps=steps,
        last_increment=float(abs(zeta(w[idx]) - prev)),
        converged=found and window < tol,
    )


# ---------------------------------------------------------------------------
# batch pipeline for the bottleneck limit parameters


@dataclass
class LimitBatch:
    """Vectorized limit draws for one R off a shared (minus, plus) path batch."""

    r_value: int
    theta_right: np.ndarray  # part-1 parameter Theta_R
    weight_right: np.ndarray
    conv_right: np.ndarray
    theta_left: np.ndarray  # part-2 parameter theta_R
    weight_left: np.ndarray
    conv_left: np.ndarray
    survival_ratio: np.ndarray  # Xi_R = 1 - theta_right, kept for diagnostics

    def draws_right(self) -> list[LimitDraw]:
        return self._draws(self.theta_right, self.weight_right, self.conv_right)

    def draws_left(self) -> list[LimitDraw]:
        return self._draws(self.theta_left, self.weight_left, self.conv_left)

    def _draws(self, vals, w, conv) -> list[LimitDraw]:
        return [
            LimitDraw(value=float(v), weight=float(wi), steps=0, last_increment=float("nan"), converged=bool(c))
            for v, wi, c in zip(vals, w, conv)
        ]


@dataclass
class _Sides:
    s0m: np.ndarray  # minus walks, leading zero column
    w0m: np.ndarray  # minus W prefix, leading zero
    s0p: np.ndarray  # plus walks, leading zero
    b0p: np.ndarray  # plus b prefix, leading zero
    wgt_u: np.ndarray  # U(-S_k), mean-normalized
    wgt_v: np.ndarray  # V(S_p), mean-normalized


def _prepare_sides(
    spec: EnvSpec,
    constraint_len: int,
    batch: int,
    rng: np.random.Generator,
    table: RenewalTable | None,
    fallback: str,
) -> tuple[_Sides, dict]:
    r_minus, r_plus, r_table = rng.spawn(3)
    if table is None:
        table = build_renewal_table(spec, constraint_len, r_table)
    xm, rm, stats_m = _constrained_block(spec, constraint_len, batch, r_minus, "minus", fallback)
    xp, rp, stats_p = _constrained_block(spec, constraint_len, batch, r_plus, "plus", fallback)
    zeros = np.zeros((batch, 1))
    s0m = np.concatenate([zeros, np.cumsum(xm, axis=1)], axis=1)
    s0p = np.concatenate([zeros, np.cumsum(xp, axis=1)], axis=1)
    w0m = np.concatenate([zeros, np.cumsum((1.0 / (1.0 - rm)) * np.exp(s0m[:, 1:]), axis=1)], axis=1)
    b0p = np.concatenate([zeros, np.cumsum((1.0 / (1.0 - rp)) * np.exp(-s0p[:, :-1]), axis=1)], axis=1)
    wgt_u = np.asarray(table.u_at(-s0m[:, -1]), dtype=np.float64)
    wgt_v = np.asarray(table.v_at(s0p[:, -1]), dtype=np.float64)
    sides = _Sides(
        s0m=s0m,
        w0m=w0m,
        s0p=s0p,
        b0p=b0p,
        wgt_u=wgt_u / wgt_u.mean(),
        wgt_v=wgt_v / wgt_v.mean(),
    )
    stats = {
        "minus": stats_m,
        "plus": stats_p,
        "renewal_extrapolations": table.extrapolations,
        "ess_u": float(wgt_u.sum() ** 2 / np.sum(wgt_u**2)),
        "ess_v": float(wgt_v.sum() ** 2 / np.sum(wgt_v**2)),
    }
    return sides, stats


def _minus_tail_ok(sides: _Sides, tol: float, scale: np.ndarray | float = 1.0) -> np.ndarray:
    k = sides.w0m.shape[1] - 1
    lo = max(0, k - _TAIL_WINDOW)
    return scale * (sides.w0m[:, -1] - sides.w0m[:, lo]) < tol


def _plus_tail_ok(sides: _Sides, R: int, tol: float) -> np.ndarray:
    p = sides.b0p.shape[1] - 1
    lo = max(R, p - _TAIL_WINDOW)
    window = sides.b0p[:, -1] - sides.b0p[:, lo]
    a_term = np.exp(-(sides.s0p[:, -1] - sides.s0p[:, R]))
    return (window + a_term) < tol


def _limit_batch_for(sides: _Sides, R: int, tol: float) -> LimitBatch:
    w_inf = sides.w0m[:, -1]
    b_inf = sides.b0p[:, -1]
    if R >= 0:
        # Xi_R = e^{-S+_R} / (e^{-S+_R} + b+_R + W_inf)
        a = np.exp(-sides.s0p[:, R])
        xi = a / (a + sides.b0p[:, R] + w_inf)
        conv_right = _minus_tail_ok(sides, tol, scale=1.0 / (a + sides.b0p[:, R] + w_inf))
        weight_right = sides.wgt_u * (sides.wgt_v if R > 0 else 1.0)
        # theta_R = q+_R
        theta_left = -np.expm1(-sides.s0p[:, R] - np.log(b_inf - sides.b0p[:, R]))
        conv_left = _plus_tail_ok(sides, R, tol)
        weight_left = sides.wgt_v
    else:
        k = -R
        e_neg = np.exp(-sides.s0m[:, k])  # e^{-S-_|R|} > 1
        xi = 1.0 / (1.0 + e_neg * (w_inf - sides.w0m[:, k]))
        conv_right = _minus_tail_ok(sides, tol, scale=e_neg)
        weight_right = sides.wgt_u
        theta_left = -np.expm1(sides.s0m[:, k] - np.log(b_inf + sides.w0m[:, k]))
        conv_left = _plus_tail_ok(sides, 0, tol)
        weight_left = sides.wgt_u * sides.wgt_v
    return LimitBatch(
        r_value=R,
        theta_right=1.0 - xi,
        weight_right=np.asarray(weight_right, dtype=np.float64),
        conv_right=conv_right,
        theta_left=np.asarray(theta_left, dtype=np.float64),
        weight_left=np.asarray(weight_left, dtype=np.float64),
        conv_left=conv_left,
        survival_ratio=xi,
    )


def sample_limit_batches(
    spec: EnvSpec,
    r_values,
    batch: int,
    tol: float,
    rng: np.random.Generator,
    constraint_len: int = 2048,
    table: RenewalTable | None = None,
    fallback: str = "error",
) -> tuple[dict[int, LimitBatch], dict]:
    """Limit parameters for every R off one shared pair of constrained path batches."""
    r_values = [int(r) for r in r_values]
    bad = [r for r in r_values if abs(r) >= constraint_len]
    if bad:
        raise ValueError(f"|R| must be < constraint_len={constraint_len}, got {bad}")
    sides, stats = _prepare_sides(spec, constraint_len, batch, rng, table, fallback)
    out = {r: _limit_batch_for(sides, r, tol) for r in r_values}
    # diagnostic: survival ratio at R=0 vs the deterministic-time limit 1/(b+_inf + W_inf)
    zeta_direct = 1.0 / (sides.b0p[:, -1] + sides.w0m[:, -1])
    stats["zeta_direct"] = zeta_direct
    stats["zeta_direct_weight"] = sides.wgt_u * sides.wgt_v
    return out, stats


def sample_theta_right(
    spec: EnvSpec,
    R: int,
    batch: int,
    tol: float,
    rng: np.random.Generator,
    constraint_len: int = 2048,
    table: RenewalTable | None = None,
    fallback: str = "error",
) -> tuple[list[LimitDraw], dict]:
    """Draws of the part-1 limit parameter Theta_R under the product measure."""
    batches, stats = sample_limit_batches(
        spec, [R], batch, tol, rng, constraint_len=constraint_len, table=table, fallback=fallback
    )
    return batches[R].draws_right(), stats


def sample_theta_left(
    spec: EnvSpec,
    R: int,
    batch: int,
    tol: float,
    rng: np.random.Generator,
    constraint_len: int = 2048,
    table: RenewalTable | None = None,
    fallback: str = "error",
) -> tuple[list[LimitDraw], dict]:
    """Draws of the part-2 limit parameter theta_R under the product measure."""
    batches, stats = sample_limit_batches(
        spec, [R], batch, tol, rng, constraint_len=constraint_len, table=table, fallback=fallback
    )
    return batches[R].draws_left(), stats
