"""Exact arithmetic on linear-fractional generating-function compositions.

Every law satisfies 1/(1 - f(s)) = A/(1-s) + B with A = e^{-x}, B = eta/2,
and composition acts affinely on (A, B).  Everything here is carried in
log space (log A, log B) so that segments whose walk swings by hundreds of
units stay representable, and all published values are assembled from sums
of positive terms -- never by subtracting nearly equal probabilities.

Key identity used throughout: writing v = 1 - f_seg(0) for the segment
survivals at horizons n and n-1, the quenched conditional generating
function given extinction exactly at n collapses to a cancellation-free
four-factor ratio

    E[s^{Z_m} | T = n] = s * (A + B*v2)(A + B*v1)
                           / ((A + B*(1-s+s*v2))(A + B*(1-s+s*v1)))

with (A, B) the map of the first m laws; the matching extinction-time mass
is A*(v2 - v1) / ((A + B*v2)(A + B*v1)) where v2 - v1 itself reduces to a
single positive product e^{-(S_{n-1}-S_m)} * step_gap_{n-1} / (...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .env import EnvironmentPath
from .errors import NumericalBreakdownError

__all__ = [
    "LFMap",
    "lf_of_law",
    "compose",
    "segment_map",
    "eval_survival",
    "eval_f",
    "horizon_survival",
    "extinction_time_pmf",
    "extinction_time_log_pmf_all",
    "SegmentQuantities",
    "segment_quantities",
    "conditional_pgf",
    "sandwich_bounds",
    "conditional_laplace",
    "ConditionalLaw",
    "conditional_law",
    "sample_conditional_Z",
]

NEG_INF = float("-inf")

# prefix differences of the shifted b-sums keep at least ~13 digits above
# this ratio; below it we re-sum the segment directly
_PREFIX_GUARD = 1e-3


@dataclass(frozen=True)
class LFMap:
    """The (A, B) pair of 1/(1-f(s)) = A/(1-s) + B, stored as logs (log_b = -inf for B = 0)."""

    log_a: float
    log_b: float

    @property
    def a(self) -> float:
        return math.exp(self.log_a)

    @property
    def b(self) -> float:
        return math.exp(self.log_b)

    @classmethod
    def identity(cls) -> "LFMap":
        return cls(0.0, NEG_INF)

    @classmethod
    def from_ab(cls, a: float, b: float) -> "LFMap":
        if not (a > 0.0) or b < 0.0 or not math.isfinite(a) or not math.isfinite(b):
            raise ValueError(f"need A > 0 and B >= 0 finite, got ({a}, {b})")
        return cls(math.log(a), math.log(b) if b > 0.0 else NEG_INF)


def lf_of_law(law) -> LFMap:
    """Map of a single law: A = e^{-x}, B = eta/2 = 1/(1-r)."""
    return LFMap(log_a=-law.x, log_b=-math.log1p(-law.r))


def compose(outer: LFMap, inner: LFMap) -> LFMap:
    """Map of outer(inner(s)): (A1*A2, A1*B2 + B1)."""
    return LFMap(
        log_a=outer.log_a + inner.log_a,
        log_b=float(np.logaddexp(outer.log_a + inner.log_b, outer.log_b)),
    )


def log_survival(m: LFMap, log_one_minus_s: float) -> float:
    """ln(1 - f(s)) = ln(1-s) - ln(A + B(1-s)) from ln(1-s)."""
    return log_one_minus_s - float(np.logaddexp(m.log_a, m.log_b + log_one_minus_s))


def eval_survival(m: LFMap, s: float) -> float:
    """1 - f(s) = (1-s)/(A + B(1-s)); exactly 0 at s = 1."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    if s == 1.0:
        return 0.0
    return math.exp(log_survival(m, math.log1p(-s)))


def eval_f(m: LFMap, s: float) -> float:
    """f(s) itself; loses precision once 1 - f(s) ~ 1e-16, prefer eval_survival."""
    return 1.0 - eval_survival(m, s)


# ---------------------------------------------------------------------------
# segment queries against an EnvironmentPath


def _segment_log_bsum(env: EnvironmentPath, m: int, n: int) -> float:
    """ln B for segment [m, n): B = (1/2) sum_{j=m}^{n-1} eta_{j+1} e^{-(S_j - S_m)}."""
    if m == n:
        return NEG_INF
    w = env.b_prefix
    diff = w[n] - w[m]
    if m == 0 or diff > _PREFIX_GUARD * w[n]:
        return env.walk[m] + env.b_shift + math.log(diff)
    # prefix difference has cancelled away; re-sum the segment with its own shift
    expo = -(env.walk[m:n] - env.walk[m])
    top = expo.max()
    half_eta = 1.0 / (1.0 - env.r[m:n])
    return top + math.log(float(np.sum(half_eta * np.exp(expo - top))))


def segment_map(env: EnvironmentPath, m: int, n: int) -> LFMap:
    """Map of f_m(f_{m+1}(...f_{n-1}(s))): A = e^{-(S_n-S_m)}, B = e^{S_m}(b_n - b_m)."""
    if not 0 <= m <= n <= env.n:
        raise ValueError(f"need 0 <= m <= n <= {env.n}, got ({m}, {n})")
    return LFMap(
        log_a=-(env.walk[n] - env.walk[m]),
        log_b=_segment_log_bsum(env, m, n),
    )


def _seg_log_ab(env: EnvironmentPath, m: int, n: int) -> float:
    """ln(A + B) for segment [m, n); equals -ln(1 - f_{m,n}(0))."""
    if m == n:
        return 0.0
    return float(
        np.logaddexp(-(env.walk[n] - env.walk[m]), _segment_log_bsum(env, m, n))
    )


def horizon_survival(env: EnvironmentPath, n: int) -> float:
    """P(Z_n > 0 | env) = 1 - f_{0,n}(0)."""
    if not 0 <= n <= env.n:
        raise ValueError(f"need 0 <= n <= {env.n}")
    return math.exp(-_seg_log_ab(env, 0, n))


def extinction_time_log_pmf(env: EnvironmentPath, n: int) -> float:
    """ln P(T = n | env) = ln(f_{0,n}(0) - f_{0,n-1}(0)), assembled without cancellation."""
    if not 1 <= n <= env.n:
        raise ValueError(f"need 1 <= n <= {env.n}")
    return (
        -env.walk[n - 1]
        + float(env.log_step_gap[n - 1])
        - _seg_log_ab(env, 0, n - 1)
        - _seg_log_ab(env, 0, n)
    )


def extinction_time_pmf(env: EnvironmentPath, n: int) -> float:
    out = math.exp(extinction_time_log_pmf(env, n))
    if out <= 0.0:
        raise NumericalBreakdownError(
            f"P(T={n}) underflowed (log value {extinction_time_log_pmf(env, n):.1f})"
        )
    return out


def extinction_time_log_pmf_all(env: EnvironmentPath) -> np.ndarray:
    """ln P(T = n | env) for every n in 1..env.n at once."""
    with np.errstate(divide="ignore"):
        log_w = np.where(env.b_prefix > 0.0, np.log(env.b_prefix), NEG_INF)
    lse0 = np.logaddexp(-env.walk, env.b_shift + log_w)
    return -env.walk[:-1] + env.log_step_gap - lse0[:-1] - lse0[1:]


# ---------------------------------------------------------------------------
# segment scaling quantities


@dataclass(frozen=True)
class SegmentQuantities:
    """Survival ratios and the growth scale for segment (m, n) of one environment.

    alpha = (1-f_{0,m}(0)) / (1-f_{0,n}(0))                  >= 1
    beta  = (1-f_{0,n}(0)) / (e^{S_m} (1-f_{m,n}(0)))        <= 1
    growth_scale = (1-f_{0,n}(0))/(1-f_{m,n}(0)) * f_{m,n}(0) * b_m
    delta = ((1-f_{m,n-1}(0))/(1-f_{m,n}(0)))^2 * ((1-f_{0,n}(0))/(1-f_{0,n-1}(0)))^2
    """

    m: int
    n: int
    log_u_fwd: float  # ln(1 - f_{m,n}(0))
    log_u_fwd_prev: float  # ln(1 - f_{m,n-1}(0))
    log_u_full: float  # ln(1 - f_{0,n}(0))
    log_u_full_prev: float
    log_u_head: float  # ln(1 - f_{0,m}(0))
    log_growth_scale: float
    log_growth_scale_prev: float
    growth_scale_alt: float  # the subtractive representation, inf if unrepresentable
    alpha: float
    beta: float
    log_delta: float

    @property
    def u_fwd(self) -> float:
        return math.exp(self.log_u_fwd)

    @property
    def u_fwd_prev(self) -> float:
        return math.exp(self.log_u_fwd_prev)

    @property
    def u_full(self) -> float:
        return math.exp(self.log_u_full)

    @property
    def u_full_prev(self) -> float:
        return math.exp(self.log_u_full_prev)

    @property
    def u_head(self) -> float:
        return math.exp(self.log_u_head)

    @property
    def growth_scale(self) -> float:
        return math.exp(self.log_growth_scale)

    @property
    def growth_scale_prev(self) -> float:
        return math.exp(self.log_growth_scale_prev)

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)


def _log_growth_scale(env: EnvironmentPath, m: int, n: int, lse_mn: float, lse_0n: float) -> float:
    if m == 0 or m == n:
        return NEG_INF  # b_0 = 0, resp. f_{m,m}(0) = 0
    log_f = math.log1p(-math.exp(-lse_mn))
    return lse_mn - lse_0n + log_f + env.log_b(m)


def segment_quantities(env: EnvironmentPath, m: int, n: int) -> SegmentQuantities:
    """All scaling quantities for 0 <= m < n <= env.n."""
    if not 0 <= m < n <= env.n:
        raise ValueError(f"need 0 <= m < n <= {env.n}, got ({m}, {n})")
    s_arr = env.walk
    lse_mn = _seg_log_ab(env, m, n)
    lse_mn1 = _seg_log_ab(env, m, n - 1)
    lse_0n = _seg_log_ab(env, 0, n)
    lse_0n1 = _seg_log_ab(env, 0, n - 1)
    lse_0m = _seg_log_ab(env, 0, m)

    # alpha = 1 + sum_{j=m}^{n-1} step_gap_j e^{-S_j} / (A+B)_{0,m}: a sum of
    # positives over 1, so alpha >= 1 holds exactly in floating point
    expo = env.log_step_gap[m:n] - s_arr[m:n]
    top = expo.max()
    log_num = top + math.log(float(np.sum(np.exp(expo - top))))
    alpha = 1.0 + math.exp(log_num - lse_0m)

    # beta = 1 / (1 + e^{S_m} b_m / (A+B)_{m,n}) <= 1 exactly
    grow = s_arr[m] + env.log_b(m) - lse_mn if m >= 1 else NEG_INF
    beta = math.exp(-float(np.logaddexp(0.0, grow)))

    log_o = _log_growth_scale(env, m, n, lse_mn, lse_0n)
    log_o_prev = _log_growth_scale(env, m, n - 1, lse_mn1, lse_0n1)

    # subtractive representation (1/alpha) f/(1-f) - f*beta, where representable
    log_f_mn = math.log1p(-math.exp(-lse_mn))
    if lse_mn + log_f_mn < 700.0:
        f_over_u = math.exp(lse_mn + log_f_mn)
        alt = f_over_u / alpha - math.exp(log_f_mn) * beta
    else:
        alt = float("inf")

    # delta via exact 1 + d ratios: d = step_gap_{n-1} e^{-(S_{n-1}-S_m)} / (A+B)_{m,n-1}
    d_m = math.exp(-(s_arr[n - 1] - s_arr[m]) + env.log_step_gap[n - 1] - lse_mn1)
    d_0 = math.exp(-s_arr[n - 1] + env.log_step_gap[n - 1] - lse_0n1)
    log_delta = 2.0 * (math.log1p(d_m) - math.log1p(d_0))

    return SegmentQuantities(
        m=m,
        n=n,
        log_u_fwd=-lse_mn,
        log_u_fwd_prev=-lse_mn1,
        log_u_full=-lse_0n,
        log_u_full_prev=-lse_0n1,
        log_u_head=-lse_0m,
        log_growth_scale=log_o,
        log_growth_scale_prev=log_o_prev,
        growth_scale_alt=alt,
        alpha=alpha,
        beta=beta,
        log_delta=log_delta,
    )


# ---------------------------------------------------------------------------
# the conditional law of Z_m given extinction exactly at n


def _cond_pgf_from_logs(
    env: EnvironmentPath, m: int, n: int, log_s: float, log_one_minus_s: float
) -> float:
    log_a = -env.walk[m]
    log_b = _segment_log_bsum(env, 0, m)
    log_v1 = -_seg_log_ab(env, m, n)
    log_v2 = -_seg_log_ab(env, m, n - 1)

    def bracket(log_x: float) -> float:
        return float(np.logaddexp(log_a, log_b + log_x))

    lx1 = float(np.logaddexp(log_one_minus_s, log_s + log_v1))
    lx2 = float(np.logaddexp(log_one_minus_s, log_s + log_v2))
    log_e = log_s + bracket(log_v2) + bracket(log_v1) - bracket(lx2) - bracket(lx1)
    return math.exp(min(log_e, 0.0))


def _check_mn(env: EnvironmentPath, m: int, n: int) -> None:
    if not 1 <= m < n <= env.n:
        raise ValueError(
            f"conditional law needs 1 <= m < n <= {env.n}, got ({m}, {n})"
        )


def conditional_pgf(env: EnvironmentPath, m: int, n: int, s: float) -> float:
    """Exact E[s^{Z_m} | T = n] under the quenched law of this environment."""
    _check_mn(env, m, n)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    if s == 0.0:
        return 0.0
    if s == 1.0:
        return 1.0
    return _cond_pgf_from_logs(env, m, n, math.log(s), math.log1p(-s))


def _sandwich_from_logs(
    env: EnvironmentPath, m: int, n: int, log_s: float, log_one_minus_s: float
) -> tuple[float, float]:
    q = segment_quantities(env, m, n)
    if log_s == NEG_INF:
        return 0.0, 0.0
    pen_hi = float(np.logaddexp(0.0, log_one_minus_s + q.log_growth_scale))
    pen_lo = float(np.logaddexp(0.0, log_one_minus_s + q.log_growth_scale_prev))
    lower = math.exp(log_s - q.log_delta - 2.0 * pen_lo)
    upper = math.exp(log_s + q.log_delta - 2.0 * pen_hi)
    return lower, upper


def sandwich_bounds(env: EnvironmentPath, m: int, n: int, s: float) -> tuple[float, float]:
    """Two-sided envelope for conditional_pgf:

    s * delta^{-1} / (1 + (1-s) O_{m,n-1})^2  <=  E[s^{Z_m}|T=n]
                                              <=  s * delta / (1 + (1-s) O_{m,n})^2.
    At s = 1 this reduces to (delta^{-1}, delta) bracketing 1.
    """
    _check_mn(env, m, n)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s}")
    if s == 0.0:
        return 0.0, 0.0
    log_1ms = math.log1p(-s) if s < 1.0 else NEG_INF
    return _sandwich_from_logs(env, m, n, math.log(s), log_1ms)


def _laplace_arg_logs(lam: float, log_scale: float) -> tuple[float, float]:
    """(ln s, ln(1-s)) for s = exp(-lam/scale), stable for any magnitude of scale."""
    log_x = math.log(lam) - log_scale
    if log_x > -300.0:
        x = math.exp(log_x)
        log_s = -x
        if x >= math.log(2.0):
            log_1ms = math.log1p(-math.exp(-x))
        else:
            log_1ms = math.log(-math.expm1(-x))
    else:
        # 1 - e^{-x} = x to relative error x/2 < 1e-300
        log_s = -math.exp(log_x)
        log_1ms = log_x
    return log_s, log_1ms


def conditional_laplace(
    env: EnvironmentPath,
    m: int,
    n: int,
    lam: float,
    scale: float | None = None,
    log_scale: float | None = None,
) -> float:
    """E[exp(-lam * Z_m / scale) | T = n]; the scale may be passed as its log."""
    _check_mn(env, m, n)
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    if (scale is None) == (log_scale is None):
        raise ValueError("pass exactly one of scale / log_scale")
    if scale is not None:
        if not scale > 0.0:
            raise ValueError("scale must be positive")
        log_scale = math.log(scale)
    if lam == 0.0:
        return 1.0
    log_s, log_1ms = _laplace_arg_logs(lam, log_scale)
    return _cond_pgf_from_logs(env, m, n, log_s, log_1ms)


@dataclass(frozen=True)
class ConditionalLaw:
    """The quenched law of Z_m given T = n: a geometric mixed against two tails.

    P(Z = z | T = n) ∝ (1-c) c^{z-1} (s1^z - s2^z),  z >= 1, with
    c = B/(A+B) of the first m laws, s1 = f_{m,n}(0), s2 = f_{m,n-1}(0).
    """

    m: int
    n: int
    log_a: float
    log_b: float
    log_v1: float  # ln(1 - s1)
    log_v2: float  # ln(1 - s2)
    log_denom: float  # ln P(T = n)

    @cached_property
    def log_c(self) -> float:
        return self.log_b - float(np.logaddexp(self.log_a, self.log_b))

    @cached_property
    def log_one_minus_c(self) -> float:
        return self.log_a - float(np.logaddexp(self.log_a, self.log_b))

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @property
    def s1(self) -> float:
        return -math.expm1(self.log_v1)

    @property
    def s2(self) -> float:
        return -math.expm1(self.log_v2)

    @property
    def denom(self) -> float:
        return math.exp(self.log_denom)

    @cached_property
    def _ln_s1(self) -> float:
        return math.log1p(-math.exp(self.log_v1))

    @cached_property
    def _ln_d1(self) -> float:
        # d1 = 1 - c*s1 = (1-c) + c*v1
        return float(np.logaddexp(self.log_one_minus_c, self.log_c + self.log_v1))

    def _ln_g(self, z: np.ndarray) -> np.ndarray:
        """ln of (s1^{z+1} - s2^{z+1})/(s1 - s2), a sum of positives."""
        if self.log_v2 == 0.0:  # s2 = 0
            return z * self._ln_s1
        ln_s2 = math.log1p(-math.exp(self.log_v2))
        lr = ln_s2 - self._ln_s1
        if lr == 0.0:
            raise NumericalBreakdownError("s1 and s2 coincide at float precision")
        return (
            z * self._ln_s1
            + np.log(-np.expm1((z + 1.0) * lr))
            - math.log(-math.expm1(lr))
        )

    def ln_tail(self, z: np.ndarray) -> np.ndarray:
        """ln P(Z > z | T = n), valid for real z >= 0 (monotone decreasing)."""
        z = np.asarray(z, dtype=np.float64)
        return z * self.log_c + np.logaddexp(
            self.log_c + (z + 1.0) * self._ln_s1,
            self._ln_d1 + self._ln_g(z),
        )

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Inverse-CDF draws via the closed-form tail; returns int or int64 array."""
        count = 1 if size is None else int(size)
        ubar = np.maximum(rng.random(count), 1e-300)
        ln_ubar = np.log(ubar)
        hi = 1
        worst = float(ln_ubar.min())
        while float(self.ln_tail(np.float64(hi))) > worst:
            hi *= 2
            if hi > 2**62:
                raise NumericalBreakdownError(
                    "conditional population quantile exceeds 2^62; not sampleable"
                )
        lo = np.zeros(count, dtype=np.int64)
        hi_v = np.full(count, hi, dtype=np.int64)
        while np.any(hi_v - lo > 1):
            mid = (lo + hi_v) // 2
            ok = self.ln_tail(mid.astype(np.float64)) <= ln_ubar
            hi_v = np.where(ok, mid, hi_v)
            lo = np.where(ok, lo, mid)
        return int(hi_v[0]) if size is None else hi_v


def conditional_law(env: EnvironmentPath, m: int, n: int) -> ConditionalLaw:
    _check_mn(env, m, n)
    log_a = -env.walk[m]
    log_b = _segment_log_bsum(env, 0, m)
    log_v1 = -_seg_log_ab(env, m, n)
    log_v2 = -_seg_log_ab(env, m, n - 1)
    if not log_v2 > log_v1:
        raise NumericalBreakdownError(
            f"extinction-time mass at n={n} vanished at float precision (m={m})"
        )
    log_diff = (
        -(env.walk[n - 1] - env.walk[m])
        + float(env.log_step_gap[n - 1])
        - _seg_log_ab(env, m, n - 1)
        - _seg_log_ab(env, m, n)
    )
    log_denom = (
        log_a
        + log_diff
        - float(np.logaddexp(log_a, log_b + log_v2))
        - float(np.logaddexp(log_a, log_b + log_v1))
    )
    return ConditionalLaw(
        m=m, n=n, log_a=log_a, log_b=log_b, log_v1=log_v1, log_v2=log_v2, log_denom=log_denom
    )


def sample_conditional_Z(
    env: EnvironmentPath, m: int, n: int, rng: np.random.Generator, size: int | None = None
):
    """Draw Z ~ (Z_m | T = n) under the quenched law; distribution matches conditional_pgf."""
    return conditional_law(env, m, n).sample(rng, size)
