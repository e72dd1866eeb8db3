"""Closed-form golden suite for the exact algebra (the deterministic critical
geometric environment makes every quantity rational)."""

from __future__ import annotations

import math

import numpy as np

from . import lf
from .env import EnvSpec, law_from_params, sample_environment
from .fluctuation import arcsine_cdf
from .rng import substream

_REL = 1e-12


def _close(got: float, want: float, rel: float = _REL) -> bool:
    return abs(got - want) <= rel * max(1.0, abs(want))


def run_selftest() -> list[tuple[str, bool, str]]:
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str = ""):
        checks.append((name, bool(ok), detail))

    law = law_from_params(0.5, 0.0)
    check("law(1/2,0): x=0, eta=2", _close(law.x, 0.0) and _close(law.eta, 2.0),
          f"x={law.x!r} eta={law.eta!r}")
    law2 = law_from_params(0.5, 0.5)
    check("law(1/2,1/2): x=ln(1/2), eta=4",
          _close(law2.x, math.log(0.5)) and _close(law2.eta, 4.0),
          f"x={law2.x!r} eta={law2.eta!r}")

    m1 = lf.lf_of_law(law)
    check("map(1/2,0) = (1,1)", _close(m1.a, 1.0) and _close(m1.b, 1.0), f"({m1.a!r},{m1.b!r})")
    m2 = lf.lf_of_law(law2)
    check("map(1/2,1/2) = (2,2)", _close(m2.a, 2.0) and _close(m2.b, 2.0), f"({m2.a!r},{m2.b!r})")
    comp = lf.compose(lf.LFMap.from_ab(2, 1), lf.LFMap.from_ab(3, 4))
    check("compose((2,1),(3,4)) = (6,9)", _close(comp.a, 6.0) and _close(comp.b, 9.0),
          f"({comp.a!r},{comp.b!r})")

    spec = EnvSpec("critical-geometric-deterministic")
    env = sample_environment(spec, 200, substream(0, 0))
    check("geometric env: walk = 0, b = 0..n",
          bool(np.all(env.walk == 0.0)) and bool(np.allclose(env.b, np.arange(201), rtol=_REL)))
    seg = lf.segment_map(env, 0, 5)
    check("segment (0,5) = (1,5)", _close(seg.a, 1.0) and _close(seg.b, 5.0),
          f"({seg.a!r},{seg.b!r})")
    check("f_{0,5}(0) = 5/6", _close(lf.eval_f(seg, 0.0), 5.0 / 6.0))
    check("survival at s=1 is exactly 0", lf.eval_survival(seg, 1.0) == 0.0)
    check("P(T=3) = 1/12", _close(lf.extinction_time_pmf(env, 3), 1.0 / 12.0))

    q = lf.segment_quantities(env, 5, 10)
    check("O_{5,10} = 25/11", _close(q.growth_scale, 25.0 / 11.0), f"{q.growth_scale!r}")
    check("alpha = 11/6", _close(q.alpha, 11.0 / 6.0), f"{q.alpha!r}")
    check("beta = 6/11", _close(q.beta, 6.0 / 11.0), f"{q.beta!r}")
    check("delta = 144/121", _close(q.delta, 144.0 / 121.0), f"{q.delta!r}")

    val = lf.conditional_pgf(env, 1, 2, 0.5)
    check("E[s^{Z_1}|T=2] at s=1/2 is 3/7", _close(val, 3.0 / 7.0), f"{val!r}")
    lo, hi = lf.sandwich_bounds(env, 5, 10, 0.5)
    mid = lf.conditional_pgf(env, 5, 10, 0.5)
    check("bracket at (5,10,1/2)", lo <= mid <= hi, f"{lo!r} <= {mid!r} <= {hi!r}")
    check("bracket exact value 11/94", _close(mid, 11.0 / 94.0), f"{mid!r}")

    lpmf = lf.extinction_time_log_pmf_all(env)
    total = float(np.exp(lpmf).sum()) + lf.horizon_survival(env, env.n)
    check("sum pmf + P(T>N) = 1", abs(total - 1.0) < 1e-10, f"{total!r}")

    check("arcsine_cdf(1/2, 1/2) = 1/2", _close(arcsine_cdf(0.5, 0.5), 0.5))
    return checks
