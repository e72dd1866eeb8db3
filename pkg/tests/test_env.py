import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bpre.env import (
    EnvSpec,
    build_path,
    estimate_rho,
    law_from_params,
    sample_environment,
)
from bpre.rng import substream

from conftest import GEOM


def test_law_golden_geometric():
    law = law_from_params(0.5, 0.0)
    assert law.x == pytest.approx(0.0, abs=1e-15)
    assert law.eta == 2.0
    assert law.p == pytest.approx(0.5)
    assert law.q == pytest.approx(0.5)


def test_law_golden_half_r():
    law = law_from_params(0.5, 0.5)
    assert law.x == pytest.approx(math.log(0.5), rel=1e-15)
    assert law.eta == 4.0


@pytest.mark.parametrize("p,r", [(0.0, 0.0), (1.0, 0.0), (-0.1, 0.0), (0.5, 1.0), (0.5, -0.01)])
def test_law_domain_errors(p, r):
    with pytest.raises(ValueError):
        law_from_params(p, r)


@given(
    p=st.floats(0.05, 0.95),
    r=st.floats(0.0, 0.9),
)
def test_law_derivatives_match_numerical_oracle(p, r):
    """f'(1) = e^x and f''(1)/f'(1)^2 = eta against high-precision differentiation."""
    law = law_from_params(p, r)
    with mpmath.workdps(40):
        f = lambda s: mpmath.mpf(r) + (1 - mpmath.mpf(r)) * (1 - mpmath.mpf(p)) / (
            1 - mpmath.mpf(p) * s
        )
        d1 = float(mpmath.diff(f, 1, n=1))
        d2 = float(mpmath.diff(f, 1, n=2))
    assert abs(d1 - math.exp(law.x)) < 1e-10 * max(1.0, d1)
    assert abs(d2 / d1**2 - law.eta) < 1e-10 * law.eta
    assert abs(float(f(1)) - 1.0) < 1e-12


def test_pgf_normalization_sampled_laws():
    rng = substream(3, 1)
    for spec in (EnvSpec("gaussian-X"), EnvSpec("skewed-stable-X", {"r_max": 0.4})):
        env = sample_environment(spec, 50, rng)
        for law in env.laws:
            if abs(law.x) > 30:
                continue  # p saturates in float64; the stored (x, r) stays exact
            assert law.pgf(1.0) == pytest.approx(1.0, abs=1e-12)
            d = (law.pgf(1.0) - law.pgf(1.0 - 1e-7)) / 1e-7
            assert d == pytest.approx(math.exp(law.x), rel=1e-5)


def test_geometric_environment_closed_form():
    env = sample_environment(GEOM, 5, substream(0, 1))
    assert np.all(env.walk == 0.0)
    np.testing.assert_allclose(env.b, [0, 1, 2, 3, 4, 5], rtol=1e-15)
    assert all(law.p == pytest.approx(0.5) and law.r == 0.0 for law in env.laws)


def test_environment_structure_n1():
    env = sample_environment(EnvSpec("laplace-X"), 1, substream(0, 2))
    assert len(env.walk) == 2 and env.walk[0] == 0.0
    assert env.b_prefix[0] == 0.0 and env.n == 1


def test_environment_rejects_bad_length():
    with pytest.raises(ValueError):
        sample_environment(GEOM, 0, substream(0, 3))


def test_gaussian_increment_mean_within_mc_band():
    n = 10_000
    env = sample_environment(EnvSpec("gaussian-X"), n, substream(4, 0))
    assert abs(env.x.mean()) < 4.0 / math.sqrt(n)


def test_prefix_consistency_reconstruction():
    rng = substream(5, 0)
    env = sample_environment(EnvSpec("skewed-stable-X", {"r_max": 0.3}), 200, rng)
    s = 0.0
    b = 0.0
    for k, law in enumerate(env.laws, start=1):
        assert env.walk[k] - env.walk[k - 1] == pytest.approx(law.x, abs=1e-12 * max(1, abs(law.x)))
        b_next = b + (law.eta / 2.0) * math.exp(-s)
        s += law.x
        stored = math.exp(env.b_shift) * env.b_prefix[k]
        assert stored == pytest.approx(b_next, rel=1e-12)
        b = b_next


def test_environment_determinism_and_serialization():
    spec = EnvSpec("gaussian-X", {"sigma": 2.0})
    a = sample_environment(spec, 128, substream(7, 1, 2))
    b = sample_environment(spec, 128, substream(7, 1, 2))
    assert a.serialize() == b.serialize()
    c = sample_environment(spec, 128, substream(7, 1, 3))
    assert a.serialize() != c.serialize()


def test_envspec_validation():
    with pytest.raises(ValueError):
        EnvSpec("no-such-preset")
    with pytest.raises(ValueError):
        EnvSpec("gaussian-X", {"bogus": 1.0})
    with pytest.raises(ValueError):
        EnvSpec("gaussian-X", {"sigma": -1.0})
    with pytest.raises(ValueError):
        EnvSpec("skewed-stable-X", {"alpha": 1.0})


def test_envspec_json_round_trip():
    spec = EnvSpec("skewed-stable-X", {"alpha": 1.7, "beta": -0.3}, target_rho=0.55)
    d = json.loads(json.dumps(spec.to_json_dict()))
    back = EnvSpec.from_json_dict(d)
    assert back == spec
    with pytest.raises(ValueError):
        EnvSpec.from_json_dict({"preset": "gaussian-X", "oops": 1})


def test_build_path_shape_checks():
    with pytest.raises(ValueError):
        build_path(np.array([]))
    with pytest.raises(ValueError):
        build_path(np.zeros(3), np.zeros(4))


def test_b_prefix_monotone_and_shifted():
    env = sample_environment(EnvSpec("gaussian-X"), 500, substream(11, 0))
    assert np.all(np.diff(env.b_prefix) > 0.0)
    assert env.b_shift == pytest.approx(-env.walk[:-1].min())


def test_estimate_rho_symmetric_presets():
    for i, spec in enumerate((EnvSpec("gaussian-X"), EnvSpec("laplace-X"), EnvSpec("symmetric-bernoulli-X"))):
        rho, se = estimate_rho(spec, 200, 300, substream(13, i))
        assert rho == pytest.approx(0.5, abs=4 * se + 0.01)


def test_estimate_rho_degenerate_walk_is_zero():
    rho, se = estimate_rho(GEOM, 64, 50, substream(13, 9))
    assert rho == 0.0
    assert GEOM.violates_positivity


def test_estimate_rho_skewed_stable_matches_closed_form():
    spec = EnvSpec("skewed-stable-X", {"alpha": 1.5, "beta": 0.5})
    rho, se = estimate_rho(spec, 256, 800, substream(13, 10))
    # strictly stable: P(S_k > 0) is the same for every k
    assert rho == pytest.approx(spec.rho_exact, abs=4 * se)


def test_rho_exact_values():
    assert EnvSpec("gaussian-X").rho_exact == 0.5
    assert EnvSpec("gaussian-X", {"mean": 0.3}).rho_exact is None
    assert GEOM.rho_exact == 0.0
    assert EnvSpec("skewed-stable-X", {"beta": 0.0}).rho_exact == pytest.approx(0.5)


def test_heavy_tail_log_mean_stays_exact():
    # stable preset produces |x| where p would round to 1.0; (x, r) must survive
    spec = EnvSpec("skewed-stable-X", {"alpha": 0.8, "beta": 0.0, "scale": 10.0})
    env = sample_environment(spec, 4000, substream(17, 0))
    assert np.all(np.isfinite(env.x))
    assert np.all(np.isfinite(env.walk))
