import numpy as np
import pytest
from hypothesis import settings

from bpre.env import EnvSpec, build_path, law_from_params
from bpre.rng import substream

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


GEOM = EnvSpec("critical-geometric-deterministic")


@pytest.fixture
def geom_env():
    from bpre.env import sample_environment

    return sample_environment(GEOM, 64, substream(0, 0))


def random_laws(rng, n, p_range=(0.25, 0.75), r_max=0.5):
    ps = rng.uniform(*p_range, n)
    rs = rng.uniform(0.0, r_max, n)
    return [law_from_params(float(p), float(r)) for p, r in zip(ps, rs)]


def env_from_laws(laws):
    return build_path(np.array([l.x for l in laws]), np.array([l.r for l in laws]))


def random_env(rng, n, **kw):
    return env_from_laws(random_laws(rng, n, **kw))


# ---------------------------------------------------------------------------
# brute-force quenched-chain oracle: direct probability-vector iteration with a
# population cap, sharing no code with the closed-form algebra


def offspring_pmf(p, r, cap):
    out = np.zeros(cap + 1)
    out[0] = r + (1.0 - r) * (1.0 - p)
    j = np.arange(1, cap + 1)
    out[1:] = (1.0 - r) * (1.0 - p) * p**j
    return out


def brute_step(pi, p, r, cap):
    """One generation: distribution of a sum of Z iid offspring, Z ~ pi."""
    f = offspring_pmf(p, r, cap)
    out = np.zeros(cap + 1)
    out[0] += pi[0]
    cur = np.array([1.0])
    for z in range(1, cap + 1):
        cur = np.convolve(cur, f)[: cap + 1]
        if pi[z] != 0.0:
            out += pi[z] * cur
    return out


def brute_distribution(laws, upto, cap):
    """P(Z_m = .) for m = 0..upto, starting from one individual."""
    pi = np.zeros(cap + 1)
    pi[1] = 1.0
    hist = [pi]
    for law in laws[:upto]:
        pi = brute_step(pi, law.p, law.r, cap)
        hist.append(pi)
    return hist


def brute_conditional_pgf(laws, m, n, s_values, cap):
    """E[s^{Z_m} | T = n] by chain iteration + per-line extinction splitting."""
    hist = brute_distribution(laws, m, cap)
    pi_m = hist[m]
    e = np.zeros(cap + 1)
    e[1] = 1.0
    for law in laws[m : n - 1]:
        e = brute_step(e, law.p, law.r, cap)
    e_prev = e[0]
    e = brute_step(e, laws[n - 1].p, laws[n - 1].r, cap)
    e_last = e[0]
    z = np.arange(cap + 1)
    mass = pi_m * (e_last**z - e_prev**z)
    den = mass.sum()
    return np.array([(mass * np.asarray(s) ** z).sum() / den for s in s_values]), den
