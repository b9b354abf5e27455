import math

import numpy as np
import pytest
from scipy import integrate, stats

from braggcomb.errors import AssumptionViolated
from braggcomb.kicklaw import build_kick_law
from braggcomb.rng import substream


def test_laplace_moments(kick):
    assert kick.rate_R == 1.0
    assert kick.sigma == pytest.approx(2.0)
    tot, _ = integrate.quad(lambda v: float(kick.density(v)), -np.inf, np.inf)
    sec, _ = integrate.quad(lambda v: float(kick.density(v)) * v * v, -np.inf, np.inf)
    assert tot == pytest.approx(kick.rate_R, rel=1e-10)
    assert sec == pytest.approx(kick.sigma, rel=1e-10)
    assert kick.mu >= 1.0 / float(kick.density(1.0))
    assert 0 < kick.exp_moment_a < 1.0


def test_laplace_sampler_matches_cdf(kick):
    x = kick.sample(substream(3, 0), 200_000)
    assert stats.ks_1samp(x, kick.cdf).pvalue > 1e-3
    assert np.mean(x * x) == pytest.approx(kick.sigma / kick.rate_R, rel=0.02)


def test_gaussian_mixture():
    law = build_kick_law({"family": "gaussian_mixture", "rate": 2.0,
                          "weights": [1, 3], "sigmas": [0.5, 2.0]})
    assert law.sigma == pytest.approx(2.0 * (0.25 * 0.25 + 0.75 * 4.0))
    x = law.sample(substream(4, 0), 100_000)
    assert stats.ks_1samp(x, law.cdf).pvalue > 1e-3


def test_tabulated_reproduces_laplace():
    v = np.linspace(0, 30, 30001)
    law = build_kick_law({"family": "tabulated", "v": v.tolist(), "j": (0.5 * np.exp(-v)).tolist()})
    assert law.rate_R == pytest.approx(1.0, rel=1e-6)
    assert law.sigma == pytest.approx(2.0, rel=1e-5)
    x = law.sample(substream(5, 0), 100_000)
    assert stats.ks_1samp(x, law.cdf).pvalue > 1e-3
    assert stats.ks_1samp(x, build_kick_law().cdf).pvalue > 1e-3


def test_assumption_three_violated():
    v = np.linspace(0, 5, 501)
    j = np.where(v < 1.5, 0.0, np.exp(-v))
    with pytest.raises(AssumptionViolated) as e:
        build_kick_law({"family": "tabulated", "v": v.tolist(), "j": j.tolist()})
    assert e.value.clause == 3


def test_bad_specs():
    with pytest.raises(ValueError):
        build_kick_law({"family": "cauchy"})
    with pytest.raises(ValueError):
        build_kick_law({"family": "laplace", "scale": -1})


def test_contracted_density_sums_images(kick):
    th = np.array([0.0, 0.1])
    n = np.arange(-200, 201)
    want = [float(np.sum(kick.density(t + 0.5 * n))) for t in th]
    assert np.allclose(kick.contracted(th), want, rtol=1e-12)
    # folded mass over one period of length 1/2 is R
    val, _ = integrate.quad(lambda t: float(kick.contracted(np.array([t]))[0]), -0.25, 0.25, points=[0.0])
    assert val == pytest.approx(kick.rate_R, rel=1e-8)
