import numpy as np
import pytest
from scipy import stats

from braggcomb import blochcore as bc
from braggcomb.process import start_state, step
from braggcomb.rates import escape_rate_quadrature, jump_rate, jump_rate_row, torus_kernel
from braggcomb.rng import substream

# sum over n of j(v) |kappa_v(20.2, n)|^2 with kappa from position-space quadrature
J_GOLDEN = {(20.9, 20.2): 0.24817635604961355, (-20.6, 20.2): 0.00011849821464402638}


@pytest.mark.parametrize("pair,val", J_GOLDEN.items())
def test_jump_rate_golden(comb, kick, pair, val):
    assert jump_rate(pair[0], pair[1], kick, comb) == pytest.approx(val, rel=1e-9)


def test_jump_rate_row_matches_scalar(comb, kick):
    ks = np.array([19.0, 20.45, 21.7, -20.1])
    row = jump_rate_row(ks, 20.2, kick, comb)
    assert np.allclose(row, [jump_rate(k, 20.2, kick, comb) for k in ks], rtol=0, atol=0)


@pytest.mark.parametrize("k", [10.2, -17.8, 33.3])
def test_escape_rate_is_R(comb, kick, k):
    assert escape_rate_quadrature(k, kick, comb) == pytest.approx(kick.rate_R, abs=1e-6)


def test_exact_step_histogram_chi2(comb, kick):
    """One Exact-law event from k = 40.3 against J(., 40.3)/R binned."""
    k0 = 40.3
    n = 40_000
    s0 = start_state(k0, "exact", comb, substream(17, 0))
    out = np.array([step(s0, "exact", kick, comb)[1].k_after for _ in range(n)])
    edges = np.linspace(k0 - 6, k0 + 6, 25)
    counts = np.histogram(out, bins=edges)[0]
    grid = [np.linspace(a, b, 801) for a, b in zip(edges[:-1], edges[1:])]
    probs = np.array([np.trapezoid(jump_rate_row(g, k0, kick, comb), g) for g in grid]) / kick.rate_R
    rest = n - counts.sum()
    f_obs = np.append(counts, rest)
    f_exp = np.append(probs, 1 - probs.sum()) * n
    assert stats.chisquare(f_obs, f_exp).pvalue > 1e-3
    # reflected fraction against the mass of J near -k0
    g = np.linspace(-k0 - 25, -k0 + 25, 200_001)
    p_refl = np.trapezoid(jump_rate_row(g, k0, kick, comb), g) / kick.rate_R
    refl = np.mean(out < 0)
    assert abs(refl - p_refl) <= 5 * np.sqrt(p_refl / n)


def test_torus_kernel(kick):
    T = torus_kernel(kick)
    th = np.linspace(-0.25, 0.249, 37)
    m = T.evaluate(th[:, None], th[None, :])
    assert np.array_equal(m, m.T)
    assert np.allclose(T.apply(lambda t: 2.0, [0.0, 0.13, -0.2]), 2.0, atol=1e-8)
    _, mat = T.matrix(64)
    assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-13)
    assert 0 < T.mixing_rate(64) < 1
    dev = T.deviation_decay(10, 64)
    assert dev[-1] < dev[0]
