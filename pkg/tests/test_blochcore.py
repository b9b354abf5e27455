import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from braggcomb import blochcore as bc
from braggcomb.errors import HalfIntegerInput, WindowTooSmall

# frozen from scipy.optimize.brentq on the raw Kronig-Penney relation (alpha = 1)
Q_GOLDEN = {7.3: 7.310747567624147, 0.2: 0.36935164768333756, 3.9: 3.91845055382299}
# E(n/2+) - E(n/2-), upper edge root by brentq, lower edge q = n/2
GAP_GOLDEN = {1: 0.23704615575655608, 2: 0.2822315171411296, 5: 0.31059100743906054}

momenta = st.floats(-80, 80).filter(lambda k: abs(2 * k - round(2 * k)) > 1e-6)


@pytest.mark.parametrize("k,q", Q_GOLDEN.items())
def test_quasimomentum_golden(comb, k, q):
    assert bc.quasimomentum(k, comb) == pytest.approx(q, abs=1e-12)
    assert bc.quasimomentum(-k, comb) == pytest.approx(-q, abs=1e-12)


@pytest.mark.parametrize("n,g", GAP_GOLDEN.items())
def test_band_gap_golden(comb, n, g):
    assert bc.band_gap(n, comb) == pytest.approx(g, rel=1e-9)


def test_large_gap_approaches_alpha_over_pi(comb):
    assert bc.band_gap(100, comb) * math.pi == pytest.approx(1.0, abs=0.02)


@settings(max_examples=200, deadline=None)
@given(momenta)
def test_residual_and_bracket(k):
    comb = bc.CombParams(1.0)
    q = bc.quasimomentum(k, comb)
    assert abs(bc.kp_residual(abs(q), abs(k), 1.0)) <= 1e-12
    m = math.floor(2 * abs(k))
    assert 0.5 * m < abs(q) < 0.5 * m + 0.5
    assert math.copysign(1, q) == math.copysign(1, k)


@settings(max_examples=100, deadline=None)
@given(momenta)
def test_cached_q_matches_solver(k):
    comb = bc.CombParams(1.0)
    assert comb.q(k) == pytest.approx(bc.quasimomentum(k, comb), abs=1e-9)


def test_dispersion_monotone_and_even(comb):
    ks = np.linspace(0.013, 12.0, 2000)
    e = bc.dispersion(ks, comb)
    assert np.all(np.diff(e) > 0)
    assert np.array_equal(e, bc.dispersion(-ks, comb))


def test_half_integer_rejected_and_nudge(comb):
    with pytest.raises(HalfIntegerInput):
        bc.quasimomentum(2.5, comb)
    assert bc.nudge(2.5) == 2.5 + 1e-12
    assert bc.nudge(2.5 - 5e-13) == 2.5 + 1e-12
    assert bc.nudge(2.6) == 2.6
    bc.quasimomentum(bc.nudge(2.5), comb)  # nudged momenta are accepted


def test_min_phase_gap_positive(comb):
    g = bc.min_phase_gap(10, comb, density=50)
    assert 0 < g <= bc.band_gap(1, comb) + 1e-9


def test_band_coords():
    c = bc.band_coords(20.3)
    assert c.nhalf == 41 and c.theta == pytest.approx(-0.2)
    assert c.beta == pytest.approx(0.5 * 41 * -0.2)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 10))
def test_reflection_identities(beta, alpha):
    c = alpha / (4 * math.pi)
    rm = float(bc.r_minus_beta(beta, alpha))
    assert 0 < rm <= 0.5 + 1e-15
    assert 2 * rm * (1 - rm) == pytest.approx(0.5 * c * c / (beta * beta + c * c), rel=1e-9)


def test_r_minus_at_center():
    assert float(bc.r_minus_beta(0.0, 1.0)) == pytest.approx(0.5)


def test_pi_minus_integral():
    from scipy import integrate
    for alpha in (0.5, 1.0, 3.0):
        val, _ = integrate.quad(lambda x: bc.pi_minus(x, alpha), -np.inf, np.inf)
        assert val == pytest.approx(alpha / 2, rel=1e-8)
    assert bc.pi_minus(0.0, 1.0) == pytest.approx(2.0)


def test_eta_row_normalised(comb):
    row = bc.eta_row(20.3, (-200, 200), comb)
    assert np.sum(np.abs(row.coeffs) ** 2) + row.tail_bound == pytest.approx(1.0, abs=1e-12)
    assert row.tail_bound < 1e-3
    with pytest.raises(WindowTooSmall):
        bc.eta_row(20.3, (0, 10), comb)


def test_eta_matches_brute_force_series(comb):
    # eta(k, m) proportional to 1/((m + k)^2 - q^2) up to normalisation
    k = 7.3
    q = bc.quasimomentum(k, comb)
    ms = np.arange(-4000, 4001)
    raw = 1.0 / ((ms + k) ** 2 - q * q)
    raw = raw / np.sqrt(np.sum(raw ** 2))
    row = bc.eta_row(k, (-20, 5), comb)
    got = np.abs(row.coeffs)
    want = np.abs(raw[4000 - 20:4000 + 6])
    assert np.max(np.abs(got - want)) < 1e-6


def test_special_set():
    s = bc.special_set(20.3, 0.6)
    # n(20.3) = 41, n(20.9) = 42
    assert sorted(set(int(x) for x in s)) == sorted({0, -41, -42, 41 - 42})


@settings(max_examples=40, deadline=None)
@given(st.floats(10, 60), st.booleans(), st.floats(-3, 3))
def test_kappa_unitarity(k, neg, v):
    comb = bc.CombParams(1.0)
    k = -k if neg else k
    row = bc.kappa_row(k, v, comb, bc.TruncationPolicy(epsilon=1e-7))
    assert abs(row.weights.sum() - 1) <= 1e-6
    assert np.all(row.probabilities() >= 0)


@pytest.mark.parametrize("k,v", [(20.3, 0.6), (-33.7, -2.2), (12.1, 1.45)])
def test_kappa_matches_quadrature(comb, k, v):
    row = bc.kappa_row(k, v, comb)
    for n in row.special:
        amp = row.amplitudes[list(row.ns).index(n)]
        assert abs(amp - bc.kappa_oracle(row.k, row.v, n, comb)) < 1e-8


def test_kappa_zero_kick_is_identity(comb):
    row = bc.kappa_row(20.3, 0.0, comb)
    w = dict(zip(row.ns.tolist(), row.weights))
    assert w[0] == pytest.approx(1.0, abs=1e-12)


def test_bloch_function_has_bloch_property(comb):
    # psi(x + 2 pi) = e^{2 pi i k} psi(x) across the delta at x = 0
    k = 3.3
    xs = np.array([-2.0, -0.7])
    q = bc.quasimomentum(k, comb)
    p = bc._bloch_profile(k, q)
    for x in xs:
        assert p(x + 2 * math.pi) == pytest.approx(np.exp(2j * math.pi * k) * p(x), abs=1e-10)
