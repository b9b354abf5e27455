import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from braggcomb.acceptance import brute_force_flips
from braggcomb.process import (ExcursionTracker, ProcessLaw, band_half_width, detect_sign_flips,
                               levy_sample, occupation_stats, reflection_times, reflection_trial,
                               run_ensemble, start_state, step)
from braggcomb.rng import substream


def test_law_parsing():
    assert ProcessLaw.parse("band(0.8)") == ProcessLaw("band", 0.8)
    assert ProcessLaw.parse({"variant": "twostep"}).variant == "twostep"
    with pytest.raises(ValueError):
        ProcessLaw.parse("quantum")
    with pytest.raises(ValueError):
        ProcessLaw("band", 1.5)


def test_band_half_width():
    assert band_half_width(7, 1.0, 0.5) == pytest.approx(1 / 7)
    assert band_half_width(7, 2.0, 1.0) == pytest.approx(2 * 2 / 49)


def test_substreams_independent_and_reproducible():
    a = substream(5, 3).random(4)
    assert np.array_equal(a, substream(5, 3).random(4))
    assert not np.array_equal(a, substream(5, 4).random(4))
    assert not np.array_equal(a, substream(5, 3, tag=1).random(4))


@pytest.mark.parametrize("law", ["exact", "onestep", "twostep", "band", "free"])
def test_ensemble_independent_of_jobs(comb, kick, law):
    a = run_ensemble(law, 20.3, [5.0, 30.0], 24, 9, comb, kick, jobs=1, flip_cap=16)
    b = run_ensemble(law, 20.3, [5.0, 30.0], 24, 9, comb, kick, jobs=2, flip_cap=16)
    for f in ("k", "y", "energy", "events", "flip_counts"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_free_law_is_levy(kick):
    t = 50.0
    ens = run_ensemble("free", 3.0, [t], 20_000, 2, kick=kick)
    k = ens.k[:, 0]
    assert np.mean(k) == pytest.approx(3.0, abs=4 * math.sqrt(kick.sigma * t / k.size))
    assert np.var(k) == pytest.approx(kick.sigma * t, rel=0.05)
    lev = levy_sample(kick, t, 200_000, 3, k0=3.0)
    assert np.var(lev) == pytest.approx(kick.sigma * t, rel=0.02)
    # Y_t = int K ds has variance sigma t^3 / 3 for a martingale from a fixed start
    assert np.var(ens.y[:, 0]) == pytest.approx(kick.sigma * t ** 3 / 3, rel=0.06)


def test_energy_snapshot_consistent(comb, kick):
    from braggcomb.blochcore import dispersion
    ens = run_ensemble("exact", 20.3, [10.0], 50, 4, comb, kick)
    assert np.allclose(ens.energy[:, 0], dispersion(ens.k[:, 0], comb), rtol=1e-10)


def test_step_api(comb, kick):
    s = start_state(20.3, "exact", comb, substream(1, 0))
    for _ in range(50):
        s2, ev = step(s, "exact", kick, comb)
        assert ev.k_before == s.k and ev.k_after == s2.k
        assert s2.y == pytest.approx(s.y + s.k * ev.dt)
        s = s2
    assert s.events == 50


def test_band_flip_rate(comb, kick):
    # BandModel(1/2): E[tau] nu / |k0| near 1
    tau, kt, why = reflection_times(50.0, "band", 3000, 5, comb, kick)
    x = tau * kick.rate_R * comb.alpha / 50.0
    assert np.mean(x) == pytest.approx(1.0, abs=0.08)
    assert set(np.unique(why)) <= {1, 2}


def test_reflection_trial_guards(comb, kick):
    with pytest.raises(ValueError):
        reflection_trial(5.0, "exact", kick, comb, substream(0, 0))
    tau, kt, why = reflection_trial(30.0, "band", kick, comb, substream(0, 0))
    assert tau > 0 and why in ("flip", "exit", "cap")


def test_flip_detector_examples():
    t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    # one change kept -> flip at t=1
    assert list(detect_sign_flips(t, [-1, -1, -1, -1, -1, -1], k0=1)) == [1.0]
    # two changes in a row cancel
    assert list(detect_sign_flips(t, [-1, 1, 1, 1, 1, 1], k0=1)) == []
    # three changes then a keep -> flip at the third
    assert list(detect_sign_flips(t, [-1, 1, -1, -1, 1, 1], k0=1)) == [3.0, 5.0]
    # a run at the very end has no lookahead
    assert list(detect_sign_flips(t, [1, 1, 1, 1, 1, -1], k0=1)) == []


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from([-2.0, -0.5, 0.5, 3.0]), min_size=1, max_size=40),
       st.sampled_from([-1.0, 1.0]))
def test_flip_detector_matches_definition(ks, k0):
    t = np.arange(1, len(ks) + 1, dtype=float)
    assert list(detect_sign_flips(t, ks, k0)) == brute_force_flips(list(t), ks, k0)


def test_ensemble_flips_match_detector(comb, kick):
    ens = run_ensemble("band", 0.5, [400.0], 20, 8, comb, kick, flip_cap=4096, log_cap=100_000)
    for (lt, lk), f in zip(ens.logs, ens.flips):
        det = detect_sign_flips(lt[1:], lk[1:], lk[0])
        # the detector cannot see a run closed by the first event after the horizon
        assert np.array_equal(det, f[: det.size, 0])
        assert f.shape[0] - det.size in (0, 1)


def test_excursion_tracker():
    tr = ExcursionTracker(2 ** 8)
    assert tr.low == pytest.approx(8.0) and tr.high == pytest.approx(16.0)
    varpi, vs = tr.scan([0, 1, 2, 3, 4], [20, 7, 12, 17, 3])
    assert list(varpi) == [1, 4] and list(vs) == [3]


def test_occupation_stats():
    frac = occupation_stats([0.0, 1.0, 3.0], [5.0, 0.5, 5.0], 4.0, 1.0, 0.0, free=True)
    assert frac == pytest.approx(0.5)
