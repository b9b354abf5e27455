import numpy as np
import pytest

from braggcomb import blochcore as bc
from braggcomb.errors import BranchExplosion
from braggcomb.lindblad import (BranchPolicy, PureState, bin_edges, diagonal_histogram, draw_kicks,
                                evolve_pure_state, semiclassical_compare)
from braggcomb.rng import substream


def test_free_evolution_is_phase_only(comb):
    s = PureState.point(20.3, 2)
    out = evolve_pure_state(s, 3.0, [], [0.5, 0.1], comb)
    assert np.allclose(np.abs(out.amplitudes), 1.0)
    e = bc.dispersion(20.3, comb)
    assert np.angle(out.amplitudes[0, 0]) == pytest.approx(np.angle(np.exp(-1j * 3.0 * e / 0.5)), abs=1e-9)


def test_single_kick_matches_kappa_row(comb):
    s = PureState.point(20.3, 1, coupled=True)
    out = evolve_pure_state(s, 1.0, [(0.5, 0.6)], [0.2], comb)
    row = bc.kappa_row(20.3, 0.6, comb, bc.TruncationPolicy(epsilon=1e-12))
    w = dict(zip(np.round(row.k + row.v + row.ns, 9), row.weights))
    # weights were renormalised after the window cut; the lost mass is the deficit
    kept = 1.0 - out.norm_deficit[0]
    assert 0 < out.norm_deficit[0] < 1e-7
    for k, p, c in zip(out.momenta, out.weights(0), out.classical):
        assert p * kept == pytest.approx(w[round(k, 9)], abs=1e-12)
        assert c == pytest.approx(p, abs=1e-12)  # one kick: no interference yet


def test_norm_and_deficit(comb, kick):
    g = substream(3, 0)
    ks = draw_kicks(kick, 5.0, g)
    out = evolve_pure_state(PureState.point(20.3, 2, coupled=True), 5.0, ks, [0.2, 0.05], comb)
    assert np.allclose(np.sum(np.abs(out.amplitudes) ** 2, axis=1), 1.0)
    assert np.all(out.norm_deficit < 1e-5)
    assert out.classical.sum() == pytest.approx(1.0)


def test_energy_expectation(comb):
    s = PureState.point(3.3, 1)
    assert s.energy(comb) == pytest.approx(bc.dispersion(3.3, comb))


def test_branch_cap(comb, kick):
    ks = draw_kicks(kick, 5.0, substream(4, 0))
    with pytest.raises(BranchExplosion):
        evolve_pure_state(PureState.point(20.3), 5.0, ks, [0.1], comb,
                          BranchPolicy(threshold=1e-30, cap=40, half_width=16))


def test_input_validation(comb):
    with pytest.raises(ValueError):
        evolve_pure_state(PureState.point(1.3), 1.0, [], [-1.0], comb)
    with pytest.raises(ValueError):
        evolve_pure_state(PureState.point(1.3), 1.0, [(0.5, 0.1), (0.2, 0.1)], [1.0], comb)


def test_histogram_mass(comb):
    e = bin_edges(-2, 2)
    assert e.shape[0] == 81
    s = PureState.point(0.33)
    h = diagonal_histogram([s], e)
    assert h.mass.sum() == pytest.approx(1.0)
    assert h.centers[np.argmax(h.mass)] == pytest.approx(0.325)


@pytest.mark.parametrize("mode", ["independent", "coupled"])
def test_semiclassical_compare_shapes(comb, kick, mode):
    r = semiclassical_compare((0.2, 0.1), 2.0, 20.3, 60, 5, comb, kick, mode)
    assert list(r.lambdas) == [0.2, 0.1]
    assert r.distances.shape == (2,) and np.all(r.distances >= 0) and np.all(r.distances <= 2)
    assert r.ratios().shape == (1,)
    assert np.allclose(r.histograms.mass.sum(axis=1), 1.0, atol=1e-6)


def test_semiclassical_compare_reproducible(comb, kick):
    a = semiclassical_compare((0.1,), 1.0, 20.3, 20, 7, comb, kick, "coupled")
    b = semiclassical_compare((0.1,), 1.0, 20.3, 20, 7, comb, kick, "coupled")
    assert np.array_equal(a.distances, b.distances)
