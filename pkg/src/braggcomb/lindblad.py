"""Quantum trajectories on branching pure states in the extended-zone basis.

A realisation of the noise is a sequence of Poisson times and kicks. Between
kicks each extended-zone amplitude picks up the phase exp(-i dt E(k) / lambda);
a kick e^{ivX} maps |k> to sum_n kappa_v(k, n) |k + v + n>. Momenta in a
state share a real base and differ by integers, so a state is stored as
integer offsets with complex amplitudes.

Several lambda values can be carried along one kick sequence at once (the
kappa matrices do not depend on lambda). ``coupled`` comparisons also carry
the classical branch probabilities |kappa|^2 along the same sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, types
from numba.typed import Dict

from .blochcore import bloch_state, kappa_amp, nudge, solve_q_fast, special_set
from .errors import BranchExplosion
from .kicklaw import _sample_kick
from .rng import substream


@dataclass(frozen=True)
class BranchPolicy:
    threshold: float = 1e-10   # drop |a|^2 below this after each kick
    cap: int = 4096            # maximum support size
    half_width: int = 16       # kappa window half-width around each special index


@dataclass
class PureState:
    """Amplitudes on momenta base + offsets (one row per lambda)."""

    base: float
    offsets: np.ndarray
    amplitudes: np.ndarray          # (n_lambda, support) complex
    norm_deficit: np.ndarray        # (n_lambda,)
    classical: np.ndarray | None = None   # coupled classical probabilities
    classical_deficit: float = 0.0

    @classmethod
    def point(cls, k0, n_lambda=1, coupled=False):
        k0 = float(nudge(float(k0)))
        return cls(base=k0, offsets=np.zeros(1, dtype=np.int64),
                   amplitudes=np.ones((n_lambda, 1), dtype=np.complex128),
                   norm_deficit=np.zeros(n_lambda),
                   classical=np.ones(1) if coupled else None)

    @property
    def momenta(self):
        return self.base + self.offsets

    def weights(self, row=0):
        return np.abs(self.amplitudes[row]) ** 2

    def energy(self, comb, row=0):
        e = np.array([solve_q_fast(float(nudge(k)), comb.alpha)[0] ** 2 for k in self.momenta])
        return float(np.sum(self.weights(row) * e))


@njit(cache=True)
def _phase(base, offs, amps, dt, lams, alpha):
    for i in range(offs.shape[0]):
        q, _ = solve_q_fast(nudge(base + offs[i]), alpha)
        e = q * q
        for l in range(lams.shape[0]):
            ph = -dt * e / lams[l]
            amps[l, i] *= complex(math.cos(ph), math.sin(ph))


@njit(cache=True)
def _kick(base, offs, amps, probs, v, alpha, half):
    """Apply e^{ivX}; returns (offsets, amplitudes, probabilities) before truncation."""
    nb = base + v
    index = Dict.empty(key_type=types.int64, value_type=types.int64)
    targets = []
    for i in range(offs.shape[0]):
        k = base + offs[i]
        cen = special_set(k, v)
        for c in range(4):
            for j in range(cen[c] - half, cen[c] + half + 1):
                m = offs[i] + j
                if m not in index:
                    index[m] = len(targets)
                    targets.append(m)
    nt = len(targets)
    toff = np.empty(nt, dtype=np.int64)
    for i in range(nt):
        toff[i] = targets[i]
    states = np.empty((nt, 6))
    for i in range(nt):
        st = bloch_state(nudge(nb + toff[i]), alpha)
        for c in range(6):
            states[i, c] = st[c]
    nl = amps.shape[0]
    out = np.zeros((nl, nt), dtype=np.complex128)
    pout = np.zeros(nt)
    seen = Dict.empty(key_type=types.int64, value_type=types.int64)
    for i in range(offs.shape[0]):
        k = base + offs[i]
        st1 = bloch_state(k, alpha)
        cen = special_set(k, v)
        seen.clear()
        for c in range(4):
            for j in range(cen[c] - half, cen[c] + half + 1):
                if j in seen:
                    continue
                seen[j] = 1
                t = index[offs[i] + j]
                s = states[t]
                a = kappa_amp(k, st1, v, j, (s[0], s[1], s[2], s[3], s[4], s[5]))
                for l in range(nl):
                    out[l, t] += a * amps[l, i]
                pout[t] += (a.real * a.real + a.imag * a.imag) * probs[i]
    return toff, out, pout


def _truncate(offs, amps, probs, policy, coupled):
    w = np.abs(amps) ** 2
    keep = np.max(w, axis=0) >= policy.threshold
    if coupled:
        keep |= probs >= policy.threshold
    offs, amps, probs = offs[keep], amps[:, keep], probs[keep]
    if offs.shape[0] > policy.cap:
        raise BranchExplosion(f"support {offs.shape[0]} exceeds cap {policy.cap}")
    return offs, amps, probs


def evolve_pure_state(state, duration, kicks, lambdas, comb, policy=BranchPolicy()):
    """Evolve ``state`` over [0, duration] through time-ordered ``kicks`` [(t, v), ...].

    ``lambdas`` gives one value per amplitude row. Returns a new PureState.
    """
    lams = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if np.any(lams <= 0):
        raise ValueError("lambda must be positive")
    if lams.shape[0] != state.amplitudes.shape[0]:
        raise ValueError("one lambda per amplitude row expected")
    coupled = state.classical is not None
    base = state.base
    offs = state.offsets.copy()
    amps = state.amplitudes.copy()
    probs = state.classical.copy() if coupled else np.zeros(offs.shape[0])
    deficit = state.norm_deficit.copy()
    cdef = state.classical_deficit
    t = 0.0
    for tk, v in kicks:
        if tk < t or tk > duration:
            raise ValueError("kicks must be time-ordered within [0, duration]")
        _phase(base, offs, amps, tk - t, lams, comb.alpha)
        t = tk
        v = float(nudge(base + v)) - base
        offs, amps, probs = _kick(base, offs, amps, probs, v, comb.alpha, policy.half_width)
        base = base + v
        offs, amps, probs = _truncate(offs, amps, probs, policy, coupled)
        # renormalise; lost mass (window tails and dropped branches) goes to the deficit
        nrm = np.sum(np.abs(amps) ** 2, axis=1)
        deficit += (1.0 - deficit) * (1.0 - nrm)
        amps /= np.sqrt(nrm)[:, None]
        if coupled:
            ps = probs.sum()
            cdef += (1.0 - cdef) * (1.0 - ps)
            probs = probs / ps
    _phase(base, offs, amps, duration - t, lams, comb.alpha)
    return PureState(base, offs, amps, deficit, probs if coupled else None, cdef)


def draw_kicks(kick, duration, gen):
    """Poisson times of rate R on [0, duration] with kicks v ~ j/R."""
    out = []
    t = 0.0
    while True:
        t += gen.standard_exponential() / kick.rate_R
        if t > duration:
            return out
        out.append((t, float(_sample_kick(gen, kick.code, kick.scale, kick.table_x, kick.table_y))))


@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray       # one row per series

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def bin_edges(lo, hi, width=0.05):
    n = int(math.ceil((hi - lo) / width))
    return lo + width * np.arange(n + 1)


def _bin(edges, momenta, weights):
    idx = np.floor((momenta - edges[0]) / (edges[1] - edges[0])).astype(int)
    ok = (idx >= 0) & (idx < edges.shape[0] - 1)
    return np.bincount(idx[ok], weights=weights[ok], minlength=edges.shape[0] - 1)


def diagonal_histogram(states, edges, row=0):
    """Mean over realisations of the binned diagonal mass sum |a_k|^2."""
    h = np.zeros(edges.shape[0] - 1)
    for s in states:
        h += _bin(edges, s.momenta, s.weights(row) * (1.0 - s.norm_deficit[row]))
    return Histogram(edges, h / max(len(states), 1))


@dataclass
class CompareResult:
    lambdas: np.ndarray
    distances: np.ndarray
    errors: np.ndarray          # jackknife standard errors
    mode: str
    n: int
    seed: int
    mean_deficit: np.ndarray
    histograms: Histogram = field(repr=False, default=None)

    def ratios(self):
        return self.distances[1:] / self.distances[:-1]


def _l1(a, b):
    return float(np.sum(np.abs(a - b)))


def _jackknife_l1(q, c, blocks=20):
    """Block jackknife SE of L1(mean q, mean c); q, c are (n, bins) per-realisation masses."""
    n = q.shape[0]
    edges = np.linspace(0, n, blocks + 1).astype(int)
    tq, tc = q.sum(0), c.sum(0)
    vals = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = n - (b - a)
        vals.append(_l1((tq - q[a:b].sum(0)) / m, (tc - c[a:b].sum(0)) / m))
    vals = np.array(vals)
    return float(math.sqrt((blocks - 1) / blocks * np.sum((vals - vals.mean()) ** 2)))


def semiclassical_compare(lambdas=(0.2, 0.1, 0.05), t=5.0, k0=20.3, n=5000, seed=1,
                          comb=None, kick=None, mode="independent", width=0.05,
                          policy=BranchPolicy(), span=None):
    """L1 distance between the quantum diagonal and the classical law at time t.

    mode "independent": quantum realisations and an Exact-law classical
    ensemble on separate streams (what the limit theorem compares).
    mode "coupled" (experimental): classical branch probabilities propagated
    along the same kick sequences, so only interference separates the two.
    """
    from .blochcore import CombParams
    from .kicklaw import build_kick_law
    from .process import run_ensemble

    comb = comb or CombParams(1.0)
    kick = kick or build_kick_law()
    lams = np.asarray(sorted(lambdas, reverse=True), dtype=float)
    if mode not in ("independent", "coupled"):
        raise ValueError("mode must be 'independent' or 'coupled'")
    coupled = mode == "coupled"
    span = span or (abs(k0) + 12.0 * math.sqrt(kick.sigma * t + 1.0) + 4.0)
    edges = bin_edges(-span, span, width)
    nb = edges.shape[0] - 1
    q = np.zeros((lams.shape[0], n, nb))
    c = np.zeros((n, nb))
    defs = np.zeros(lams.shape[0])
    for i in range(n):
        g = substream(seed, i, tag=11)
        ks = draw_kicks(kick, t, g)
        s = evolve_pure_state(PureState.point(k0, lams.shape[0], coupled), t, ks, lams,
                              comb, policy)
        for l in range(lams.shape[0]):
            q[l, i] = _bin(edges, s.momenta, s.weights(l))
        if coupled:
            c[i] = _bin(edges, s.momenta, s.classical)
        defs += s.norm_deficit
    if not coupled:
        ens = run_ensemble("exact", k0, [t], n_traj=n, seed=seed, comb=comb, kick=kick)
        kt = ens.k[:, 0]
        idx = np.floor((kt - edges[0]) / width).astype(int)
        ok = (idx >= 0) & (idx < nb)
        c[np.nonzero(ok)[0], idx[ok]] = 1.0
    dist = np.array([_l1(q[l].mean(0), c.mean(0)) for l in range(lams.shape[0])])
    err = np.array([_jackknife_l1(q[l], c) for l in range(lams.shape[0])])
    hist = Histogram(edges, np.vstack([q.mean(1), c.mean(0)[None]]))
    return CompareResult(lams, dist, err, mode, n, seed, defs / n, hist)
