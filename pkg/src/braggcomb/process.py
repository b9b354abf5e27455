"""Event-driven Monte Carlo of the momentum process.

Between Poisson times (rate R) the momentum is constant, so Y_t = int K dr is
accumulated exactly. At each Poisson time a kick v ~ j/R is followed by a
lattice jump whose law depends on the variant:

    exact      categorical over |kappa_v(k, n)|^2
    twostep    four jumps with probabilities r_(+/-)(k) r_(+/-)(k+v)
    onestep    -n(k+v) with probability R_-(k+v), plus a jump at t = 0+
    band       sign flip of k+v with probability 1/2 inside bands of half-width w_n
    free       no lattice jump
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import blochcore as bc
from .blochcore import CombParams, band_index, bloch_state, kappa_amp, nudge
from .kicklaw import KickLaw, _sample_kick, build_kick_law
from .rng import substream

EXACT, ONESTEP, TWOSTEP, BAND, FREE = 0, 1, 2, 3, 4
LAW_NAMES = {"exact": EXACT, "onestep": ONESTEP, "twostep": TWOSTEP,
             "band": BAND, "free": FREE}
SCAN_CAP = 4096

EXIT_NONE, EXIT_FLIP, EXIT_BAND = 0, 1, 2


@dataclass(frozen=True)
class ProcessLaw:
    variant: str = "exact"
    vartheta: float = 0.5

    def __post_init__(self):
        if self.variant not in LAW_NAMES:
            raise ValueError(f"unknown law {self.variant!r}; expected one of {sorted(LAW_NAMES)}")
        if self.variant == "band" and not (0 < self.vartheta <= 1):
            raise ValueError("BandModel vartheta must lie in (0, 1]")

    @property
    def code(self):
        return LAW_NAMES[self.variant]

    @classmethod
    def parse(cls, spec):
        """Accept "exact", "band", "band(0.8)" or {"variant": ..., "vartheta": ...}."""
        if isinstance(spec, ProcessLaw):
            return spec
        if isinstance(spec, dict):
            return cls(spec.get("variant", "exact"), float(spec.get("vartheta", 0.5)))
        s = str(spec).strip().lower()
        if s.startswith("band(") and s.endswith(")"):
            return cls("band", float(s[5:-1]))
        return cls(s)


def band_half_width(n, alpha, vartheta):
    """w_n = alpha |n|^(-2 vartheta) 2^(2 vartheta - 1); alpha/|n| at vartheta = 1/2."""
    return alpha * abs(n) ** (-2 * vartheta) * 2 ** (2 * vartheta - 1)


# ---------------------------------------------------------------- lattice jumps

@njit(cache=True)
def _sgn(x):
    return 1.0 if x >= 0.0 else -1.0


@njit(cache=True)
def _exact_jump(k, st, x, alpha, u):
    """Sample n ~ |kappa_v(k, n)|^2 with v = x - k; returns (n, state at x + n).

    The special set I(k, v) is tried first; with the remaining probability
    the complement is scanned outward from the special indices. Unitarity
    makes the complement mass exactly 1 - sum_I, so no row is truncated.
    """
    v = x - k
    raw = bc.special_set(k, v)
    cen = np.empty(4, dtype=np.int64)
    nc = 0
    for i in range(4):
        dup = False
        for j in range(nc):
            if cen[j] == raw[i]:
                dup = True
        if not dup:
            cen[nc] = raw[i]
            nc += 1
    cum = 0.0
    best_w = -1.0
    best_n = 0
    for i in range(nc):
        n = cen[i]
        st2 = bloch_state(x + n, alpha)
        a = kappa_amp(k, st, v, n, st2)
        w = a.real * a.real + a.imag * a.imag
        cum += w
        if w > best_w:
            best_w = w
            best_n = n
        if u < cum:
            return n, st2
    rest = 1.0 - cum
    target = u - cum
    if rest <= 0.0:
        return best_n, bloch_state(x + best_n, alpha)
    for attempt in range(2):
        acc = 0.0
        for d in range(1, SCAN_CAP + 1):
            for i in range(nc):
                for s in range(2):
                    n = cen[i] - d if s == 0 else cen[i] + d
                    seen = False
                    for j in range(nc):
                        dj = abs(n - cen[j])
                        if dj < d or (dj == d and j < i):
                            seen = True
                    if seen:
                        continue
                    st2 = bloch_state(x + n, alpha)
                    a = kappa_amp(k, st, v, n, st2)
                    acc += a.real * a.real + a.imag * a.imag
                    if target < acc:
                        return n, st2
        # mass beyond the scan: spread proportionally over what was scanned
        target = target * acc / rest
    return best_n, bloch_state(x + best_n, alpha)


@njit(cache=True)
def _band_hit(x, alpha, vartheta):
    w1 = alpha * 2.0 ** (2.0 * vartheta - 1.0)
    # only the nearest half-integer can qualify once every w_n with a
    # competing candidate (distance >= 1/4) is below 1/4
    nmax = (4.0 * w1) ** (0.5 / vartheta)
    if abs(x) > 0.5 * nmax + 1.0:
        n0 = math.floor(2.0 * x + 0.5)
        if vartheta == 0.5:
            w = alpha / abs(n0)
        else:
            w = w1 * abs(n0) ** (-2.0 * vartheta)
        return abs(x - 0.5 * n0) <= w
    lo = math.floor(2.0 * (x - w1))
    hi = math.ceil(2.0 * (x + w1))
    for n in range(lo, hi + 1):
        if n == 0:
            continue
        w = alpha * abs(n) ** (-2.0 * vartheta) * 2.0 ** (2.0 * vartheta - 1.0)
        if abs(x - 0.5 * n) <= w:
            return True
    return False


@njit(cache=True, inline="always")
def _lattice(gen, law, k, st, x, alpha, vartheta):
    """Apply the lattice component after the kick k -> x = k + v."""
    if law == EXACT:
        return _exact_jump(k, st, x, alpha, gen.random())
    if law == FREE:
        return 0, st
    if law == BAND:
        if _band_hit(x, alpha, vartheta):
            if gen.random() < 0.5:
                return 0, (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)  # marker: flip sign
        return 1, st  # marker: keep
    if law == ONESTEP:
        nx = band_index(x)
        r = bc.r_minus_k(x, alpha)
        if gen.random() < 2.0 * r * (1.0 - r):
            return -nx, st
        return 0, st
    # twostep
    nk = band_index(k)
    nx = band_index(x)
    rk = bc.r_minus_k(k, alpha)
    rx = bc.r_minus_k(x, alpha)
    u = gen.random()
    p = rk * (1.0 - rx)
    if u < p:
        return -nk, st
    p += (1.0 - rk) * rx
    if u < p:
        return -nx, st
    p += rk * rx
    if u < p:
        return nk - nx, st
    return 0, st


@njit(cache=True, inline="always")
def _event(gen, law, k, st, alpha, vartheta, code, scale, tx, ty):
    """One kick plus lattice jump from k; returns (k', state at k')."""
    v = _sample_kick(gen, code, scale, tx, ty)
    if law == FREE:
        return k + v, st
    if law == BAND:
        x = k + v
        flag, _ = _lattice(gen, law, k, st, x, alpha, vartheta)
        return (-x if flag == 0 else x), st
    x = nudge(k + v)
    n, st2 = _lattice(gen, law, k, st, x, alpha, vartheta)
    if law == EXACT:
        return x + n, st2
    return x + n, st


@njit(cache=True)
def _energy(k, law, alpha):
    if law == FREE:
        return k * k
    q, it = bc.solve_q_fast(nudge(k), alpha)
    return q * q


@njit(cache=True)
def _initial(gen, law, k0, alpha):
    k = nudge(k0) if law != FREE and law != BAND else k0
    if law == ONESTEP:
        if gen.random() < bc.r_minus_k(k, alpha):
            k = k - band_index(k)
    return k


@njit(cache=True)
def _trajectory(gen, law, alpha, vartheta, rate, code, scale, tx, ty, k0,
                snap_t, out_k, out_y, out_e,
                flip_t, flip_kb, flip_ka, log_t, log_k):
    """Simulate to snap_t[-1]; fill snapshots, flips and an optional event log.

    A flip at t_n is recorded when the run of consecutive sign changes ending
    at t_n has odd length and the next Poisson time keeps the sign.
    Returns (events, flips, logged).
    """
    k = _initial(gen, law, k0, alpha)
    st = bloch_state(k, alpha) if law == EXACT else (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    t = 0.0
    y = 0.0
    j = 0
    nsnap = snap_t.shape[0]
    t_end = snap_t[nsnap - 1]
    nev = 0
    nflip = 0
    nlog = 0
    if log_t.shape[0] > 0:
        log_t[0] = 0.0
        log_k[0] = k
        nlog = 1
    run = 0
    last_t = 0.0
    last_kb = k
    last_ka = k
    while True:
        dt = gen.standard_exponential() / rate
        while j < nsnap and t + dt >= snap_t[j]:
            out_k[j] = k
            out_y[j] = y + k * (snap_t[j] - t)
            out_e[j] = _energy(k, law, alpha)
            j += 1
        if j >= nsnap:
            break
        y += k * dt
        t += dt
        kb = k
        k, st = _event(gen, law, k, st, alpha, vartheta, code, scale, tx, ty)
        nev += 1
        if nlog < log_t.shape[0]:
            log_t[nlog] = t
            log_k[nlog] = k
            nlog += 1
        if _sgn(k) != _sgn(kb):
            if run == 0:
                last_kb = kb
            run += 1
            last_t = t
            last_ka = k
        else:
            if run % 2 == 1:
                if nflip < flip_t.shape[0]:
                    flip_t[nflip] = last_t
                    flip_kb[nflip] = last_kb
                    flip_ka[nflip] = last_ka
                nflip += 1
            run = 0
    return nev, nflip, nlog


@njit(cache=True)
def _trial(gen, law, alpha, vartheta, rate, code, scale, tx, ty, k0, max_events):
    """First sign-flip or exit from [|k0|/2, 3|k0|/2], first jump sign-preserving."""
    k = _initial(gen, law, k0, alpha)
    st = bloch_state(k, alpha) if law == EXACT else (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    a0 = abs(k0)
    t = 0.0
    run = 0
    last_t = 0.0
    last_k = k
    first = True
    for i in range(max_events):
        t += gen.standard_exponential() / rate
        kb = k
        if first:
            # resample the first jump until it keeps the sign
            while True:
                kn, stn = _event(gen, law, kb, st, alpha, vartheta, code, scale, tx, ty)
                if _sgn(kn) == _sgn(kb):
                    break
            k, st = kn, stn
            first = False
        else:
            k, st = _event(gen, law, k, st, alpha, vartheta, code, scale, tx, ty)
        if _sgn(k) != _sgn(kb):
            run += 1
            last_t = t
            last_k = k
        else:
            if run % 2 == 1:
                return last_t, last_k, EXIT_FLIP, i
            run = 0
        if abs(k) < 0.5 * a0 or abs(k) > 1.5 * a0:
            return t, k, EXIT_BAND, i
    return t, k, EXIT_NONE, max_events


# ---------------------------------------------------------------- Python layer

@dataclass
class TrajectoryState:
    t: float
    k: float
    y: float = 0.0
    events: int = 0
    flips: int = 0
    run: int = 0
    last_sign: float = 1.0
    rng: np.random.Generator = field(default=None, repr=False)


@dataclass(frozen=True)
class EventRecord:
    t: float
    dt: float
    k_before: float
    k_after: float
    sign_change: bool


def _law_args(law, comb, kick):
    alpha = comb.alpha if comb is not None else 1.0
    return (law.code, alpha, law.vartheta, kick.rate_R, kick.code, kick.scale,
            kick.table_x, kick.table_y)


def start_state(k0, law, comb, rng):
    """Trajectory state at t = 0 (applies the nudge and the one-step 0+ jump)."""
    law = ProcessLaw.parse(law)
    k = float(_initial(rng, law.code, float(k0), comb.alpha if comb else 1.0))
    return TrajectoryState(t=0.0, k=k, last_sign=float(_sgn(k)), rng=rng)


def step(state, law, kick, comb):
    """Advance one Poisson time; returns (new state, event record)."""
    law = ProcessLaw.parse(law)
    code, alpha, vt, rate, kc, ks, tx, ty = _law_args(law, comb, kick)
    g = state.rng
    dt = g.standard_exponential() / rate
    st = bloch_state(state.k, alpha) if code == EXACT else (0.0,) * 6
    k_new, _ = _event(g, code, state.k, st, alpha, vt, kc, ks, tx, ty)
    k_new = float(k_new)
    change = _sgn(k_new) != _sgn(state.k)
    new = TrajectoryState(t=state.t + dt, k=k_new, y=state.y + state.k * dt,
                          events=state.events + 1, flips=state.flips,
                          run=state.run + 1 if change else 0,
                          last_sign=float(_sgn(k_new)), rng=g)
    if not change and state.run % 2 == 1:
        new.flips += 1
    return new, EventRecord(new.t, dt, state.k, k_new, bool(change))


@dataclass
class EnsembleSummary:
    law: ProcessLaw
    k0: float
    times: np.ndarray
    k: np.ndarray          # (n_traj, n_times)
    y: np.ndarray
    energy: np.ndarray
    events: np.ndarray
    flip_counts: np.ndarray
    flips: list            # per trajectory: array of (tau, k_before, k_after)
    logs: list             # per trajectory: (t, k) arrays or None
    seed: int
    alpha: float
    kick: KickLaw = field(repr=False, default=None)

    @property
    def n_traj(self):
        return self.k.shape[0]


def _chunk(args):
    (lo, hi, seed, law, alpha, vt, rate, kc, ks, tx, ty, k0, times, flip_cap, log_cap) = args
    nt = times.shape[0]
    out_k = np.empty((hi - lo, nt))
    out_y = np.empty((hi - lo, nt))
    out_e = np.empty((hi - lo, nt))
    nev = np.empty(hi - lo, dtype=np.int64)
    nfl = np.empty(hi - lo, dtype=np.int64)
    flips, logs = [], []
    for i in range(lo, hi):
        g = substream(seed, i)
        ft, fb, fa = np.empty(flip_cap), np.empty(flip_cap), np.empty(flip_cap)
        lt, lk = np.empty(log_cap), np.empty(log_cap)
        r = i - lo
        ne, nf, nl = _trajectory(g, law, alpha, vt, rate, kc, ks, tx, ty, k0, times,
                                 out_k[r], out_y[r], out_e[r], ft, fb, fa, lt, lk)
        nev[r] = ne
        nfl[r] = nf
        m = min(nf, flip_cap)
        flips.append(np.stack([ft[:m], fb[:m], fa[:m]], axis=1) if flip_cap else None)
        logs.append((lt[:nl].copy(), lk[:nl].copy()) if log_cap else None)
    return lo, out_k, out_y, out_e, nev, nfl, flips, logs


def default_jobs():
    try:
        return max(1, int(os.environ.get("BRAGG_JOBS", "1")))
    except ValueError:
        return 1


def run_ensemble(law="exact", k0=20.3, times=(50.0,), n_traj=1000, seed=1,
                 comb=None, kick=None, jobs=None, flip_cap=0, log_cap=0):
    """Simulate ``n_traj`` independent trajectories and record snapshots.

    Trajectory i always uses substream (seed, i), so results do not depend on
    ``jobs``. ``flip_cap`` / ``log_cap`` bound the per-trajectory flip list and
    event log (0 disables them).
    """
    law = ProcessLaw.parse(law)
    comb = comb or CombParams(1.0)
    kick = kick or build_kick_law()
    times = np.asarray(sorted(float(t) for t in np.atleast_1d(times)), dtype=float)
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if times.size == 0 or times[0] < 0 or times[-1] <= 0:
        raise ValueError("snapshot times must be nonnegative with a positive horizon")
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    code, alpha, vt, rate, kc, ks, tx, ty = _law_args(law, comb, kick)
    bounds = np.linspace(0, n_traj, min(jobs, n_traj) + 1).astype(int)
    tasks = [(int(a), int(b), seed, code, alpha, vt, rate, kc, ks, tx, ty, float(k0), times,
              int(flip_cap), int(log_cap)) for a, b in zip(bounds[:-1], bounds[1:])]
    if jobs == 1:
        parts = [_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_chunk, tasks))
    parts.sort(key=lambda p: p[0])
    cat = lambda i: np.concatenate([p[i] for p in parts])
    flips = [f for p in parts for f in p[6]]
    logs = [lg for p in parts for lg in p[7]]
    return EnsembleSummary(law=law, k0=float(k0), times=times, k=cat(1), y=cat(2),
                           energy=cat(3), events=cat(4), flip_counts=cat(5), flips=flips,
                           logs=logs, seed=int(seed), alpha=alpha, kick=kick)


def reflection_trial(k0, law, kick, comb, stream, max_events=10_000_000):
    """One reflection-time trial; returns (tau, K_tau, exit_reason)."""
    law = ProcessLaw.parse(law)
    if abs(k0) < 10:
        raise ValueError("|k0| must be at least 10")
    code, alpha, vt, rate, kc, ks, tx, ty = _law_args(law, comb, kick)
    tau, kt, why, _ = _trial(stream, code, alpha, vt, rate, kc, ks, tx, ty, float(k0), max_events)
    return float(tau), float(kt), {EXIT_FLIP: "flip", EXIT_BAND: "exit", EXIT_NONE: "cap"}[why]


def reflection_times(k0, law, n_trials, seed, comb=None, kick=None, tag=7):
    """Vectorised harness over ``n_trials`` substreams; returns tau, K_tau, reasons."""
    law = ProcessLaw.parse(law)
    comb = comb or CombParams(1.0)
    kick = kick or build_kick_law()
    code, alpha, vt, rate, kc, ks, tx, ty = _law_args(law, comb, kick)
    tau = np.empty(n_trials)
    kt = np.empty(n_trials)
    why = np.empty(n_trials, dtype=np.int64)
    for i in range(n_trials):
        g = substream(seed, i, tag)
        tau[i], kt[i], why[i], _ = _trial(g, code, alpha, vt, rate, kc, ks, tx, ty,
                                          float(k0), 10_000_000)
    return tau, kt, why


def levy_sample(kick, t, n, seed, k0=0.0, tag=13):
    """Exact draws of k0 + L_t for the free compound-Poisson process.

    Laplace kicks use Gamma(N, b) - Gamma(N, b) with N ~ Poisson(R t); other
    families sum N kicks directly.
    """
    g = substream(seed, 0, tag)
    counts = g.poisson(kick.rate_R * t, size=n)
    if kick.code == 0:
        out = np.zeros(n)
        pos = counts > 0
        out[pos] = (g.gamma(counts[pos], kick.scale) - g.gamma(counts[pos], kick.scale))
        return k0 + out
    return k0 + np.array([kick.sample(g, int(c)).sum() if c else 0.0 for c in counts])


# ---------------------------------------------------------------- post-processing

def detect_sign_flips(times, ks, k0=None):
    """Flip times from an event log: odd runs of sign changes followed by a keep.

    ``times``/``ks`` list the Poisson times and the momentum right after each;
    if ``k0`` is given it is the momentum before the first listed event.
    The last event has no lookahead, so a run ending there is not reported.
    """
    times = np.asarray(times, dtype=float)
    ks = np.asarray(ks, dtype=float)
    if k0 is None:
        times, prev, ks = times[1:], ks[:-1], ks[1:]
    else:
        prev = np.concatenate([[k0], ks[:-1]])
    s_prev = np.where(prev >= 0, 1, -1)
    s_now = np.where(ks >= 0, 1, -1)
    change = s_prev != s_now
    out = []
    run = 0
    for i in range(len(ks)):
        if change[i]:
            run += 1
        else:
            if run % 2 == 1:
                out.append(times[i - 1])
            run = 0
    return np.asarray(out)


@dataclass
class ExcursionTracker:
    """Incursion/excursion times for the thresholds t^(3/8 - iota) and twice that."""

    t_horizon: float
    iota: float = 0.0
    low: float = field(init=False)
    high: float = field(init=False)

    def __post_init__(self):
        self.low = self.t_horizon ** (3.0 / 8.0 - self.iota)
        self.high = 2.0 * self.low

    def scan(self, times, ks):
        """Return (varpi, varsigma): entry times below ``low``, exit times above ``high``."""
        varpi, vsig = [], []
        inside = False
        for t, k in zip(times, ks):
            a = abs(k)
            if not inside and a <= self.low:
                varpi.append(t)
                inside = True
            elif inside and a >= self.high:
                vsig.append(t)
                inside = False
        return np.asarray(varpi), np.asarray(vsig)


def occupation_stats(times, ks, t_end, epsilon, rho1, comb=None, free=False):
    """Fraction of [0, t_end] with E(K)^(1/2) <= epsilon t_end^rho1 on a step path."""
    times = np.asarray(times, dtype=float)
    ks = np.asarray(ks, dtype=float)
    if times.size == 0 or times[0] != 0.0:
        raise ValueError("log must start at t = 0")
    keep = times < t_end
    t0 = times[keep]
    kk = ks[keep]
    dur = np.diff(np.append(t0, t_end))
    if free or comb is None:
        root_e = np.abs(kk)
    else:
        root_e = np.sqrt(bc.dispersion(kk, comb))
    thr = epsilon * t_end ** rho1
    return float(np.sum(dur[root_e <= thr]) / t_end)
