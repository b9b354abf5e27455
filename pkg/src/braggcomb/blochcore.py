"""Spectral core of the periodic delta comb.

Quasimomentum and dispersion, band coordinates, reflection quantities, and
the Bloch (eta) and kick (kappa) coefficients. The coefficient sums over the
plane-wave index are evaluated in closed form with the cotangent identity

    sum_m 1/((m + x)(m + y)) = pi^2 sinc(y - x) / (sin(pi x) sin(pi y)),

so rows carry no truncation error in the inner sum. ``kappa_oracle`` is an
independent route through adaptive quadrature of the Bloch functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import (HalfIntegerInput, NonConvergence, QuadratureFailure,
                     TailBudgetExceeded, WindowTooSmall)

PI = math.pi
TWO_PI = 2.0 * math.pi
NUDGE = 1e-12
RESIDUAL_TOL = 1e-12
MAX_BISECT = 200
WINDOW_CAP = 4096
DELTA_FLOOR = 1e-150


# ---------------------------------------------------------------- scalar kernels

@njit(cache=True)
def _frac(x):
    # x - nearest integer, exact for |x| < 2**52
    return x - math.floor(x + 0.5)


@njit(cache=True)
def _sinpi(x):
    r = x - 2.0 * math.floor(0.5 * x)
    return math.sin(PI * r)


@njit(cache=True)
def kp_residual(q, k, alpha):
    """cos(2 pi k) - cos(2 pi q) - alpha/(2q) sin(2 pi q) with exact reduction."""
    rq = _frac(q)
    return (math.cos(TWO_PI * _frac(k)) - math.cos(TWO_PI * rq)
            - alpha / (2.0 * q) * math.sin(TWO_PI * rq))


@njit(cache=True)
def _kp_slope(q, alpha):
    rq = _frac(q)
    s = math.sin(TWO_PI * rq)
    c = math.cos(TWO_PI * rq)
    return TWO_PI * s - alpha * (TWO_PI * q * c - s) / (2.0 * q * q)


@njit(cache=True)
def _is_half_integer(k):
    d = 2.0 * k
    return abs(d - math.floor(d + 0.5)) <= 2.0 * NUDGE


@njit(cache=True)
def _too_close(k):
    # strictly inside the nudge distance, so nudged momenta are accepted
    d = 2.0 * k
    return abs(d - math.floor(d + 0.5)) < NUDGE


@njit(cache=True)
def nudge(k):
    """Move k to n/2 + 1e-12 when it sits within 1e-12 of a half-integer n/2."""
    if _is_half_integer(k):
        return 0.5 * math.floor(2.0 * k + 0.5) + NUDGE
    return k


@njit(cache=True)
def _solve_q_pos(k, alpha):
    # k >= 0; the root lies in the spectral band (m/2, (m+1)/2), m = floor(2k).
    # Residual signs at the band ends are known analytically, so the ends are
    # never evaluated (q = 0 would divide by zero). Returns (q, iterations).
    m = math.floor(2.0 * k)
    lo = 0.5 * m
    hi = lo + 0.5
    s_lo = -1.0 if m % 2 == 0 else 1.0
    it = 0
    mid = 0.5 * (lo + hi)
    f = kp_residual(mid, k, alpha)
    while abs(f) > RESIDUAL_TOL:
        it += 1
        if it > MAX_BISECT:
            return mid, -1
        if f * s_lo > 0.0:
            lo = mid
        else:
            hi = mid
        new = 0.5 * (lo + hi)
        if new == lo or new == hi:
            break
        mid = new
        f = kp_residual(mid, k, alpha)
    q = mid
    for _ in range(2):
        d = _kp_slope(q, alpha)
        if d == 0.0:
            break
        cand = q - f / d
        # a step that rounds onto or past the bracket is pulled back inside
        if cand >= hi:
            cand = 0.5 * (q + hi)
        elif cand <= lo:
            cand = 0.5 * (q + lo)
        fc = kp_residual(cand, k, alpha)
        if abs(fc) > abs(f):
            break
        q = cand
        f = fc
    return q, it


@njit(cache=True)
def _solve_q_fast_pos(k, alpha):
    # safeguarded Newton from the large-k guess q ~ k + alpha/(4 pi k);
    # bisection takes over whenever a step leaves the bracket
    m = math.floor(2.0 * k)
    lo = 0.5 * m
    hi = lo + 0.5
    s_lo = -1.0 if m % 2 == 0 else 1.0
    q = k + alpha / (4.0 * PI * max(k, 0.5))
    if not (lo < q < hi):
        q = 0.5 * (lo + hi)
    for it in range(1, MAX_BISECT + 1):
        f = kp_residual(q, k, alpha)
        if f == 0.0:
            return q, it
        if f * s_lo > 0.0:
            lo = q
        else:
            hi = q
        d = _kp_slope(q, alpha)
        if d != 0.0:
            step = f / d
            if abs(step) <= 1e-15 * max(1.0, abs(q)):
                return q - step, it
            cand = q - step
        else:
            cand = 0.5 * (lo + hi)
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        q = cand
    return q, -1


@njit(cache=True)
def solve_q_fast(k, alpha):
    """Same root as ``solve_q``; hot-path variant with quadratic convergence."""
    if k < 0.0:
        q, it = _solve_q_fast_pos(-k, alpha)
        return -q, it
    return _solve_q_fast_pos(k, alpha)


@njit(cache=True)
def solve_q(k, alpha):
    """Quasimomentum for a (possibly negative) momentum; antisymmetric in k."""
    if k < 0.0:
        q, it = _solve_q_pos(-k, alpha)
        return -q, it
    return _solve_q_pos(k, alpha)


@njit(cache=True)
def band_index(k):
    """Band-coordinate index n(k): nearest integer to 2k, ties rounded up."""
    return math.floor(2.0 * k + 0.5)


@njit(cache=True)
def r_minus_beta(beta, alpha):
    # 1/(1 + X^2) with X = (|b| + g)/(|b| - g) rewritten without the 0/0 at b = 0
    c = alpha / (4.0 * PI)
    b = abs(beta)
    s = math.sqrt(b * b + c * c)
    x = (s + c + b) / (s + c - b)
    return 1.0 / (1.0 + x * x)


@njit(cache=True)
def r_minus_k(k, alpha):
    n = band_index(k)
    theta = k - 0.5 * n
    return r_minus_beta(0.5 * n * theta, alpha)


@njit(cache=True)
def big_r_minus_k(k, alpha):
    r = r_minus_k(k, alpha)
    return 2.0 * r * (1.0 - r)


@njit(cache=True)
def _pair(sx, sy, d):
    # sum_m 1/((m+x)(m+y)) given sin(pi x), sin(pi y) and d = y - x
    if d == 0.0:
        sinc = 1.0
    else:
        sinc = _sinpi(d) / (PI * d)
    return PI * PI * sinc / (sx * sy)


@njit(cache=True)
def bloch_state(k, alpha):
    """(q, delta, sin(pi a), sin(pi b), c_re, c_im) for the Bloch ket at k.

    a = k + q and b = k - q are the poles of eta(k, .) in the plane-wave
    index; c is the unit-normalised prefactor of eta.
    """
    q, it = solve_q_fast(k, alpha)
    delta = q - k
    if abs(delta) < DELTA_FLOOR:
        delta = -DELTA_FLOOR if delta <= 0.0 else DELTA_FLOOR
    tk = 2.0 * k
    sa = _sinpi(tk - 2.0 * math.floor(0.5 * tk) + delta)
    sb = -math.sin(PI * delta)
    s = (PI * PI / (sa * sa) + PI * PI / (sb * sb)
         - 2.0 * _pair(sa, sb, -2.0 * q))
    mag = 1.0 / math.sqrt(s)
    if sb > 0.0:
        mag = -mag
    return q, delta, sa, sb, mag * math.cos(PI * delta), mag * math.sin(PI * delta)


@njit(cache=True)
def eta_amp(k, st, m):
    q, delta, sa, sb, cr, ci = st
    a = k + q
    b = -delta
    val = 1.0 / (m + a) - 1.0 / (m + b)
    return complex(cr * val, ci * val)


@njit(cache=True)
def kappa_amp(k, st1, v, n, st2):
    """kappa_v(k, n) from the Bloch states at k and at k + v + n."""
    q1, d1, sa1, sb1, cr1, ci1 = st1
    q2, d2, sa2, sb2, cr2, ci2 = st2
    sgn = 1.0 if n % 2 == 0 else -1.0
    sa2 *= sgn
    sb2 *= sgn
    s = (_pair(sa2, sa1, 2.0 * v + n + d2 - d1)
         - _pair(sa2, sb1, 2.0 * k + 2.0 * v + n + d1 + d2)
         - _pair(sb2, sa1, -2.0 * k - n - d1 - d2)
         + _pair(sb2, sb1, -n + d1 - d2))
    re = (cr2 * cr1 + ci2 * ci1) * s
    im = (cr2 * ci1 - ci2 * cr1) * s
    return complex(re, im)


@njit(cache=True)
def special_set(k, v):
    """I(k, v) as a length-4 array (entries may repeat)."""
    nk = band_index(k)
    nkv = band_index(k + v)
    out = np.empty(4, dtype=np.int64)
    out[0] = 0
    out[1] = -nk
    out[2] = -nkv
    out[3] = nk - nkv
    return out


@njit(cache=True)
def _kappa_window(k, v, ns, alpha):
    st1 = bloch_state(k, alpha)
    amps = np.empty(ns.shape[0], dtype=np.complex128)
    for i in range(ns.shape[0]):
        n = ns[i]
        st2 = bloch_state(k + v + n, alpha)
        amps[i] = kappa_amp(k, st1, v, n, st2)
    return amps


@njit(cache=True)
def _q_array(ks, alpha):
    out = np.empty(ks.shape[0])
    status = 0
    for i in range(ks.shape[0]):
        q, it = solve_q(ks[i], alpha)
        if it < 0:
            status = -1
        out[i] = q
    return out, status


# ---------------------------------------------------------------- public API

@dataclass
class CombParams:
    """Comb strength alpha with a lazily built per-band quasimomentum table."""

    alpha: float = 1.0
    cache_points: int = 512
    _tables: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive and finite")
        if self.cache_points < 8:
            raise ValueError("cache_points must be at least 8")
        self.alpha = float(self.alpha)

    def _table(self, m):
        tab = self._tables.get(m)
        if tab is None:
            lo = 0.5 * m
            # interior Chebyshev-like nodes keep clear of the band ends
            u = 0.5 * (1 - np.cos(np.pi * (np.arange(self.cache_points) + 0.5)
                                  / self.cache_points))
            ks = lo + 0.5 * u
            qs, status = _q_array(ks, self.alpha)
            if status < 0:
                raise NonConvergence(f"band {m}: bisection cap reached")
            tab = PchipInterpolator(ks, qs, extrapolate=True)
            self._tables[m] = tab
        return tab

    def q(self, k):
        """Cached quasimomentum: monotone interpolation plus one Newton step."""
        k = np.asarray(k, dtype=float)
        flat = np.atleast_1d(k).ravel()
        out = np.empty_like(flat)
        for i, kk in enumerate(flat):
            if _too_close(kk):
                raise HalfIntegerInput(f"k={kk} is a half-integer")
            a = abs(kk)
            m = math.floor(2 * a)
            q = float(self._table(m)(a))
            lo, hi = 0.5 * m, 0.5 * m + 0.5
            d = _kp_slope(q, self.alpha)
            cand = q - kp_residual(q, a, self.alpha) / d if d else q
            if lo < cand < hi:
                q = cand
            out[i] = math.copysign(q, kk)
        return out.reshape(k.shape) if k.ndim else float(out[0])

    def energy(self, k):
        return np.square(self.q(k))


def quasimomentum(k, comb):
    """q(k) by bracketed bisection to 1e-12 residual and two Newton steps."""
    k = float(k)
    if _too_close(k):
        raise HalfIntegerInput(f"k={k} is a half-integer")
    q, it = solve_q(k, comb.alpha)
    if it < 0:
        raise NonConvergence(f"bisection cap reached at k={k}")
    return q


def dispersion(k, comb):
    """E(k) = q(k)^2, symmetric and left-continuous at half-integers for k >= 0."""
    scalar = np.ndim(k) == 0
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.empty_like(ks)
    for i, kk in enumerate(ks):
        a = abs(kk)
        if _is_half_integer(a) and abs(2 * a - round(2 * a)) == 0.0:
            if a == 0.0:
                q, _ = solve_q(0.0, comb.alpha)  # bottom of the lowest band
            else:
                q = a
        else:
            q, it = solve_q(a, comb.alpha)
            if it < 0:
                raise NonConvergence(f"bisection cap reached at k={kk}")
        out[i] = q * q
    return float(out[0]) if scalar else out


def band_gap(n, comb, eps=(1e-4, 5e-5, 2.5e-5)):
    """g_n = E(n/2+) - E(n/2-) by one-sided limits with Richardson extrapolation.

    Both one-sided limits approach their values quadratically in eps, so the
    sweep is extrapolated in eps^2.
    """
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    edge = 0.5 * n
    g = []
    for e in eps:
        qp, i1 = solve_q(edge + e, comb.alpha)
        qm, i2 = solve_q(edge - e, comb.alpha)
        if i1 < 0 or i2 < 0:
            raise NonConvergence(f"gap {n}: solver failed")
        g.append(qp * qp - qm * qm)
    # Neville table in h = eps^2
    h = np.square(np.asarray(eps, dtype=float))
    tab = list(g)
    for j in range(1, len(tab)):
        for i in range(len(tab) - 1, j - 1, -1):
            tab[i] = (h[i - j] * tab[i] - h[i] * tab[i - 1]) / (h[i - j] - h[i])
    est = tab[-1]
    if not (est > 0 and math.isfinite(est)):
        raise NonConvergence(f"gap {n}: extrapolation failed")
    if len(g) > 2 and abs(est - g[-1]) > 1e-3 * abs(est) + 1e-10:
        raise NonConvergence(f"gap {n}: sweep not in the asymptotic regime")
    return float(est)


def min_phase_gap(k_max, comb, density=200, refine=(1e-3, 1e-5, 1e-7, 1e-9)):
    """Grid estimate of inf |E(k') - E(k)| over k' - k in Z \\ {0}.

    The grid k_i = -k_max + (i + 0.37)/density avoids half-integers and is
    closed under integer shifts, so every scanned pair is on the grid. The
    infimum sits at half-integers, where the grid is refined on both sides.
    """
    if k_max < 10:
        raise ValueError("k_max must be at least 10")
    density = int(density)
    npts = int(2 * k_max * density)
    ks = -k_max + (np.arange(npts) + 0.37) / density
    e = dispersion(ks, comb)
    best = np.inf
    for j in range(1, int(2 * k_max) + 1):
        s = j * density
        if s >= npts:
            break
        best = min(best, float(np.min(np.abs(e[s:] - e[:-s]))))
    # pairs (n/2 + t, -n/2 + t) straddle the gap from both sides
    for n in range(1, int(2 * k_max) + 1):
        for t in refine:
            for sgn in (1.0, -1.0):
                k1 = 0.5 * n + sgn * t
                k2 = k1 - n
                if abs(k1) <= k_max and abs(k2) <= k_max:
                    d = abs(dispersion(k1, comb) - dispersion(k2, comb))
                    best = min(best, d)
    return float(best)


@dataclass(frozen=True)
class BandCoords:
    theta: float
    nhalf: int
    beta: float


def band_coords(k):
    k = float(k)
    n = int(band_index(k))
    theta = k - 0.5 * n
    return BandCoords(theta=theta, nhalf=n, beta=0.5 * n * theta)


def pi_minus(x, alpha):
    """(alpha^2/8pi^2) / (x^2 + alpha^2/16pi^2); four times R_- at beta = x."""
    return (alpha * alpha / (8 * PI * PI)) / (np.square(x) + alpha * alpha / (16 * PI * PI))


@dataclass(frozen=True)
class ReflectionQuantities:
    gamma: float
    r_minus: float
    r_plus: float
    big_r_minus: float
    alpha: float

    def pi_minus_at(self, x):
        return pi_minus(x, self.alpha)


def reflection_quantities(k, comb):
    bc = band_coords(k)
    c = comb.alpha / (4 * PI)
    b = bc.beta
    gamma = b * b / (math.sqrt(b * b + c * c) + c)
    rm = float(r_minus_beta(b, comb.alpha))
    return ReflectionQuantities(gamma=gamma, r_minus=rm, r_plus=1.0 - rm,
                                big_r_minus=2.0 * rm * (1.0 - rm), alpha=comb.alpha)


@dataclass
class EtaRow:
    k: float
    window: tuple
    coeffs: np.ndarray
    norm_const: float
    tail_bound: float

    @property
    def indices(self):
        return np.arange(self.window[0], self.window[1] + 1)


def eta_row(k, window, comb):
    """eta(k, n) for n in the closed integer interval ``window``.

    N_k is evaluated in closed form; tail_bound is the exact mass outside the
    window (one minus the window sum), clipped at zero.
    """
    k = float(k)
    if _too_close(k):
        raise HalfIntegerInput(f"k={k} is a half-integer")
    lo, hi = int(window[0]), int(window[1])
    nk = int(band_index(k))
    if not (lo <= 0 <= hi and lo <= -nk <= hi):
        raise WindowTooSmall(f"window {window} misses 0 or -n(k)={-nk}")
    st = bloch_state(k, comb.alpha)
    coeffs = np.array([eta_amp(k, st, m) for m in range(lo, hi + 1)])
    q, delta, sa, sb = st[:4]
    s = PI ** 2 / sa ** 2 + PI ** 2 / sb ** 2 - 2 * _pair(sa, sb, -2 * q)
    norm_const = 4 * math.sin(PI * delta) ** 2 * s
    tail = max(0.0, 1.0 - float(np.sum(np.abs(coeffs) ** 2)))
    return EtaRow(k=k, window=(lo, hi), coeffs=coeffs, norm_const=norm_const,
                  tail_bound=tail)


@dataclass(frozen=True)
class TruncationPolicy:
    epsilon: float = 1e-6
    cap: int = WINDOW_CAP
    min_half_width: int = 32


@dataclass
class KappaRow:
    k: float
    v: float
    ns: np.ndarray
    amplitudes: np.ndarray
    tail_mass: float
    special: tuple

    @property
    def weights(self):
        return np.abs(self.amplitudes) ** 2

    @property
    def support(self):
        return list(zip(self.ns.tolist(), self.weights.tolist(), self.amplitudes.tolist()))

    def probabilities(self):
        w = self.weights
        return w / w.sum()


def _window_indices(centers, half):
    parts = [np.arange(c - half, c + half + 1) for c in centers]
    return np.unique(np.concatenate(parts))


def kappa_row(k, v, comb, policy=TruncationPolicy(), strict=True):
    """Truncated row {kappa_v(k, n)} over neighbourhoods of I(k, v).

    The half-width starts at max(32, ceil(4 alpha) + ceil|v| + 2) and doubles
    up to ``policy.cap`` until the mass outside the support drops below
    ``policy.epsilon``.
    """
    k = float(nudge(float(k)))
    v = float(v)
    v = float(nudge(k + v)) - k
    centers = tuple(sorted(set(int(x) for x in special_set(k, v))))
    half = max(policy.min_half_width, math.ceil(4 * comb.alpha) + math.ceil(abs(v)) + 2)
    while True:
        ns = _window_indices(centers, half)
        amps = _kappa_window(k, v, ns.astype(np.int64), comb.alpha)
        tail = 1.0 - float(np.sum(np.abs(amps) ** 2))
        if tail < policy.epsilon:
            return KappaRow(k=k, v=v, ns=ns, amplitudes=amps,
                            tail_mass=max(tail, 0.0), special=centers)
        if half >= policy.cap:
            if strict:
                raise TailBudgetExceeded(
                    f"tail {tail:.3g} >= {policy.epsilon} at k={k}, v={v}")
            return KappaRow(k=k, v=v, ns=ns, amplitudes=amps,
                            tail_mass=max(tail, 0.0), special=centers)
        half = min(2 * half, policy.cap)


def _bloch_profile(k, q):
    """Scalar Bloch function on [-pi, pi) for fixed (k, q); delta at x = 0."""
    e1 = complex(math.cos(TWO_PI * (q - k)), math.sin(TWO_PI * (q - k)))
    ep = complex(math.cos(TWO_PI * (q + k)), math.sin(TWO_PI * (q + k)))
    cl = (e1 - 1) / (ep - 1)
    cr = (e1 - 1) / (1 - 1 / ep)

    def f(x):
        em = complex(math.cos(x * q), -math.sin(x * q))
        if x <= 0:
            return cl * em + e1 / em
        return cr * em + 1 / em
    return f


def bloch_function(k, x, comb):
    """Unnormalised Bloch function on [-pi, pi), delta at x = 0."""
    q = quasimomentum(k, comb)
    x = np.asarray(x, dtype=float)
    e1 = np.exp(2j * PI * (q - k))
    left = (e1 - 1) / (np.exp(2j * PI * (q + k)) - 1) * np.exp(-1j * x * q) + e1 * np.exp(1j * x * q)
    right = (e1 - 1) / (1 - np.exp(-2j * PI * (q + k))) * np.exp(-1j * x * q) + np.exp(1j * x * q)
    return np.where(x <= 0, left, right)


def _cquad(f, a, b, freq):
    pieces = max(1, int(math.ceil(abs(freq) * (b - a) / (4 * PI))))
    edges = np.linspace(a, b, pieces + 1)
    tot = 0j
    for lo, hi in zip(edges[:-1], edges[1:]):
        re, e1 = integrate.quad(lambda x: f(x).real, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        im, e2 = integrate.quad(lambda x: f(x).imag, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        if e1 > 1e-9 or e2 > 1e-9:
            raise QuadratureFailure(f"quad error estimate {max(e1, e2):.2g}")
        tot += re + 1j * im
    return tot


def kappa_oracle(k, v, n, comb):
    """<psi_{k+v+n}, e^{ivx} psi_k> by adaptive quadrature on [-pi, 0] and [0, pi]."""
    k = float(nudge(float(k)))
    v = float(nudge(k + float(v))) - k
    k2 = k + v + n
    q1 = quasimomentum(k, comb)
    q2 = quasimomentum(k2, comb)
    freq = abs(q1) + abs(q2) + abs(v)
    p1 = _bloch_profile(k, q1)
    p2 = _bloch_profile(k2, q2)

    def norm2(p, qq):
        g = lambda x: complex(abs(p(x)) ** 2)
        return (_cquad(g, -PI, 0.0, 2 * qq) + _cquad(g, 0.0, PI, 2 * qq)).real

    f = lambda x: p2(x).conjugate() * complex(math.cos(v * x), math.sin(v * x)) * p1(x)
    val = _cquad(f, -PI, 0.0, freq) + _cquad(f, 0.0, PI, freq)
    return complex(val / math.sqrt(norm2(p1, q1) * norm2(p2, q2)))
