"""Master-equation kernel J(k', k), escape-rate quadrature and the torus kernel."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

from .blochcore import bloch_state, kappa_amp, nudge
from .errors import QuadratureFailure
from .kicklaw import KickLaw, _density

J_TAIL = 1e-10    # per-term budget for truncating the lattice sum
ESCAPE_TAIL = 1e-8


@njit(cache=True)
def _jump_rate(k_to, k_from, alpha, code, rate, scale, tx, ty, vcut):
    k = nudge(k_from)
    kt = nudge(k_to)
    st1 = bloch_state(k, alpha)
    st2 = bloch_state(kt, alpha)
    d = kt - k
    lo = math.ceil(d - vcut)
    hi = math.floor(d + vcut)
    s = 0.0
    for n in range(lo, hi + 1):
        v = d - n
        jv = _density(v, code, rate, scale, tx, ty)
        if jv == 0.0:
            continue
        a = kappa_amp(k, st1, v, n, st2)
        s += jv * (a.real * a.real + a.imag * a.imag)
    return s


def _kick_args(kick):
    return kick.code, kick.rate_R, kick.scale, kick.table_x, kick.table_y


def _vcut(kick, eps):
    # j(v) / j(0) below eps for every dropped term (|kappa|^2 <= 1)
    if kick.code == 0:
        return kick.scale * math.log(1.0 / eps)
    return kick.tail_cut(eps)


def jump_rate(k_to, k_from, kick, comb):
    """J(k_to, k_from) = sum_n j(k_to - k_from - n) |kappa_{k_to - k_from - n}(k_from, n)|^2."""
    return float(_jump_rate(float(k_to), float(k_from), comb.alpha, *_kick_args(kick),
                            _vcut(kick, J_TAIL)))


@njit(cache=True)
def _jump_rate_many(k_to, k_from, alpha, code, rate, scale, tx, ty, vcut):
    out = np.empty(k_to.shape[0])
    for i in range(k_to.shape[0]):
        out[i] = _jump_rate(k_to[i], k_from, alpha, code, rate, scale, tx, ty, vcut)
    return out


def jump_rate_row(k_to, k_from, kick, comb):
    """Vectorised J(., k_from) over an array of targets."""
    k_to = np.ascontiguousarray(k_to, dtype=float)
    return _jump_rate_many(k_to, float(k_from), comb.alpha, *_kick_args(kick),
                           _vcut(kick, J_TAIL))


def escape_rate_quadrature(k, kick, comb, tol=1e-10):
    """Integral of J(k', k) over k'; equals R when the kernel is right.

    J(., k) lives near k (transmission) and near -k (Bragg reflection), so the
    integral runs over |k' - k| <= V_cut and |k' + k| <= V_cut. Each window is
    split at the kinks of j and at the half-integers, where |kappa|^2 varies
    on the scale of the reflection bands.
    """
    k = float(nudge(float(k)))
    vcut = kick.tail_cut(ESCAPE_TAIL)
    windows = sorted([(k - vcut, k + vcut), (-k - vcut, -k + vcut)])
    if windows[1][0] < windows[0][1]:
        windows = [(windows[0][0], max(windows[0][1], windows[1][1]))]
    args = (k, comb.alpha, *_kick_args(kick), _vcut(kick, J_TAIL))
    total = 0.0
    err = 0.0
    for a, b in windows:
        pts = {k + n for n in range(math.ceil(a - k), math.floor(b - k) + 1)}
        pts |= {0.5 * m for m in range(math.ceil(2 * a), math.floor(2 * b) + 1)}
        edges = np.array([a] + sorted(p for p in pts if a < p < b) + [b])
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi - lo < 1e-14:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, e = integrate.quad(lambda x: _jump_rate(x, *args), lo, hi,
                                        epsabs=tol, epsrel=1e-11, limit=200)
            total += val
            err += e
    if err > 1e-6:
        raise QuadratureFailure(f"escape-rate quadrature error {err:.3g} at k={k}")
    return total


@njit(cache=True)
def _torus_eval(t2, t1, code, rate, scale, tx, ty, nmax):
    # paired terms j(d + i/2) + j(d - i/2) make T(a, b) == T(b, a) bit for bit
    d = abs(t2 - t1)
    s = _density(d, code, rate, scale, tx, ty)
    for i in range(1, nmax + 1):
        s += _density(d + 0.5 * i, code, rate, scale, tx, ty) + _density(d - 0.5 * i, code, rate, scale, tx, ty)
    return s / rate


@dataclass(frozen=True)
class TorusKernel:
    """T(th2, th1) = R^-1 sum_i j(th2 - th1 + i/2) on the torus [-1/4, 1/4)."""

    kick: KickLaw
    nmax: int

    def evaluate(self, th2, th1):
        th2 = np.asarray(th2, dtype=float)
        th1 = np.asarray(th1, dtype=float)
        b = np.broadcast(th2, th1)
        out = np.empty(b.shape)
        args = _kick_args(self.kick)
        for idx, (x, y) in zip(np.ndindex(b.shape), b):
            out[idx] = _torus_eval(x, y, *args, self.nmax)
        return out if out.ndim else float(out)

    def matrix(self, n=128):
        """Midpoint discretisation: (grid, M) with M[i, j] = T(th_i, th_j) * h."""
        h = 0.5 / n
        th = -0.25 + h * (np.arange(n) + 0.5)
        # T depends on th2 - th1 mod 1/2 only: build one circulant row
        d = th - th[0]
        row = np.array([_torus_eval(x, 0.0, *_kick_args(self.kick), self.nmax) for x in d])
        # symmetric circulant (wrap by 1/2); normalise rows so constants are fixed exactly
        row = 0.5 * (row + np.roll(row[::-1], 1))
        row = row / (row.sum() * h)
        idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        return th, row[idx] * h

    def apply(self, f, th2):
        """(T f)(th2) = int T(th2, th1) f(th1) dth1 by adaptive quadrature.

        ``f`` is a callable density on [-1/4, 1/4); the integrand has a kink
        at th1 = th2 (mod 1/2) from the cusp of j at zero.
        """
        args = _kick_args(self.kick)
        out = []
        for t2 in np.atleast_1d(th2):
            kink = (t2 + 0.25) % 0.5 - 0.25
            pts = [p for p in (kink,) if -0.25 < p < 0.25]
            val, err = integrate.quad(lambda t1: _torus_eval(t2, t1, *args, self.nmax) * f(t1),
                                      -0.25, 0.25, points=pts or None,
                                      epsabs=1e-13, epsrel=1e-12, limit=200)
            out.append(val)
        return np.array(out)

    def deviation_decay(self, steps=20, n=128, start=0):
        """Sup-distance from the uniform density 2 of T^s delta_{th_start}, s = 1..steps."""
        th, m = self.matrix(n)
        h = 0.5 / n
        f = np.zeros(n)
        f[start] = 1.0 / h
        out = []
        for _ in range(steps):
            f = m @ f
            out.append(float(np.max(np.abs(f - 2.0))))
        return np.array(out)

    def mixing_rate(self, n=128, iters=200, seed=0):
        """Largest |eigenvalue| of T restricted to mean-zero densities (power iteration)."""
        th, m = self.matrix(n)
        g = np.random.default_rng(seed)
        f = g.standard_normal(n)
        lam = 0.0
        for _ in range(iters):
            f = f - f.mean()
            f2 = m @ f
            f2 = f2 - f2.mean()
            nrm = np.linalg.norm(f2)
            if nrm == 0:
                return 0.0
            lam = nrm / np.linalg.norm(f)
            f = f2 / nrm
        return float(lam)


def torus_kernel(kick):
    nmax = int(2 * kick.tail_cut(1e-16)) + 2
    return TorusKernel(kick, nmax)


def dump_kernel_csv(path, k_from, k_to, kick, comb):
    """Write rows ``k_from,k_to,J`` (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k_from", "k_to", "J"])
        for kf in np.atleast_1d(k_from):
            vals = jump_rate_row(k_to, kf, kick, comb)
            for kt, jv in zip(k_to, vals):
                w.writerow([f"{kf:.17g}", f"{kt:.17g}", f"{jv:.17g}"])
