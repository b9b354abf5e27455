"""Kick-rate densities j(v), their moments, sampling and assumption checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate

from .errors import AssumptionViolated

LAPLACE, GAUSS_MIX, TABULATED = 0, 1, 2
FAMILIES = {"laplace": LAPLACE, "gaussian_mixture": GAUSS_MIX, "tabulated": TABULATED}


@dataclass
class KickLaw:
    family: str
    params: dict
    rate_R: float
    sigma: float
    varsigma: float
    mu: float = math.nan
    exp_moment_a: float = math.nan
    # numeric description shared with the compiled samplers
    code: int = LAPLACE
    scale: float = 1.0
    table_x: np.ndarray = field(default_factory=lambda: np.zeros(1), repr=False)
    table_y: np.ndarray = field(default_factory=lambda: np.zeros(1), repr=False)

    def density(self, v):
        v = np.abs(np.asarray(v, dtype=float))
        if self.code == LAPLACE:
            b = self.scale
            return self.rate_R / (2 * b) * np.exp(-v / b)
        if self.code == GAUSS_MIX:
            w, s = self.table_x, self.table_y
            out = np.zeros_like(v)
            for wi, si in zip(w, s):
                out = out + wi * np.exp(-0.5 * (v / si) ** 2) / (si * math.sqrt(2 * math.pi))
            return self.rate_R * out
        n = self.table_x.shape[0]
        return np.interp(v, self.table_x, self.table_y[:n], right=0.0)

    def cdf(self, v):
        """CDF of the normalised kick law j/R."""
        v = np.asarray(v, dtype=float)
        if self.code == LAPLACE:
            b = self.scale
            return np.where(v < 0, 0.5 * np.exp(v / b), 1 - 0.5 * np.exp(-v / b))
        if self.code == GAUSS_MIX:
            from scipy.special import ndtr
            out = np.zeros_like(v)
            for wi, si in zip(self.table_x, self.table_y):
                out = out + wi * ndtr(v / si)
            return out
        x = self.table_x
        half = self.table_y[x.shape[0]:]
        tot = half[-1]
        a = np.interp(np.abs(v), x, half, right=tot) / (2 * tot)
        return np.where(v < 0, 0.5 - a, 0.5 + a)

    def tail_cut(self, eps=1e-8):
        """V with int_{|v|>V} j < eps (relative to R)."""
        if self.code == LAPLACE:
            return self.scale * math.log(1.0 / eps)
        if self.code == GAUSS_MIX:
            return float(np.max(self.table_y)) * math.sqrt(2 * math.log(1.0 / eps)) + 1.0
        return float(self.table_x[-1])

    def contracted(self, theta, terms=None):
        """sum_n j(theta + n/2), the density folded onto the torus."""
        theta = np.asarray(theta, dtype=float)
        n_max = int(2 * self.tail_cut(1e-14)) + 2 if terms is None else terms
        n = np.arange(-n_max, n_max + 1)
        return self.density(theta[..., None] + 0.5 * n).sum(axis=-1)

    def sample(self, gen, size=None):
        """Draw kicks from j/R with a numpy Generator."""
        if size is None:
            return float(_sample_kick(gen, self.code, self.scale, self.table_x, self.table_y))
        return _sample_many(gen, int(size), self.code, self.scale, self.table_x, self.table_y)

    def to_spec(self):
        return {"family": self.family, **self.params}


def _quad_moment(f, cut):
    val, err = integrate.quad(f, 0.0, cut, limit=400, epsabs=1e-13, epsrel=1e-12)
    return 2 * val


def _table_moment(x, y, p):
    """2 int_0^X v^p j(v) dv, exact for the piecewise-linear table."""
    a, b = x[:-1], x[1:]
    s = np.diff(y) / np.diff(x)
    c = y[:-1] - s * a
    return 2 * float(np.sum(c * (b ** (p + 1) - a ** (p + 1)) / (p + 1)
                            + s * (b ** (p + 2) - a ** (p + 2)) / (p + 2)))


def build_kick_law(spec=None):
    """Construct a KickLaw from a JSON-style dict and check the assumptions.

    laplace: {"rate", "scale"}; gaussian_mixture: {"rate", "weights", "sigmas"};
    tabulated: {"v": grid on [0, V], "j": density values} (symmetric extension).
    """
    spec = dict(spec or {"family": "laplace", "rate": 1.0, "scale": 1.0})
    family = spec.pop("family", "laplace")
    if family not in FAMILIES:
        raise ValueError(f"unknown kick family {family!r}")
    if family == "laplace":
        rate = float(spec.get("rate", 1.0))
        b = float(spec.get("scale", 1.0))
        if not (rate > 0 and b > 0):
            raise ValueError("laplace needs rate > 0 and scale > 0")
        law = KickLaw(family, {"rate": rate, "scale": b}, rate, 2 * rate * b * b,
                      24 * b ** 4, code=LAPLACE, scale=b)
    elif family == "gaussian_mixture":
        rate = float(spec.get("rate", 1.0))
        w = np.asarray(spec.get("weights", [1.0]), dtype=float)
        s = np.asarray(spec.get("sigmas", [1.0]), dtype=float)
        if w.shape != s.shape or np.any(w <= 0) or np.any(s <= 0) or rate <= 0:
            raise ValueError("gaussian_mixture needs positive weights, sigmas, rate")
        w = w / w.sum()
        law = KickLaw(family, {"rate": rate, "weights": w.tolist(), "sigmas": s.tolist()},
                      rate, rate * float(np.sum(w * s ** 2)), float(np.sum(3 * w * s ** 4)),
                      code=GAUSS_MIX, table_x=w, table_y=s)
    else:
        x = np.asarray(spec["v"], dtype=float)
        y = np.asarray(spec["j"], dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x[0] != 0 or np.any(np.diff(x) <= 0) or np.any(y < 0):
            raise ValueError("tabulated law needs an increasing grid from 0 and j >= 0")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])
        law = KickLaw(family, {"v": x.tolist(), "j": y.tolist()}, 1.0, 1.0, 1.0,
                      code=TABULATED, table_x=x, table_y=np.concatenate([y, cum]))
        law.rate_R = _table_moment(x, y, 0)
        law.sigma = _table_moment(x, y, 2)
        law.varsigma = _table_moment(x, y, 4) / law.rate_R
    check_assumptions(law)
    return law


def check_assumptions(law, grid=4001):
    """Verify the three assumption clauses; record mu and an exponential moment a."""
    vs = np.linspace(-1, 1, grid)
    lo = float(np.min(law.density(vs)))
    if not lo > 0:
        raise AssumptionViolated(3, f"inf of j on [-1, 1] is {lo:.3g}")
    th = np.linspace(-0.25, 0.25, 513)
    hi = float(np.max(law.contracted(th)))
    if not math.isfinite(hi):
        raise AssumptionViolated(2, "contracted density is unbounded")
    law.mu = 1.01 * max(hi, 1.0 / lo)
    # exponential moment: largest a on a grid whose tail integral has converged
    cut = law.tail_cut(1e-12)
    best = 0.0
    grid = np.linspace(0.1, 5.0, 50)
    if law.code == TABULATED:
        # compact support: every exponential moment is finite
        law.exp_moment_a = float(grid[-1])
        return law
    for a in grid / max(law.scale if law.code == LAPLACE else 1.0, 1e-12):
        f = lambda v: float(law.density(v)) * math.exp(a * v)
        m1 = _quad_moment(f, cut)
        m2 = _quad_moment(f, 2 * cut)
        if math.isfinite(m2) and abs(m2 - m1) <= 1e-6 * abs(m1):
            best = float(a)
        else:
            break
    if best == 0.0:
        raise AssumptionViolated(1, "no exponential moment found")
    law.exp_moment_a = best
    return law


@njit(cache=True, inline="always")
def _sample_kick(gen, code, scale, tx, ty):
    if code == LAPLACE:
        e = gen.standard_exponential() * scale
        return e if gen.random() < 0.5 else -e
    if code == GAUSS_MIX:
        u = gen.random()
        acc = 0.0
        i = 0
        for i in range(tx.shape[0]):
            acc += tx[i]
            if u < acc:
                break
        return ty[i] * gen.standard_normal()
    # tabulated: ty packs [density, half-line cumulative]; invert, random sign
    u = gen.random()
    n = tx.shape[0]
    cum = ty[n:]
    target = u * cum[n - 1]
    j = np.searchsorted(cum, target) - 1
    if j < 0:
        j = 0
    if j > n - 2:
        j = n - 2
    h = tx[j + 1] - tx[j]
    y0 = ty[j]
    slope = (ty[j + 1] - y0) / h
    r = target - cum[j]
    if abs(slope) < 1e-14:
        x = r / y0 if y0 > 0 else 0.0
    else:
        x = (-y0 + math.sqrt(max(y0 * y0 + 2 * slope * r, 0.0))) / slope
    v = tx[j] + x
    return v if gen.random() < 0.5 else -v


@njit(cache=True)
def _sample_many(gen, n, code, scale, tx, ty):
    out = np.empty(n)
    for i in range(n):
        out[i] = _sample_kick(gen, code, scale, tx, ty)
    return out


@njit(cache=True)
def _density(v, code, rate, scale, tx, ty):
    """j(v) for the compiled kernels; matches KickLaw.density."""
    a = abs(v)
    if code == LAPLACE:
        return rate / (2.0 * scale) * math.exp(-a / scale)
    if code == GAUSS_MIX:
        s = 0.0
        for i in range(tx.shape[0]):
            s += tx[i] * math.exp(-0.5 * (a / ty[i]) ** 2) / (ty[i] * math.sqrt(2.0 * math.pi))
        return rate * s
    n = tx.shape[0]
    if a >= tx[n - 1]:
        return 0.0
    j = np.searchsorted(tx, a) - 1
    if j < 0:
        j = 0
    return ty[j] + (ty[j + 1] - ty[j]) * (a - tx[j]) / (tx[j + 1] - tx[j])
