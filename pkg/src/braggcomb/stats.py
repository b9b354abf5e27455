"""Statistical checks: KS distances, scaling fits, Brownian targets, free-case limit."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special, stats as sps

from .errors import DegenerateFit, InsufficientFlips, QuadratureFailure


def ks_statistic(sample, cdf):
    """One-sample Kolmogorov-Smirnov distance sup |F_n - F|."""
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise ValueError("sample must be nonempty")
    return float(sps.ks_1samp(sample, cdf, method="asymp").statistic)


def ks_two_sample(a, b):
    return float(sps.ks_2samp(np.asarray(a, float), np.asarray(b, float)).statistic)


def jackknife(values, stat=np.mean, blocks=20):
    """(estimate, standard error) by delete-one-block jackknife along axis 0."""
    values = np.asarray(values)
    n = values.shape[0]
    blocks = min(blocks, n)
    if blocks < 2:
        raise ValueError("need at least two blocks")
    edges = np.linspace(0, n, blocks + 1).astype(int)
    full = stat(values)
    reps = np.array([stat(np.concatenate([values[:a], values[b:]]))
                     for a, b in zip(edges[:-1], edges[1:])])
    se = math.sqrt((blocks - 1) / blocks * np.sum((reps - reps.mean()) ** 2))
    return float(full), float(se)


def variance_with_se(x, blocks=20):
    return jackknife(np.asarray(x, float), lambda a: float(np.var(a, ddof=1)), blocks)


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r_squared: float
    exponent_se: float
    point_variances: tuple

    def within(self, target, tol):
        return abs(self.exponent - target) <= tol


def scaling_exponent(horizons, variances, variance_se=None):
    """Slope of log Var against log t by (weighted) least squares.

    ``variance_se`` gives per-point standard errors; the log-scale variance of
    each point is then (se / var)^2 and the slope error comes from the
    weighted normal equations. Without it, residual scatter is used.
    """
    t = np.asarray(horizons, dtype=float)
    v = np.asarray(variances, dtype=float)
    if t.shape != v.shape or t.size < 4:
        raise DegenerateFit("need at least 4 horizons with matching variances")
    if np.any(t <= 0) or np.any(v <= 0):
        raise DegenerateFit("horizons and variances must be positive")
    if math.log10(t.max() / t.min()) < 2 - 1e-9:
        raise DegenerateFit("horizons must span at least two decades")
    x, y = np.log(t), np.log(v)
    if variance_se is not None:
        pv = (np.asarray(variance_se, float) / v) ** 2
        if np.any(pv <= 0):
            raise DegenerateFit("per-point errors must be positive")
        w = 1.0 / pv
    else:
        pv = np.full_like(x, np.nan)
        w = np.ones_like(x)
    a = np.vstack([np.ones_like(x), x]).T
    cov = np.linalg.inv(a.T @ (w[:, None] * a))
    beta = cov @ (a.T @ (w * y))
    resid = y - a @ beta
    if variance_se is None:
        s2 = float(resid @ resid) / (x.size - 2)
        cov = cov * s2
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(beta[1]), float(beta[0]), r2, float(math.sqrt(cov[1, 1])),
                      tuple(float(p) for p in pv))


def abs_gaussian_moment(p):
    """E|Z|^p = 2^(p/2) Gamma((p+1)/2) / sqrt(pi)."""
    return 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)


@dataclass(frozen=True)
class BrownianTargets:
    abs_mean: float           # E|Z|
    abs_second: float         # E|Z|^2
    abs_third: float          # E|Z|^3
    var_target: float         # Var of int_0^1 |B_r|^{3/2} dB'_r
    mc_abs_mean: float
    mc_abs_third: float
    mc_var_target: float
    mc_var_target_se: float


def brownian_targets(mc_samples=10_000_000, paths=20_000, steps=400, seed=2024):
    """Closed-form limit constants with Monte Carlo cross-checks.

    The Gaussian moments are checked on ``mc_samples`` normals; the Ito
    isometry step is checked by simulating (B, B') on a grid and taking the
    sample variance of the left-point sum of |B|^{3/2} dB'.
    """
    m1 = abs_gaussian_moment(1)
    m3 = abs_gaussian_moment(3)
    g = np.random.default_rng(seed)
    s1 = s3 = 0.0
    done = 0
    while done < mc_samples:
        z = np.abs(g.standard_normal(min(1_000_000, mc_samples - done)))
        s1 += z.sum()
        s3 += (z ** 3).sum()
        done += z.size
    dt = 1.0 / steps
    ito = np.empty(paths)
    chunk = 2000
    for a in range(0, paths, chunk):
        m = min(chunk, paths - a)
        db = g.standard_normal((m, steps)) * math.sqrt(dt)
        db2 = g.standard_normal((m, steps)) * math.sqrt(dt)
        b = np.cumsum(db, axis=1) - db   # left endpoints
        ito[a:a + m] = np.sum(np.abs(b) ** 1.5 * db2, axis=1)
    v, se = variance_with_se(ito)
    return BrownianTargets(float(m1), 1.0, float(m3), float(0.4 * m3), s1 / done, s3 / done, v, se)


def normalized_y_variance(y, t, sigma, nu, blocks=20):
    """Var(sigma^{-3/4} nu^{1/2} t^{-5/4} Y_t) with jackknife error."""
    scale = sigma ** -0.75 * math.sqrt(nu) * t ** -1.25
    return variance_with_se(np.asarray(y, float) * scale, blocks)


def abs_k_ratio(k, t, sigma, blocks=20):
    """E|K_t| / sqrt(sigma t) with jackknife error."""
    return jackknife(np.abs(np.asarray(k, float)) / math.sqrt(sigma * t), np.mean, blocks)


@dataclass(frozen=True)
class BracketComparison:
    discrepancy: float
    discrepancy_se: float
    bracket_mean: float
    energy_mean: float
    n_flips: int


def quadratic_variation_compare(flips, energies, grid, t, nu, blocks=20):
    """Compare the flip bracket with its energy compensator, per trajectory.

    ``flips``: per trajectory an array of rows (tau, k_before, k_after);
    ``energies``: (n_traj, len(grid)) snapshots of E(K) at times ``grid``
    covering (0, t]. Bracket: t^{-5/2} sum_m K_m^2 (dtau_m - |K_m|/nu)^2,
    compensator: nu^{-1} int_0^1 (t^{-1/2} E(K_{rt})^{1/2})^3 dr.
    """
    grid = np.asarray(grid, float)
    energies = np.asarray(energies, float)
    total = sum(0 if f is None else len(f) for f in flips)
    if total < 2:
        raise InsufficientFlips("fewer than two sign flips recorded")
    r = np.concatenate([[0.0], grid / t])
    br = np.empty(len(flips))
    en = np.empty(len(flips))
    for i, f in enumerate(flips):
        s = 0.0
        if f is not None and len(f) >= 2:
            tau = f[:, 0]
            keep = tau <= t
            tau, kk = tau[keep], f[keep, 2]
            if tau.size >= 2:
                dtau = np.diff(tau)
                km = np.abs(kk[:-1])
                s = float(np.sum(km ** 2 * (dtau - km / nu) ** 2))
        br[i] = s * t ** -2.5
        g = (np.sqrt(energies[i]) / math.sqrt(t)) ** 3
        g = np.concatenate([[g[0]], g])
        en[i] = float(integrate.trapezoid(g, r)) / nu
    d, se = jackknife(np.abs(br - en), np.mean, blocks)
    return BracketComparison(d, se, float(br.mean()), float(en.mean()), int(total))


def char_fn(kick, q):
    """phi(q) = int j(v) e^{ivq} dv."""
    q = np.asarray(q, dtype=float)
    if kick.code == 0:
        b = kick.scale
        return kick.rate_R / (1.0 + (b * q) ** 2)
    if kick.code == 1:
        out = np.zeros_like(q)
        for w, s in zip(kick.table_x, kick.table_y):
            out = out + w * np.exp(-0.5 * (s * q) ** 2)
        return kick.rate_R * out
    cut = float(kick.table_x[-1])
    f = np.vectorize(lambda qq: 2 * integrate.quad(lambda v: float(kick.density(v)) * math.cos(v * qq),
                                                   0, cut, limit=400)[0])
    return f(q)


def free_char_exponent(kick, lam, t, v):
    """int_0^t (phi(a s) - phi(0)) ds with a = 2 v t^{-3/2} / lambda, by quadrature."""
    a = 2.0 * v * t ** -1.5 / lam
    if a == 0:
        return 0.0
    phi0 = float(char_fn(kick, 0.0))
    f = lambda s: float(char_fn(kick, a * s)) - phi0
    # split where the integrand changes scale (a s ~ 1 / kick width)
    knee = min(t, 1.0 / abs(a) / max(kick.sigma / kick.rate_R, 1e-12) ** 0.5)
    pieces = [(0.0, knee)] + ([(knee, t)] if knee < t else [])
    total = 0.0
    for lo, hi in pieces:
        with warnings.catch_warnings():
            # roundoff notices near v = 0 where the integral is tiny; err is checked below
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=400)
        if err > 1e-8 * max(1.0, abs(val)):
            raise QuadratureFailure(f"free characteristic integral error {err:.3g}")
        total += val
    return total


def free_char_exponent_laplace(kick, lam, t, v):
    """Closed form for the Laplace law: R (arctan(b a t) / (b a) - t)."""
    a = 2.0 * v * t ** -1.5 / lam
    if a == 0:
        return 0.0
    x = kick.scale * a * t
    return kick.rate_R * t * (math.atan(x) / x - 1.0)


def free_gaussian_check(lam, t, v_grid, kick):
    """max_v |phi_{lambda,t}(v) - exp(-(2 sigma / 3 lambda^2) v^2)|."""
    dev = 0.0
    for v in np.atleast_1d(v_grid):
        phi = math.exp(free_char_exponent(kick, lam, t, float(v)))
        dev = max(dev, abs(phi - math.exp(-2 * kick.sigma / (3 * lam * lam) * v * v)))
    return dev


def check_entry(name, statistic, target, tolerance, passed, n=None, seed=None, **extra):
    """Row of the JSON report."""
    out = {"name": name, "statistic": _num(statistic), "target": _num(target),
           "tolerance": _num(tolerance), "pass": bool(passed), "n": n, "seed": seed}
    out.update({k: _num(v) for k, v in extra.items()})
    return out


def _num(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    return x


def as_dict(obj):
    return {k: _num(v) for k, v in asdict(obj).items()}
