"""Normal variance-mean mixtures with generalized gamma (GVG) or generalized
inverse Gaussian (GH) mixing.

A variance-mean mixture has distribution function

    F(x) = int_0^inf Phi((x - alpha u) / (sigma sqrt(u))) dG(u)

Densities and distribution functions are evaluated by quadrature in
``t = log u``. In that variable the log of the density integrand has the form

    h(t) = a t - b exp(-t) - c exp(t) - q exp(p t)   (+ constant)

with ``b, c, q >= 0``, which is concave. Each evaluation point gets its own
integration range centred on the mode of ``h`` and extended until ``h`` has
dropped by ``_DROP``; a trapezoid rule with step halving then converges
geometrically. Linear tails that do not drop off within ``_MAX_SPAN`` are
closed analytically. Peaks narrower than ``_LAPLACE_WIDTH`` in log u use
the Laplace approximation, whose relative error is of order width**2.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numba
import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, kve, ndtr

from .errors import NumericalError, SizeError, ValidationError

GVG = "GVG"
GH = "GH"

_LOG_2PI = np.log(2.0 * np.pi)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_DROP = 40.0
_MAX_SPAN = 300.0
_EXP_CAP = 700.0
_LAPLACE_WIDTH = 1e-4
# fitting box for the GVG shape parameters; beyond it the mixing law is
# numerically a point mass and the quadrature only gets more expensive
_MAX_POWER = 50.0
_MAX_SHAPE = 1e4


@dataclass(frozen=True)
class GenGammaParams:
    """Stacy generalized gamma: density ~ u^(d-1) exp(-(u/scale)^p)."""

    scale: float = 1.0
    shape_d: float = 1.0
    power_p: float = 1.0

    def __post_init__(self):
        vals = (self.scale, self.shape_d, self.power_p)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValidationError(f"generalized gamma parameters must be positive, got {vals}")

    def log_norm(self) -> float:
        d, p = self.shape_d, self.power_p
        return float(np.log(p) - d * np.log(self.scale) - gammaln(d / p))

    def terms(self):
        """(a, log b, log c, log q, p) of the log-density in t, Jacobian included."""
        p = self.power_p
        return self.shape_d, -np.inf, -np.inf, -p * np.log(self.scale), p


@dataclass(frozen=True)
class GigParams:
    """Generalized inverse Gaussian: density ~ u^(lambda-1) exp(-(chi/u + psi u)/2)."""

    lam: float = 1.0
    chi: float = 1.0
    psi: float = 1.0

    def __post_init__(self):
        lam, chi, psi = self.lam, self.chi, self.psi
        if not all(np.isfinite(v) for v in (lam, chi, psi)):
            raise ValidationError("GIG parameters must be finite")
        if chi < 0 or psi < 0:
            raise ValidationError("GIG chi and psi must be nonnegative")
        if lam <= 0 and chi <= 0:
            raise ValidationError("GIG needs chi > 0 when lambda <= 0")
        if lam >= 0 and psi <= 0:
            raise ValidationError("GIG needs psi > 0 when lambda >= 0")

    def log_norm(self) -> float:
        lam, chi, psi = self.lam, self.chi, self.psi
        if chi == 0:
            return float(lam * np.log(psi / 2.0) - gammaln(lam))
        if psi == 0:
            return float(-lam * np.log(chi / 2.0) - gammaln(-lam))
        omega = np.sqrt(chi * psi)
        k = kve(lam, omega)
        if not np.isfinite(k) or k <= 0:
            raise ValidationError(f"Bessel K_{lam}({omega}) out of range")
        return float(0.5 * lam * np.log(psi / chi) - np.log(2.0) - (np.log(k) - omega))

    def terms(self):
        with np.errstate(divide="ignore"):
            return self.lam, np.log(self.chi / 2.0), np.log(self.psi / 2.0), -np.inf, 1.0


@dataclass(frozen=True)
class NVMParams:
    alpha: float
    sigma: float
    mixing: GenGammaParams | GigParams

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValidationError("alpha must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError("sigma must be positive")
        if not isinstance(self.mixing, (GenGammaParams, GigParams)):
            raise ValidationError("mixing must be GenGammaParams or GigParams")

    @property
    def family(self) -> str:
        return GVG if isinstance(self.mixing, GenGammaParams) else GH


def mixing_logpdf(params, u):
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValidationError("mixing density is defined for u > 0")
    a, lb, lc, lq, p = params.terms()
    t = np.log(u)
    with np.errstate(over="ignore"):
        h = (a - 1.0) * t - np.exp(lb - t) - np.exp(lc + t) - np.exp(lq + p * t)
    return h + params.log_norm()


def mixing_pdf(params, u):
    """Normalized mixing density at ``u > 0``."""
    out = np.exp(mixing_logpdf(params, u))
    return float(out) if np.ndim(u) == 0 else out


# -- concave log-integrand machinery -------------------------------------


def _e(x):
    return np.exp(np.minimum(x, _EXP_CAP))


class _LogIntegrand:
    """h(t) = a t - exp(lb - t) - exp(lc + t) - exp(lq + p t), one row per point.

    Every coefficient is a column vector so that ``h`` broadcasts against
    node arrays of shape ``(npts, m)``.
    """

    def __init__(self, a, lb, lc, lq, p):
        a, lb, lc, lq = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, lb, lc, lq)))
        self.a, self.lb, self.lc, self.lq = (v.reshape(-1, 1) for v in (a, lb, lc, lq))
        self.p = float(p)
        self.lqp = self.lq + np.log(self.p)
        self.lqp2 = self.lq + 2.0 * np.log(self.p)

    def __len__(self):
        return self.a.shape[0]

    def take(self, idx):
        out = object.__new__(_LogIntegrand)
        for name in ("a", "lb", "lc", "lq", "lqp", "lqp2"):
            setattr(out, name, getattr(self, name)[idx])
        out.p = self.p
        return out

    def h(self, t):
        return self.a * t - _e(self.lb - t) - _e(self.lc + t) - _e(self.lq + self.p * t)

    def dh(self, t):
        return self.a + _e(self.lb - t) - _e(self.lc + t) - _e(self.lqp + self.p * t)

    def d2h(self, t):
        return -_e(self.lb - t) - _e(self.lc + t) - _e(self.lqp2 + self.p * t)

    def mode(self):
        """Root of h' (column vector); NaN where h has no interior maximum."""
        shape = self.a.shape
        lo = np.full(shape, -1.0)
        hi = np.full(shape, 1.0)
        for _ in range(10):
            bad = self.dh(lo) <= 0
            if not bad.any():
                break
            lo = np.where(bad, 2.0 * lo, lo)
        for _ in range(10):
            bad = self.dh(hi) >= 0
            if not bad.any():
                break
            hi = np.where(bad, 2.0 * hi, hi)
        ok = (self.dh(lo) > 0) & (self.dh(hi) < 0)
        t = 0.5 * (lo + hi)
        for _ in range(200):
            g = self.dh(t)
            lo = np.where(g > 0, t, lo)
            hi = np.where(g > 0, hi, t)
            tn = t - g / self.d2h(t)
            outside = ~((tn > lo) & (tn < hi))
            tn = np.where(outside, 0.5 * (lo + hi), tn)
            done = (np.abs(tn - t) <= 1e-13 * np.maximum(1.0, np.abs(t))) | ~ok
            t = tn
            if done.all():
                break
        return np.where(ok, t, np.nan)

    def edge(self, m, hm, sign):
        """Walk away from the mode until h has dropped by _DROP (or _MAX_SPAN)."""
        off = np.maximum(1.0 / np.sqrt(-self.d2h(m)), 1e-200)
        for _ in range(64):
            short = (self.h(m + sign * off) > hm - _DROP) & (off < _MAX_SPAN)
            if not short.any():
                break
            off = np.where(short, np.minimum(2.0 * off, _MAX_SPAN), off)
        return m + sign * off

    def tail(self, t_edge, hm, sign):
        """Mass beyond ``t_edge`` (relative to exp(hm)), h treated as linear there."""
        val = np.exp(self.h(t_edge) - hm)
        slope = self.dh(t_edge)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where((sign * slope < 0) & (val > np.exp(-_DROP)), val / np.abs(slope), 0.0)
        return out


def _trapezoid(f, lo, hi, tol, atol=0.0, n0=32, max_level=14):
    """Trapezoid rule with step halving on per-row intervals ``[lo, hi]``.

    ``f`` maps an ``(npts, m)`` node array to integrand values. Rows stop
    contributing to the convergence check once the change falls below
    ``tol * |estimate| + atol``.
    """
    span = hi - lo
    n = n0
    v = f(lo + span * np.linspace(0.0, 1.0, n + 1))
    total = 0.5 * (v[:, :1] + v[:, -1:]) + v[:, 1:-1].sum(axis=1, keepdims=True)
    est = total * span / n
    for _ in range(max_level):
        total = total + f(lo + span * ((np.arange(n) + 0.5) / n)).sum(axis=1, keepdims=True)
        n *= 2
        new = total * span / n
        err = np.abs(new - est)
        est = new
        if np.all(err <= tol * np.abs(new) + atol):
            return est
    worst = float(np.max(err / np.maximum(np.abs(est), 1e-300)))
    raise NumericalError(f"quadrature did not converge with {n} panels (relative change {worst:.3g})")


def _pdf_integrand(params: NVMParams, x):
    a_g, lb_g, lc_g, lq, p = params.mixing.terms()
    s2 = params.sigma**2
    with np.errstate(divide="ignore"):
        lb = np.logaddexp(np.log(x * x / (2.0 * s2)), lb_g)
        lc = np.logaddexp(np.log(params.alpha**2 / (2.0 * s2)), lc_g)
    const = params.mixing.log_norm() - 0.5 * _LOG_2PI - np.log(params.sigma) + x * params.alpha / s2
    return _LogIntegrand(a_g - 0.5, lb, lc, lq, p), const


@numba.njit(cache=True)
def _h(t, a, lb, lc, lq, p):
    return (a * t - math.exp(min(lb - t, _EXP_CAP)) - math.exp(min(lc + t, _EXP_CAP))
            - math.exp(min(lq + p * t, _EXP_CAP)))


@numba.njit(cache=True)
def _dh(t, a, lb, lc, lq, p):
    return (a + math.exp(min(lb - t, _EXP_CAP)) - math.exp(min(lc + t, _EXP_CAP))
            - p * math.exp(min(lq + p * t, _EXP_CAP)))


@numba.njit(cache=True)
def _d2h(t, lb, lc, lq, p):
    return (-math.exp(min(lb - t, _EXP_CAP)) - math.exp(min(lc + t, _EXP_CAP))
            - p * p * math.exp(min(lq + p * t, _EXP_CAP)))


@numba.njit(cache=True)
def _hdiff(d, m, a, lb, lc, lq, p):
    """``h(m + d) - h(m)`` with the first-order terms kept exact, so that
    a very sharp peak (large ``|h(m)|``) is still resolved."""
    return (a * d - math.exp(min(lb - m, _EXP_CAP)) * math.expm1(-d)
            - math.exp(min(lc + m, _EXP_CAP)) * math.expm1(d)
            - math.exp(min(lq + p * m, _EXP_CAP)) * math.expm1(p * d))


@numba.njit(cache=True)
def _log_integral(a, lb, lc, lq, p, tol, out, status):
    """log of int exp(h(t)) dt for each coefficient set (scalar kernel).

    ``status[i]`` is 0 on success, 1 if h has no interior maximum (the
    integral diverges) and 2 if the trapezoid rule failed to converge.
    """
    for i in range(a.size):
        ai, bi, ci, qi = a[i], lb[i], lc[i], lq[i]
        lo, hi = -1.0, 1.0
        for _ in range(10):
            if _dh(lo, ai, bi, ci, qi, p) > 0.0:
                break
            lo *= 2.0
        for _ in range(10):
            if _dh(hi, ai, bi, ci, qi, p) < 0.0:
                break
            hi *= 2.0
        if not (_dh(lo, ai, bi, ci, qi, p) > 0.0 and _dh(hi, ai, bi, ci, qi, p) < 0.0):
            out[i] = np.inf
            status[i] = 1
            continue
        t = 0.5 * (lo + hi)
        for _ in range(200):
            g = _dh(t, ai, bi, ci, qi, p)
            if g > 0.0:
                lo = t
            else:
                hi = t
            tn = t - g / _d2h(t, bi, ci, qi, p)
            if not (lo < tn < hi):
                tn = 0.5 * (lo + hi)
            if abs(tn - t) <= 1e-13 * max(1.0, abs(t)):
                t = tn
                break
            t = tn
        m = t
        hm = _h(m, ai, bi, ci, qi, p)
        width = 1.0 / math.sqrt(-_d2h(m, bi, ci, qi, p))
        if width < _LAPLACE_WIDTH:
            # the peak is nearly Gaussian: the Laplace estimate is exact to O(width**2)
            out[i] = hm + _HALF_LOG_2PI + math.log(width)
            status[i] = 0
            continue
        edges = np.empty(2)
        tails = 0.0
        for side in range(2):
            sign = -1.0 if side == 0 else 1.0
            off = width
            while off < _MAX_SPAN and _hdiff(sign * off, m, ai, bi, ci, qi, p) > -_DROP:
                off = min(2.0 * off, _MAX_SPAN)
            edges[side] = sign * off
            val = math.exp(_hdiff(sign * off, m, ai, bi, ci, qi, p))
            slope = _dh(m + sign * off, ai, bi, ci, qi, p)
            if val > math.exp(-_DROP) and sign * slope < 0.0:
                tails += val / abs(slope)
        span = edges[1] - edges[0]
        n = 32
        total = 0.5 * (math.exp(_hdiff(edges[0], m, ai, bi, ci, qi, p))
                       + math.exp(_hdiff(edges[1], m, ai, bi, ci, qi, p)))
        for j in range(1, n):
            total += math.exp(_hdiff(edges[0] + span * j / n, m, ai, bi, ci, qi, p))
        est = total * span / n
        status[i] = 2
        for _ in range(14):
            for j in range(n):
                total += math.exp(_hdiff(edges[0] + span * (j + 0.5) / n, m, ai, bi, ci, qi, p))
            n *= 2
            new = total * span / n
            done = abs(new - est) <= tol * abs(new)
            est = new
            if done:
                status[i] = 0
                break
        out[i] = hm + math.log(est + tails)


def nvm_logpdf(params: NVMParams, x, tol: float = 1e-8) -> np.ndarray:
    """Log-density at each ``x``; ``inf`` where the density diverges
    (only possible at ``x = 0`` when the mixing law has heavy mass near 0)."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if not np.all(np.isfinite(x)):
        raise ValidationError("x must be finite")
    H, const = _pdf_integrand(params, x)
    out = np.empty(x.size)
    status = np.zeros(x.size, dtype=np.int64)
    _log_integral(H.a[:, 0].copy(), H.lb[:, 0].copy(), H.lc[:, 0].copy(), H.lq[:, 0].copy(), H.p, tol,
                  out, status)
    if np.any(status == 2):
        bad = int(np.flatnonzero(status == 2)[0])
        raise NumericalError(f"density quadrature did not converge at x={x[bad]!r} for {params}")
    return out + const


def nvm_pdf(params: NVMParams, x, tol: float = 1e-8):
    """Density of the variance-mean mixture, by quadrature over ``t = log u``."""
    out = np.exp(nvm_logpdf(params, x, tol))
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def nvm_cdf(params: NVMParams, x, tol: float = 1e-8):
    """Distribution function; the integration range follows the mixing law."""
    xa = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if np.any(np.isnan(xa)):
        raise ValidationError("x must not be NaN")
    a, lb, lc, lq, p = params.mixing.terms()
    G = _LogIntegrand(a, lb, lc, lq, p)
    m = G.mode()
    hm = G.h(m)
    lo = float(G.edge(m, hm, -1.0)[0, 0])
    hi = float(G.edge(m, hm, 1.0)[0, 0])
    scale = np.exp(hm[0, 0] + params.mixing.log_norm())
    alpha, sigma = params.alpha, params.sigma
    col = xa[:, None]

    def f(t):
        z = (col - alpha * np.exp(t)) * np.exp(-0.5 * t) / sigma
        return ndtr(z) * np.exp(G.h(t) - hm[0, 0])

    n = xa.size
    lo_col, hi_col = np.array([[lo]]), np.array([[hi]])
    mass = _trapezoid(lambda t: np.exp(G.h(t) - hm[0, 0]), lo_col, hi_col, tol)[0, 0]
    # probabilities far below 1e-15 need no relative accuracy
    body = _trapezoid(f, np.full((n, 1), lo), np.full((n, 1), hi), tol, atol=1e-15 * mass)[:, 0]
    left = np.where(xa > 0, 1.0, np.where(xa < 0, 0.0, 0.5))
    right = 0.0 if alpha > 0 else 1.0 if alpha < 0 else 0.5
    tails = left * G.tail(np.array([[lo]]), hm, -1.0)[0, 0] + right * G.tail(np.array([[hi]]), hm, 1.0)[0, 0]
    out = np.clip(scale * (body + tails), 0.0, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


# -- fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class NvmFit:
    params: NVMParams
    log_likelihood: float
    converged: bool
    n_evaluations: int


def _to_vector(params: NVMParams) -> np.ndarray:
    g = params.mixing
    if isinstance(g, GenGammaParams):
        return np.array([params.alpha, np.log(params.sigma), np.log(g.shape_d - 0.5), np.log(g.power_p)])
    return np.array([params.alpha, np.log(params.sigma), g.lam, 0.5 * np.log(g.chi * g.psi)])


def _from_vector(v, family: str) -> NVMParams:
    alpha, log_sigma = v[0], v[1]
    if family == GVG:
        if v[3] > np.log(_MAX_POWER) or v[2] > np.log(_MAX_SHAPE - 0.5):
            raise ValidationError("GVG shape outside the fitting box")
        mixing = GenGammaParams(1.0, 0.5 + np.exp(v[2]), np.exp(v[3]))
    else:
        omega = np.exp(v[3])
        mixing = GigParams(v[2], omega, omega)
    return NVMParams(float(alpha), float(np.exp(log_sigma)), mixing)


def _fit_ready(params: NVMParams, family: str) -> NVMParams:
    """Project ``params`` onto the fitted sub-family (unit GVG scale, chi = psi)."""
    g = params.mixing
    if family == GVG:
        if not isinstance(g, GenGammaParams):
            raise ValidationError("init must use generalized gamma mixing for GVG")
        # u -> u/scale with alpha*scale, sigma*sqrt(scale) leaves the law unchanged
        c = g.scale
        d = min(max(g.shape_d, 0.5 + 1e-6), _MAX_SHAPE)
        p = min(g.power_p, _MAX_POWER)
        return NVMParams(params.alpha * c, params.sigma * np.sqrt(c), GenGammaParams(1.0, d, p))
    if not isinstance(g, GigParams):
        raise ValidationError("init must use GIG mixing for GH")
    if g.chi > 0 and g.psi > 0:
        c = np.sqrt(g.chi / g.psi)
        omega = np.sqrt(g.chi * g.psi)
        return NVMParams(params.alpha * c, params.sigma * np.sqrt(c), GigParams(g.lam, omega, omega))
    return NVMParams(params.alpha, params.sigma, GigParams(g.lam, 1.0, 1.0))


def default_init(sample, family: str = GVG) -> NVMParams:
    """Moment-matched start with unit-mean-scale mixing."""
    x = np.asarray(sample, dtype=float)
    if family == GVG:
        mixing = GenGammaParams(1.0, 1.5, 1.0)
        eu, vu = 1.5, 1.5
    elif family == GH:
        mixing = GigParams(1.0, 1.0, 1.0)
        k1, k2, k3 = kve(1.0, 1.0), kve(2.0, 1.0), kve(3.0, 1.0)
        eu = k2 / k1
        vu = k3 / k1 - eu**2
    else:
        raise ValidationError(f"unknown family {family!r}")
    alpha = float(x.mean()) / eu
    var = float(x.var())
    s2 = max(var - alpha**2 * vu, 0.1 * var, 1e-12) / eu
    return NVMParams(alpha, float(np.sqrt(s2)), mixing)


def nvm_loglik(params: NVMParams, sample, tol: float = 1e-8) -> float:
    ll = nvm_logpdf(params, sample, tol)
    return float(np.sum(ll)) if np.all(np.isfinite(ll)) else -np.inf


def fit_nvm(sample, family: str = GVG, init: NVMParams | None = None, max_evaluations: int = 2000,
            step: float = 0.25, tol: float = 1e-8) -> NvmFit:
    """Maximum likelihood by Nelder-Mead over unconstrained coordinates.

    GVG fits use ``(alpha, log sigma, log(d - 1/2), log p)`` with the mixing
    scale held at 1 (it is confounded with alpha and sigma). ``d > 1/2``
    keeps the density finite at 0. GH fits use ``(alpha, log sigma, lambda,
    log omega)`` with ``chi = psi = omega``, which again removes the
    scale confounding. GVG shapes are confined to ``d <= 1e4`` and
    ``p <= 50``.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 30:
        raise SizeError(f"sample of length {x.size} too short for an NVM fit (need >= 30)")
    if not np.all(np.isfinite(x)):
        raise ValidationError("sample contains non-finite values")
    if family not in (GVG, GH):
        raise ValidationError(f"unknown family {family!r}")
    if init is None:
        init = default_init(x, family)
    start = _fit_ready(init, family)
    v0 = _to_vector(start)

    def objective(v):
        try:
            ll = nvm_loglik(_from_vector(v, family), x, tol)
        except (ValidationError, NumericalError, FloatingPointError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    f0 = objective(v0)
    simplex = np.vstack([v0, v0 + step * np.eye(v0.size)])
    res = minimize(objective, v0, method="Nelder-Mead",
                   options=dict(maxfev=max_evaluations, initial_simplex=simplex, xatol=1e-5, fatol=1e-7))
    if np.isfinite(res.fun) and res.fun <= f0:
        best, fbest = res.x, res.fun
    else:
        best, fbest = v0, f0
    return NvmFit(_from_vector(best, family), float(-fbest), bool(res.success), int(res.nfev))


@dataclass(frozen=True)
class AlphaTrack:
    """Per-window NVM fits; row ``i`` covers ``series[starts[i] : starts[i] + window]``."""

    window: int
    shift: int
    starts: np.ndarray
    alpha: np.ndarray
    log_likelihood: np.ndarray
    converged: np.ndarray

    def __len__(self):
        return self.alpha.size


def alpha_track(series, window: int = 100, shift: int = 1, family: str = GVG,
                max_evaluations: int = 2000, tol: float = 1e-6) -> AlphaTrack:
    """Fit an NVM law at every window position, warm-starting each fit
    from the previous window, and record the drift ``alpha``."""
    x = np.asarray(series, dtype=float).ravel()
    if shift < 1:
        raise ValidationError("shift must be >= 1")
    if x.size < window:
        raise SizeError(f"series length {x.size} shorter than the window {window}")
    starts = np.arange(0, x.size - window + 1, shift)
    alpha = np.empty(starts.size)
    ll = np.empty(starts.size)
    conv = np.zeros(starts.size, dtype=bool)
    prev = None
    for i, s in enumerate(starts):
        try:
            fit = fit_nvm(x[s : s + window], family, init=prev, max_evaluations=max_evaluations,
                          step=0.25 if prev is None else 0.05, tol=tol)
        except (ValidationError, SizeError, NumericalError) as exc:
            raise type(exc)(f"window {i}: {exc}") from exc
        alpha[i] = fit.params.alpha
        ll[i] = fit.log_likelihood
        conv[i] = fit.converged
        prev = fit.params
    return AlphaTrack(window, shift, starts, alpha, ll, conv)
