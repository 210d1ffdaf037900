"""Parameter estimation for finite normal mixtures.

Two estimators live here:

* :func:`em_fit` -- classical EM over weights, locations and scales, with a
  scale floor and optional warm start (the building block of the moving
  separation of mixtures).
* :func:`grid_em_fit` -- the weights-only EM of the grid method: component
  parameters are frozen at the nodes of a :class:`Grid` and only the node
  weights are estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateDataError, NumericalSupportError, SizeError, ValidationError
from .mixture import NormalMixture, mixture_logpdf

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    rel_tolerance: float = 1e-8
    scale_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if not 0 < self.rel_tolerance < 1:
            raise ValidationError("rel_tolerance must lie in (0, 1)")
        if not 0 < self.scale_floor < 1:
            raise ValidationError("scale_floor must lie in (0, 1)")


@dataclass(frozen=True)
class FitResult:
    mixture: NormalMixture
    log_likelihood_trace: np.ndarray
    converged: bool
    iterations: int

    @property
    def log_likelihood(self) -> float:
        return float(self.log_likelihood_trace[-1])


@dataclass(frozen=True)
class Grid:
    """Fixed (location, scale) nodes for the weights-only EM.

    Nodes are stored level-major: all locations of the first scale level,
    then all locations of the next one.
    """

    locations: np.ndarray
    scales: np.ndarray
    n_levels: int = field(default=1)

    def __post_init__(self):
        a = np.array(self.locations, dtype=float).ravel()
        s = np.array(self.scales, dtype=float).ravel()
        if a.size != s.size:
            raise ValidationError("grid locations and scales differ in length")
        if a.size < 2:
            raise ValidationError("a grid needs at least 2 nodes")
        if np.any(s <= 0) or not np.all(np.isfinite(a)) or not np.all(np.isfinite(s)):
            raise ValidationError("grid scales must be positive and finite")
        if self.n_levels < 1 or a.size % self.n_levels:
            raise ValidationError("node count must be a multiple of n_levels")
        for lev in np.split(a, self.n_levels):
            if lev.size > 1 and np.any(np.diff(lev) <= 0):
                raise ValidationError("node locations must increase within each scale level")
        a.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "locations", a)
        object.__setattr__(self, "scales", s)

    @property
    def K(self) -> int:
        return self.locations.size

    def mixture(self, weights) -> NormalMixture:
        return NormalMixture(weights, self.locations, self.scales)

    def log_density(self, x) -> np.ndarray:
        """Matrix of node log-densities, shape ``(len(x), K)``."""
        x = np.asarray(x, dtype=float)
        z = (x[:, None] - self.locations) / self.scales
        return -0.5 * z * z - np.log(self.scales) - _LOG_SQRT_2PI


def build_grid(values, n_locations: int = 50, scale_factors=(0.5, 1.5)) -> Grid:
    """Equally spaced locations over ``[min, max]`` of ``values``, one copy
    per scale level, each level's scale a multiple of the values' std."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise SizeError("need at least 2 finite values to build a grid")
    lo, hi = float(v.min()), float(v.max())
    sd = float(v.std())
    if hi <= lo or sd <= 0:
        raise DegenerateDataError("cannot build a grid over constant values")
    if n_locations < 2:
        raise ValidationError("n_locations must be >= 2")
    locs = np.linspace(lo, hi, n_locations)
    factors = list(scale_factors)
    return Grid(
        np.tile(locs, len(factors)),
        np.repeat([f * sd for f in factors], n_locations),
        n_levels=len(factors),
    )


def log_likelihood(m: NormalMixture, sample) -> float:
    """Sum of mixture log-densities over the sample."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise SizeError("sample is empty")
    ll = mixture_logpdf(m, x)
    if not np.all(np.isfinite(ll)):
        raise NumericalSupportError("mixture density underflows at some sample point")
    return float(np.sum(ll))


def _validate_sample(sample, k):
    x = np.asarray(sample, dtype=float).ravel()
    if k < 1:
        raise ValidationError("k must be >= 1")
    if x.size < 5 * k:
        raise SizeError(f"sample of length {x.size} too short for k={k} (need >= {5 * k})")
    if not np.all(np.isfinite(x)):
        raise ValidationError("sample contains non-finite values")
    sd = float(x.std())
    if sd == 0.0:
        raise DegenerateDataError("all sample values are identical")
    return x, sd


def initialize(sample, k: int, seed: int = 0) -> NormalMixture:
    """Deterministic start: locations at the (i - 0.5)/k quantiles, common
    scale std/k, uniform weights. ``seed`` is accepted for API symmetry; the
    rule involves no randomness."""
    x, sd = _validate_sample(sample, k)
    levels = (np.arange(1, k + 1) - 0.5) / k
    locs = np.quantile(x, levels)
    return NormalMixture(np.full(k, 1.0 / k), locs, np.full(k, sd / k))


@numba.njit(cache=True)
def _estep(x, w, mu, sd, resp):
    n = x.size
    k = w.size
    ll = 0.0
    for i in range(n):
        mx = -np.inf
        for j in range(k):
            if w[j] > 0.0:
                z = (x[i] - mu[j]) / sd[j]
                v = math.log(w[j]) - math.log(sd[j]) - 0.5 * z * z
            else:
                v = -np.inf
            resp[i, j] = v
            if v > mx:
                mx = v
        tot = 0.0
        for j in range(k):
            e = math.exp(resp[i, j] - mx)
            resp[i, j] = e
            tot += e
        for j in range(k):
            resp[i, j] /= tot
        ll += mx + math.log(tot)
    return ll - n * 0.9189385332046727


@numba.njit(cache=True)
def _em_kernel(x, w, mu, sd, floor, max_iter, tol, trace):
    n = x.size
    k = w.size
    resp = np.empty((n, k))
    ll_prev = _estep(x, w, mu, sd, resp)
    trace[0] = ll_prev
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        for j in range(k):
            nk = 0.0
            sx = 0.0
            for i in range(n):
                nk += resp[i, j]
                sx += resp[i, j] * x[i]
            if nk <= 1e-300:
                w[j] = 0.0
                continue
            m = sx / nk
            ss = 0.0
            for i in range(n):
                d = x[i] - m
                ss += resp[i, j] * d * d
            s = math.sqrt(ss / nk)
            mu[j] = m
            sd[j] = s if s > floor else floor
            w[j] = nk / n
        tot = 0.0
        for j in range(k):
            tot += w[j]
        for j in range(k):
            w[j] /= tot
        ll = _estep(x, w, mu, sd, resp)
        trace[it] = ll
        if abs(ll - ll_prev) <= tol * abs(ll_prev):
            converged = True
            break
        ll_prev = ll
    return it, converged


def _run_em(x, k, config, floor, start):
    w = start.weights.copy()
    mu = start.locations.copy()
    s = np.maximum(start.scales, floor)
    trace = np.empty(config.max_iterations + 1)
    it, converged = _em_kernel(x, w, mu, s, floor, config.max_iterations, config.rel_tolerance, trace)
    return w, mu, s, trace[: it + 1], int(it), bool(converged)


def em_fit(sample, k: int, config: EmConfig | None = None, warm_start: NormalMixture | None = None,
           restart: bool = False) -> FitResult:
    """Maximum-likelihood fit of a k-component normal mixture by EM.

    Scales are floored at ``config.scale_floor`` times the sample standard
    deviation. Components are returned sorted by location.

    Raises
    ------
    SizeError
        If the sample has fewer than ``5 * k`` points.
    DegenerateDataError
        If every sample value is the same.

    With ``restart=True`` and a warm start given, EM is also run from the
    default quantile start and the fit with the higher final
    log-likelihood is kept (ties go to the warm start).
    """
    config = config or EmConfig()
    x, sd = _validate_sample(sample, k)
    floor = config.scale_floor * sd
    if k == 1:
        m = NormalMixture([1.0], [x.mean()], [max(sd, floor)])
        return FitResult(m, np.array([log_likelihood(m, x)]), True, 1)

    if warm_start is not None and warm_start.k != k:
        raise ValidationError(f"warm start has {warm_start.k} components, expected {k}")
    fresh = warm_start is None or restart
    best = _run_em(x, k, config, floor, warm_start) if warm_start is not None else None
    if fresh:
        cand = _run_em(x, k, config, floor, initialize(x, k, config.seed))
        if best is None or cand[3][-1] > best[3][-1]:
            best = cand
    w, mu, s, trace, it, converged = best
    return FitResult(NormalMixture(w, mu, s).sorted(), trace.copy(), converged, it)


def _grid_em_scaled(F, w, max_iter, tol, offset):
    """Weights-only EM on a row-rescaled node density matrix ``F``.

    ``offset`` is the sum of the per-row log scale factors, so that the
    returned log-likelihood is the true one.
    """
    n = F.shape[0]
    w = w.copy()
    denom = F @ w
    ll_prev = np.sum(np.log(denom)) + offset
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        w = w * (F.T @ (1.0 / denom)) / n
        w /= w.sum()
        denom = F @ w
        ll = np.sum(np.log(denom)) + offset
        if abs(ll - ll_prev) <= tol * abs(ll_prev):
            converged = True
            break
        ll_prev = ll
    return w, ll, it, converged


def _scaled_node_densities(grid: Grid, x):
    with np.errstate(over="ignore", invalid="ignore"):
        L = grid.log_density(x)
    rowmax = L.max(axis=1)
    bad = np.flatnonzero(~np.isfinite(rowmax))
    if bad.size:
        raise NumericalSupportError(
            f"sample point {x[bad[0]]!r} (position {bad[0]}) lies outside the support of every grid node"
        )
    return np.exp(L - rowmax[:, None]), rowmax


def grid_em_fit(sample, grid: Grid, warm_start=None, config: EmConfig | None = None) -> np.ndarray:
    """Estimate node weights with node locations/scales held fixed.

    Returns a length-K vector on the probability simplex.
    """
    config = config or EmConfig()
    x = np.asarray(sample, dtype=float).ravel()
    if x.size < 10:
        raise SizeError("grid EM needs at least 10 sample points")
    w0 = _simplex_start(warm_start, grid.K)
    F, rowmax = _scaled_node_densities(grid, x)
    w, _, _, _ = _grid_em_scaled(F, w0, config.max_iterations, config.rel_tolerance, rowmax.sum())
    return w


def _simplex_start(warm_start, K):
    if warm_start is None:
        return np.full(K, 1.0 / K)
    w0 = np.asarray(warm_start, dtype=float).ravel()
    if w0.size != K or np.any(w0 < 0) or abs(w0.sum() - 1.0) > 1e-9:
        raise ValidationError("warm_start must be a length-K vector on the simplex")
    return w0 / w0.sum()


def grid_log_likelihood(sample, grid: Grid, weights) -> float:
    L = grid.log_density(np.asarray(sample, dtype=float).ravel())
    with np.errstate(divide="ignore"):
        return float(np.sum(logsumexp(L + np.log(np.asarray(weights)), axis=1)))
