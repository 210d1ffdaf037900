"""Moving separation of mixtures over a sliding window.

``msm_pass`` fits a k-component normal mixture at every window position and
records the dynamic/diffusive split of each fit. ``grid_msm_pass`` runs the
weights-only grid EM the same way and records the node weight vectors.
Both chains are warm-started: window ``i`` starts from the estimate of
window ``i - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .em import (
    EmConfig,
    Grid,
    _grid_em_scaled,
    _scaled_node_densities,
    em_fit,
)
from .errors import NumericalSupportError, SizeError, ValidationError
from .mixture import NormalMixture, variance_decomposition

FORWARD = "forward"
BACKWARD = "backward"

# warm starts below this weight are treated as dead components
_MIN_WARM_WEIGHT = 1e-6
# share of uniform mass blended into grid warm starts so that nodes can revive
_GRID_REVIVAL = 1e-6


@dataclass(frozen=True)
class ComponentSeries:
    """Per-window dynamic and diffusive variance.

    ``times[i]`` is the index (in the analysed series) of the most recent
    sample of window ``i``: the right edge for a forward pass, the left
    edge for a backward pass. Arrays are always in ascending time order.
    """

    window_size: int
    direction: str
    times: np.ndarray
    dynamic: np.ndarray
    diffusive: np.ndarray
    mixtures: tuple
    degenerate: np.ndarray

    def __len__(self):
        return self.times.size

    @property
    def total(self) -> np.ndarray:
        return self.dynamic + self.diffusive


@dataclass(frozen=True)
class WeightTrack:
    """Grid weight vectors, one row per window position.

    Row ``i`` covers ``series[starts[i] : starts[i] + window_size]``.
    """

    grid: Grid
    window_size: int
    shift: int
    weights: np.ndarray
    starts: np.ndarray

    def __len__(self):
        return self.weights.shape[0]


def increments(series) -> np.ndarray:
    """First differences ``x[i+1] - x[i]``."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise SizeError("need at least 2 samples to form increments")
    return np.diff(x)


def _fallback_mixture(window_values, k, scale):
    c = float(np.mean(window_values))
    return NormalMixture(np.full(k, 1.0 / k), np.full(k, c), np.full(k, scale))


def _forward(x, window, k, config, restart):
    n = x.size
    n_pos = n - window + 1
    dyn = np.empty(n_pos)
    dif = np.empty(n_pos)
    degenerate = np.zeros(n_pos, dtype=bool)
    mixtures = []
    sd_all = float(x.std())
    fallback_scale = config.scale_floor * sd_all if sd_all > 0 else config.scale_floor
    prev = None
    for i in range(n_pos):
        seg = x[i : i + window]
        if seg.max() == seg.min():
            m = _fallback_mixture(seg, k, fallback_scale)
            degenerate[i] = True
            prev = None
        else:
            if prev is not None and prev.weights.min() < _MIN_WARM_WEIGHT:
                prev = None
            m = em_fit(seg, k, config, warm_start=prev, restart=restart).mixture
            prev = m
        split = variance_decomposition(m)
        dyn[i] = split.dynamic
        dif[i] = split.diffusive
        mixtures.append(m)
    return dyn, dif, mixtures, degenerate


def msm_pass(series, window: int = 50, k: int = 3, config: EmConfig | None = None, direction: str = FORWARD,
             restart: bool = True) -> ComponentSeries:
    """Slide a window of ``window`` samples over ``series`` one step at a time.

    The backward pass is the forward pass applied to the reversed series,
    with every output array reversed back onto the original time axis.
    Each window is warm-started from the previous estimate; with
    ``restart`` a fresh quantile start competes and the likelier fit wins.
    """
    config = config or EmConfig()
    x = np.asarray(series, dtype=float).ravel()
    if direction not in (FORWARD, BACKWARD):
        raise ValidationError(f"direction must be {FORWARD!r} or {BACKWARD!r}")
    if window < 5 * k:
        raise SizeError(f"window {window} too small for k={k} (need >= {5 * k})")
    if x.size <= window:
        raise SizeError(f"series length {x.size} must exceed the window {window}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("series contains non-finite values")

    n = x.size
    if direction == FORWARD:
        dyn, dif, mix, deg = _forward(x, window, k, config, restart)
        times = np.arange(window - 1, n)
    else:
        dyn, dif, mix, deg = _forward(x[::-1].copy(), window, k, config, restart)
        dyn, dif, deg = dyn[::-1].copy(), dif[::-1].copy(), deg[::-1].copy()
        mix = mix[::-1]
        times = (n - 1) - np.arange(window - 1, n)[::-1]
    return ComponentSeries(window, direction, times, dyn, dif, tuple(mix), deg)


def median_smooth(values, width: int = 5) -> np.ndarray:
    """Moving median used to smooth component trajectories."""
    if width < 1:
        raise ValidationError("width must be >= 1")
    return median_filter(np.asarray(values, dtype=float), size=width, mode="nearest")


def grid_msm_pass(series, grid: Grid, window: int = 100, shift: int = 1, config: EmConfig | None = None) -> WeightTrack:
    """Weights-only grid EM on every window position."""
    config = config or EmConfig()
    x = np.asarray(series, dtype=float).ravel()
    if window < 10:
        raise SizeError("grid window must be >= 10")
    if shift < 1:
        raise ValidationError("shift must be >= 1")
    if x.size < window:
        raise SizeError(f"series length {x.size} shorter than the window {window}")
    try:
        F, rowmax = _scaled_node_densities(grid, x)
    except NumericalSupportError:
        with np.errstate(over="ignore", invalid="ignore"):
            L = grid.log_density(x)
        pos = int(np.flatnonzero(~np.isfinite(L.max(axis=1)))[0])
        first = max(0, -(-(pos - window + 1) // shift))
        raise NumericalSupportError(
            f"window {first}: sample {pos} lies outside the support of every grid node"
        ) from None

    starts = np.arange(0, x.size - window + 1, shift)
    W = np.empty((starts.size, grid.K))
    uniform = np.full(grid.K, 1.0 / grid.K)
    w = uniform
    for r, s in enumerate(starts):
        if r:
            w = (1.0 - _GRID_REVIVAL) * w + _GRID_REVIVAL * uniform
        w, _, _, _ = _grid_em_scaled(
            F[s : s + window], w, config.max_iterations, config.rel_tolerance, rowmax[s : s + window].sum()
        )
        W[r] = w
    return WeightTrack(grid, window, shift, W, starts)
