"""Onset detectors over component series, grid weight tracks and alpha tracks.

Times inside the detectors are positions on the *sample* axis of the
original record. Component series and weight tracks are computed on
increments, whose index ``i`` corresponds to sample ``i + 1``; the pipeline
helpers take care of that offset. Events are reported in milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import chi2

from .em import Grid
from .errors import DegenerateDataError, SizeError, ValidationError
from .mixture import NormalMixture, mixture_cdf
from .msm import BACKWARD, FORWARD, ComponentSeries, WeightTrack
from .nvm import NVMParams, nvm_cdf

REFLECTION_FROM_END = "end"
REFLECTION_FROM_START = "start"
STABILITY_WEIGHTS = "weights"
STABILITY_FIT = "fit"


@dataclass(frozen=True)
class Bounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ValidationError("bounds must be finite")
        if not self.lower < self.upper:
            raise ValidationError(f"lower bound {self.lower} must be below upper bound {self.upper}")


@dataclass(frozen=True)
class EventList:
    """Sorted event times in milliseconds with a detector label."""

    times_ms: np.ndarray
    detector: str = ""
    matched: np.ndarray | None = None

    def __post_init__(self):
        t = np.array(self.times_ms, dtype=float).ravel()
        if not np.all(np.isfinite(t)):
            raise ValidationError("event times must be finite")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("event times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times_ms", t)
        if self.matched is not None:
            m = np.array(self.matched, dtype=bool).ravel()
            if m.size != t.size:
                raise ValidationError("matched flags must align with event times")
            object.__setattr__(self, "matched", m)

    @classmethod
    def from_times(cls, times, detector: str = "") -> "EventList":
        """Build from unsorted times, collapsing exact duplicates."""
        return cls(np.unique(np.asarray(times, dtype=float)), detector)

    def __len__(self):
        return self.times_ms.size


@dataclass(frozen=True)
class DetectorParams:
    """Thresholds and shifts of the grid, stability and alpha detectors.

    ``chi_lag`` and ``stability_mode`` select how the stability detector
    forms its chi-square test; ``reflection_rule`` says whether the
    reflection window is measured from the end or the start of the
    previous group.
    """

    z_threshold: float = 0.97
    z_lag: int = 100
    z_shift_ms: float = 150.0
    reflection_window: int = 300
    reflection_rule: str = REFLECTION_FROM_END
    chi_bins: int = 5
    chi_p_threshold: float = 0.9999
    chi_min_group_ms: float = 50.0
    chi_shift_ms: float = 50.0
    chi_lag: int = 100
    stability_mode: str = STABILITY_WEIGHTS
    alpha_threshold: float = 1.0
    alpha_avg_window: int = 100
    alpha_shift_ms: float = 200.0
    group_factor_j: int = 2

    def __post_init__(self):
        positive = dict(
            z_threshold=self.z_threshold, z_lag=self.z_lag, reflection_window=self.reflection_window,
            chi_min_group_ms=self.chi_min_group_ms, chi_lag=self.chi_lag, alpha_threshold=self.alpha_threshold,
            alpha_avg_window=self.alpha_avg_window, group_factor_j=self.group_factor_j,
        )
        for name, v in positive.items():
            if not v > 0:
                raise ValidationError(f"{name} must be positive, got {v}")
        if self.chi_bins < 2:
            raise ValidationError("chi_bins must be >= 2")
        if not 0 < self.chi_p_threshold < 1:
            raise ValidationError("chi_p_threshold must lie in (0, 1)")
        if self.reflection_rule not in (REFLECTION_FROM_END, REFLECTION_FROM_START):
            raise ValidationError(f"unknown reflection_rule {self.reflection_rule!r}")
        if self.stability_mode not in (STABILITY_WEIGHTS, STABILITY_FIT):
            raise ValidationError(f"unknown stability_mode {self.stability_mode!r}")


def _to_ms(positions, rate):
    return np.asarray(positions, dtype=float) * 1000.0 / rate


def _runs(mask) -> list[np.ndarray]:
    """Index arrays of the maximal runs of True in ``mask``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    return np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)


# -- MSM bound crossings ---------------------------------------------------


def calibrate_bounds(rest_values, q_low: float = 0.001, q_high: float = 0.999) -> Bounds:
    """Empirical quantile bounds of component values over a rest period."""
    v = np.asarray(rest_values, dtype=float).ravel()
    if v.size < 100:
        raise SizeError(f"need at least 100 rest values for calibration, got {v.size}")
    if not 0 <= q_low < q_high <= 1:
        raise ValidationError("need 0 <= q_low < q_high <= 1")
    lo, hi = np.quantile(v, [q_low, q_high])
    if not hi > lo:
        raise DegenerateDataError("rest values are constant; bounds cannot be calibrated")
    return Bounds(float(lo), float(hi))


def crossing_positions(values, bounds: Bounds, side: str = "both", min_dwell: int = 1) -> np.ndarray:
    """Positions where ``values`` leaves the band after at least
    ``min_dwell`` consecutive positions inside it.

    ``side`` restricts exits to ``"upper"``, ``"lower"`` or ``"both"``.
    For a one-sided exit, "inside" only refers to the watched bound.
    """
    v = np.asarray(values, dtype=float).ravel()
    if side not in ("both", "upper", "lower"):
        raise ValidationError(f"unknown side {side!r}")
    if min_dwell < 1:
        raise ValidationError("min_dwell must be >= 1")
    # a one-sided detector only needs the value to stay on the calm side
    # of the bound it watches
    if side == "upper":
        inside = v <= bounds.upper
    elif side == "lower":
        inside = v >= bounds.lower
    else:
        inside = (v >= bounds.lower) & (v <= bounds.upper)
    # length of the inside run ending at each position
    run = np.zeros(v.size, dtype=np.int64)
    count = 0
    for i, flag in enumerate(inside):
        count = count + 1 if flag else 0
        run[i] = count
    prev_run = np.concatenate([[0], run[:-1]])
    exits = ~inside & (prev_run >= min_dwell)
    if side == "upper":
        exits &= v > bounds.upper
    elif side == "lower":
        exits &= v < bounds.lower
    return np.flatnonzero(exits)


def threshold_crossings(component: ComponentSeries, bounds: Bounds, side: str = "both",
                        min_dwell: int = 1) -> np.ndarray:
    """Sample indices where the dynamic component exits the bounds from inside."""
    pos = crossing_positions(component.dynamic, bounds, side, min_dwell)
    return component.times[pos] + 1


def confirm_crossings(positions, diffusive, upper: float, horizon: int) -> np.ndarray:
    """Keep the positions after which ``diffusive`` exceeds ``upper`` within
    ``horizon`` steps."""
    d = np.asarray(diffusive, dtype=float)
    pos = np.asarray(positions, dtype=np.int64)
    keep = [p for p in pos if d[p : p + horizon].max(initial=-np.inf) > upper]
    return np.array(keep, dtype=np.int64)


def group_candidates(points, window: int, j: int = 2, sampling_rate_hz: float = 1000.0,
                     detector: str = "") -> EventList:
    """Merge points closer than ``j * window`` samples; each group becomes
    one event at the mean of its members."""
    p = np.sort(np.asarray(points, dtype=float).ravel())
    if window < 1 or j < 1:
        raise ValidationError("window and j must be >= 1")
    if p.size == 0:
        return EventList(np.empty(0), detector)
    gap = j * window
    breaks = np.flatnonzero(np.diff(p) >= gap) + 1
    means = [g.mean() for g in np.split(p, breaks)]
    return EventList.from_times(_to_ms(means, sampling_rate_hz), detector)


def _greedy_pairs(a, b, tolerance):
    """One-to-one pairing, closest pairs first, within ``tolerance``."""
    if a.size == 0 or b.size == 0:
        return []
    d = np.abs(a[:, None] - b[None, :])
    ia, ib = np.nonzero(d <= tolerance)
    order = np.lexsort((ib, ia, d[ia, ib]))
    used_a, used_b, pairs = set(), set(), []
    for i, k in zip(ia[order], ib[order]):
        if i not in used_a and k not in used_b:
            used_a.add(i)
            used_b.add(k)
            pairs.append((int(i), int(k)))
    return sorted(pairs)


def reconcile_fwd_bwd(fwd: EventList, bwd: EventList, tolerance_ms: float, detector: str = "msm") -> EventList:
    """Pair forward and backward events and emit each pair's midpoint."""
    pairs = _greedy_pairs(fwd.times_ms, bwd.times_ms, tolerance_ms)
    mids = [0.5 * (fwd.times_ms[i] + bwd.times_ms[k]) for i, k in pairs]
    return EventList.from_times(mids, detector)


def _window_mask(component: ComponentSeries, start: int, stop: int) -> np.ndarray:
    """Windows lying entirely inside samples ``[start, stop)``.

    A forward window ending at increment ``t`` spans samples
    ``t - w + 1 .. t + 1``; a backward one starting at ``t`` spans
    ``t .. t + w``.
    """
    t = component.times
    w = component.window_size
    if component.direction == FORWARD:
        first, last = t - w + 1, t + 1
    else:
        first, last = t, t + w
    return (first >= start) & (last < stop)


def msm_events(fwd: ComponentSeries, bwd: ComponentSeries, calibration: tuple[int, int],
               params: DetectorParams | None = None, sampling_rate_hz: float = 1000.0,
               tolerance_ms: float = 100.0, q: tuple[float, float] = (0.001, 0.999),
               min_dwell: int | None = None, confirm: bool = True) -> EventList:
    """Bound-crossing detector on forward and backward component series.

    For each direction the dynamic component is calibrated on windows lying
    entirely inside the ``calibration`` sample range. Upward exits after at
    least ``min_dwell`` (default: one window) calm positions are
    candidates; with ``confirm`` a candidate also needs the diffusive
    component to leave its own rest band within the next window. Candidates
    are grouped (gap ``j * window``) and the two directions reconciled.
    """
    params = params or DetectorParams()
    if fwd.direction != FORWARD or bwd.direction != BACKWARD:
        raise ValidationError("expected a forward and a backward component series")
    start, stop = calibration
    if not 0 <= start < stop:
        raise ValidationError(f"invalid calibration range {calibration}")
    dwell = fwd.window_size if min_dwell is None else min_dwell
    lists = []
    for comp in (fwd, bwd):
        cal = _window_mask(comp, start, stop)
        if cal.sum() < 100:
            raise SizeError(
                f"calibration range {calibration} holds {int(cal.sum())} whole windows, need >= 100"
            )
        bounds = calibrate_bounds(comp.dynamic[cal], *q)
        pos = crossing_positions(comp.dynamic, bounds, "upper", dwell)
        if confirm:
            diff_upper = calibrate_bounds(comp.diffusive[cal], *q).upper
            pos = confirm_crossings(pos, comp.diffusive, diff_upper, comp.window_size)
        samples = comp.times[pos] + 1
        lists.append(group_candidates(samples, comp.window_size, params.group_factor_j, sampling_rate_hz,
                                      f"msm-{comp.direction}"))
    return reconcile_fwd_bwd(lists[0], lists[1], tolerance_ms)


# -- grid weight tracks ----------------------------------------------------


def z_distance_series(track: WeightTrack | np.ndarray, lag: int = 100) -> np.ndarray:
    """``||w_i - w_{i-lag}||`` for every row ``i >= lag``."""
    W = track.weights if isinstance(track, WeightTrack) else np.asarray(track, dtype=float)
    if lag < 1:
        raise ValidationError("lag must be >= 1")
    if W.shape[0] <= lag:
        raise SizeError(f"track has {W.shape[0]} rows, need more than lag={lag}")
    return np.linalg.norm(W[lag:] - W[:-lag], axis=1)


def _drop_reflections(runs, reach, rule):
    kept = []
    last_start = last_end = None
    for g in runs:
        if last_start is not None:
            ref = last_end if rule == REFLECTION_FROM_END else last_start
            if g[0] - ref <= reach:
                if rule == REFLECTION_FROM_END:
                    last_end = g[-1]
                continue
        kept.append(g)
        last_start, last_end = g[0], g[-1]
    return kept


def z_detector(z, params: DetectorParams | None = None, sampling_rate_hz: float = 1000.0,
               start_index: float = 0.0, index_step: float = 1.0) -> EventList:
    """Events from runs of ``z > z_threshold``.

    ``z[m]`` is placed at sample ``start_index + m * index_step``. A run
    starting within ``reflection_window`` windows of the previous run is a
    reflection and dropped. Under the default ``"end"`` rule the distance
    is measured from the end of the previous run, kept or not, so a chain
    of reflections is removed as a whole; the ``"start"`` rule measures
    from the start of the previous kept run.
    """
    params = params or DetectorParams()
    z = np.asarray(z, dtype=float)
    runs = _drop_reflections(_runs(z > params.z_threshold), params.reflection_window, params.reflection_rule)
    firsts = [start_index + g[0] * index_step for g in runs]
    return EventList.from_times(_to_ms(firsts, sampling_rate_hz) + params.z_shift_ms, "zdist")


def _pvalue(stat, df):
    return chi2.sf(stat, df)


def chi_square_pvalue(sample, fitted: NormalMixture | NVMParams, bins: int = 5) -> float:
    """Pearson goodness of fit with bins equiprobable under ``fitted``.

    Binning by the fitted cdf value is the same as cutting at the fitted
    quantiles; degrees of freedom are ``bins - 1``.
    """
    x = np.asarray(sample, dtype=float).ravel()
    if bins < 2:
        raise ValidationError("bins must be >= 2")
    if x.size < 5 * bins:
        raise SizeError(f"sample of length {x.size} too short for {bins} bins (need >= {5 * bins})")
    if isinstance(fitted, NormalMixture):
        u = np.asarray(mixture_cdf(fitted, x))
    elif isinstance(fitted, NVMParams):
        u = np.asarray(nvm_cdf(fitted, x))
    else:
        raise ValidationError(f"cannot test against {type(fitted).__name__}")
    idx = np.minimum((u * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    expected = x.size / bins
    stat = float(np.sum((counts - expected) ** 2) / expected)
    return float(_pvalue(stat, bins - 1))


def bin_weights(grid: Grid, weights, bins: int = 5) -> np.ndarray:
    """Pool node weights into ``bins`` location bins of equal node count,
    summing over scale levels. Works on one vector or on rows."""
    W = np.asarray(weights, dtype=float)
    per_level = grid.K // grid.n_levels
    if bins < 2 or per_level < bins:
        raise ValidationError(f"cannot split {per_level} locations per level into {bins} bins")
    edges = np.linspace(0, per_level, bins + 1).round().astype(int)
    label = np.searchsorted(edges, np.arange(per_level), side="right") - 1
    labels = np.tile(label, grid.n_levels)
    out = np.zeros(W.shape[:-1] + (bins,))
    for b in range(bins):
        out[..., b] = W[..., labels == b].sum(axis=-1)
    return out


def homogeneity_pvalue(a, b, n: int) -> np.ndarray:
    """Chi-square homogeneity test between binned weight vectors ``a`` and
    ``b``, each read as counts out of ``n`` observations.

    The statistic is ``sum (A - B)^2 / (A + B)`` over bins with counts;
    degrees of freedom are one less than the number of bins.
    """
    A = n * np.asarray(a, dtype=float)
    B = n * np.asarray(b, dtype=float)
    s = A + B
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(s > 0, (A - B) ** 2 / s, 0.0).sum(axis=-1)
    return _pvalue(stat, A.shape[-1] - 1)


def stability_pvalues(track: WeightTrack, series=None, params: DetectorParams | None = None) -> np.ndarray:
    """Per-window stability p-values.

    ``"weights"`` mode compares window ``i`` with window ``i + chi_lag``
    by a homogeneity test on binned weights (the last ``chi_lag`` windows
    get no value). ``"fit"`` mode tests each window's data against the
    grid mixture with that window's weights and needs ``series``.
    """
    params = params or DetectorParams()
    W = track.weights
    if params.stability_mode == STABILITY_WEIGHTS:
        lag = params.chi_lag
        if W.shape[0] <= lag:
            raise SizeError(f"track has {W.shape[0]} rows, need more than chi_lag={lag}")
        B = bin_weights(track.grid, W, params.chi_bins)
        return homogeneity_pvalue(B[:-lag], B[lag:], track.window_size)
    if series is None:
        raise ValidationError("fit mode needs the analysed series")
    x = np.asarray(series, dtype=float)
    out = np.empty(W.shape[0])
    for r, s in enumerate(track.starts):
        out[r] = chi_square_pvalue(x[s : s + track.window_size], track.grid.mixture(W[r]), params.chi_bins)
    return out


def stability_detector(track: WeightTrack, series=None, params: DetectorParams | None = None,
                       sampling_rate_hz: float = 1000.0, start_index: float | None = None) -> EventList:
    """Events from runs of stability p-values above ``chi_p_threshold``.

    Runs shorter than ``chi_min_group_ms`` are dropped; each remaining run
    gives an event at its first window's start plus ``chi_shift_ms``.
    ``start_index`` is the sample of the first window start (default: the
    track's own first start).
    """
    params = params or DetectorParams()
    p = stability_pvalues(track, series, params)
    base = float(track.starts[0]) if start_index is None else float(start_index)
    min_len = params.chi_min_group_ms * sampling_rate_hz / 1000.0 / track.shift
    firsts = [base + g[0] * track.shift for g in _runs(p > params.chi_p_threshold) if g.size >= min_len]
    return EventList.from_times(_to_ms(firsts, sampling_rate_hz) + params.chi_shift_ms, "chisq")


# -- alpha and window variance --------------------------------------------


def alpha_detector(alpha_series, params: DetectorParams | None = None, sampling_rate_hz: float = 1000.0,
                   start_index: float = 0.0, index_step: float = 1.0) -> EventList:
    """Events where the trailing mean of ``|alpha|`` exceeds ``alpha_threshold``.

    The mean over ``alpha_avg_window`` windows is placed at its last
    window, so ``alpha[m]`` maps to sample ``start_index + m * index_step``;
    the event is the first position of each run minus ``alpha_shift_ms``.
    """
    params = params or DetectorParams()
    a = np.abs(np.asarray(alpha_series, dtype=float))
    w = params.alpha_avg_window
    if a.size < w:
        return EventList(np.empty(0), "alpha")
    avg = sliding_window_view(a, w).mean(axis=1)
    firsts = [start_index + (g[0] + w - 1) * index_step for g in _runs(avg > params.alpha_threshold)]
    return EventList.from_times(_to_ms(firsts, sampling_rate_hz) - params.alpha_shift_ms, "alpha")


def window_variance_detector(myogram, width_ms: float = 40.0, threshold: float = 1.0,
                             sampling_rate_hz: float = 1000.0, j: int = 2) -> EventList:
    """Rolling-variance baseline: rising crossings of ``threshold``, grouped.

    The variance of a window is placed at its last sample.
    """
    x = np.asarray(myogram, dtype=float).ravel()
    if not 30.0 <= width_ms <= 50.0:
        raise ValidationError("width_ms must lie in [30, 50]")
    width = int(round(width_ms * sampling_rate_hz / 1000.0))
    if width < 2:
        raise ValidationError(f"width of {width_ms} ms is fewer than 2 samples")
    if x.size < width:
        return EventList(np.empty(0), "winvar")
    var = sliding_window_view(x, width).var(axis=1)
    above = var > threshold
    rising = np.flatnonzero(above[1:] & ~above[:-1]) + 1
    if above[0]:
        rising = np.concatenate([[0], rising])
    return group_candidates(rising + width - 1, width, j, sampling_rate_hz, "winvar")


# -- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class MatchReport:
    pairs: list = field(default_factory=list)
    false_positives: np.ndarray = field(default_factory=lambda: np.empty(0))
    misses: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_abs_error_ms: float = float("nan")
    detected: EventList | None = None

    @property
    def n_matched(self) -> int:
        return len(self.pairs)


def match_events(detected: EventList, actual: EventList, tolerance_ms: float) -> MatchReport:
    """Greedy one-to-one pairing of detected and actual events.

    ``pairs`` holds ``(detected_ms, actual_ms)`` tuples; the mean absolute
    error is NaN when nothing matched.
    """
    if tolerance_ms < 0:
        raise ValidationError("tolerance must be nonnegative")
    d, a = detected.times_ms, actual.times_ms
    idx = _greedy_pairs(d, a, tolerance_ms)
    pairs = [(float(d[i]), float(a[k])) for i, k in idx]
    hit_d = np.zeros(d.size, dtype=bool)
    hit_a = np.zeros(a.size, dtype=bool)
    for i, k in idx:
        hit_d[i] = hit_a[k] = True
    mae = float(np.mean([abs(x - y) for x, y in pairs])) if pairs else float("nan")
    flagged = EventList(d, detected.detector, hit_d)
    return MatchReport(pairs, d[~hit_d].copy(), a[~hit_a].copy(), mae, flagged)


def gof_compare(sample, fitted_a: NVMParams, fitted_b: NVMParams, bins: int = 5) -> tuple[float, float]:
    """Chi-square p-values of ``sample`` against two fitted laws."""
    return chi_square_pvalue(sample, fitted_a, bins), chi_square_pvalue(sample, fitted_b, bins)
