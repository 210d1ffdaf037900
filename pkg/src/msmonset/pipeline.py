"""End-to-end detector pipelines on a raw record.

Every pipeline works on the increments of the record. Grid, stability and
alpha detectors place a window at its window number (plus one for the
increment-to-sample offset); their fixed millisecond shifts are tuned to
that convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detectors import (
    DetectorParams,
    EventList,
    _window_mask,
    alpha_detector,
    msm_events,
    stability_detector,
    window_variance_detector,
    z_detector,
    z_distance_series,
)
from .em import EmConfig, build_grid
from .errors import ConfigurationError, SizeError
from .msm import BACKWARD, FORWARD, ComponentSeries, WeightTrack, grid_msm_pass, increments, msm_pass
from .nvm import GVG, AlphaTrack, alpha_track

METHODS = ("msm", "zdist", "chisq", "alpha", "winvar")


@dataclass(frozen=True)
class PipelineConfig:
    sampling_rate_hz: float = 1000.0
    window: int = 50
    k: int = 3
    grid_window: int = 100
    grid_shift: int = 1
    grid_nodes: int = 50
    scale_factors: tuple = (0.5, 1.5)
    calibration_ms: tuple | None = None
    reconcile_tolerance_ms: float = 100.0
    alpha_window: int = 100
    alpha_shift: int = 1
    winvar_width_ms: float = 40.0
    winvar_threshold: float | None = None
    em: EmConfig = EmConfig()
    detectors: DetectorParams = DetectorParams()

    def calibration_samples(self) -> tuple[int, int]:
        if self.calibration_ms is None:
            raise ConfigurationError("a calibration range (rest period, in ms) is required")
        a, b = self.calibration_ms
        if not 0 <= a < b:
            raise ConfigurationError(f"invalid calibration range {self.calibration_ms}")
        r = self.sampling_rate_hz / 1000.0
        return int(round(a * r)), int(round(b * r))


@dataclass
class Decomposition:
    forward: ComponentSeries
    backward: ComponentSeries | None = None


def decompose(samples, config: PipelineConfig, backward: bool = True) -> Decomposition:
    x = increments(samples)
    fwd = msm_pass(x, config.window, config.k, config.em, FORWARD)
    bwd = msm_pass(x, config.window, config.k, config.em, BACKWARD) if backward else None
    return Decomposition(fwd, bwd)


def _check_calibration(samples, config):
    start, stop = config.calibration_samples()
    if stop > np.asarray(samples).size:
        raise ConfigurationError(
            f"calibration range ends at sample {stop}, beyond the record ({np.asarray(samples).size} samples)"
        )
    return start, stop


def detect_msm(samples, config: PipelineConfig, dec: Decomposition | None = None) -> EventList:
    cal = _check_calibration(samples, config)
    dec = dec if dec is not None and dec.backward is not None else decompose(samples, config)
    return msm_events(dec.forward, dec.backward, cal, config.detectors, config.sampling_rate_hz,
                      config.reconcile_tolerance_ms)


def global_weight_track(forward: ComponentSeries, config: PipelineConfig) -> WeightTrack:
    """Grid over the full range of the dynamic component."""
    grid = build_grid(forward.dynamic, config.grid_nodes, config.scale_factors)
    return grid_msm_pass(forward.dynamic, grid, config.grid_window, config.grid_shift, config.em)


def rest_weight_track(forward: ComponentSeries, calibration: tuple[int, int], config: PipelineConfig) -> WeightTrack:
    """Grid over the dynamic values of the calibration windows only."""
    mask = _window_mask(forward, *calibration)
    if mask.sum() < 2:
        raise SizeError("calibration range holds fewer than 2 whole windows")
    grid = build_grid(forward.dynamic[mask], config.grid_nodes, config.scale_factors)
    return grid_msm_pass(forward.dynamic, grid, config.grid_window, config.grid_shift, config.em)


def detect_zdist(samples, config: PipelineConfig, dec: Decomposition | None = None,
                 track: WeightTrack | None = None) -> EventList:
    params = config.detectors
    if track is None:
        dec = dec or decompose(samples, config, backward=False)
        track = global_weight_track(dec.forward, config)
    z = z_distance_series(track, params.z_lag)
    start = track.starts[params.z_lag] + 1
    return z_detector(z, params, config.sampling_rate_hz, start_index=start, index_step=track.shift)


def detect_chisq(samples, config: PipelineConfig, dec: Decomposition | None = None,
                 track: WeightTrack | None = None) -> EventList:
    if track is None:
        cal = _check_calibration(samples, config)
        dec = dec or decompose(samples, config, backward=False)
        track = rest_weight_track(dec.forward, cal, config)
    series = dec.forward.dynamic if dec is not None else None
    return stability_detector(track, series, config.detectors, config.sampling_rate_hz,
                              start_index=track.starts[0] + 1)


def alpha_series(samples, config: PipelineConfig, family: str = GVG) -> AlphaTrack:
    return alpha_track(increments(samples), config.alpha_window, config.alpha_shift, family)


def detect_alpha(samples, config: PipelineConfig, track: AlphaTrack | None = None) -> EventList:
    track = track or alpha_series(samples, config)
    return alpha_detector(track.alpha, config.detectors, config.sampling_rate_hz,
                          start_index=track.starts[0] + 1, index_step=track.shift)


def detect_winvar(samples, config: PipelineConfig) -> EventList:
    threshold = config.winvar_threshold
    if threshold is None:
        # midway (on a log scale) between rest and overall variance
        start, stop = _check_calibration(samples, config)
        x = np.asarray(samples, dtype=float)
        rest = float(np.var(x[start:stop]))
        threshold = float(np.sqrt(max(rest, 1e-300) * max(float(np.var(x)), rest)) * 2.0)
    return window_variance_detector(samples, config.winvar_width_ms, threshold, config.sampling_rate_hz,
                                    config.detectors.group_factor_j)


def detect(method: str, samples, config: PipelineConfig) -> EventList:
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return {
        "msm": detect_msm,
        "zdist": detect_zdist,
        "chisq": detect_chisq,
        "alpha": detect_alpha,
        "winvar": detect_winvar,
    }[method](samples, config)
