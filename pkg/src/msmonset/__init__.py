"""Onset detection in noisy 1-D series by moving separation of normal mixtures."""

from .detectors import (
    Bounds,
    DetectorParams,
    EventList,
    MatchReport,
    alpha_detector,
    calibrate_bounds,
    chi_square_pvalue,
    gof_compare,
    group_candidates,
    match_events,
    msm_events,
    reconcile_fwd_bwd,
    stability_detector,
    threshold_crossings,
    window_variance_detector,
    z_detector,
    z_distance_series,
)
from .em import EmConfig, FitResult, Grid, build_grid, em_fit, grid_em_fit, log_likelihood
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    MsmError,
    NumericalError,
    NumericalSupportError,
    SizeError,
    ValidationError,
)
from .mixture import NormalMixture, VarianceSplit, mixture_cdf, mixture_pdf, sample_mixture, variance_decomposition
from .msm import ComponentSeries, WeightTrack, grid_msm_pass, increments, msm_pass
from .nvm import GH, GVG, GenGammaParams, GigParams, NVMParams, alpha_track, fit_nvm, mixing_pdf, nvm_cdf, nvm_pdf
from .synthetic import EpochSpec, SyntheticRecord, default_epochs, generate_myogram

__version__ = "0.1.0"
