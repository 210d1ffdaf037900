import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msmonset.em import (
    EmConfig,
    Grid,
    build_grid,
    em_fit,
    grid_em_fit,
    grid_log_likelihood,
    initialize,
    log_likelihood,
)
from msmonset.errors import DegenerateDataError, NumericalSupportError, SizeError, ValidationError
from msmonset.mixture import NormalMixture, sample_mixture


def test_recovers_well_separated_components():
    truth = NormalMixture([0.3, 0.7], [-5, 5], [1, 1])
    x = sample_mixture(truth, 5000, seed=0)
    fit = em_fit(x, 2)
    m = fit.mixture
    assert fit.converged
    assert np.allclose(m.locations, [-5, 5], atol=0.1)
    assert np.allclose(m.weights, [0.3, 0.7], atol=0.02)
    assert np.allclose(m.scales, [1, 1], atol=0.05)


def test_single_component_closed_form():
    x = np.random.default_rng(1).normal(2, 3, 300)
    fit = em_fit(x, 1)
    assert fit.mixture.locations[0] == pytest.approx(x.mean())
    assert fit.mixture.scales[0] == pytest.approx(x.std())
    assert fit.iterations == 1


def test_trace_nondecreasing_and_matches_final_fit():
    x = sample_mixture(NormalMixture([0.5, 0.5], [0, 3], [1, 0.5]), 400, seed=2)
    fit = em_fit(x, 3)
    trace = fit.log_likelihood_trace
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))
    assert fit.log_likelihood == pytest.approx(log_likelihood(fit.mixture, x), rel=1e-12)


def test_output_sorted_and_deterministic():
    x = np.random.default_rng(4).standard_normal(200)
    a = em_fit(x, 3).mixture
    b = em_fit(x, 3).mixture
    assert np.all(np.diff(a.locations) >= 0)
    assert a.to_record() == b.to_record()


def test_scale_floor_applied():
    x = np.concatenate([np.zeros(20), np.random.default_rng(0).standard_normal(40)])
    cfg = EmConfig(scale_floor=1e-2)
    m = em_fit(x, 3, cfg).mixture
    assert m.scales.min() >= 1e-2 * x.std() * (1 - 1e-12)


def test_too_short_sample():
    with pytest.raises(SizeError):
        em_fit(np.arange(9.0), 2)


def test_constant_sample():
    with pytest.raises(DegenerateDataError):
        em_fit(np.ones(50), 2)


def test_non_finite_sample():
    x = np.random.default_rng(0).standard_normal(50)
    x[3] = np.nan
    with pytest.raises(ValidationError):
        em_fit(x, 2)


def test_warm_start_with_wrong_k():
    x = np.random.default_rng(0).standard_normal(50)
    with pytest.raises(ValidationError):
        em_fit(x, 3, warm_start=NormalMixture([1.0], [0.0], [1.0]))


def test_restart_never_worse_than_warm_start():
    rng = np.random.default_rng(5)
    x = np.concatenate([rng.normal(0, 1, 100), rng.normal(8, 1, 100)])
    bad = NormalMixture([0.98, 0.01, 0.01], [0, 0.1, 0.2], [1, 1, 1])
    warm = em_fit(x, 3, warm_start=bad)
    both = em_fit(x, 3, warm_start=bad, restart=True)
    assert both.log_likelihood >= warm.log_likelihood - 1e-9


def test_config_validation():
    with pytest.raises(ValidationError):
        EmConfig(max_iterations=0)
    with pytest.raises(ValidationError):
        EmConfig(rel_tolerance=0)
    with pytest.raises(ValidationError):
        EmConfig(scale_floor=1.5)


def test_initialize_quantiles():
    x = np.arange(100.0)
    m = initialize(x, 4)
    assert np.allclose(m.locations, np.quantile(x, [0.125, 0.375, 0.625, 0.875]))
    assert np.allclose(m.weights, 0.25)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_em_monotone_property(seed, k):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(0, 1, 120), rng.normal(rng.uniform(-4, 4), rng.uniform(0.2, 2), 80)])
    trace = em_fit(x, k).log_likelihood_trace
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))


# -- grid EM ---------------------------------------------------------------


def test_build_grid_layout():
    g = build_grid(np.linspace(-1, 1, 101), n_locations=5, scale_factors=(0.5, 1.5))
    assert g.K == 10 and g.n_levels == 2
    assert np.allclose(g.locations[:5], np.linspace(-1, 1, 5))
    sd = np.linspace(-1, 1, 101).std()
    assert np.allclose(g.scales, np.repeat([0.5 * sd, 1.5 * sd], 5))


def test_build_grid_constant_values():
    with pytest.raises(DegenerateDataError):
        build_grid(np.ones(10))


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid([0, 1, 2], [1, 1])
    with pytest.raises(ValidationError):
        Grid([1, 0], [1, 1])


def test_grid_em_recovers_node_weights():
    g = Grid([-4, 0, 4], [1, 1, 1])
    truth = g.mixture([0.2, 0.5, 0.3])
    x = sample_mixture(truth, 20_000, seed=7)
    w = grid_em_fit(x, g)
    assert np.allclose(w, [0.2, 0.5, 0.3], atol=0.015)
    assert w.sum() == pytest.approx(1.0)


def test_grid_em_does_not_decrease_likelihood():
    g = Grid(np.linspace(-3, 3, 7), np.ones(7))
    x = np.random.default_rng(0).normal(0.5, 1.2, 300)
    w0 = np.full(7, 1 / 7)
    w = grid_em_fit(x, g, warm_start=w0)
    assert grid_log_likelihood(x, g, w) >= grid_log_likelihood(x, g, w0)


def test_grid_em_bad_warm_start():
    g = Grid([0, 1], [1, 1])
    with pytest.raises(ValidationError):
        grid_em_fit(np.zeros(20), g, warm_start=[0.7, 0.7])


def test_grid_em_short_sample():
    with pytest.raises(SizeError):
        grid_em_fit(np.zeros(5), Grid([0, 1], [1, 1]))


def test_grid_em_support_error():
    g = Grid([0, 1], [0.01, 0.01])
    x = np.concatenate([np.zeros(15), [1e300]])
    with pytest.raises(NumericalSupportError):
        grid_em_fit(x, g)


@given(st.integers(0, 10_000))
def test_grid_weights_on_simplex(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, 50)
    g = build_grid(x, 10)
    w = grid_em_fit(x, g)
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
