import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msmonset.em import EmConfig, Grid, build_grid
from msmonset.errors import NumericalSupportError, SizeError, ValidationError
from msmonset.mixture import variance_decomposition
from msmonset.msm import BACKWARD, FORWARD, grid_msm_pass, increments, median_smooth, msm_pass


def test_increments():
    assert list(increments([1, 4, 9, 16])) == [3, 5, 7]
    with pytest.raises(SizeError):
        increments([1.0])


def test_forward_lengths_and_times():
    x = np.random.default_rng(0).standard_normal(300)
    cs = msm_pass(x, window=50, k=3)
    assert len(cs) == 251
    assert cs.times[0] == 49 and cs.times[-1] == 299
    assert cs.direction == FORWARD


def test_backward_times_are_left_edges():
    x = np.random.default_rng(0).standard_normal(300)
    cs = msm_pass(x, window=50, k=3, direction=BACKWARD)
    assert cs.times[0] == 0 and cs.times[-1] == 250
    assert np.all(np.diff(cs.times) == 1)


def test_components_match_stored_mixtures():
    x = np.random.default_rng(1).standard_normal(120)
    cs = msm_pass(x, window=40, k=2)
    for i in (0, 30, 80):
        split = variance_decomposition(cs.mixtures[i])
        assert cs.dynamic[i] == split.dynamic
        assert cs.diffusive[i] == split.diffusive
    assert np.allclose(cs.total, cs.dynamic + cs.diffusive)


def test_backward_is_reversed_forward_of_reversed_input():
    x = np.random.default_rng(2).standard_normal(200)
    b = msm_pass(x, 30, 2, direction=BACKWARD)
    f = msm_pass(x[::-1].copy(), 30, 2)
    assert np.array_equal(b.dynamic, f.dynamic[::-1])
    assert np.array_equal(b.diffusive, f.diffusive[::-1])


def test_degenerate_windows_flagged():
    x = np.concatenate([np.zeros(80), np.random.default_rng(0).standard_normal(80)])
    cs = msm_pass(x, 30, 2)
    assert cs.degenerate[:51].all()
    assert not cs.degenerate[-1]
    assert np.all(cs.dynamic[cs.degenerate] == 0)


def test_constant_series_all_degenerate():
    cs = msm_pass(np.full(100, 3.0), 20, 2)
    assert cs.degenerate.all()
    assert np.all(np.isfinite(cs.diffusive))


def test_variance_jump_raises_total_variance():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(0, 1, 300), rng.normal(0, 10, 300)])
    cs = msm_pass(x, 50, 3)
    assert cs.total[-1] > 20 * cs.total[0]


def test_argument_checks():
    x = np.random.default_rng(0).standard_normal(100)
    with pytest.raises(SizeError):
        msm_pass(x, window=10, k=3)
    with pytest.raises(SizeError):
        msm_pass(x[:40], window=50, k=3)
    with pytest.raises(ValidationError):
        msm_pass(x, 50, 3, direction="sideways")
    y = x.copy()
    y[5] = np.inf
    with pytest.raises(ValidationError):
        msm_pass(y, 50, 3)


def test_median_smooth():
    v = np.array([0, 0, 10, 0, 0, 5, 5, 5], dtype=float)
    assert list(median_smooth(v, 3)) == [0, 0, 0, 0, 0, 5, 5, 5]
    with pytest.raises(ValidationError):
        median_smooth(v, 0)


def test_grid_pass_shape_and_simplex():
    x = np.random.default_rng(0).standard_normal(400)
    g = build_grid(x, 20)
    tr = grid_msm_pass(x, g, window=100, shift=7)
    assert len(tr) == (400 - 100) // 7 + 1
    assert list(tr.starts[:3]) == [0, 7, 14]
    assert np.allclose(tr.weights.sum(axis=1), 1.0)
    assert np.all(tr.weights >= 0)


def test_grid_pass_tracks_location_change():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-3, 0.5, 200), rng.normal(3, 0.5, 200)])
    g = Grid(np.linspace(-4, 4, 9), np.full(9, 0.5))
    tr = grid_msm_pass(x, g, window=100)
    assert tr.weights[0, :4].sum() > 0.9
    assert tr.weights[-1, 5:].sum() > 0.9


def test_grid_pass_support_error_names_window():
    x = np.concatenate([np.zeros(150), [1e300], np.zeros(49)])
    g = Grid([0.0, 1.0], [1e-10, 1e-10])
    with pytest.raises(NumericalSupportError, match="window 51"):
        grid_msm_pass(x, g, window=100)


def test_grid_pass_arguments():
    g = Grid([0, 1], [1, 1])
    with pytest.raises(SizeError):
        grid_msm_pass(np.zeros(50), g, window=100)
    with pytest.raises(ValidationError):
        grid_msm_pass(np.zeros(200), g, window=100, shift=0)


@given(st.integers(0, 1000))
def test_backward_identity_property(seed):
    x = np.random.default_rng(seed).standard_normal(60)
    b = msm_pass(x, 20, 2, EmConfig(), BACKWARD)
    f = msm_pass(x[::-1].copy(), 20, 2, EmConfig())
    assert np.array_equal(b.dynamic, f.dynamic[::-1])
    assert np.array_equal(b.diffusive, f.diffusive[::-1])
    assert np.all(b.dynamic >= 0) and np.all(b.diffusive > 0)
