import numpy as np
import pytest

from msmonset.errors import ValidationError
from msmonset.synthetic import EpochSpec, default_epochs, generate_myogram


def test_onsets_at_movement_starts():
    eps = [EpochSpec(1000, 200), EpochSpec(1500, 300)]
    rec = generate_myogram(eps, 1000.0, seed=0)
    assert rec.samples.size == 3000
    assert list(rec.true_onsets_ms) == [1000.0, 2700.0]
    assert rec.duration_ms == 3000.0


def test_onsets_scale_with_sampling_rate():
    rec = generate_myogram([EpochSpec(1000, 200)], 2000.0, seed=0)
    assert rec.samples.size == 2400
    assert rec.true_onsets_ms[0] == 1000.0


def test_same_seed_same_record():
    a = generate_myogram(default_epochs(3, seed=4), seed=4)
    b = generate_myogram(default_epochs(3, seed=4), seed=4)
    assert np.array_equal(a.samples, b.samples)
    c = generate_myogram(default_epochs(3, seed=4), seed=5)
    assert not np.array_equal(a.samples, c.samples)


def test_noise_levels_per_segment():
    rec = generate_myogram([EpochSpec(20000, 20000, 1.0, 10.0, 0.0)], seed=1)
    rest, move = rec.samples[:20000], rec.samples[20000:]
    assert rest.std() == pytest.approx(1.0, rel=0.03)
    assert move.std() == pytest.approx(10.0, rel=0.03)


def test_burst_envelope_peaks_mid_movement():
    rec = generate_myogram([EpochSpec(100, 400, 0.0, 0.0, 5.0, 80.0)], seed=0)
    move = rec.samples[100:]
    assert np.abs(move).max() == pytest.approx(5.0, rel=0.01)
    # the envelope sits two widths from its centre at the movement edges
    assert np.abs(move[:5]).max() < 5.0 * np.exp(-2.0) * 1.1
    assert np.abs(rec.samples[:100]).max() == 0.0


def test_default_epochs_ranges():
    eps = default_epochs(50, seed=0)
    assert len(eps) == 50
    assert all(1500 <= e.rest_duration_ms <= 2500 for e in eps)
    assert all(300 <= e.movement_duration_ms <= 500 for e in eps)
    assert all(e.movement_noise_sigma == 10 * e.rest_noise_sigma for e in eps)


def test_invalid_epochs():
    with pytest.raises(ValidationError):
        EpochSpec(rest_duration_ms=0)
    with pytest.raises(ValidationError):
        EpochSpec(rest_noise_sigma=2.0, movement_noise_sigma=1.0)
    with pytest.raises(ValidationError):
        generate_myogram([])
    with pytest.raises(ValidationError):
        generate_myogram([EpochSpec(5, 200)])
    with pytest.raises(ValidationError):
        default_epochs(0)
