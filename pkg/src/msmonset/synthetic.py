"""Synthetic myograms with known movement onsets.

Each epoch is a rest interval of Gaussian noise followed by a movement
interval carrying a Gaussian-windowed sinusoidal burst plus stronger
Gaussian noise. The movement onset is the first sample of the movement
interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class EpochSpec:
    rest_duration_ms: float = 2000.0
    movement_duration_ms: float = 400.0
    rest_noise_sigma: float = 1.0
    movement_noise_sigma: float = 10.0
    signal_amplitude: float = 10.0
    signal_frequency_hz: float = 80.0

    def __post_init__(self):
        if self.rest_duration_ms <= 0 or self.movement_duration_ms <= 0:
            raise ValidationError("epoch durations must be positive")
        if self.signal_frequency_hz <= 0:
            raise ValidationError("signal frequency must be positive")
        if self.signal_amplitude < 0:
            raise ValidationError("signal amplitude must be nonnegative")
        if self.rest_noise_sigma < 0 or self.movement_noise_sigma < 0:
            raise ValidationError("noise sigmas must be nonnegative")
        # both sigmas at zero is the noiseless degenerate case
        both_zero = self.rest_noise_sigma == 0 and self.movement_noise_sigma == 0
        if not both_zero and not self.movement_noise_sigma > self.rest_noise_sigma:
            raise ValidationError("movement noise must exceed rest noise")


@dataclass(frozen=True)
class SyntheticRecord:
    samples: np.ndarray
    sampling_rate_hz: float
    true_onsets_ms: np.ndarray
    seed: int

    @property
    def duration_ms(self) -> float:
        return self.samples.size * 1000.0 / self.sampling_rate_hz


def _n_samples(ms, rate):
    return int(round(ms * rate / 1000.0))


def generate_myogram(epochs, sampling_rate_hz: float = 1000.0, seed: int = 0) -> SyntheticRecord:
    """Concatenate rest/movement epochs into one record."""
    epochs = list(epochs)
    if not epochs:
        raise ValidationError("at least one epoch is required")
    if sampling_rate_hz <= 0:
        raise ValidationError("sampling rate must be positive")
    rng = np.random.default_rng(seed)
    chunks = []
    onsets = []
    pos = 0
    for i, ep in enumerate(epochs):
        if not isinstance(ep, EpochSpec):
            raise ValidationError(f"epoch {i} is not an EpochSpec")
        n_rest = _n_samples(ep.rest_duration_ms, sampling_rate_hz)
        n_move = _n_samples(ep.movement_duration_ms, sampling_rate_hz)
        if n_rest < 10 or n_move < 10:
            raise ValidationError(f"epoch {i}: each segment must span at least 10 samples")
        rest = ep.rest_noise_sigma * rng.standard_normal(n_rest)
        t = np.arange(n_move) / sampling_rate_hz
        centre = 0.5 * t[-1]
        width = 0.25 * t[-1]
        envelope = np.exp(-0.5 * ((t - centre) / width) ** 2)
        burst = ep.signal_amplitude * envelope * np.sin(2.0 * np.pi * ep.signal_frequency_hz * t)
        move = burst + ep.movement_noise_sigma * rng.standard_normal(n_move)
        chunks.extend([rest, move])
        onsets.append((pos + n_rest) * 1000.0 / sampling_rate_hz)
        pos += n_rest + n_move
    return SyntheticRecord(np.concatenate(chunks), float(sampling_rate_hz), np.array(onsets), int(seed))


def default_epochs(n: int = 10, seed: int = 0, rest_ms=(1500.0, 2500.0), movement_ms=(300.0, 500.0),
                   rest_sigma: float = 1.0, sigma_ratio: float = 10.0, amplitude: float = 10.0,
                   frequency_hz: float = 80.0) -> list[EpochSpec]:
    """Randomized epoch list on the timing scale of a finger-tapping session."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    rests = rng.uniform(*rest_ms, size=n)
    moves = rng.uniform(*movement_ms, size=n)
    return [
        EpochSpec(
            rest_duration_ms=float(np.round(r)),
            movement_duration_ms=float(np.round(m)),
            rest_noise_sigma=rest_sigma,
            movement_noise_sigma=rest_sigma * sigma_ratio,
            signal_amplitude=amplitude,
            signal_frequency_hz=frequency_hz,
        )
        for r, m in zip(rests, moves)
    ]
