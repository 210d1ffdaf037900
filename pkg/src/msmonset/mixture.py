"""Finite location-scale normal mixtures and their variance decomposition.

A mixture with weights ``p``, locations ``a`` and scales ``s`` has total
variance

    sum p (a - abar)^2  +  sum p s^2

where the first term (the *dynamic* component) only depends on the spread of
the component means and the second (the *diffusive* component) only on the
component variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, logsumexp

from .errors import ValidationError

# renormalization slack for weight vectors coming out of EM
WEIGHT_SLACK = 1e-9

_SQRT2 = np.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NormalMixture:
    """Immutable k-component normal mixture."""

    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        a = np.array(self.locations, dtype=float).ravel()
        s = np.array(self.scales, dtype=float).ravel()
        if not (w.size == a.size == s.size) or w.size == 0:
            raise ValidationError(
                f"weights/locations/scales lengths differ or are empty: "
                f"{w.size}, {a.size}, {s.size}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
            raise ValidationError("mixture parameters must be finite")
        if np.any(w < 0):
            raise ValidationError("mixture weights must be nonnegative")
        if np.any(s <= 0):
            raise ValidationError("mixture scales must be positive")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SLACK:
            raise ValidationError(f"weights sum to {total!r}, expected 1")
        w = w / total
        for arr in (w, a, s):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "locations", a)
        object.__setattr__(self, "scales", s)

    @property
    def k(self) -> int:
        return self.weights.size

    def sorted(self) -> "NormalMixture":
        """Return the same mixture with components ordered by location."""
        order = np.argsort(self.locations, kind="stable")
        return NormalMixture(self.weights[order], self.locations[order], self.scales[order])

    def to_record(self) -> str:
        """Serialize as ``k;p1,..,pk;a1,..,ak;s1,..,sk``."""

        def fmt(v):
            return ",".join(repr(float(x)) for x in v)

        return f"{self.k};{fmt(self.weights)};{fmt(self.locations)};{fmt(self.scales)}"

    @classmethod
    def from_record(cls, text: str) -> "NormalMixture":
        parts = text.strip().split(";")
        if len(parts) != 4:
            raise ValidationError(f"malformed mixture record: {text!r}")
        try:
            k = int(parts[0])
            vecs = [np.array([float(v) for v in p.split(",")]) for p in parts[1:]]
        except ValueError as exc:
            raise ValidationError(f"malformed mixture record: {text!r}") from exc
        if any(v.size != k for v in vecs):
            raise ValidationError(f"record declares k={k} but vectors differ in length")
        return cls(*vecs)


@dataclass(frozen=True)
class VarianceSplit:
    dynamic: float
    diffusive: float

    @property
    def total(self) -> float:
        return self.dynamic + self.diffusive


def _check(m) -> NormalMixture:
    if not isinstance(m, NormalMixture):
        raise ValidationError(f"expected NormalMixture, got {type(m).__name__}")
    return m


def mixture_logpdf(m: NormalMixture, x) -> np.ndarray:
    """Log-density of the mixture, stabilized with log-sum-exp."""
    m = _check(m)
    x = np.asarray(x, dtype=float)
    z = (x[..., None] - m.locations) / m.scales
    with np.errstate(divide="ignore"):
        logw = np.log(m.weights)
    comp = logw - np.log(m.scales) - _LOG_SQRT_2PI - 0.5 * z * z
    return logsumexp(comp, axis=-1)


def mixture_pdf(m: NormalMixture, x):
    """Density ``sum p_i phi((x - a_i)/s_i) / s_i``; scalar in, scalar out."""
    m = _check(m)
    xa = np.asarray(x, dtype=float)
    z = (xa[..., None] - m.locations) / m.scales
    out = np.sum(m.weights * np.exp(-0.5 * z * z) / m.scales, axis=-1) / np.sqrt(2.0 * np.pi)
    return float(out) if np.ndim(x) == 0 else out


def mixture_cdf(m: NormalMixture, x):
    """Distribution function, via erfc for accurate tails."""
    m = _check(m)
    xa = np.asarray(x, dtype=float)
    z = (xa[..., None] - m.locations) / m.scales
    # Phi(z) = erfc(-z / sqrt 2) / 2
    out = np.sum(m.weights * 0.5 * erfc(-z / _SQRT2), axis=-1)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(x) == 0 else out


def mixture_ppf(m: NormalMixture, q) -> np.ndarray:
    """Quantiles by vectorized bisection on the cdf (q strictly inside (0, 1))."""
    m = _check(m)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any((q <= 0) | (q >= 1)):
        raise ValidationError("quantile levels must lie in (0, 1)")
    span = 40.0 * m.scales.max()
    lo = np.full(q.shape, m.locations.min() - span)
    hi = np.full(q.shape, m.locations.max() + span)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = mixture_cdf(m, mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-13 * np.maximum(1.0, np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def variance_decomposition(m: NormalMixture) -> VarianceSplit:
    """Split the mixture variance into dynamic and diffusive parts."""
    m = _check(m)
    abar = np.dot(m.weights, m.locations)
    dynamic = float(np.dot(m.weights, (m.locations - abar) ** 2))
    diffusive = float(np.dot(m.weights, m.scales**2))
    return VarianceSplit(dynamic, diffusive)


def sample_mixture(m: NormalMixture, size: int, seed=None) -> np.ndarray:
    """Draw from the mixture: categorical component choice, then a normal draw."""
    m = _check(m)
    rng = np.random.default_rng(seed)
    idx = rng.choice(m.k, size=size, p=m.weights)
    return m.locations[idx] + m.scales[idx] * rng.standard_normal(size)
