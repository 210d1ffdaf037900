import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from msmonset.detectors import gof_compare
from msmonset.errors import SizeError, ValidationError
from msmonset.nvm import (
    GH,
    GVG,
    GenGammaParams,
    GigParams,
    NVMParams,
    alpha_track,
    default_init,
    fit_nvm,
    mixing_pdf,
    nvm_cdf,
    nvm_loglik,
    nvm_pdf,
)

MIXINGS = [
    GenGammaParams(1.0, 1.0, 1.0),
    GenGammaParams(2.0, 0.7, 3.0),
    GenGammaParams(0.5, 3.0, 0.5),
    GigParams(-0.5, 1.0, 1.0),
    GigParams(2.0, 0.5, 3.0),
    GigParams(1.0, 0.0, 2.0),
    GigParams(-1.5, 2.0, 0.0),
]


def _inverse_gaussian(u, mu, lam):
    return np.sqrt(lam / (2 * np.pi * u**3)) * np.exp(-lam * (u - mu) ** 2 / (2 * mu**2 * u))


# -- parameter types ----------------------------------------------------------


def test_gen_gamma_validation():
    with pytest.raises(ValidationError):
        GenGammaParams(0.0, 1.0, 1.0)
    with pytest.raises(ValidationError):
        GenGammaParams(1.0, -1.0, 1.0)


def test_gig_validation():
    with pytest.raises(ValidationError):
        GigParams(-1.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        GigParams(1.0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        GigParams(0.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        GigParams(1.0, -1.0, 1.0)


def test_nvm_params_validation():
    with pytest.raises(ValidationError):
        NVMParams(0.0, 0.0, GenGammaParams())
    with pytest.raises(ValidationError):
        NVMParams(0.0, 1.0, "gamma")
    assert NVMParams(0.0, 1.0, GenGammaParams()).family == GVG
    assert NVMParams(0.0, 1.0, GigParams()).family == GH


# -- mixing densities ----------------------------------------------------------


def test_unit_gen_gamma_is_exponential():
    u = np.linspace(0.01, 10, 50)
    assert np.allclose(mixing_pdf(GenGammaParams(1, 1, 1), u), np.exp(-u), rtol=1e-13)


def test_gen_gamma_with_equal_shapes_is_weibull():
    s, k = 1.7, 2.5
    u = np.linspace(0.05, 6, 40)
    weibull = k / s * (u / s) ** (k - 1) * np.exp(-((u / s) ** k))
    assert np.allclose(mixing_pdf(GenGammaParams(s, k, k), u), weibull, rtol=1e-12)


def test_gig_minus_half_is_inverse_gaussian():
    chi, psi = 2.0, 3.0
    u = np.linspace(0.02, 6, 100)
    ig = _inverse_gaussian(u, math.sqrt(chi / psi), chi)
    assert np.max(np.abs(mixing_pdf(GigParams(-0.5, chi, psi), u) / ig - 1)) < 1e-8


@pytest.mark.parametrize("g", MIXINGS)
def test_mixing_pdf_normalized(g):
    total = quad(lambda u: mixing_pdf(g, u), 0, np.inf, limit=500, epsabs=1e-12, epsrel=1e-11)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


def test_mixing_pdf_needs_positive_argument():
    with pytest.raises(ValidationError):
        mixing_pdf(GenGammaParams(), 0.0)


# -- variance-mean mixture density and cdf -----------------------------------------


def test_exponential_mixing_gives_laplace():
    p = NVMParams(0.0, 1.0, GenGammaParams(1.0, 1.0, 1.0))
    x = np.linspace(-10, 10, 801)
    laplace = np.exp(-math.sqrt(2) * np.abs(x)) / math.sqrt(2)
    assert np.max(np.abs(nvm_pdf(p, x) - laplace)) < 1e-6


def test_concentrated_mixing_approaches_normal():
    p = NVMParams(0.0, 1.0, GenGammaParams(1.0, 1000.0, 1000.0))
    x = np.linspace(-5, 5, 101)
    assert np.max(np.abs(nvm_pdf(p, x) - norm.pdf(x))) < 1e-3


@pytest.mark.parametrize("alpha", [-2.0, 0.0, 2.0])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("g", MIXINGS[:5])
def test_pdf_integrates_to_one(alpha, sigma, g):
    p = NVMParams(alpha, sigma, g)
    total = quad(lambda x: nvm_pdf(p, x), -np.inf, np.inf, limit=500, epsabs=1e-11)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


def test_pdf_shape_and_scalar():
    p = NVMParams(0.3, 1.0, GigParams(1.0, 1.0, 1.0))
    assert isinstance(nvm_pdf(p, 0.5), float)
    assert nvm_pdf(p, np.zeros((2, 3))).shape == (2, 3)


def test_pdf_diverges_at_zero_for_small_shape():
    p = NVMParams(0.0, 1.0, GenGammaParams(1.0, 0.4, 1.0))
    assert nvm_pdf(p, 0.0) == np.inf
    assert np.isfinite(nvm_pdf(p, 0.1))


def test_cdf_symmetric_mixing_at_zero():
    for g in MIXINGS:
        assert nvm_cdf(NVMParams(0.0, 1.3, g), 0.0) == pytest.approx(0.5, abs=1e-12)


def test_cdf_limits():
    for g in MIXINGS:
        p = NVMParams(1.0, 1.0, g)
        assert nvm_cdf(p, 1e6) == pytest.approx(1.0, abs=1e-9)
        assert nvm_cdf(p, -1e6) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("g", MIXINGS)
def test_cdf_derivative_is_pdf(g):
    p = NVMParams(0.7, 1.2, g)
    x = np.linspace(-4, 4, 17) + 0.05
    h = 1e-4
    fd = (nvm_cdf(p, x + h) - nvm_cdf(p, x - h)) / (2 * h)
    assert np.max(np.abs(fd - nvm_pdf(p, x))) < 1e-5


def test_cdf_matches_integrated_pdf():
    p = NVMParams(-1.0, 0.8, GigParams(2.0, 0.5, 3.0))
    for x in (-2.0, 0.3, 1.5):
        val = quad(lambda t: nvm_pdf(p, t), -np.inf, x, limit=300, epsabs=1e-12)[0]
        assert nvm_cdf(p, x) == pytest.approx(val, abs=1e-8)


@given(
    st.floats(-3, 3),
    st.floats(0.2, 3),
    st.sampled_from(MIXINGS),
    st.lists(st.floats(-20, 20), min_size=2, max_size=15),
)
def test_cdf_monotone_property(alpha, sigma, g, xs):
    c = nvm_cdf(NVMParams(alpha, sigma, g), np.sort(xs))
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(np.diff(c) >= -1e-12)


@given(st.floats(-3, 3), st.floats(0.2, 3), st.sampled_from(MIXINGS), st.floats(-15, 15))
def test_pdf_nonnegative_property(alpha, sigma, g, x):
    assert nvm_pdf(NVMParams(alpha, sigma, g), x) >= 0


# -- fitting ------------------------------------------------------------------


def test_fit_normal_sample_alpha_near_zero():
    x = np.random.default_rng(0).standard_normal(2000)
    fit = fit_nvm(x, GVG)
    assert abs(fit.params.alpha) < 0.1


def test_fit_recovers_drift_sign():
    rng = np.random.default_rng(1)
    u = rng.gamma(2.0, 1.0, 600)
    x = 1.5 * u + np.sqrt(u) * rng.standard_normal(600)
    fit = fit_nvm(x, GVG)
    assert fit.params.alpha > 0.8


def test_fit_ascent_from_true_parameters():
    rng = np.random.default_rng(2)
    true = NVMParams(0.5, 1.0, GenGammaParams(1.0, 2.0, 1.0))
    u = rng.gamma(2.0, 1.0, 300)
    x = 0.5 * u + np.sqrt(u) * rng.standard_normal(300)
    fit = fit_nvm(x, GVG, init=true, max_evaluations=300)
    assert fit.log_likelihood >= nvm_loglik(true, x) - 1e-9


def test_fit_gh_ascent():
    x = np.random.default_rng(3).standard_t(5, 200)
    init = default_init(x, GH)
    fit = fit_nvm(x, GH, init=init, max_evaluations=300)
    assert fit.params.family == GH
    assert fit.log_likelihood >= nvm_loglik(init, x) - 1e-9


def test_fit_is_deterministic():
    x = np.random.default_rng(4).standard_normal(100)
    a = fit_nvm(x, GVG, max_evaluations=200)
    b = fit_nvm(x, GVG, max_evaluations=200)
    assert a == b


def test_fit_rejects_short_sample():
    with pytest.raises(SizeError):
        fit_nvm(np.arange(10.0), GVG)


def test_fit_rejects_unknown_family():
    with pytest.raises(ValidationError):
        fit_nvm(np.random.default_rng(0).standard_normal(50), "NIG")


def test_fit_rejects_mismatched_init():
    x = np.random.default_rng(0).standard_normal(50)
    with pytest.raises(ValidationError):
        fit_nvm(x, GVG, init=NVMParams(0.0, 1.0, GigParams()))


def test_scale_projection_keeps_law():
    # u -> c u with alpha/c, sigma/sqrt(c) describes the same distribution
    a = NVMParams(0.4, 1.0, GenGammaParams(2.0, 1.5, 1.2))
    b = NVMParams(0.8, math.sqrt(2.0), GenGammaParams(1.0, 1.5, 1.2))
    x = np.linspace(-3, 5, 9)
    assert np.allclose(nvm_pdf(a, x), nvm_pdf(b, x), rtol=1e-8)


# -- alpha track and goodness of fit -----------------------------------------


def test_alpha_track_length_and_determinism():
    x = np.random.default_rng(5).standard_normal(150)
    a = alpha_track(x, window=100, shift=25, max_evaluations=150)
    assert len(a) == (150 - 100) // 25 + 1
    assert list(a.starts) == [0, 25, 50]
    b = alpha_track(x, window=100, shift=25, max_evaluations=150)
    assert np.array_equal(a.alpha, b.alpha)


def test_alpha_track_symmetric_noise():
    x = np.random.default_rng(6).standard_normal(400)
    a = alpha_track(x, window=100, shift=60, max_evaluations=300)
    assert abs(a.alpha.mean()) < 0.2


def test_alpha_track_arguments():
    with pytest.raises(SizeError):
        alpha_track(np.zeros(50), window=100)
    with pytest.raises(ValidationError):
        alpha_track(np.zeros(200), window=100, shift=0)


def test_gof_compare_identical_fits():
    x = np.random.default_rng(7).standard_normal(200)
    p = NVMParams(0.0, 1.0, GenGammaParams(1.0, 2.0, 1.0))
    pa, pb = gof_compare(x, p, p)
    assert pa == pb


def test_gof_compare_perfect_agreement():
    p = NVMParams(0.0, 1.0, GenGammaParams(1.0, 1.0, 1.0))
    # Laplace quantiles at bin centres give exactly equal bin counts
    q = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    lap = np.where(q < 0.5, np.log(2 * q), -np.log(2 * (1 - q))) / math.sqrt(2)
    x = np.repeat(lap, 20)
    assert gof_compare(x, p, p) == (1.0, 1.0)


def test_gof_compare_prefers_true_law():
    rng = np.random.default_rng(8)
    good = NVMParams(0.0, 1.0, GenGammaParams(1.0, 1.0, 1.0))
    bad = NVMParams(2.0, 0.5, GenGammaParams(1.0, 1.0, 1.0))
    wins = 0
    for _ in range(40):
        x = rng.laplace(0.0, 1 / math.sqrt(2), 200)
        pa, pb = gof_compare(x, good, bad)
        wins += pa > pb
    assert wins >= 0.95 * 40


@pytest.mark.parametrize("b", [1e2, 1e4, 1e6, 1e7, 1e8])
def test_sharp_peaks_match_bessel(b):
    # int u^(a-1) exp(-b/u - b u) du = 2 K_a(2b); large b gives a very narrow peak
    from scipy.special import kve

    from msmonset.nvm import _log_integral

    a = 3.0
    out = np.empty(1)
    status = np.zeros(1, dtype=np.int64)
    _log_integral(np.array([a]), np.array([math.log(b)]), np.array([math.log(b)]), np.array([-np.inf]), 1.0,
                  1e-10, out, status)
    exact = math.log(2 * kve(a, 2 * b)) - 2 * b
    assert status[0] == 0
    assert out[0] == pytest.approx(exact, rel=1e-12, abs=1e-8)


def test_extreme_ridge_point_is_cheap_and_finite():
    # parameters a GVG fit on near-normal data walks into: sigma tiny, shape at its cap
    rng = np.random.default_rng(0)
    x = rng.standard_normal(100)
    p = NVMParams(0.0125, 5.4e-16, GenGammaParams(1.0, 9753.1, 0.156))
    ll = nvm_loglik(p, x, 1e-6)
    assert np.isfinite(ll) and ll < -1e20
