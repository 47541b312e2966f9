import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from pcapri import noise


def _quad_mean_ratio(theta):
    # Independent oracle: E[u]/σ for a unit-σ Rician by direct quadrature
    # of x * p(x), with the Bessel factor scaled to avoid overflow.
    def integrand(x):
        return x * x * np.exp(-0.5 * (x - theta) ** 2) * special.i0e(x * theta)

    val, _ = integrate.quad(integrand, 0, theta + 40, limit=400, epsabs=1e-13, epsrel=1e-12)
    return val


def test_zero_sigma_identity(ph24):
    np.testing.assert_array_equal(noise.simulate_rician(ph24.data, 0.0, 1), ph24.data)


def test_rayleigh_mean():
    u = noise.simulate_rician(np.zeros(10**6), 10.0, 7)
    assert abs(u.mean() - np.sqrt(np.pi / 2) * 10) < 0.01 * 12.533


def test_second_moment_within_sampling_error():
    v, s = 100.0, 5.0
    u2 = noise.simulate_rician(np.full(10**6, v), s, 8) ** 2
    # Var(u²) = 4v²σ² + 4σ⁴ for a Rician variable
    se = np.sqrt((4 * v * v * s * s + 4 * s**4) / u2.size)
    assert abs(u2.mean() - (v * v + 2 * s * s)) < 3 * se


def test_simulation_nonnegative_and_seeded(ph24):
    a = noise.simulate_rician(ph24.data, 5.0, 3)
    assert a.min() >= 0
    np.testing.assert_array_equal(a, noise.simulate_rician(ph24.data, 5.0, 3))


def test_map_shape_mismatch():
    with pytest.raises(ValueError):
        noise.simulate_rician(np.zeros((4, 4, 4)), np.ones((3, 3, 3)))


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.0, 2.5, 5.0, 12.0, 30.0])
def test_mean_ratio_against_quadrature(theta):
    assert noise.rician_mean_ratio(theta) == pytest.approx(_quad_mean_ratio(theta), rel=1e-9)


def test_lut_endpoints_and_monotone():
    lut = noise.default_lut()
    assert lut.ratio[0] == pytest.approx(np.sqrt(np.pi / 2), abs=1e-15)
    assert np.all(np.diff(lut.ratio) > 0)
    # ratio(θ)/θ ≈ 1 + 1/(2θ²) + O(θ⁻⁴): 1.00501 at θ = 10
    assert lut.forward(10.0) / 10.0 == pytest.approx(_quad_mean_ratio(10.0) / 10.0, abs=1e-6)
    assert 1.0 < lut.forward(10.0) / 10.0 < 1.0051
    assert np.isfinite(lut.ratio).all()


def test_lut_build_validation():
    with pytest.raises(ValueError):
        noise.build_rician_lut(theta_max=5)
    with pytest.raises(ValueError):
        noise.build_rician_lut(spacing=0.05)


def test_lut_invert_forward_roundtrip():
    lut = noise.default_lut()
    grid = lut.theta[::173]
    back = lut.invert(lut.forward(grid))
    assert np.max(np.abs(back - grid)) <= lut.spacing


def test_correct_image_rayleigh_point_exact_zero():
    s = 3.0
    assert noise.rician_correct_image(np.sqrt(np.pi / 2) * s, s) == 0.0
    assert noise.rician_correct_image(0.5 * s, s) == 0.0


def test_correct_image_monte_carlo():
    u = noise.simulate_rician(np.full(10**5, 50.0), 10.0, 11)
    assert noise.rician_correct_image(u.mean(), 10.0) == pytest.approx(50.0, rel=0.01)


def test_correct_image_zero_sigma_identity(ph24):
    np.testing.assert_array_equal(noise.rician_correct_image(ph24.data, 0.0), ph24.data)


def test_variance_factor_limits():
    assert noise.rician_variance_factor(0.0) == pytest.approx(2 - np.pi / 2, abs=1e-14)
    big = noise.rician_variance_factor(np.array([10.0, 36.9, 37.1, 1e4]))
    assert np.all(big <= 1)
    # the σ correction 1/sqrt(ξ) is the identity within 0.5% for θ >= 10
    assert np.all(np.abs(1 / np.sqrt(big) - 1) < 0.005)
    # the large-θ closed form joins the exact expression smoothly
    assert abs(big[1] - big[2]) < 1e-5


def test_correct_sigma_examples():
    assert noise.rician_correct_sigma(4.0, 0.0) == pytest.approx(4.0 / np.sqrt(2 - np.pi / 2), rel=1e-12)
    assert noise.rician_correct_sigma(0.0, 3.0) == 0.0
    assert noise.rician_correct_sigma(4.0, 20.0) == pytest.approx(4.0, rel=0.005)
    assert noise.rician_correct_sigma(4.0, np.inf) == 4.0


def test_snr_inversion_recovers_theta():
    theta = np.array([0.5, 1.0, 2.0, 4.0, 8.0, 20.0])
    m = noise.rician_mean_ratio(theta)
    snr = m / np.sqrt(noise.rician_variance_factor(theta))
    got, ok = noise.magnitude_snr_to_theta(snr)
    assert ok.all()
    np.testing.assert_allclose(got, theta, rtol=1e-5)


def test_snr_nonconvergence_warns():
    with pytest.warns(RuntimeWarning):
        noise.rician_correct_sigma(1.0, 3.0, max_iter=0)


@given(st.floats(0.0, 30.0))
@settings(max_examples=80, deadline=None)
def test_snr_fixed_point_property(theta):
    m = noise.rician_mean_ratio(theta)
    xi = noise.rician_variance_factor(theta)
    got, ok = noise.magnitude_snr_to_theta(m / np.sqrt(xi))
    assert ok
    assert got == pytest.approx(theta, abs=1e-4 * max(1.0, theta))


def _rician_phantom(ph, level, seed=1):
    return noise.simulate_rician(ph.data, level * ph.intensity_peak, np.random.SeedSequence([seed]))


def test_background_median_rayleigh():
    u = noise.simulate_rician(np.zeros((64, 64, 64)), 10.0, 5)
    assert noise.estimate_background_median(u, np.ones(u.shape, bool)) == pytest.approx(10.0, rel=0.03)


def test_background_median_zero_background(ph24):
    assert noise.estimate_background_median(ph24.data, ph24.data == 0) == 0.0


def test_background_median_empty_raises(ph24):
    with pytest.raises(noise.NoiseEstimationError):
        noise.estimate_background_median(ph24.data, np.zeros(ph24.dims, bool))


def test_background_median_small_region_warns(ph24):
    m = np.zeros(ph24.dims, bool)
    m[:5, :5, :5] = True
    with pytest.warns(RuntimeWarning):
        noise.estimate_background_median(ph24.data, m)


def test_background_median_scale_invariance(ph32):
    u = _rician_phantom(ph32, 0.05)
    bg = ph32.data == 0
    a = noise.estimate_background_median(u, bg)
    assert noise.estimate_background_median(3.0 * u, bg) == pytest.approx(3.0 * a, rel=1e-12)


def test_auto_background_close_to_known(ph64):
    u = _rician_phantom(ph64, 0.05)
    auto = noise.estimate_background_median(u, peak=ph64.intensity_peak)
    known = noise.estimate_background_median(u, ph64.data == 0)
    assert auto == pytest.approx(known, rel=0.02)


def test_mad_clean_is_small(ph64):
    assert noise.estimate_mad_wavelet(ph64.data) < 0.01 * ph64.intensity_peak


def test_mad_gaussian(ph64):
    u = noise.simulate_gaussian(ph64.data, 10.0, 2)
    assert noise.estimate_mad_wavelet(u) == pytest.approx(10.0, rel=0.05)


def test_mad_rician(ph64):
    s = 0.05 * ph64.intensity_peak
    assert noise.estimate_mad_wavelet(_rician_phantom(ph64, 0.05)) == pytest.approx(s, rel=0.10)


def test_mad_needs_size():
    with pytest.raises(ValueError):
        noise.estimate_mad_wavelet(np.ones((8, 16, 16)))


def test_mad_empty_object():
    with pytest.raises(noise.NoiseEstimationError):
        noise.estimate_mad_wavelet(np.zeros((16, 16, 16)))


def test_haar_is_orthonormal(rng):
    a = rng.standard_normal((16, 16, 16))
    lll, hhh = noise.haar_decompose(a)
    assert lll.shape == (8, 8, 8)
    # white noise keeps its variance in every orthonormal sub-band
    assert hhh.std() == pytest.approx(1.0, rel=0.1)
    assert lll.mean() == pytest.approx(a.mean() * 2 * np.sqrt(2), rel=1e-12)
