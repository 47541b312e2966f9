"""Rician noise simulation, noise-level estimation and Rician bias correction.

All ``sigma`` values are the standard deviation of the Gaussian noise in each
quadrature channel (the Gaussian-equivalent level σ_g), in intensity units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage, special

from .volume import NDIMAGE_MODE

__all__ = [
    "NoiseEstimationError",
    "RicianLut",
    "simulate_rician",
    "simulate_gaussian",
    "rician_mean_ratio",
    "rician_variance_factor",
    "build_rician_lut",
    "default_lut",
    "rician_correct_image",
    "magnitude_snr_to_theta",
    "rician_correct_sigma",
    "estimate_background_median",
    "auto_background_mask",
    "estimate_mad_wavelet",
    "haar_decompose",
]

SQRT_HALF_PI = np.sqrt(np.pi / 2)
# Magnitude SNR of a pure Rayleigh variable: sqrt(pi / (4 - pi)).
RAYLEIGH_SNR = np.sqrt(np.pi / (4 - np.pi))
MAD_SCALE = 0.6745


class NoiseEstimationError(RuntimeError):
    """The requested estimator cannot run on this volume."""


def _sigma_field(sigma, shape) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim and sigma.shape != tuple(shape):
        raise ValueError(f"noise map shape {sigma.shape} does not match volume {tuple(shape)}")
    if np.any(sigma < 0):
        raise ValueError("noise level must be non-negative")
    return sigma


def simulate_rician(clean, sigma, seed=None) -> np.ndarray:
    """Corrupt a magnitude image with Rician noise.

    Each voxel becomes ``sqrt((v + n1)**2 + n2**2)`` with ``n1, n2`` drawn
    independently from ``N(0, sigma**2)``.  ``sigma`` is a scalar or a
    per-voxel map.
    """
    clean = np.asarray(clean, dtype=float)
    sigma = _sigma_field(sigma, clean.shape)
    rng = np.random.default_rng(seed)
    n1 = rng.standard_normal(clean.shape)
    n2 = rng.standard_normal(clean.shape)
    return np.hypot(clean + sigma * n1, sigma * n2)


def simulate_gaussian(clean, sigma, seed=None) -> np.ndarray:
    """Add zero-mean Gaussian noise of standard deviation ``sigma``."""
    clean = np.asarray(clean, dtype=float)
    sigma = _sigma_field(sigma, clean.shape)
    rng = np.random.default_rng(seed)
    return clean + sigma * rng.standard_normal(clean.shape)


def rician_mean_ratio(theta):
    """First Rician moment over σ_g as a function of the true SNR ``theta = v/σ_g``.

    Uses exponentially scaled Bessel functions, so large ``theta`` does not
    overflow.
    """
    theta = np.asarray(theta, dtype=float)
    x = theta * theta / 4.0
    return SQRT_HALF_PI * ((1.0 + 2.0 * x) * special.i0e(x) + 2.0 * x * special.i1e(x))


def _mean_ratio_derivative(theta):
    # d/dθ of rician_mean_ratio; follows from I0' = I1 and (x I1)' = x I0.
    theta = np.asarray(theta, dtype=float)
    x = theta * theta / 4.0
    return SQRT_HALF_PI * (theta / 2.0) * (special.i0e(x) + special.i1e(x))


def rician_variance_factor(theta):
    """Correction factor ξ(θ) = Var[u] / σ_g² of a Rician variable."""
    theta = np.asarray(theta, dtype=float)
    # Past θ = 37 the direct form cancels catastrophically; the asymptotic
    # series agrees there to < 1e-6.
    big = theta > 37.0
    t = np.where(big, 37.0, theta)
    direct = 2.0 + t * t - rician_mean_ratio(t) ** 2
    return np.where(big, 1.0 - 0.5 / np.where(big, theta, 1.0) ** 2, direct)


@dataclass(frozen=True)
class RicianLut:
    """Monotone table from true SNR θ to the biased mean ratio ⟨u⟩/σ_g."""

    theta: np.ndarray
    ratio: np.ndarray

    @property
    def theta_max(self) -> float:
        return float(self.theta[-1])

    @property
    def spacing(self) -> float:
        return float(self.theta[1] - self.theta[0])

    def forward(self, theta):
        return np.interp(theta, self.theta, self.ratio)

    def invert(self, ratio):
        """True SNR θ whose biased mean ratio equals ``ratio``.

        Ratios below √(π/2) map to 0.  Past the end of the table the
        asymptote ``ratio ≈ θ + 1/(2θ)`` is inverted in closed form.
        """
        ratio = np.asarray(ratio, dtype=float)
        theta = np.interp(ratio, self.ratio, self.theta, left=0.0)
        high = ratio > self.ratio[-1]
        if np.any(high):
            r = ratio[high] if ratio.ndim else ratio
            asym = 0.5 * (r + np.sqrt(np.maximum(r * r - 2.0, 0.0)))
            if ratio.ndim:
                theta[high] = asym
            else:
                theta = asym
        return theta


def build_rician_lut(theta_max: float = 37.0, spacing: float = 0.001) -> RicianLut:
    if theta_max < 10:
        raise ValueError("theta_max must be >= 10")
    if not 0 < spacing <= 0.01:
        raise ValueError("spacing must be in (0, 0.01]")
    n = int(round(theta_max / spacing)) + 1
    theta = np.linspace(0.0, spacing * (n - 1), n)
    return RicianLut(theta, rician_mean_ratio(theta))


@lru_cache(maxsize=1)
def default_lut() -> RicianLut:
    """The θ ∈ [0, 37], spacing 0.001 table, built once."""
    return build_rician_lut()


def rician_correct_image(biased_mean, sigma, lut: RicianLut | None = None) -> np.ndarray:
    """Map a biased magnitude-domain mean back to the underlying intensity.

    Voxels with ``sigma == 0`` are returned unchanged.
    """
    lut = lut or default_lut()
    mean = np.asarray(biased_mean, dtype=float)
    sigma = np.broadcast_to(_sigma_field(sigma, mean.shape), mean.shape)
    out = mean.copy()
    noisy = sigma > 0
    if np.any(noisy):
        s = sigma[noisy]
        out[noisy] = s * lut.invert(np.maximum(mean[noisy], 0.0) / s)
    return out


@lru_cache(maxsize=1)
def _snr_table():
    lut = default_lut()
    return lut.theta, lut.ratio / np.sqrt(rician_variance_factor(lut.theta))


def magnitude_snr_to_theta(snr, max_iter: int = 50, tol: float = 1e-6):
    """Solve the magnitude-SNR fixed point for the true SNR θ.

    The measured SNR ``r = mean / std`` of a Rician variable satisfies
    ``θ = sqrt(ξ(θ)(1 + r²) - 2)``.  The root is seeded from a tabulated
    inverse and polished by Newton steps on that fixed-point equation.
    Returns ``(theta, converged)``; ``r`` at or below the Rayleigh value
    ``sqrt(π/(4-π))`` gives θ = 0.
    """
    r = np.asarray(snr, dtype=float).ravel()
    theta_grid, snr_grid = _snr_table()
    theta = np.interp(r, snr_grid, theta_grid, left=0.0, right=np.nan)
    far = np.isnan(theta)
    # Beyond the table ξ ≈ 1, so θ ≈ r.
    theta[far] = r[far]
    active = r > RAYLEIGH_SNR
    theta[~active] = 0.0
    # Very high SNR: ξ = 1 - 1/(2θ²) to O(θ⁻⁴) gives θ² = r² - 3/2 directly.
    huge = r > 1e3
    theta[huge] = np.sqrt(r[huge] ** 2 - 1.5)
    converged = ~active | huge
    k = 1.0 + r * r
    for _ in range(max_iter):
        idx = np.flatnonzero(~converged)
        if idx.size == 0:
            break
        t = theta[idx]
        m = rician_mean_ratio(t)
        xi = 2.0 + t * t - m * m
        g = np.sqrt(np.maximum(xi * k[idx] - 2.0, 0.0))
        dxi = 2.0 * t - 2.0 * m * _mean_ratio_derivative(t)
        dg = np.where(g > 0, k[idx] * dxi / (2.0 * np.where(g > 0, g, 1.0)), 0.0)
        f = g - t
        denom = dg - 1.0
        step = np.where(np.abs(denom) > 1e-12, f / np.where(denom == 0, 1.0, denom), -f)
        new = np.maximum(t - step, 0.0)
        theta[idx] = new
        converged[idx] = np.abs(new - t) <= tol * np.maximum(1.0, new)
    if np.ndim(snr) == 0:
        return float(theta[0]), bool(converged[0])
    return theta.reshape(np.shape(snr)), converged.reshape(np.shape(snr))


def rician_correct_sigma(magnitude_sigma, local_snr, max_iter: int = 50, tol: float = 1e-6):
    """Convert a magnitude-domain standard deviation into σ_g.

    ``local_snr`` is the measured magnitude SNR (mean over standard
    deviation).  The result is ``magnitude_sigma / sqrt(ξ(θ))``; a
    ``RuntimeWarning`` is issued if the θ iteration does not converge.
    """
    snr = np.asarray(local_snr, dtype=float)
    finite = np.isfinite(snr)
    theta, converged = magnitude_snr_to_theta(np.where(finite, snr, 0.0), max_iter=max_iter, tol=tol)
    if not np.all(converged):
        warnings.warn("SNR fixed point did not converge; returning last iterate", RuntimeWarning)
    # Infinite SNR (zero noise) needs no correction.
    xi = np.where(finite, rician_variance_factor(theta), 1.0)
    out = np.asarray(magnitude_sigma, dtype=float) / np.sqrt(xi)
    return float(out) if np.ndim(out) == 0 else out


def _local_mean(data, size=3):
    return ndimage.uniform_filter(np.asarray(data, dtype=float), size=size, mode=NDIMAGE_MODE)


def auto_background_mask(noisy, peak: float | None = None) -> np.ndarray:
    """Guess the signal-free region of a magnitude image.

    Voxels whose 3x3x3 mean is below 5% of ``peak``.  When the noise floor
    itself exceeds that, the threshold is raised to ``2.2 σ`` using the
    wavelet estimate, which sits above the Rayleigh local-mean spread.
    """
    noisy = np.asarray(noisy, dtype=float)
    peak = float(noisy.max()) if peak is None else float(peak)
    smooth = _local_mean(noisy)
    threshold = 0.05 * peak
    try:
        threshold = max(threshold, 2.2 * estimate_mad_wavelet(noisy))
    except (NoiseEstimationError, ValueError):
        pass
    return smooth < threshold


def estimate_background_median(noisy, background=None, peak: float | None = None) -> float:
    """Noise level from the background local means, ``sqrt(2/π) median(μ_b)``.

    ``background`` is a boolean mask of signal-free voxels; by default it is
    found with :func:`auto_background_mask`.  Local means use 3x3x3
    neighbourhoods restricted to background voxels.  Only valid for a
    spatially constant noise level.
    """
    noisy = np.asarray(noisy, dtype=float)
    if background is None:
        background = auto_background_mask(noisy, peak)
    background = np.asarray(background, dtype=bool)
    if background.shape != noisy.shape:
        raise ValueError("background mask shape does not match volume")
    n = int(background.sum())
    if n == 0:
        raise NoiseEstimationError("empty background region; use the wavelet MAD estimator")
    if n < 1000:
        warnings.warn(f"only {n} background voxels; estimate may be unreliable", RuntimeWarning)
    weight = background.astype(float)
    num = _local_mean(noisy * weight)
    den = _local_mean(weight)
    mu_b = num[background] / den[background]
    return float(np.sqrt(2.0 / np.pi) * np.median(mu_b))


def haar_decompose(vol):
    """One-level orthonormal separable Haar transform.

    Returns ``(lll, hhh)``; odd trailing planes are dropped.
    """
    a = np.asarray(vol, dtype=float)
    a = a[: a.shape[0] // 2 * 2, : a.shape[1] // 2 * 2, : a.shape[2] // 2 * 2]
    low = high = a
    for axis in range(3):
        sl_even = [slice(None)] * 3
        sl_odd = [slice(None)] * 3
        sl_even[axis] = slice(0, None, 2)
        sl_odd[axis] = slice(1, None, 2)
        low = (low[tuple(sl_even)] + low[tuple(sl_odd)]) / np.sqrt(2.0)
        high = (high[tuple(sl_even)] - high[tuple(sl_odd)]) / np.sqrt(2.0)
    return low, high


def _largest_component(mask):
    labels, n = ndimage.label(mask)
    if n == 0:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (np.argmax(sizes) + 1)


def estimate_mad_wavelet(noisy) -> float:
    """Object-based wavelet MAD estimate of σ_g for a Rician magnitude image.

    The object is segmented in the LLL sub-band (threshold at 10% of the
    LLL maximum, largest connected component).  The threshold is then
    raised above the Rayleigh floor implied by a first estimate, so that
    noisy background is not counted as object.  The Gaussian estimate
    ``median(|HHH|)/0.6745`` inside the mask is finally converted to σ_g
    with the object's mean SNR.
    """
    noisy = np.asarray(noisy, dtype=float)
    if min(noisy.shape) < 16:
        raise ValueError("wavelet MAD estimation needs at least 16 voxels per axis")
    lll, hhh = haar_decompose(noisy)
    scale = 2.0 * np.sqrt(2.0)  # LLL = scale * (mean of the 8 voxels)
    threshold = 0.1 * lll.max()
    mask = _largest_component(lll > threshold)
    for _ in range(2):
        if not mask.any():
            raise NoiseEstimationError("empty object mask in LLL sub-band")
        sigma_mag = np.median(np.abs(hhh[mask])) / MAD_SCALE
        floor = scale * (SQRT_HALF_PI + 4.0 * 0.655 / np.sqrt(8.0)) * sigma_mag
        if floor <= threshold:
            break
        threshold = floor
        mask = _largest_component(lll > threshold)
    if not mask.any():
        raise NoiseEstimationError("empty object mask in LLL sub-band")
    sigma_mag = np.median(np.abs(hhh[mask])) / MAD_SCALE
    if sigma_mag == 0:
        return 0.0
    snr = np.mean(lll[mask]) / scale / sigma_mag
    return float(rician_correct_sigma(sigma_mag, snr))
