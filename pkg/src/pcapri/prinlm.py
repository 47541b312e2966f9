"""Prefiltered rotationally invariant non-local means (PRI-NLM).

Weights come from a guide image: the voxel values ``g`` and the 3x3x3 means
``μ`` of the guide.  The restored value is the unbiased second-moment
estimate ``sqrt(max(Σ w̃ u² - 2σ², 0))`` over the search volume, using the
original noisy intensities ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy import ndimage

from ._parallel import ordered_map
from .volume import NDIMAGE_MODE, Volume3D

__all__ = ["PrinlmParams", "weight", "patch_means", "voxel_weights", "denoise", "theoretical_limit"]


@dataclass(frozen=True)
class PrinlmParams:
    """``h_i = h_scale * σ(i)``; the search volume has edge ``2*search_radius+1``."""

    search_radius: int = 5
    patch_radius: int = 1
    h_scale: float = 1.0
    weight_mode: Literal["isotropic", "anisotropic"] = "isotropic"

    def __post_init__(self):
        if self.search_radius < 1 or self.patch_radius < 1:
            raise ValueError("search_radius and patch_radius must be >= 1")
        if not self.h_scale > 0:
            raise ValueError("h_scale must be positive")
        if self.weight_mode not in ("isotropic", "anisotropic"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")

    def with_(self, **changes) -> "PrinlmParams":
        return replace(self, **changes)


def weight(g_i, g_j, mu_i, mu_j, h_i, mode="isotropic"):
    """Unnormalized similarity weight between voxels ``i`` and ``j``.

    isotropic: ``exp(-((g_i-g_j)² + 3(μ_i-μ_j)²) / (4 h²))`` when
    ``|μ_i - μ_j| < h``, else 0.  anisotropic: ``exp(-(g_i-g_j)² / h²)``.
    """
    dg = np.subtract(g_i, g_j)
    h2 = np.square(h_i)
    if mode == "anisotropic":
        return np.exp(-dg * dg / h2)
    dmu = np.subtract(mu_i, mu_j)
    w = np.exp(-(dg * dg + 3.0 * dmu * dmu) / (4.0 * h2))
    return np.where(np.abs(dmu) < h_i, w, 0.0)


def _arr(v):
    return np.asarray(v.data if isinstance(v, Volume3D) else v, dtype=float)


def patch_means(guide, patch_radius: int = 1) -> np.ndarray:
    return ndimage.uniform_filter(_arr(guide), size=2 * patch_radius + 1, mode=NDIMAGE_MODE)


def _offsets(radius):
    r = range(-radius, radius + 1)
    return [(a, b, c) for a in r for b in r for c in r]


def voxel_weights(guide, sigma, index, params: PrinlmParams | None = None) -> np.ndarray:
    """Normalized weights of every voxel in the search volume of ``index``.

    Returned as a ``(2R+1)**3`` cube aligned with the search volume.
    """
    params = params or PrinlmParams()
    g = _arr(guide)
    mu = patch_means(g, params.patch_radius)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), g.shape)
    R = params.search_radius
    gp = np.pad(g, R, mode="reflect")
    mp = np.pad(mu, R, mode="reflect")
    x, y, z = index
    h = params.h_scale * sigma[x, y, z]
    gs = gp[x : x + 2 * R + 1, y : y + 2 * R + 1, z : z + 2 * R + 1]
    ms = mp[x : x + 2 * R + 1, y : y + 2 * R + 1, z : z + 2 * R + 1]
    if h == 0:
        w = np.zeros(gs.shape)
        w[R, R, R] = 1.0
        return w
    w = weight(g[x, y, z], gs, mu[x, y, z], ms, h, params.weight_mode)
    return w / w.sum()


def _filter_slab(task):
    x0, x1, gp, mp, up, g, mu, h, params = task
    R = params.search_radius
    g, mu, h = g[x0:x1], mu[x0:x1], h[x0:x1]
    shape = g.shape
    wsum = np.zeros(shape)
    acc = np.zeros(shape)
    ok = h > 0
    hsafe = np.where(ok, h, 1.0)
    inv = 1.0 / (4.0 * hsafe * hsafe) if params.weight_mode == "isotropic" else 1.0 / (hsafe * hsafe)
    ny, nz = shape[1], shape[2]
    tmp = np.empty(shape)
    dmu = np.empty(shape)
    for a, b, c in _offsets(R):
        xs = slice(x0 + R + a, x1 + R + a)
        ys = slice(R + b, R + b + ny)
        zs = slice(R + c, R + c + nz)
        np.subtract(g, gp[xs, ys, zs], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        if params.weight_mode == "isotropic":
            np.subtract(mu, mp[xs, ys, zs], out=dmu)
            cut = np.abs(dmu) < h
            np.multiply(dmu, dmu, out=dmu)
            tmp += 3.0 * dmu
            tmp *= inv
            np.exp(-tmp, out=tmp)
            tmp *= cut
        else:
            tmp *= inv
            np.exp(-tmp, out=tmp)
        if a == b == c == 0:
            # self weight is exp(0) = 1 for every voxel, including h == 0
            tmp.fill(1.0)
        else:
            tmp *= ok
        wsum += tmp
        tmp *= up[xs, ys, zs]
        acc += tmp
    return acc / wsum


def denoise(noisy, guide, sigma, params: PrinlmParams | None = None, threads=None) -> np.ndarray:
    """Filter ``noisy`` with weights from ``guide`` and noise level ``sigma``.

    ``sigma`` is a scalar or a per-voxel σ_g map.  Where ``sigma`` is 0
    only the voxel itself contributes.  Boundaries are mirror padded.
    """
    params = params or PrinlmParams()
    u = _arr(noisy)
    g = _arr(guide)
    if g.shape != u.shape:
        raise ValueError(f"guide shape {g.shape} does not match noisy {u.shape}")
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim and sigma.shape != u.shape:
        raise ValueError(f"noise map shape {sigma.shape} does not match noisy {u.shape}")
    sigma = np.broadcast_to(sigma, u.shape)
    R = params.search_radius
    if R > min(u.shape) - 1:
        raise ValueError(f"search radius {R} too large for volume {u.shape}")
    mu = patch_means(g, params.patch_radius)
    gp = np.pad(g, R, mode="reflect")
    mp = np.pad(mu, R, mode="reflect")
    up = np.pad(u * u, R, mode="reflect")
    h = params.h_scale * sigma
    nx = u.shape[0]
    slab = max(1, -(-nx // 8))
    bounds = [(a, min(a + slab, nx)) for a in range(0, nx, slab)]
    tasks = ((a, b, gp, mp, up, g, mu, h, params) for a, b in bounds)
    second = np.concatenate(list(ordered_map(_filter_slab, tasks, threads)), axis=0)
    return np.sqrt(np.maximum(second - 2.0 * sigma * sigma, 0.0))


def theoretical_limit(clean, noisy, sigma, params: PrinlmParams | None = None, threads=None):
    """PRI-NLM guided by the noise-free image with the exact noise level."""
    return denoise(noisy, clean, sigma, params, threads)
