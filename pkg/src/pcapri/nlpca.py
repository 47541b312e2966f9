"""Non-local PCA (NL-PCA) patch filter.

Each search window of ``(2w+1)**3`` voxels on a stride-``step`` grid yields
one or more groups of ``M`` patches of ``d**3`` voxels.  A group's centred
sample matrix is projected onto the eigenvectors of its covariance whose
square-rooted eigenvalues reach the threshold ``tau_beta * median(sqrt(λ_s))``,
where ``λ_s`` keeps the eigenvalues with ``sqrt(λ) <= T * median(sqrt(λ))``.
Every voxel is the uniform average of all denoised patches covering it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Literal, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from . import noise
from ._parallel import ordered_map
from .volume import NDIMAGE_MODE, PatchGeometry, Volume3D, mirror_pad, pad_for_windows, patch_index

__all__ = [
    "NlpcaParams",
    "EigenShrinkResult",
    "median_prefilter",
    "group_patches",
    "eigen_shrink",
    "denoise",
    "estimate_noise_map",
]

Grouping = Literal["all-in-window", "similar-to-each", "similar-to-center"]
GROUPINGS = ("all-in-window", "similar-to-each", "similar-to-center")

# Rough cap on sample-matrix entries held per chunk of windows.
_CHUNK_ENTRIES = 4_000_000


@dataclass(frozen=True)
class NlpcaParams:
    """Tunable NL-PCA parameters.

    ``beta`` only scales the exported noise map; shrinkage uses the folded
    product ``tau_beta``.
    """

    d: int = 4
    M: int = 64
    w: int = 3
    tau_beta: float = 2.46
    T: float = 2.46
    step: int = 3
    median_prefilter: bool = False
    grouping: Grouping = "all-in-window"
    beta: float = 1.16

    def __post_init__(self):
        geom = self.geometry  # validates d, w, step
        if self.grouping not in GROUPINGS:
            raise ValueError(f"unknown grouping {self.grouping!r}")
        if not self.d ** 3 <= self.M <= geom.n_patches:
            raise ValueError(
                f"M={self.M} outside [d^3={self.d ** 3}, (2w+2-d)^3={geom.n_patches}]"
            )
        if self.grouping == "all-in-window" and self.M != geom.n_patches:
            raise ValueError(f"all-in-window grouping needs M = {geom.n_patches}")
        if self.tau_beta < 0 or self.T < 0:
            raise ValueError("thresholds must be non-negative")

    @property
    def geometry(self) -> PatchGeometry:
        return PatchGeometry(self.d, self.w, self.step)

    def with_(self, **changes) -> "NlpcaParams":
        return replace(self, **changes)


class EigenShrinkResult(NamedTuple):
    denoised: np.ndarray
    retained: int
    sigma: float


def _as_array(vol) -> np.ndarray:
    return np.asarray(vol.data if isinstance(vol, Volume3D) else vol, dtype=float)


def median_prefilter(vol) -> np.ndarray:
    """3x3x3 median with mirror boundaries."""
    return ndimage.median_filter(_as_array(vol), size=3, mode=NDIMAGE_MODE)


def _masked_median(values, mask):
    # Row-wise median over the entries where ``mask`` holds; an empty row
    # gives 0, so nothing is discarded there.
    v = np.where(mask, values, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = np.nanmedian(v, axis=-1)
    return np.nan_to_num(out, nan=0.0)


def _shrink_batch(X, tau_beta, T, guide=None):
    """Batched eigen-shrinkage of sample matrices ``X`` of shape (B, p, m).

    Returns ``(denoised, retained, median_sqrt_lambda_s)``.  When ``guide``
    is given, the basis and thresholds come from it and are applied to X.
    """
    m = X.shape[-1]
    mean = X.mean(axis=-1, keepdims=True)
    Xc = X - mean
    if guide is None:
        Gc = Xc
    else:
        Gc = guide - guide.mean(axis=-1, keepdims=True)
    cov = Gc @ np.swapaxes(Gc, -1, -2) / (m - 1)
    lam, vec = np.linalg.eigh(cov)
    root = np.sqrt(np.maximum(lam, 0.0))
    med = np.median(root, axis=-1, keepdims=True)
    med_s = _masked_median(root, root <= T * med)[..., None]
    keep = root >= tau_beta * med_s
    proj = (vec * keep[..., None, :]) @ (np.swapaxes(vec, -1, -2) @ Xc)
    return proj + mean, keep.sum(axis=-1), med_s[..., 0]


def eigen_shrink(X, tau_beta: float, T: float, beta: float = 1.16) -> EigenShrinkResult:
    """Eigen-shrink one ``d**3 x M`` sample matrix (columns are patches).

    ``sigma`` is ``beta * median(sqrt(λ_s))``, the window's magnitude-domain
    noise estimate.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("sample matrix needs shape (d^3, M) with M >= 2")
    if not np.any(X - X.mean(axis=1, keepdims=True)):
        return EigenShrinkResult(X.copy(), X.shape[0], 0.0)
    out, kept, med = _shrink_batch(X[None], tau_beta, T)
    return EigenShrinkResult(out[0], int(kept[0]), float(beta * med[0]))


def _rank_by_distance(patches, ref, M):
    """Indices of the M patches nearest to patch ``ref`` (itself first).

    ``patches`` is (..., P, p); ``ref`` broadcasts against (..., ) and holds
    reference indices.  A stable sort keeps lexicographic patch order on ties.
    """
    ref_vec = np.take_along_axis(patches, ref[..., None, None], axis=-2)
    dist = np.sum((patches - ref_vec) ** 2, axis=-1)
    np.put_along_axis(dist, ref[..., None], -1.0, axis=-1)
    return np.argsort(dist, axis=-1, kind="stable")[..., :M]


def group_patches(window_data, params: NlpcaParams, guide=None) -> np.ndarray:
    """Patch groups of one window as patch indices, shape (n_groups, M).

    Indices refer to ``volume.patch_offsets(2w+1, d)``.  Similarity is
    measured on ``guide`` (e.g. a median-prefiltered window) when given.
    """
    geom = params.geometry
    window_data = np.asarray(window_data, dtype=float)
    if window_data.shape != (geom.window,) * 3:
        raise ValueError(f"window must have shape {(geom.window,) * 3}")
    if params.M > geom.n_patches:
        raise ValueError("M exceeds the number of patches in the window")
    src = window_data if guide is None else np.asarray(guide, dtype=float)
    patches = src.reshape(-1)[patch_index(geom.window, params.d)]
    return _groups(patches[None], params)[0]


def _center_patch(params: NlpcaParams) -> int:
    q = params.geometry.patches_per_axis
    c = (q - 1) // 2
    return (c * q + c) * q + c


def _groups(patches, params: NlpcaParams):
    # patches: (B, P, p) -> groups (B, G, M) of patch indices
    B, P, _ = patches.shape
    if params.grouping == "all-in-window":
        return np.broadcast_to(np.arange(P), (B, 1, P))
    if params.grouping == "similar-to-center":
        ref = np.full(B, _center_patch(params))
        return _rank_by_distance(patches, ref, params.M)[:, None, :]
    ref = np.broadcast_to(np.arange(P), (B, P))
    return _rank_by_distance(patches[:, None], ref, params.M)


def _process_chunk(task):
    win, guide_win, params, flat_idx, wsize = task
    B = win.shape[0]
    patches = win[:, flat_idx]  # (B, P, p)
    gpatches = patches if guide_win is None else guide_win[:, flat_idx]
    groups = _groups(gpatches, params)  # (B, G, M)
    G, M = groups.shape[1:]
    bidx = np.arange(B)[:, None, None]
    X = np.swapaxes(patches[bidx, groups], -1, -2)  # (B, G, p, M)
    Xg = None if guide_win is None else np.swapaxes(gpatches[bidx, groups], -1, -2)
    p = X.shape[-2]
    den, _, med = _shrink_batch(
        X.reshape(B * G, p, M),
        params.tau_beta,
        params.T,
        None if Xg is None else Xg.reshape(B * G, p, M),
    )
    den = np.swapaxes(den.reshape(B, G, p, M), -1, -2)  # (B, G, M, p)
    sig = params.beta * med.reshape(B, G)
    # scatter into window-local accumulators
    local = flat_idx[groups]  # (B, G, M, p)
    lin = (np.arange(B)[:, None, None, None] * wsize + local).ravel()
    n = B * wsize
    acc = np.bincount(lin, weights=den.ravel(), minlength=n)
    hits = np.bincount(lin, minlength=n).astype(float)
    sig_w = np.broadcast_to(sig[:, :, None, None], local.shape).ravel()
    sacc = np.bincount(lin, weights=sig_w, minlength=n)
    return acc.reshape(B, wsize), hits.reshape(B, wsize), sacc.reshape(B, wsize)


def _run(data, params: NlpcaParams, threads=None):
    geom = params.geometry
    shape = data.shape
    pads = pad_for_windows(shape, geom)
    if any(p > n - 1 for p, n in zip(pads, shape)):
        raise ValueError(
            f"volume {shape} too small for windows of edge {geom.window} with step {geom.step}"
        )
    padded = mirror_pad(data, pads)
    gpadded = median_prefilter(padded) if params.median_prefilter else None
    W = geom.window
    wsize = W ** 3
    view = sliding_window_view(padded, (W, W, W))[:: geom.step, :: geom.step, :: geom.step]
    gview = None
    if gpadded is not None:
        gview = sliding_window_view(gpadded, (W, W, W))[:: geom.step, :: geom.step, :: geom.step]
    gx, gy, gz = view.shape[:3]
    flat_idx = patch_index(W, params.d)
    n_groups = 1 if params.grouping != "similar-to-each" else geom.n_patches
    per_x = gy * gz * n_groups * params.M * params.d ** 3 * 2
    xs = max(1, _CHUNK_ENTRIES // max(per_x, 1))
    slabs = [(i, min(i + xs, gx)) for i in range(0, gx, xs)]

    def tasks():
        for a, b in slabs:
            win = view[a:b].reshape(-1, wsize)
            gwin = None if gview is None else gview[a:b].reshape(-1, wsize)
            yield win, gwin, params, flat_idx, wsize

    acc = np.zeros(padded.shape)
    hits = np.zeros(padded.shape)
    sacc = np.zeros(padded.shape)
    s = geom.step
    for (a, b), (wa, wh, ws) in zip(slabs, ordered_map(_process_chunk, tasks(), threads)):
        nx = b - a
        wa = wa.reshape(nx, gy, gz, W, W, W)
        wh = wh.reshape(nx, gy, gz, W, W, W)
        ws = ws.reshape(nx, gy, gz, W, W, W)
        x0 = a * s
        for i in range(W):
            xsl = slice(x0 + i, x0 + i + s * nx, s)
            for j in range(W):
                ysl = slice(j, j + s * gy, s)
                for k in range(W):
                    zsl = slice(k, k + s * gz, s)
                    acc[xsl, ysl, zsl] += wa[:, :, :, i, j, k]
                    hits[xsl, ysl, zsl] += wh[:, :, :, i, j, k]
                    sacc[xsl, ysl, zsl] += ws[:, :, :, i, j, k]
    crop = tuple(slice(0, n) for n in shape)
    acc, hits, sacc = acc[crop], hits[crop], sacc[crop]
    covered = hits > 0
    out = np.where(covered, acc / np.where(covered, hits, 1.0), data)
    sigma_mag = np.where(covered, sacc / np.where(covered, hits, 1.0), 0.0)
    return out, sigma_mag


def _rician_noise_map(estimate, sigma_mag):
    safe = sigma_mag > 0
    snr = np.where(safe, np.maximum(estimate, 0.0) / np.where(safe, sigma_mag, 1.0), 0.0)
    return np.where(safe, noise.rician_correct_sigma(sigma_mag, snr), 0.0)


def denoise(vol, params: NlpcaParams | None = None, threads=None, rician: bool = True):
    """Run the NL-PCA filter.

    Returns ``(denoised, noise_map)`` as arrays.  The noise map is the
    per-voxel uniform average of the window estimates, converted from the
    magnitude domain to σ_g when ``rician`` is true.  Non-negative input
    gives non-negative output.  Voxels no group reaches (possible with
    ``similar-to-center``) keep their input value.
    """
    params = params or NlpcaParams()
    data = _as_array(vol)
    out, sigma_mag = _run(data, params, threads)
    if data.min() >= 0:
        out = np.maximum(out, 0.0)
    sigma_map = _rician_noise_map(out, sigma_mag) if rician else sigma_mag
    return out, sigma_map


def estimate_noise_map(vol, params: NlpcaParams | None = None, threads=None) -> np.ndarray:
    """The σ_g map half of :func:`denoise`."""
    return denoise(vol, params, threads)[1]
