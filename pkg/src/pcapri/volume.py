"""Volume container, mirror padding and patch/window geometry.

Conventions used throughout the package:

* Arrays are indexed ``data[x, y, z]``.
* Mirror padding reflects *without* repeating the edge voxel: the value
  ``k`` voxels past the edge equals the voxel ``k + 1`` voxels inside
  (``[1, 2, 3]`` padded by 2 gives ``[1, 2, 3, 2, 1]``).  This is numpy's
  ``mode="reflect"`` and scipy.ndimage's ``mode="mirror"``.
* Patches are vectorized x-fastest, then y, then z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Volume3D",
    "PatchGeometry",
    "Window",
    "mirror_pad",
    "pad_for_windows",
    "window_origins",
    "iter_windows",
    "patch_offsets",
    "patch_index",
    "extract_patches",
    "NDIMAGE_MODE",
]

# scipy.ndimage boundary mode matching ``mirror_pad``.
NDIMAGE_MODE = "mirror"


@dataclass(frozen=True)
class Volume3D:
    """Dense 3D scalar field with voxel spacing and a reference peak.

    ``intensity_peak`` is the reference maximum used for noise percentages
    and PSNR normalization.  It defaults to the data maximum (or 1 for an
    all-zero volume).
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity_peak: float | None = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if len(self.spacing) != 3:
            raise ValueError("spacing must have three entries")
        peak = self.intensity_peak
        if peak is None:
            peak = float(data.max()) if data.size and data.max() > 0 else 1.0
        if not peak > 0:
            raise ValueError("intensity_peak must be positive")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "intensity_peak", float(peak))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def with_data(self, data) -> "Volume3D":
        """Same metadata, new voxel values."""
        return Volume3D(np.asarray(data), self.spacing, self.intensity_peak)


@dataclass(frozen=True)
class PatchGeometry:
    """Patch edge ``d``, search-window radius ``w`` and window stride ``step``."""

    d: int
    w: int
    step: int = 1

    def __post_init__(self):
        if self.d < 2 or self.w < 2:
            raise ValueError(f"need d >= 2 and w >= 2, got d={self.d}, w={self.w}")
        if self.d > self.w + 1:
            raise ValueError(f"patch edge d={self.d} exceeds w+1={self.w + 1}")
        if not 1 <= self.step <= 2 * self.w + 1:
            raise ValueError(f"step must be in [1, {2 * self.w + 1}], got {self.step}")

    @property
    def window(self) -> int:
        """Window edge length ``2w + 1``."""
        return 2 * self.w + 1

    @property
    def patches_per_axis(self) -> int:
        return self.window - self.d + 1

    @property
    def n_patches(self) -> int:
        """Number of overlapping patches in one window, ``(2w + 2 - d)**3``."""
        return self.patches_per_axis ** 3


class Window(NamedTuple):
    origin: tuple[int, int, int]
    extent: int


def _as_array(vol) -> np.ndarray:
    return vol.data if isinstance(vol, Volume3D) else np.asarray(vol)


def mirror_pad(vol, pad: Sequence[int]):
    """Append mirrored planes after the last element of each axis.

    Returns the same type as the input (``Volume3D`` or ndarray).
    """
    data = _as_array(vol)
    pad = tuple(int(p) for p in pad)
    if len(pad) != 3:
        raise ValueError("pad needs one entry per axis")
    for p, n in zip(pad, data.shape):
        if p < 0 or (p > 0 and p > n - 1):
            raise ValueError(f"pad {p} not in [0, {n - 1}] for axis of length {n}")
    out = np.pad(data, [(0, p) for p in pad], mode="reflect") if any(pad) else data.copy()
    if isinstance(vol, Volume3D):
        return vol.with_data(out)
    return out


def _n_windows(n: int, window: int, step: int) -> int:
    if n <= window:
        return 1
    return -(-(n - window) // step) + 1


def pad_for_windows(shape: Sequence[int], geom: PatchGeometry) -> tuple[int, int, int]:
    """Trailing pad per axis so the step grid of windows covers the volume."""
    pads = []
    for n in shape:
        k = _n_windows(n, geom.window, geom.step)
        pads.append((k - 1) * geom.step + geom.window - n)
    return tuple(pads)


def window_origins(shape: Sequence[int], geom: PatchGeometry) -> list[np.ndarray]:
    """Per-axis origins ``0, step, 2*step, ...`` of windows that fit ``shape``."""
    out = []
    for n in shape:
        if n < geom.window:
            raise ValueError(f"axis of length {n} shorter than window {geom.window}")
        out.append(np.arange(0, n - geom.window + 1, geom.step))
    return out


def iter_windows(vol, geom: PatchGeometry) -> Iterator[Window]:
    """Yield windows on the step grid of an already padded volume."""
    ox, oy, oz = window_origins(_as_array(vol).shape, geom)
    for x in ox:
        for y in oy:
            for z in oz:
                yield Window((int(x), int(y), int(z)), geom.window)


def patch_offsets(window: int, d: int) -> np.ndarray:
    """Origins of all patches inside a window, in lexicographic (x, y, z) order."""
    r = np.arange(window - d + 1)
    gx, gy, gz = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def patch_index(window: int, d: int) -> np.ndarray:
    """Flat (C-order) window indices of every patch voxel.

    Shape ``(n_patches, d**3)``; the voxel axis is x-fastest.
    """
    r = np.arange(d)
    vz, vy, vx = np.meshgrid(r, r, r, indexing="ij")
    vox = np.stack([vx.ravel(), vy.ravel(), vz.ravel()], axis=1)
    origins = patch_offsets(window, d)
    pos = origins[:, None, :] + vox[None, :, :]
    return np.ravel_multi_index((pos[..., 0], pos[..., 1], pos[..., 2]), (window,) * 3)


def extract_patches(window_data: np.ndarray, d: int) -> np.ndarray:
    """Sample matrix of all overlapping ``d**3`` patches of a cubic window.

    Returns an array of shape ``(d**3, n_patches)``; column ``k`` is the
    patch whose origin is ``patch_offsets(window, d)[k]``.
    """
    window_data = np.asarray(window_data)
    edge = window_data.shape[0]
    if window_data.shape != (edge, edge, edge) or edge < d:
        raise ValueError(f"expected a cubic window with edge >= {d}, got {window_data.shape}")
    idx = patch_index(edge, d)
    return window_data.reshape(-1)[idx].T

