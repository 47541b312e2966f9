"""PSNR, RMSE and SSIM restricted to a region of interest.

Both volumes are scaled by ``255 / peak`` (``peak`` defaults to the maximum
of the reference) before the metrics are computed, so PSNR uses
``20 log10(255 / RMSE)`` and SSIM uses ``L = 255``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .volume import NDIMAGE_MODE, Volume3D

__all__ = ["QualityReport", "roi_mask", "rmse", "psnr", "ssim", "evaluate"]

L = 255.0
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float
    rmse: float
    roi_voxel_count: int

    def to_json(self) -> str:
        d = asdict(self)
        if math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return json.dumps(d)

    def csv_row(self, label: str = "") -> str:
        buf = io.StringIO()
        csv.writer(buf).writerow([label, self.psnr, self.ssim, self.rmse, self.roi_voxel_count])
        return buf.getvalue()


def _arr(v):
    return np.asarray(v.data if isinstance(v, Volume3D) else v, dtype=float)


def roi_mask(truth) -> np.ndarray:
    """Voxels where the noise-free reference is nonzero."""
    mask = _arr(truth) > 0
    if not mask.any():
        raise ValueError("empty ROI: reference volume has no voxel > 0")
    return mask


def _prepare(test, truth, mask, peak):
    test, truth = _arr(test), _arr(truth)
    if test.shape != truth.shape:
        raise ValueError(f"shape mismatch {test.shape} vs {truth.shape}")
    if mask is None:
        mask = roi_mask(truth)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask")
    if peak is None:
        peak = float(truth.max())
    scale = L / peak
    return test * scale, truth * scale, mask


def rmse(test, truth, mask=None, peak=None) -> float:
    """RMSE over the mask, in the 0..255 scale."""
    t, g, m = _prepare(test, truth, mask, peak)
    return float(np.sqrt(np.mean((t[m] - g[m]) ** 2)))


def psnr_from_rmse(value: float) -> float:
    return math.inf if value == 0 else 20.0 * math.log10(L / value)


def psnr(test, truth, mask=None, peak=None) -> float:
    """PSNR in dB; identical volumes give ``inf``."""
    return psnr_from_rmse(rmse(test, truth, mask, peak))


def _local(a):
    return ndimage.uniform_filter(a, size=3, mode=NDIMAGE_MODE)


def ssim(test, truth, mask=None, peak=None) -> float:
    """Mean local SSIM over mask voxels (3x3x3 local statistics).

    Neighbourhoods of ROI voxels may extend outside the ROI.
    """
    u, v, m = _prepare(test, truth, mask, peak)
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    mu_u, mu_v = _local(u), _local(v)
    var_u = _local(u * u) - mu_u * mu_u
    var_v = _local(v * v) - mu_v * mu_v
    cov = _local(u * v) - mu_u * mu_v
    num = (2 * mu_u * mu_v + c1) * (2 * cov + c2)
    den = (mu_u * mu_u + mu_v * mu_v + c1) * (var_u + var_v + c2)
    return float(np.mean(num[m] / den[m]))


def evaluate(test, truth, mask=None, peak=None) -> QualityReport:
    t, g, m = _prepare(test, truth, mask, peak)
    r = float(np.sqrt(np.mean((t[m] - g[m]) ** 2)))
    return QualityReport(psnr_from_rmse(r), ssim(test, truth, m, peak), r, int(m.sum()))
