"""Noise-level x method matrices mirroring the published result tables.

Each ``table*`` function takes a noise-free reference volume and returns a
:class:`Table` of PSNR/SSIM per method and noise level.  Noise levels are
percentages of the reference peak.  The noisy volume for level ``L`` is
drawn with ``np.random.SeedSequence([seed, round(100 * L)])``, so every
method at a level sees the same realization.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import metrics, nlpca, noise, phantom, pipeline, prinlm
from .volume import Volume3D

__all__ = [
    "Table",
    "noisy_at",
    "table1",
    "table2",
    "table3",
    "table4",
    "table5",
    "TABLES",
    "SURROGATE_PSNR",
    "surrogate_rmse",
    "reference_volume",
]

TABLE2_ROWS = ("n", "d", "dd", "dg", "dgd", "dgp", "dgpp", "dgpd")
TABLE5_ROWS = ("c", "cp", "cpd", "cpp", "cpdp")
DEFAULT_LEVELS = {1: (1, 7, 13, 19, 25), 2: (1, 3, 5, 7, 9), 3: (1, 3, 5, 7, 9), 4: (1, 3, 5, 7, 9), 5: (1, 3, 5, 7, 9)}

# PSNR (dB) of the constructed prefiltered images per noise level (%),
# used to size the surrogate noise.
SURROGATE_PSNR = {1: 44.9995, 3: 39.6092, 5: 36.7519, 7: 34.9294, 9: 33.4301}


@dataclass
class Table:
    name: str
    levels: tuple
    psnr: dict = field(default_factory=dict)
    ssim: dict = field(default_factory=dict)

    def add(self, method, level, test, truth, peak):
        q = metrics.evaluate(test, truth, peak=peak)
        self.psnr.setdefault(method, {})[level] = q.psnr
        self.ssim.setdefault(method, {})[level] = q.ssim

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["method", "metric"] + [f"{lvl:g}%" for lvl in self.levels])
        for method in self.psnr:
            w.writerow([method, "psnr"] + [f"{self.psnr[method][lvl]:.4f}" for lvl in self.levels])
            w.writerow([method, "ssim"] + [f"{self.ssim[method][lvl]:.4f}" for lvl in self.levels])
        return buf.getvalue()


def reference_volume(data="phantom", profile="t1", dims=(64, 64, 64), seed=0) -> Volume3D:
    """The desk-scale phantom, or a user-supplied reference volume."""
    if isinstance(data, Volume3D):
        return data
    if data == "phantom":
        return phantom.generate(phantom.default_spec(dims, profile), seed=seed)
    from .io import load_volume

    return load_volume(data)


def noisy_at(ref: Volume3D, level: float, seed=0, kind="rician") -> np.ndarray:
    sigma = level / 100.0 * ref.intensity_peak
    ss = np.random.SeedSequence([seed, int(round(100 * level))])
    if kind == "gaussian":
        return noise.simulate_gaussian(ref.data, sigma, ss)
    return noise.simulate_rician(ref.data, sigma, ss)


def surrogate_rmse(level: float, peak: float) -> float:
    """Surrogate noise std (intensity units) for a noise level, from SURROGATE_PSNR."""
    lv = sorted(SURROGATE_PSNR)
    db = float(np.interp(level, lv, [SURROGATE_PSNR[k] for k in lv]))
    return peak / 255.0 * 255.0 * 10 ** (-db / 20.0)


def table1(ref, levels=None, seed=0, threads=None, params=None) -> Table:
    """NL-PCA with and without the median prefilter."""
    levels = tuple(levels or DEFAULT_LEVELS[1])
    params = params or nlpca.NlpcaParams()
    tab = Table("table1", levels)
    for lvl in levels:
        u = noisy_at(ref, lvl, seed)
        for label, flag in (("without-median", False), ("with-median", True)):
            out, _ = nlpca.denoise(u, params.with_(median_prefilter=flag), threads)
            tab.add(label, lvl, out, ref.data, ref.intensity_peak)
    return tab


def _chains(ref, levels, rows, seed, threads, noise_source, **spec_kw):
    tab = Table("", tuple(levels))
    background = ref.data == 0
    for lvl in levels:
        u = noisy_at(ref, lvl, seed)
        chains = [r for r in rows if r != "n"]
        kw = dict(spec_kw)
        if callable(kw.get("surrogate_rmse")):
            kw["surrogate_rmse"] = kw["surrogate_rmse"](lvl)
        res = pipeline.run_many(
            u, chains, truth=ref, background=background, threads=threads, noise_source=noise_source, seed=seed, **kw
        )
        for r in rows:
            est = u if r == "n" else res[r][0]
            tab.add(r, lvl, est, ref.data, ref.intensity_peak)
    return tab


def table2(ref, levels=None, seed=0, threads=None, noise_source="background", **spec_kw) -> Table:
    """Filter combinations n, d, dd, dg, dgd, dgp, dgpp, dgpd."""
    tab = _chains(ref, levels or DEFAULT_LEVELS[2], TABLE2_ROWS, seed, threads, noise_source, **spec_kw)
    tab.name = "table2"
    return tab


def table3(ref, levels=None, seed=0, threads=None, noise_source="background", **spec_kw) -> Table:
    """Same combinations as table 2, intended for a T2-contrast reference."""
    tab = _chains(ref, levels or DEFAULT_LEVELS[3], TABLE2_ROWS, seed, threads, noise_source, **spec_kw)
    tab.name = "table3"
    return tab


def table4(ref, levels=None, seed=0, threads=None, params=None) -> Table:
    """PRI-NLM guided by the reference with the exact noise level."""
    levels = tuple(levels or DEFAULT_LEVELS[4])
    tab = Table("table4", levels)
    for lvl in levels:
        u = noisy_at(ref, lvl, seed)
        sigma = lvl / 100.0 * ref.intensity_peak
        out = prinlm.theoretical_limit(ref.data, u, sigma, params, threads)
        tab.add("p", lvl, out, ref.data, ref.intensity_peak)
    return tab


def table5(ref, levels=None, seed=0, threads=None, rmse=None, **spec_kw) -> Table:
    """PD tool on surrogate prefiltered images: c, cp, cpd, cpp, cpdp.

    ``rmse`` (intensity units, or a callable of the level) overrides the
    surrogate noise taken from SURROGATE_PSNR.
    """
    if rmse is None:
        rmse_fn = lambda lvl: surrogate_rmse(lvl, ref.intensity_peak)  # noqa: E731
    elif callable(rmse):
        rmse_fn = rmse
    else:
        rmse_fn = lambda lvl: float(rmse)  # noqa: E731
    tab = _chains(
        ref, levels or DEFAULT_LEVELS[5], TABLE5_ROWS, seed, threads, "background", surrogate_rmse=rmse_fn, **spec_kw
    )
    tab.name = "table5"
    return tab


TABLES = {"table1": table1, "table2": table2, "table3": table3, "table4": table4, "table5": table5}
