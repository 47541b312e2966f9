"""Filter chains over the tokens ``d``, ``g``, ``p`` and ``c``.

``d``
    NL-PCA pass on the current estimate.
``g``
    Rician correction of the current estimate.
``p``
    PRI-NLM pass on the *original* noisy volume, guided by the current
    estimate.
``c``
    Surrogate prefiltered image: ground truth plus Gaussian noise of a
    given RMSE (first token only).

``"dgpd"`` is the full PCA-PRI-PCAr algorithm; ``"pd"`` after any guide is
the PD auxiliary tool.  Stage ``i`` of a chain seeded with ``seed`` draws
its random numbers from ``np.random.SeedSequence([seed, i])``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import metrics, nlpca, noise, prinlm
from .nlpca import NlpcaParams
from .prinlm import PrinlmParams
from .volume import Volume3D

__all__ = [
    "PipelineError",
    "PipelineSpec",
    "StageReport",
    "PipelineReport",
    "run",
    "run_many",
    "pd_tool",
    "build_surrogate",
    "pca_pri_pcar",
]

TOKENS = "dgpc"
NOISE_SOURCES = ("background", "mad", "nlpca", "exact")
_NLPCA_FIELDS = {f.name for f in fields(NlpcaParams)}
_PRINLM_FIELDS = {f.name for f in fields(PrinlmParams)}


class PipelineError(ValueError):
    """Invalid pipeline specification."""


@dataclass(frozen=True)
class PipelineSpec:
    """A filter chain and its parameters.

    ``stages`` optionally holds one dict of parameter overrides per token
    (NL-PCA fields for ``d``, PRI-NLM fields for ``p``).
    """

    tokens: str
    nlpca: NlpcaParams = field(default_factory=NlpcaParams)
    prinlm: PrinlmParams = field(default_factory=PrinlmParams)
    noise_source: str = "background"
    sigma: float | None = None
    surrogate_rmse: float | None = None
    seed: int = 0
    stages: tuple = ()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        t = self.tokens
        if not t:
            raise PipelineError("empty pipeline")
        bad = set(t) - set(TOKENS)
        if bad:
            raise PipelineError(f"unknown tokens {sorted(bad)}; allowed: {TOKENS}")
        if "c" in t[1:]:
            raise PipelineError("'c' may only appear as the first token")
        if t[0] in "gp":
            raise PipelineError(f"'{t[0]}' needs a preceding denoising stage")
        if self.noise_source not in NOISE_SOURCES:
            raise PipelineError(f"unknown noise source {self.noise_source!r}")
        if self.noise_source == "exact" and (self.sigma is None or self.sigma < 0):
            raise PipelineError("noise_source 'exact' needs a non-negative sigma")
        if self.noise_source == "nlpca":
            first = min((t.index(x) for x in "gp" if x in t), default=None)
            if first is not None and "d" not in t[:first]:
                raise PipelineError("noise_source 'nlpca' needs a 'd' stage before 'g'/'p'")
        if t[0] == "c" and not (self.surrogate_rmse is not None and self.surrogate_rmse >= 0):
            raise PipelineError("'c' needs a non-negative surrogate_rmse")
        if self.stages and len(self.stages) != len(t):
            raise PipelineError("stages must hold one override dict per token")
        for tok, over in zip(t, self.stages):
            allowed = {"d": _NLPCA_FIELDS, "p": _PRINLM_FIELDS}.get(tok, set())
            extra = set(over) - allowed
            if extra:
                raise PipelineError(f"stage '{tok}' does not accept {sorted(extra)}")

    @classmethod
    def parse(cls, text: str, **kw) -> "PipelineSpec":
        """Build from a compact token string or a JSON document.

        JSON keys: ``tokens`` plus any of ``nlpca``, ``prinlm`` (dicts),
        ``noise_source``, ``sigma``, ``surrogate_rmse``, ``seed``, ``stages``.
        """
        text = text.strip()
        if not text.startswith("{"):
            return cls(text, **kw)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PipelineError(f"bad pipeline JSON: {exc}") from None
        doc = {**kw, **doc}
        if "tokens" not in doc:
            raise PipelineError("pipeline JSON needs 'tokens'")
        if isinstance(doc.get("nlpca"), dict):
            doc["nlpca"] = NlpcaParams(**doc["nlpca"])
        if isinstance(doc.get("prinlm"), dict):
            doc["prinlm"] = PrinlmParams(**doc["prinlm"])
        doc["stages"] = tuple(doc.get("stages", ()))
        try:
            return cls(**doc)
        except TypeError as exc:
            raise PipelineError(str(exc)) from None

    def stage_params(self, i: int):
        over = self.stages[i] if self.stages else {}
        tok = self.tokens[i]
        if tok == "d":
            return replace(self.nlpca, **over)
        if tok == "p":
            return replace(self.prinlm, **over)
        return None


@dataclass
class StageReport:
    token: str
    chain: str
    volume_id: str
    sigma: float | None
    seconds: float
    psnr: float | None = None
    ssim: float | None = None


@dataclass
class PipelineReport:
    tokens: str
    stages: list = field(default_factory=list)

    def to_json(self) -> str:
        def clean(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v

        rows = [{k: clean(v) for k, v in asdict(s).items()} for s in self.stages]
        return json.dumps({"tokens": self.tokens, "stages": rows}, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(StageReport)]
        writer = csv.writer(buf)
        writer.writerow(names)
        for s in self.stages:
            writer.writerow([getattr(s, n) for n in names])
        return buf.getvalue()


def _arr(v):
    return np.asarray(v.data if isinstance(v, Volume3D) else v, dtype=float)


def _volume_id(data) -> str:
    return hashlib.sha1(np.ascontiguousarray(data).tobytes()).hexdigest()[:12]


def build_surrogate(truth, target_rmse: float, seed=None) -> np.ndarray:
    """Ground truth plus zero-mean Gaussian noise of std ``target_rmse``."""
    if target_rmse < 0:
        raise ValueError("target_rmse must be non-negative")
    return noise.simulate_gaussian(_arr(truth), target_rmse, seed)


def pd_tool(noisy, guide, sigma, nlpca_params=None, prinlm_params=None, threads=None):
    """PRI-NLM guided by ``guide`` followed by exactly one NL-PCA pass."""
    u, g = _arr(noisy), _arr(guide)
    if u.shape != g.shape:
        raise ValueError(f"guide shape {g.shape} does not match noisy {u.shape}")
    p = prinlm.denoise(u, g, sigma, prinlm_params, threads)
    return nlpca.denoise(p, nlpca_params, threads)[0]


class _Noise:
    """Resolves the σ map of a chain, estimating from the noisy input once."""

    def __init__(self, spec, noisy, background, peak):
        self.spec, self.noisy, self.background, self.peak = spec, noisy, background, peak
        self._const = None

    def level(self, last_map):
        src = self.spec.noise_source
        if src == "nlpca":
            return last_map
        if self._const is None:
            if src == "exact":
                self._const = float(self.spec.sigma)
            elif src == "background":
                self._const = noise.estimate_background_median(self.noisy, self.background, self.peak)
            else:
                self._const = noise.estimate_mad_wavelet(self.noisy)
        return self._const


def _summary(sigma):
    if sigma is None:
        return None
    return float(np.median(sigma)) if np.ndim(sigma) else float(sigma)


def run(noisy, spec, truth=None, background=None, peak=None, threads=None, _cache=None):
    """Execute ``spec`` left to right.

    ``truth`` enables per-stage PSNR/SSIM and is required by ``c``.
    ``background`` is an optional mask for the background-median noise
    estimate.  Returns ``(estimate, PipelineReport)``.
    """
    if isinstance(spec, str):
        spec = PipelineSpec.parse(spec)
    u = _arr(noisy)
    gt = None if truth is None else _arr(truth)
    if spec.tokens[0] == "c" and gt is None:
        raise PipelineError("'c' needs the ground truth")
    if gt is not None and gt.shape != u.shape:
        raise ValueError("truth shape does not match noisy")
    if peak is None and isinstance(noisy, Volume3D):
        peak = noisy.intensity_peak
    mpeak = None if gt is None else (truth.intensity_peak if isinstance(truth, Volume3D) else None)
    sigmas = _Noise(spec, u, background, peak)
    if _cache is not None:
        sigmas = _cache.setdefault("_noise", sigmas)
    report = PipelineReport(spec.tokens)
    current, last_map = None, None
    start = 0
    if _cache is not None:
        for k in range(len(spec.tokens), 0, -1):
            hit = _cache.get(spec.tokens[:k])
            if hit is not None:
                current, last_map, stages = hit
                report.stages = list(stages)
                start = k
                break
    for i in range(start, len(spec.tokens)):
        tok = spec.tokens[i]
        t0 = time.perf_counter()
        sigma = None
        if tok == "d":
            current, last_map = nlpca.denoise(u if current is None else current, spec.stage_params(i), threads)
        elif tok == "g":
            sigma = sigmas.level(last_map)
            current = noise.rician_correct_image(current, sigma)
        elif tok == "p":
            sigma = sigmas.level(last_map)
            current = prinlm.denoise(u, current, sigma, spec.stage_params(i), threads)
        else:
            current = build_surrogate(gt, spec.surrogate_rmse, np.random.SeedSequence([spec.seed, i]))
        entry = StageReport(tok, spec.tokens[: i + 1], _volume_id(current), _summary(sigma), time.perf_counter() - t0)
        if gt is not None:
            q = metrics.evaluate(current, gt, peak=mpeak)
            entry.psnr, entry.ssim = q.psnr, q.ssim
        report.stages.append(entry)
        if _cache is not None:
            _cache[spec.tokens[: i + 1]] = (current, last_map, tuple(report.stages))
    return current, report


def run_many(noisy, chains, truth=None, background=None, peak=None, threads=None, **spec_kw):
    """Run several chains sharing one parameter set, reusing common prefixes.

    Returns ``{chain: (estimate, report)}``; results equal separate
    :func:`run` calls.
    """
    cache = {}
    out = {}
    for chain in chains:
        spec = PipelineSpec(chain, **spec_kw)
        out[chain] = run(noisy, spec, truth, background, peak, threads, _cache=cache)
    return out


def pca_pri_pcar(noisy, background=None, peak=None, threads=None, **spec_kw):
    """The full ``dgpd`` chain; returns the denoised volume."""
    return run(noisy, PipelineSpec("dgpd", **spec_kw), background=background, peak=peak, threads=threads)[0]
