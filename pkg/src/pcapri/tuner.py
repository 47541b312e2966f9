"""Constrained particle swarm and grid search over NL-PCA parameters.

The parameter vector is ``(d, M, w, tau_beta, T)`` with the feasible set::

    2 <= d <= w + 1
    d**3 <= M <= (2w + 2 - d)**3
    2 <= w <= 3
    tau_beta <= T

Integer coordinates are searched continuously and rounded by :func:`repair`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import metrics, nlpca
from ._parallel import ordered_map

__all__ = [
    "ParamPoint",
    "PsoConfig",
    "PsoResult",
    "feasible",
    "repair",
    "pso_optimize",
    "make_nlpca_objective",
    "tune_nlpca",
    "grid_search",
    "grid_to_csv",
]

W_RANGE = (2, 3)
THRESHOLD_RANGE = (0.5, 4.0)


class ParamPoint(NamedTuple):
    d: float
    M: float
    w: float
    tau_beta: float
    T: float

    @property
    def feasible(self) -> bool:
        return feasible(self)

    def as_params(self, **kw) -> nlpca.NlpcaParams:
        """NL-PCA parameters for this point (all-in-window when M is maximal)."""
        d, M, w = int(self.d), int(self.M), int(self.w)
        grouping = "all-in-window" if M == (2 * w + 2 - d) ** 3 else "similar-to-each"
        kw.setdefault("grouping", grouping)
        return nlpca.NlpcaParams(d=d, M=M, w=w, tau_beta=self.tau_beta, T=self.T, **kw)


def feasible(point) -> bool:
    d, M, w, tb, T = point
    if any(float(v) != int(v) for v in (d, M, w)):
        return False
    return 2 <= d <= w + 1 and d ** 3 <= M <= (2 * w + 2 - d) ** 3 and 2 <= w <= 3 and tb <= T


def repair(point) -> ParamPoint:
    """Round the integer coordinates and clamp into the feasible set.

    Clamping order is w, then d (given w), then M (given d and w);
    ``tau_beta`` is lowered to ``T`` if it exceeds it.
    """
    d, M, w, tb, T = (float(v) for v in point)
    w = int(min(max(round(w), W_RANGE[0]), W_RANGE[1]))
    d = int(min(max(round(d), 2), w + 1))
    M = int(min(max(round(M), d ** 3), (2 * w + 2 - d) ** 3))
    tb = min(tb, T)
    return ParamPoint(d, M, w, tb, T)


@dataclass
class PsoConfig:
    """Global-best PSO settings.

    The inertia 0.729 and acceleration coefficients 1.49445 are the usual
    constriction values.  The run stops after ``max_iterations`` or when
    the best value improves by less than ``function_tolerance`` over
    ``stall_iterations`` consecutive iterations.
    """

    lower: tuple
    upper: tuple
    swarm_size: int = 50
    max_iterations: int = 50
    function_tolerance: float = 1e-3
    stall_iterations: int = 20
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be >= 2")
        if not self.function_tolerance > 0:
            raise ValueError("function_tolerance must be positive")
        if len(self.lower) != len(self.upper) or np.any(np.asarray(self.upper) < np.asarray(self.lower)):
            raise ValueError("bad bounds")


@dataclass
class PsoResult:
    best_point: tuple
    best_value: float
    iterations: int
    history: list = field(default_factory=list)
    evaluated: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "best_point": list(self.best_point),
                "best_psnr": self.best_value,
                "iterations": self.iterations,
                "history": self.history,
            },
            indent=2,
        )


def _safe_eval(objective, x):
    try:
        v = float(objective(x))
    except Exception:
        return -math.inf
    return v if not math.isnan(v) else -math.inf


def pso_optimize(objective: Callable, cfg: PsoConfig, repair: Callable | None = None, threads=None) -> PsoResult:
    """Maximize ``objective`` with a global-best particle swarm.

    ``repair`` maps a raw position to the point actually evaluated (and
    stored back as the particle position); by default positions are
    clipped to the bounds.  Failing evaluations count as ``-inf``.
    ``history`` holds the best value after each iteration.
    """
    lo = np.asarray(cfg.lower, dtype=float)
    hi = np.asarray(cfg.upper, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    fix = repair or (lambda x: np.clip(x, lo, hi))
    n, dim = cfg.swarm_size, lo.size
    span = hi - lo
    pos = np.array([np.asarray(fix(x), dtype=float) for x in lo + rng.random((n, dim)) * span])
    vel = (rng.random((n, dim)) * 2 - 1) * span
    evaluated = []

    def evaluate(positions):
        pts = [tuple(p) for p in positions]
        evaluated.extend(pts)
        return np.array(list(ordered_map(lambda p: _safe_eval(objective, p), pts, threads)))

    val = evaluate(pos)
    pbest, pval = pos.copy(), val.copy()
    g = int(np.argmax(pval))  # argmax returns the lowest index on ties
    gbest, gval = pbest[g].copy(), pval[g]
    history = []
    for it in range(cfg.max_iterations):
        r1, r2 = rng.random((n, dim)), rng.random((n, dim))
        vel = cfg.inertia * vel + cfg.cognitive * r1 * (pbest - pos) + cfg.social * r2 * (gbest - pos)
        vel = np.clip(vel, -span, span)
        pos = np.array([np.asarray(fix(x), dtype=float) for x in pos + vel])
        val = evaluate(pos)
        better = val > pval
        pbest[better], pval[better] = pos[better], val[better]
        g = int(np.argmax(pval))
        if pval[g] > gval:
            gbest, gval = pbest[g].copy(), pval[g]
        history.append(float(gval))
        k = cfg.stall_iterations
        if len(history) > k and history[-1] - history[-1 - k] < cfg.function_tolerance:
            break
    return PsoResult(tuple(float(v) for v in gbest), float(gval), len(history), history, evaluated)


def make_nlpca_objective(clean, noisy, step=None, mask=None, peak=None, threads=None):
    """PSNR of NL-PCA on ``noisy`` against ``clean`` as a function of a ParamPoint.

    By default windows do not overlap (``step = 2w + 1``), the fast path
    used for tuning.
    """
    clean = np.asarray(clean, dtype=float)
    noisy = np.asarray(noisy, dtype=float)
    mask = metrics.roi_mask(clean) if mask is None else mask

    def objective(point):
        pt = ParamPoint(*point)
        if not feasible(pt):
            raise ValueError(f"infeasible point {pt}")
        s = (2 * int(pt.w) + 1) if step is None else step
        out, _ = nlpca.denoise(noisy, pt.as_params(step=s), threads, rician=False)
        return metrics.psnr(out, clean, mask, peak)

    return objective


def default_bounds():
    lower = (2, 8, W_RANGE[0], THRESHOLD_RANGE[0], THRESHOLD_RANGE[0])
    upper = (4, 216, W_RANGE[1], THRESHOLD_RANGE[1], THRESHOLD_RANGE[1])
    return lower, upper


def tune_nlpca(clean, noisy, cfg: PsoConfig | None = None, step=None, threads=None) -> PsoResult:
    """PSO over ``(d, M, w, tau_beta, T)`` maximizing NL-PCA PSNR."""
    if cfg is None:
        lower, upper = default_bounds()
        cfg = PsoConfig(lower, upper)
    objective = make_nlpca_objective(clean, noisy, step=step, threads=threads)
    return pso_optimize(objective, cfg, repair=repair)


def grid_search(objective: Callable, tau_betas, Ts=None, d=4, M=64, w=3) -> list[dict]:
    """Evaluate every ``(tau_beta, T)`` with ``tau_beta <= T`` at fixed (d, M, w).

    ``Ts=None`` scans the diagonal ``tau_beta == T``.  Rows are sorted by
    value (descending); equal values share a rank.
    """
    if Ts is None:
        pairs = [(float(t), float(t)) for t in tau_betas]
    else:
        pairs = [(float(a), float(b)) for a in tau_betas for b in Ts if a <= b]
    rows = []
    for tb, T in pairs:
        pt = ParamPoint(d, M, w, tb, T)
        rows.append({"d": d, "M": M, "w": w, "tau_beta": tb, "T": T, "value": _safe_eval(objective, pt)})
    rows.sort(key=lambda r: -r["value"])
    rank, prev = 0, None
    for i, r in enumerate(rows):
        if r["value"] != prev:
            rank, prev = i + 1, r["value"]
        r["rank"] = rank
    return rows


def grid_to_csv(rows) -> str:
    buf = io.StringIO()
    cols = ["rank", "d", "M", "w", "tau_beta", "T", "value"]
    writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
