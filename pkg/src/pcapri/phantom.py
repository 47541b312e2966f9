"""Synthetic piecewise-constant 3D phantoms.

Primitives are given in fractional coordinates (0..1 along each axis) so a
spec scales with ``dims``.  Later primitives overwrite earlier ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .volume import NDIMAGE_MODE, Volume3D

__all__ = ["Ellipsoid", "Box", "PhantomSpec", "default_spec", "generate"]


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    intensity: float
    kind: Literal["ellipsoid"] = "ellipsoid"

    def mask(self, grid):
        r = sum(((g - c) / a) ** 2 for g, c, a in zip(grid, self.center, self.radii))
        return r <= 1.0


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    intensity: float
    kind: Literal["box"] = "box"

    def mask(self, grid):
        m = np.ones(grid[0].shape, dtype=bool)
        for g, a, b in zip(grid, self.lo, self.hi):
            m &= (g >= a) & (g <= b)
        return m


_PRIMITIVES = {"ellipsoid": Ellipsoid, "box": Box}


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom description.

    ``profile`` ``"t2"`` inverts the tissue contrast: every nonzero level
    ``v`` becomes ``lo + hi - v`` (``lo``/``hi`` the extreme primitive
    levels); the background stays 0.  ``texture`` is the relative amplitude
    of a seeded smooth intensity modulation inside the object (0 disables
    it and makes the phantom seed-independent).
    """

    dims: tuple[int, int, int] = (64, 64, 64)
    primitives: tuple = ()
    profile: Literal["t1", "t2"] = "t1"
    smooth: bool = True
    texture: float = 0.0
    texture_scale: float = 3.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        raw = json.loads(text)
        prims = []
        for p in raw.pop("primitives", []):
            kind = p.get("kind", "ellipsoid")
            args = {k: tuple(v) if isinstance(v, list) else v for k, v in p.items()}
            prims.append(_PRIMITIVES[kind](**args))
        raw["dims"] = tuple(raw.get("dims", (64, 64, 64)))
        return cls(primitives=tuple(prims), **raw)


def default_spec(dims=(64, 64, 64), profile="t1", **kw) -> PhantomSpec:
    """Three nested ellipsoids (60/140/220) and two small lesion spheres.

    A mild tissue texture (3% relative, correlation scale 3 voxels) is on
    by default; pass ``texture=0`` for a strictly piecewise-constant volume.
    """
    kw.setdefault("texture", 0.03)
    kw.setdefault("texture_scale", 3.0)
    prims = (
        Ellipsoid((0.5, 0.5, 0.5), (0.40, 0.36, 0.34), 60.0),
        Ellipsoid((0.5, 0.5, 0.5), (0.32, 0.28, 0.26), 140.0),
        Ellipsoid((0.48, 0.52, 0.5), (0.20, 0.16, 0.15), 220.0),
        Ellipsoid((0.40, 0.55, 0.45), (0.05, 0.05, 0.05), 100.0),
        Ellipsoid((0.62, 0.42, 0.58), (0.04, 0.04, 0.04), 180.0),
    )
    return PhantomSpec(tuple(dims), prims, profile, **kw)


def generate(spec: PhantomSpec | None = None, seed=0) -> Volume3D:
    """Render ``spec`` into a volume with zero background.

    ``intensity_peak`` is set to the highest rendered intensity.
    """
    spec = spec or default_spec()
    dims = tuple(int(n) for n in spec.dims)
    grid = np.meshgrid(*[(np.arange(n) + 0.5) / n for n in dims], indexing="ij")
    data = np.zeros(dims)
    levels = [p.intensity for p in spec.primitives]
    lo, hi = (min(levels), max(levels)) if levels else (0.0, 0.0)
    for prim in spec.primitives:
        value = prim.intensity
        if spec.profile == "t2":
            value = lo + hi - value
        data[prim.mask(grid)] = value
    inside = data > 0
    if spec.texture > 0 and inside.any():
        rng = np.random.default_rng(seed)
        field_ = ndimage.gaussian_filter(rng.standard_normal(dims), spec.texture_scale, mode="wrap")
        field_ /= field_.std()
        data[inside] *= 1.0 + spec.texture * field_[inside]
    if spec.smooth:
        data = ndimage.uniform_filter(data, size=3, mode=NDIMAGE_MODE)
        # keep a true zero background away from the object
        data[data < 1e-9] = 0.0
    data = np.clip(data, 0.0, 255.0)
    peak = float(data.max()) if data.max() > 0 else 1.0
    return Volume3D(data, intensity_peak=peak)
