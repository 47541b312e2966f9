"""Volume file I/O.

Native format: a raw little-endian float32 voxel stream (x-fastest) at
``path`` plus a JSON sidecar at ``path + ".json"``::

    {"format": 1, "kind": "volume", "dims": [nx, ny, nz],
     "spacing": [sx, sy, sz], "intensity_peak": peak, "dtype": "<f4"}

``kind`` is ``"noise_map"`` for noise maps.  Single-file NIfTI-1 (``.nii``,
uncompressed) is supported read-only.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .volume import Volume3D

__all__ = ["VolumeFormatError", "store_volume", "load_volume", "read_nifti", "sidecar_path"]

FORMAT_VERSION = 1
_RAW_DTYPE = np.dtype("<f4")

# NIfTI-1 datatype codes we can read.
_NIFTI_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8", 256: "i1", 512: "u2"}


class VolumeFormatError(ValueError):
    """Malformed or unsupported volume file.  ``offset`` is the byte offset
    at which the problem was detected (``None`` if not applicable)."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def store_volume(vol: Volume3D, path, kind: str = "volume") -> None:
    """Write ``vol`` as raw float32 plus JSON sidecar."""
    data = np.asarray(vol.data, dtype=_RAW_DTYPE)
    header = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "intensity_peak": vol.intensity_peak,
        "dtype": _RAW_DTYPE.str,
    }
    with open(path, "wb") as fh:
        fh.write(data.tobytes(order="F"))
    with open(sidecar_path(path), "w") as fh:
        json.dump(header, fh, indent=2)


def load_volume(path) -> Volume3D:
    """Read a native raw+JSON volume, or a ``.nii`` file."""
    path = os.fspath(path)
    if path.endswith(".nii"):
        return read_nifti(path)
    try:
        with open(sidecar_path(path)) as fh:
            header = json.load(fh)
    except FileNotFoundError:
        raise VolumeFormatError(f"missing sidecar {sidecar_path(path)}") from None
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"malformed sidecar: {exc.msg}", exc.pos) from None
    if header.get("format") != FORMAT_VERSION:
        raise VolumeFormatError(f"unsupported sidecar format {header.get('format')!r}")
    try:
        dims = tuple(int(n) for n in header["dims"])
        spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
        peak = header.get("intensity_peak")
        dtype = np.dtype(header.get("dtype", _RAW_DTYPE.str))
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"bad sidecar field: {exc}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"bad dims {dims}")
    if dtype != _RAW_DTYPE:
        raise VolumeFormatError(f"unsupported dtype {dtype.str}")
    raw = np.fromfile(path, dtype=np.uint8)
    expected = int(np.prod(dims)) * dtype.itemsize
    if raw.size != expected:
        raise VolumeFormatError(
            f"data size mismatch: expected {expected} bytes for dims {dims}, found {raw.size}",
            offset=min(raw.size, expected),
        )
    data = raw.view(dtype).reshape(dims, order="F")
    return Volume3D(data, spacing, peak)


def read_nifti(path) -> Volume3D:
    """Read an uncompressed single-file NIfTI-1 volume.

    Only the first three dimensions are used; ``scl_slope``/``scl_inter``
    are applied when the slope is nonzero and not the identity.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 348:
        raise VolumeFormatError("truncated NIfTI header", offset=len(buf))
    for endian in "<>":
        if struct.unpack(endian + "i", buf[:4])[0] == 348:
            break
    else:
        raise VolumeFormatError("not a NIfTI-1 header (sizeof_hdr != 348)", offset=0)
    magic = buf[344:348]
    if magic != b"n+1\x00":
        raise VolumeFormatError(f"unsupported NIfTI magic {magic!r}", offset=344)
    dim = struct.unpack(endian + "8h", buf[40:56])
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeFormatError(f"bad dim[0]={ndim}", offset=40)
    if any(n > 1 for n in dim[4 : ndim + 1]):
        raise VolumeFormatError("only 3D NIfTI volumes are supported", offset=40)
    dims = tuple(max(1, n) if i < ndim else 1 for i, n in enumerate(dim[1:4]))
    datatype = struct.unpack(endian + "h", buf[70:72])[0]
    if datatype not in _NIFTI_DTYPES:
        raise VolumeFormatError(f"unsupported NIfTI datatype {datatype}", offset=70)
    dtype = np.dtype(endian + _NIFTI_DTYPES[datatype])
    pixdim = struct.unpack(endian + "8f", buf[76:108])
    vox_offset = int(struct.unpack(endian + "f", buf[108:112])[0])
    slope, inter = struct.unpack(endian + "2f", buf[112:120])
    if vox_offset < 348:
        raise VolumeFormatError(f"bad vox_offset {vox_offset}", offset=108)
    nbytes = int(np.prod(dims)) * dtype.itemsize
    if len(buf) < vox_offset + nbytes:
        raise VolumeFormatError(
            f"truncated NIfTI data: need {nbytes} bytes after offset {vox_offset}",
            offset=len(buf),
        )
    data = np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims)), offset=vox_offset)
    data = data.reshape(dims, order="F")
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data * (slope if slope != 0 else 1.0) + inter
    data = data.astype(np.float32) if data.dtype.kind in "iu" else data
    spacing = tuple(abs(p) if p else 1.0 for p in pixdim[1:4])
    return Volume3D(np.ascontiguousarray(data), spacing)
