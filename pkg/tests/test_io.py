import json
import struct

import numpy as np
import pytest

from pcapri.io import VolumeFormatError, load_volume, read_nifti, sidecar_path, store_volume
from pcapri.volume import Volume3D


def _nifti_bytes(data, code, endian="<", pixdim=(1.0, 1.0, 1.0), slope=0.0, inter=0.0):
    # Hand-assembled NIfTI-1 header: sizeof_hdr, dim, datatype, bitpix,
    # pixdim, vox_offset, scaling and magic at their fixed offsets.
    hdr = bytearray(352)
    struct.pack_into(endian + "i", hdr, 0, 348)
    dim = (3,) + data.shape + (1, 1, 1, 1)
    struct.pack_into(endian + "8h", hdr, 40, *dim)
    struct.pack_into(endian + "h", hdr, 70, code)
    struct.pack_into(endian + "h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, 352.0)
    struct.pack_into(endian + "2f", hdr, 112, slope, inter)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + data.astype(data.dtype.newbyteorder(endian)).tobytes(order="F")


def test_roundtrip_ramp(tmp_path):
    ramp = np.arange(64, dtype=np.float32).reshape(4, 4, 4)
    vol = Volume3D(ramp, spacing=(1.0, 2.0, 0.5))
    p = tmp_path / "ramp.vol"
    store_volume(vol, p)
    back = load_volume(p)
    np.testing.assert_array_equal(back.data, ramp)
    assert back.spacing == (1.0, 2.0, 0.5)
    assert back.intensity_peak == vol.intensity_peak
    side = json.loads(open(sidecar_path(p)).read())
    assert side["format"] == 1 and side["dims"] == [4, 4, 4]


def test_raw_layout_is_x_fastest_little_endian(tmp_path):
    a = np.zeros((3, 2, 2), np.float32)
    a[1, 0, 0] = 7.0
    p = tmp_path / "a.vol"
    store_volume(Volume3D(a), p)
    assert np.fromfile(p, "<f4")[1] == 7.0


def test_truncated_file(tmp_path):
    p = tmp_path / "t.vol"
    store_volume(Volume3D(np.ones((4, 4, 4))), p)
    with open(p, "r+b") as fh:
        fh.truncate(100)
    with pytest.raises(VolumeFormatError) as info:
        load_volume(p)
    assert info.value.offset == 100


def test_bad_sidecar(tmp_path):
    p = tmp_path / "b.vol"
    store_volume(Volume3D(np.ones((2, 2, 2))), p)
    open(sidecar_path(p), "w").write('{"format": 1, "dims": [2, 2]}')
    with pytest.raises(VolumeFormatError):
        load_volume(p)
    open(sidecar_path(p), "w").write("{not json")
    with pytest.raises(VolumeFormatError):
        load_volume(p)


def test_unsupported_dtype(tmp_path):
    p = tmp_path / "c.vol"
    store_volume(Volume3D(np.ones((2, 2, 2))), p)
    head = json.loads(open(sidecar_path(p)).read())
    head["dtype"] = "<f8"
    open(sidecar_path(p), "w").write(json.dumps(head))
    with pytest.raises(VolumeFormatError):
        load_volume(p)


def test_nifti_float32_le(tmp_path, rng):
    data = rng.random((5, 4, 3)).astype(np.float32)
    p = tmp_path / "x.nii"
    p.write_bytes(_nifti_bytes(data, 16, pixdim=(1.0, 1.5, 2.0)))
    vol = read_nifti(p)
    assert vol.dims == (5, 4, 3)
    np.testing.assert_array_equal(vol.data, data)
    assert vol.spacing == (1.0, 1.5, 2.0)
    np.testing.assert_array_equal(load_volume(p).data, data)


def test_nifti_int16_be_scaled(tmp_path):
    data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    p = tmp_path / "y.nii"
    p.write_bytes(_nifti_bytes(data, 4, endian=">", slope=2.0, inter=1.0))
    np.testing.assert_array_equal(read_nifti(p).data, 2.0 * data + 1.0)


@pytest.mark.parametrize(
    "mutate,offset",
    [
        (lambda b: b[:200], 200),
        (lambda b: b[:-10], None),
        (lambda b: b[:344] + b"abcd" + b[348:], 344),
        (lambda b: b[:70] + struct.pack("<h", 1024) + b[72:], 70),
        (lambda b: b"\x00\x00\x00\x00" + b[4:], 0),
    ],
)
def test_nifti_errors(tmp_path, mutate, offset):
    p = tmp_path / "z.nii"
    p.write_bytes(mutate(_nifti_bytes(np.ones((3, 3, 3), np.float32), 16)))
    with pytest.raises(VolumeFormatError) as info:
        read_nifti(p)
    if offset is not None:
        assert info.value.offset == offset
