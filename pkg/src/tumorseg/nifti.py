"""Minimal NIfTI-1 single-file reader/writer (``.nii`` and ``.nii.gz``).

Supported voxel types are uint8, int16 and float32, in either byte order.
Files are always written little-endian with a 352-byte prefix (348-byte
header plus an empty extension flag) unless ``byteorder=">"`` is asked for.
"""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import FormatError, IoError, LabelDomainError, UnsupportedDatatype
from .volume import LabelVolume, Orientation, ScalarVolume

__all__ = ["NiftiImage", "read_array", "write_array", "read_nifti", "write_nifti"]

HEADER_SIZE = 348
VOX_OFFSET = 352

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]
HEADER_DTYPE = np.dtype(_HEADER_FIELDS)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

# NIfTI datatype code -> numpy base type
DATATYPES = {2: np.dtype("u1"), 4: np.dtype("i2"), 16: np.dtype("f4")}
CODES = {v.str[1:]: k for k, v in DATATYPES.items()}

Pathish = Union[str, "os.PathLike[str]"]


@dataclass
class NiftiImage:
    """Decoded image: native-endian array indexed ``[x, y, z(, t)]``."""

    array: np.ndarray
    spacing: tuple
    datatype: int
    orientation: Orientation
    scaled: bool = False


def _load_bytes(path: Pathish) -> bytes:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {os.fspath(path)}: {exc.strerror or exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{os.fspath(path)}: corrupt gzip container") from exc
    return raw


def _parse_header(raw: bytes, path: Pathish):
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{os.fspath(path)}: file shorter than a NIfTI-1 header")
    for order in "<>":
        hdr = np.frombuffer(raw, dtype=HEADER_DTYPE.newbyteorder(order), count=1)[0]
        if hdr["sizeof_hdr"] == HEADER_SIZE:
            break
    else:
        raise FormatError(f"{os.fspath(path)}: sizeof_hdr is not 348")
    if hdr["magic"] != b"n+1":  # S4 strips the trailing NUL
        raise FormatError(f"{os.fspath(path)}: bad magic {bytes(hdr['magic'])!r}, expected 'n+1\\0'")
    return hdr, order


def read_array(path: Pathish) -> NiftiImage:
    """Decode any supported NIfTI-1 file into a native-endian array."""
    raw = _load_bytes(path)
    hdr, order = _parse_header(raw, path)
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatype(f"{os.fspath(path)}: datatype code {code} not supported")
    ndim = int(hdr["dim"][0])
    if not 1 <= ndim <= 7:
        raise FormatError(f"{os.fspath(path)}: dim[0]={ndim} out of range")
    dims = tuple(int(d) for d in hdr["dim"][1 : ndim + 1])
    if any(d < 1 for d in dims):
        raise FormatError(f"{os.fspath(path)}: non-positive dimension in {dims}")
    dtype = DATATYPES[code].newbyteorder(order)
    offset = int(hdr["vox_offset"])
    count = int(np.prod(dims))
    if offset < HEADER_SIZE or offset + count * dtype.itemsize > len(raw):
        raise FormatError(f"{os.fspath(path)}: voxel data truncated")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    arr = arr.astype(DATATYPES[code]).reshape(dims, order="F")

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    scaled = False
    if np.isfinite(slope) and slope != 0 and not (slope == 1 and (inter == 0 or not np.isfinite(inter))):
        inter = inter if np.isfinite(inter) else 0.0
        arr = arr.astype(np.float64) * slope + inter
        scaled = True

    pix = hdr["pixdim"]
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pix[1:4])
    orient = Orientation(
        qform_code=int(hdr["qform_code"]),
        sform_code=int(hdr["sform_code"]),
        qfac=float(pix[0]) if pix[0] in (-1.0, 1.0) else 1.0,
        quatern=(float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])),
        qoffset=(float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])),
        srow_x=tuple(float(v) for v in hdr["srow_x"]),
        srow_y=tuple(float(v) for v in hdr["srow_y"]),
        srow_z=tuple(float(v) for v in hdr["srow_z"]),
    )
    return NiftiImage(arr, spacing, code, orient, scaled)


def _build_header(shape, dtype: np.dtype, spacing, orientation: Optional[Orientation], order: str) -> bytes:
    hdr = np.zeros(1, dtype=HEADER_DTYPE.newbyteorder(order))[0]
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = [len(shape), *shape] + [1] * (7 - len(shape))
    hdr["dim"] = dim
    hdr["datatype"] = CODES[dtype.str[1:]]
    hdr["bitpix"] = dtype.itemsize * 8
    o = orientation or Orientation()
    pix = [o.qfac, *spacing] + [1.0] * 4
    hdr["pixdim"] = pix
    hdr["vox_offset"] = VOX_OFFSET
    hdr["xyzt_units"] = 2  # millimetres
    hdr["qform_code"] = o.qform_code
    hdr["sform_code"] = o.sform_code
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = o.quatern
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = o.qoffset
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = o.srow_x, o.srow_y, o.srow_z
    hdr["magic"] = b"n+1\x00"
    return hdr.tobytes() + b"\x00\x00\x00\x00"


def write_array(
    arr: np.ndarray,
    path: Pathish,
    spacing=(1.0, 1.0, 1.0),
    dtype="float32",
    orientation: Optional[Orientation] = None,
    byteorder: str = "<",
) -> None:
    """Write an ``[x, y, z(, t)]`` array.  ``.gz`` suffix selects gzip (mtime 0, reproducible bytes)."""
    path_str = os.fspath(path) if path is not None else ""
    if not path_str:
        raise IoError("empty output path")
    base = np.dtype(dtype)
    if base.str[1:] not in CODES:
        raise UnsupportedDatatype(f"cannot write datatype {base}")
    arr = np.asarray(arr)
    if not 1 <= arr.ndim <= 7:
        raise FormatError(f"cannot write a {arr.ndim}-d array")
    if arr.ndim < 3:
        arr = arr.reshape(arr.shape + (1,) * (3 - arr.ndim))
    spacing = tuple(spacing) + (1.0,) * (3 - len(tuple(spacing)))
    payload = _build_header(arr.shape, base, spacing, orientation, byteorder)
    payload += np.asarray(arr, dtype=base.newbyteorder(byteorder)).tobytes(order="F")
    if path_str.endswith(".gz"):
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    try:
        with open(path_str, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path_str}: {exc.strerror or exc}") from exc


def read_nifti(path: Pathish, labels: Optional[bool] = None) -> Union[ScalarVolume, LabelVolume]:
    """Read a 3D NIfTI-1 file.

    ``labels=True`` demands a LabelVolume, ``False`` a ScalarVolume.  With the
    default ``None``, unscaled uint8/int16 files whose values all lie in
    {0, 1, 2, 3} come back as labels and everything else as scalars.
    """
    img = read_array(path)
    arr = img.array
    if arr.ndim > 3:
        if any(d != 1 for d in arr.shape[3:]):
            raise FormatError(f"{os.fspath(path)}: expected a 3D volume, got dims {arr.shape}")
        arr = arr.reshape(arr.shape[:3])
    elif arr.ndim < 3:
        arr = arr.reshape(arr.shape + (1,) * (3 - arr.ndim))

    if labels is None:
        labels = (
            img.datatype in (2, 4)
            and not img.scaled
            and arr.min() >= 0
            and arr.max() <= 3
        )
    if labels:
        if not np.all(np.isfinite(arr)) or np.any(np.mod(arr, 1) != 0) or arr.min() < 0 or arr.max() > 3:
            raise LabelDomainError(f"{os.fspath(path)}: values outside {{0,1,2,3}}")
        return LabelVolume(arr, img.spacing, img.orientation)
    return ScalarVolume(arr, img.spacing, img.orientation)


def write_nifti(vol: Union[ScalarVolume, LabelVolume], path: Pathish, dtype=None, byteorder: str = "<") -> None:
    """Labels are stored as uint8, scalars as float32 unless ``dtype`` overrides."""
    if dtype is None:
        dtype = "uint8" if isinstance(vol, LabelVolume) else "float32"
    data = vol.data
    if np.dtype(dtype).kind in "iu" and np.issubdtype(data.dtype, np.floating):
        if np.any(np.mod(data, 1) != 0):
            raise UnsupportedDatatype(f"non-integral values cannot be stored as {dtype}")
        info = np.iinfo(dtype)
        if data.min() < info.min or data.max() > info.max:
            raise UnsupportedDatatype(f"values out of range for {dtype}")
    write_array(data, path, vol.spacing, dtype, getattr(vol, "orientation", None), byteorder)
