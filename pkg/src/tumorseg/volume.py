"""Volume data model.

Every volume wraps a 3D numpy array indexed ``[x, y, z]``.  The flat buffer
view is x-fastest (NIfTI native order), i.e. flat index
``i = x + dx * (y + dy * z)``, which is ``array.ravel(order="F")``.

Volumes are immutable: the wrapped array is marked read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInput, FiniteValueError, LabelDomainError, ShapeError

__all__ = [
    "GridShape",
    "Orientation",
    "ScalarVolume",
    "LabelVolume",
    "BinaryMask",
    "percentile",
    "check_same_shape",
]

Spacing = Tuple[float, float, float]


class GridShape(NamedTuple):
    dx: int
    dy: int
    dz: int

    @property
    def size(self) -> int:
        return self.dx * self.dy * self.dz


@dataclass(frozen=True)
class Orientation:
    """qform/sform block carried through I/O untouched; never used in computation."""

    qform_code: int = 0
    sform_code: int = 0
    qfac: float = 1.0
    quatern: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    qoffset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    srow_x: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    srow_y: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    srow_z: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


def _freeze(arr: np.ndarray) -> np.ndarray:
    # copy so the caller's array keeps its own flags
    if arr.flags.writeable or arr.base is not None:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


def _check_3d(arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.size == 0:
        raise ShapeError(f"expected a non-empty 3D array, got shape {arr.shape}")


def _check_spacing(spacing: Sequence[float]) -> Spacing:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValueError(f"spacing must be three positive reals, got {spacing!r}")
    return sp  # type: ignore[return-value]


class _Volume:
    data: np.ndarray
    spacing: Spacing

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.data.shape)

    @property
    def flat(self) -> np.ndarray:
        """x-fastest flat view of the voxel buffer."""
        return self.data.ravel(order="F")

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class ScalarVolume(_Volume):
    """Real-valued volume (MRI intensities, probabilities, gradients)."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    orientation: Optional[Orientation] = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        _check_3d(arr)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32 if arr.dtype.itemsize <= 2 else np.float64)
        if not np.all(np.isfinite(arr)):
            raise FiniteValueError("scalar volume contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def from_flat(cls, buffer, shape: Sequence[int], spacing=(1.0, 1.0, 1.0)) -> "ScalarVolume":
        buf = np.asarray(buffer)
        if buf.size != int(np.prod(shape)):
            raise ShapeError(f"buffer of {buf.size} values does not fit shape {tuple(shape)}")
        return cls(buf.reshape(tuple(shape), order="F"), spacing)

    def with_data(self, data: np.ndarray) -> "ScalarVolume":
        return ScalarVolume(data, self.spacing, self.orientation)


@dataclass(frozen=True, eq=False)
class LabelVolume(_Volume):
    """Disjoint tumor labels: 0 background, 1 NCR, 2 ED, 3 ET."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)
    orientation: Optional[Orientation] = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        _check_3d(arr)
        if arr.dtype == np.bool_ or (
            np.issubdtype(arr.dtype, np.floating) and not np.all(np.mod(arr, 1) == 0)
        ):
            raise LabelDomainError(f"labels must be integers, got dtype {arr.dtype}")
        if arr.min() < 0 or arr.max() > 3:
            bad = np.unique(arr[(arr < 0) | (arr > 3)])
            raise LabelDomainError(f"label values outside {{0,1,2,3}}: {bad[:8].tolist()}")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def from_flat(cls, buffer, shape: Sequence[int], spacing=(1.0, 1.0, 1.0)) -> "LabelVolume":
        buf = np.asarray(buffer)
        if buf.size != int(np.prod(shape)):
            raise ShapeError(f"buffer of {buf.size} values does not fit shape {tuple(shape)}")
        return cls(buf.reshape(tuple(shape), order="F"), spacing)

    def with_data(self, data: np.ndarray) -> "LabelVolume":
        return LabelVolume(data, self.spacing, self.orientation)

    def equals(self, other: "LabelVolume") -> bool:
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class BinaryMask(_Volume):
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        _check_3d(arr)
        object.__setattr__(self, "data", _freeze(arr.astype(bool)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def equals(self, other: "BinaryMask") -> bool:
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


def check_same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


def percentile(vol: ScalarVolume, p: float, mask: Optional[BinaryMask] = None) -> float:
    """p-th percentile (linear interpolation between order statistics) of the voxels under ``mask``."""
    if not 0 <= p <= 100:
        raise ValueError(f"percentile must be in [0, 100], got {p}")
    values = np.asarray(vol.data, dtype=np.float64)
    if mask is not None:
        check_same_shape(values, mask.data)
        values = values[mask.data]
        if values.size == 0:
            raise DegenerateInput("percentile over an empty mask")
    return float(np.percentile(values, p, method="linear"))
