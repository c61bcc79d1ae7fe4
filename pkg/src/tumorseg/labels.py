"""Disjoint labels <-> nested evaluation regions, and probability decoding.

Channel order is always (ET, TC, WT).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FiniteValueError, FormatError, RegionNestingError, ShapeError
from .nifti import read_array, write_array
from .volume import BinaryMask, LabelVolume, ScalarVolume

__all__ = [
    "REGIONS",
    "RegionSet",
    "RegionProbs",
    "Thresholds",
    "labels_to_regions",
    "regions_to_labels",
    "threshold_cascade",
    "read_region_probs",
    "write_region_probs",
]

NCR, ED, ET = 1, 2, 3
REGIONS = ("ET", "TC", "WT")


@dataclass(frozen=True, eq=False)
class RegionSet:
    et: BinaryMask
    tc: BinaryMask
    wt: BinaryMask

    def __post_init__(self):
        if not (self.et.data.shape == self.tc.data.shape == self.wt.data.shape):
            raise ShapeError("region masks differ in shape")

    def __iter__(self):
        return iter((self.et, self.tc, self.wt))

    def __getitem__(self, region: str) -> BinaryMask:
        return getattr(self, region.lower())

    def is_nested(self) -> bool:
        et, tc, wt = self.et.data, self.tc.data, self.wt.data
        return not (np.any(et & ~tc) or np.any(tc & ~wt))

    @classmethod
    def from_arrays(cls, et, tc, wt, spacing=(1.0, 1.0, 1.0)) -> "RegionSet":
        return cls(BinaryMask(et, spacing), BinaryMask(tc, spacing), BinaryMask(wt, spacing))


@dataclass(frozen=True, eq=False)
class RegionProbs:
    et: ScalarVolume
    tc: ScalarVolume
    wt: ScalarVolume

    def __post_init__(self):
        if not (self.et.data.shape == self.tc.data.shape == self.wt.data.shape):
            raise ShapeError("probability channels differ in shape")
        for name, ch in zip(REGIONS, self):
            if ch.data.min() < 0 or ch.data.max() > 1:
                raise ValueError(f"{name} probabilities outside [0, 1]")

    def __iter__(self):
        return iter((self.et, self.tc, self.wt))

    def stacked(self) -> np.ndarray:
        """``[x, y, z, 3]`` array in (ET, TC, WT) order."""
        return np.stack([c.data for c in self], axis=-1)

    @classmethod
    def from_arrays(cls, et, tc, wt, spacing=(1.0, 1.0, 1.0)) -> "RegionProbs":
        return cls(ScalarVolume(et, spacing), ScalarVolume(tc, spacing), ScalarVolume(wt, spacing))

    @classmethod
    def from_regions(cls, rs: RegionSet) -> "RegionProbs":
        """Indicator probabilities (0.0 / 1.0) of a region set."""
        return cls(*(ScalarVolume(m.data.astype(np.float64), m.spacing) for m in rs))


@dataclass(frozen=True)
class Thresholds:
    wt: float = 0.45
    tc: float = 0.4
    et: float = 0.45

    def __post_init__(self):
        for name in ("wt", "tc", "et"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} threshold must lie in (0, 1), got {v}")


def labels_to_regions(lab: LabelVolume) -> RegionSet:
    d = lab.data
    et = d == ET
    tc = et | (d == NCR)
    wt = d != 0
    return RegionSet.from_arrays(et, tc, wt, lab.spacing)


def regions_to_labels(rs: RegionSet) -> LabelVolume:
    if not rs.is_nested():
        raise RegionNestingError("regions must satisfy ET <= TC <= WT")
    out = np.zeros(rs.wt.data.shape, dtype=np.uint8)
    out[rs.wt.data] = ED
    out[rs.tc.data] = NCR
    out[rs.et.data] = ET
    return LabelVolume(out, rs.wt.spacing)


def threshold_cascade(probs: RegionProbs, th: Thresholds = Thresholds()) -> LabelVolume:
    """WT -> TC -> ET decision per voxel; a value equal to its threshold passes.

    Thresholds are cast to each channel's dtype first, so a float32 0.45
    read from disk still counts as equal to the 0.45 threshold.
    """
    def passes(ch: ScalarVolume, t: float) -> np.ndarray:
        return ch.data >= ch.data.dtype.type(t)

    wt = passes(probs.wt, th.wt)
    tc = wt & passes(probs.tc, th.tc)
    et = tc & passes(probs.et, th.et)
    out = np.zeros(wt.shape, dtype=np.uint8)
    out[wt] = ED
    out[tc] = NCR
    out[et] = ET
    return LabelVolume(out, probs.wt.spacing)


def read_region_probs(path) -> RegionProbs:
    """Read a ``[x, y, z, 3]`` NIfTI holding (ET, TC, WT) probabilities."""
    img = read_array(path)
    arr = img.array
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise FormatError(f"{path}: expected 3 probability channels, got dims {arr.shape}")
    arr = arr.astype(np.float64) if arr.dtype != np.float32 else arr
    if not np.all(np.isfinite(arr)):
        raise FiniteValueError(f"{path}: non-finite probabilities")
    return RegionProbs(*(ScalarVolume(arr[..., c], img.spacing) for c in range(3)))


def write_region_probs(probs: RegionProbs, path) -> None:
    write_array(probs.stacked(), path, probs.wt.spacing, "float32")
