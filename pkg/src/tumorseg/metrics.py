"""Lesion-wise and whole-volume ("legacy") Dice / HD95."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyMaskError, ShapeError
from .labels import REGIONS, labels_to_regions
from .postprocess import connected_components, structure
from .volume import BinaryMask, LabelVolume

__all__ = [
    "Lesion",
    "LesionMatchParams",
    "LesionScores",
    "RegionReport",
    "EvalReport",
    "dilate",
    "identify_lesions",
    "legacy_dice",
    "boundary",
    "directed_distances",
    "hd95",
    "legacy_hd95",
    "lesion_wise_scores",
    "evaluate_case",
]

_CUBE = structure(26)


@dataclass(frozen=True)
class LesionMatchParams:
    dilation_iters: int = 3
    gt_min_size: int = 50
    fp_hd95_penalty: float = 374.0
    fn_hd95_penalty: float = 374.0

    def __post_init__(self):
        if self.dilation_iters < 0:
            raise ConfigError(f"dilation_iters must be >= 0, got {self.dilation_iters}")
        if self.gt_min_size < 0:
            raise ConfigError(f"gt_min_size must be >= 0, got {self.gt_min_size}")
        if not (self.fp_hd95_penalty > 0 and self.fn_hd95_penalty > 0):
            raise ConfigError("HD95 penalties must be positive")


@dataclass(frozen=True, eq=False)
class Lesion:
    mask: np.ndarray
    size: int
    components: Tuple[int, ...]

    @property
    def voxels(self) -> np.ndarray:
        """Flat x-fastest indices of the lesion voxels."""
        return np.flatnonzero(self.mask.ravel(order="F"))


def _bool(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "data", mask), dtype=bool)


def dilate(mask, iters: int):
    """``iters`` rounds of 3x3x3 binary dilation (voxels beyond the grid are background)."""
    if iters < 0:
        raise ConfigError(f"iters must be >= 0, got {iters}")
    arr = _bool(mask)
    out = arr.copy() if iters == 0 else ndimage.binary_dilation(arr, _CUBE, iterations=iters)
    if hasattr(mask, "spacing"):
        return BinaryMask(out, mask.spacing)
    return out


def _dilate_cropped(arr: np.ndarray, iters: int) -> np.ndarray:
    """Same result as ``dilate`` but only touches the bounding box plus margin."""
    out = np.zeros(arr.shape, dtype=bool)
    if not arr.any():
        return out
    box = ndimage.find_objects(arr.astype(np.int8))[0]
    win = tuple(slice(max(s.start - iters, 0), min(s.stop + iters, n)) for s, n in zip(box, arr.shape))
    out[win] = dilate(arr[win], iters)
    return out


def _find(parent: List[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def identify_lesions(mask, params: LesionMatchParams = LesionMatchParams()) -> List[Lesion]:
    """Group 26-connected components whose dilations intersect into lesions.

    Lesions are ordered by their lowest component id (first appearance in
    x-fastest scan order) and hold only the original, undilated voxels.
    """
    arr = _bool(mask)
    cc = connected_components(arr, 26)
    if cc.count == 0:
        return []
    parent = list(range(cc.count + 1))
    r = params.dilation_iters
    if r > 0 and cc.count > 1:
        owner = np.zeros(arr.shape, dtype=np.int32)
        for cid, box in enumerate(ndimage.find_objects(cc.ids), start=1):
            lo = [max(s.start - r, 0) for s in box]
            hi = [min(s.stop + r, n) for s, n in zip(box, arr.shape)]
            win = tuple(slice(a, b) for a, b in zip(lo, hi))
            grown = ndimage.binary_dilation(cc.ids[win] == cid, _CUBE, iterations=r)
            seen = owner[win][grown]
            for other in np.unique(seen[seen > 0]):
                a, b = _find(parent, cid), _find(parent, int(other))
                if a != b:
                    parent[max(a, b)] = min(a, b)
            owner[win][grown] = cid
    roots = np.array([0] + [_find(parent, i) for i in range(1, cc.count + 1)], dtype=np.int32)
    lesion_of = roots[cc.ids]
    lesions = []
    for root in sorted(set(roots[1:].tolist())):
        members = tuple(int(i) for i in np.flatnonzero(roots == root) if i > 0)
        m = lesion_of == root
        lesions.append(Lesion(m, int(cc.sizes[[i - 1 for i in members]].sum()), members))
    return lesions


def legacy_dice(pred, gt) -> float:
    p, g = _bool(pred), _bool(gt)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(p & g)) / total


def boundary(mask) -> np.ndarray:
    """Foreground voxels with at least one 6-neighbour outside the mask (or the grid)."""
    arr = _bool(mask)
    return arr & ~ndimage.binary_erosion(arr, structure(6), border_value=0)


def directed_distances(src, dst, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Distance from each boundary voxel of ``src`` to the nearest boundary voxel of ``dst`` (mm)."""
    b_src, b_dst = boundary(src), boundary(dst)
    if not b_src.any() or not b_dst.any():
        raise EmptyMaskError("HD95 of an empty mask")
    dist = ndimage.distance_transform_edt(~b_dst, sampling=tuple(float(s) for s in spacing))
    return dist[b_src]


def hd95(pred, gt, spacing=(1.0, 1.0, 1.0)) -> float:
    p, g = _bool(pred), _bool(gt)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
    if not p.any() or not g.any():
        raise EmptyMaskError("HD95 needs two nonempty masks")
    if np.array_equal(p, g):
        return 0.0
    d_pg = directed_distances(p, g, spacing)
    d_gp = directed_distances(g, p, spacing)
    return float(max(np.percentile(d_pg, 95), np.percentile(d_gp, 95)))


@dataclass(frozen=True)
class LesionScores:
    dice: float
    hd95: float
    tp: int
    fp: int
    fn: int
    ignored: int

    def __iter__(self):
        return iter((self.dice, self.hd95, self.tp, self.fp, self.fn, self.ignored))


def lesion_wise_scores(
    pred, gt, params: LesionMatchParams = LesionMatchParams(), spacing=(1.0, 1.0, 1.0)
) -> LesionScores:
    """Equal-weight-per-lesion Dice and HD95 with fixed FP/FN penalties.

    A predicted lesion is matched to the first scored GT lesion whose dilated
    footprint it touches.  Predicted lesions that touch only the footprints
    of ignored (too small) GT lesions count neither as hits nor as FP.
    """
    p, g = _bool(pred), _bool(gt)
    if p.shape != g.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
    gt_lesions = identify_lesions(g, params)
    pred_lesions = identify_lesions(p, params)

    scored = [les.size > params.gt_min_size for les in gt_lesions]
    # dilated footprints of distinct lesions are disjoint by construction
    footprint = np.zeros(g.shape, dtype=np.int32)
    for i, les in enumerate(gt_lesions, start=1):
        footprint[_dilate_cropped(les.mask, params.dilation_iters)] = i

    matched: Dict[int, np.ndarray] = {}
    fp = 0
    for pl in pred_lesions:
        hits = [int(h) - 1 for h in np.unique(footprint[pl.mask]) if h > 0]
        hits_scored = [i for i in hits if scored[i]]
        if hits_scored:
            i = hits_scored[0]
            matched[i] = matched[i] | pl.mask if i in matched else pl.mask.copy()
        elif not hits:
            fp += 1

    dices: List[float] = []
    dists: List[float] = []
    tp = fn = 0
    for i, les in enumerate(gt_lesions):
        if not scored[i]:
            continue
        if i in matched:
            tp += 1
            dices.append(legacy_dice(matched[i], les.mask))
            dists.append(hd95(matched[i], les.mask, spacing))
        else:
            fn += 1
            dices.append(0.0)
            dists.append(params.fn_hd95_penalty)
    dices.extend([0.0] * fp)
    dists.extend([params.fp_hd95_penalty] * fp)
    ignored = len(gt_lesions) - sum(scored)
    if not dices:
        return LesionScores(1.0, 0.0, 0, 0, 0, ignored)
    n = len(dices)
    return LesionScores(sum(dices) / n, sum(dists) / n, tp, fp, fn, ignored)


def legacy_hd95(pred, gt, params: LesionMatchParams, spacing) -> float:
    """Whole-volume HD95; an empty side scores the matching penalty, both empty scores 0."""
    p, g = _bool(pred), _bool(gt)
    if not p.any() and not g.any():
        return 0.0
    if not p.any():
        return params.fn_hd95_penalty
    if not g.any():
        return params.fp_hd95_penalty
    return hd95(p, g, spacing)


@dataclass(frozen=True)
class RegionReport:
    lesion_dice: float
    lesion_hd95: float
    legacy_dice: float
    legacy_hd95: float
    tp: int
    fp: int
    fn: int
    ignored: int


@dataclass(frozen=True)
class EvalReport:
    subject: str
    regions: Dict[str, RegionReport] = field(default_factory=dict)

    def _mean(self, attr: str) -> float:
        return sum(getattr(self.regions[r], attr) for r in REGIONS) / len(REGIONS)

    @property
    def mean_lesion_dice(self) -> float:
        return self._mean("lesion_dice")

    @property
    def mean_lesion_hd95(self) -> float:
        return self._mean("lesion_hd95")

    @property
    def mean_legacy_dice(self) -> float:
        return self._mean("legacy_dice")

    @property
    def mean_legacy_hd95(self) -> float:
        return self._mean("legacy_hd95")

    def as_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"subject": self.subject}
        for r in REGIONS:
            rep = self.regions[r]
            for name in RegionReport.__dataclass_fields__:
                row[f"{r}_{name}"] = getattr(rep, name)
        row["mean_lesion_dice"] = self.mean_lesion_dice
        row["mean_lesion_hd95"] = self.mean_lesion_hd95
        row["mean_legacy_dice"] = self.mean_legacy_dice
        row["mean_legacy_hd95"] = self.mean_legacy_hd95
        return row


CSV_COLUMNS: Sequence[str] = (
    ["subject"]
    + [f"{r}_{name}" for r in REGIONS for name in RegionReport.__dataclass_fields__]
    + ["mean_lesion_dice", "mean_lesion_hd95", "mean_legacy_dice", "mean_legacy_hd95"]
)


def evaluate_case(
    pred: LabelVolume,
    gt: LabelVolume,
    params: LesionMatchParams = LesionMatchParams(),
    spacing: Optional[Sequence[float]] = None,
    subject: str = "",
) -> EvalReport:
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"prediction shape {pred.data.shape} != ground truth {gt.data.shape}")
    spacing = tuple(spacing) if spacing is not None else gt.spacing
    pr, gr = labels_to_regions(pred), labels_to_regions(gt)
    regions = {}
    for name in REGIONS:
        p, g = pr[name].data, gr[name].data
        s = lesion_wise_scores(p, g, params, spacing)
        regions[name] = RegionReport(
            lesion_dice=s.dice,
            lesion_hd95=s.hd95,
            legacy_dice=legacy_dice(p, g),
            legacy_hd95=legacy_hd95(p, g, params, spacing),
            tp=s.tp,
            fp=s.fp,
            fn=s.fn,
            ignored=s.ignored,
        )
    return EvalReport(subject, regions)
