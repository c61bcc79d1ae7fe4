"""Connected-component clean-up of predicted and ground-truth label maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .labels import ED, ET, NCR, RegionSet, labels_to_regions, regions_to_labels
from .volume import BinaryMask, GridShape, LabelVolume

__all__ = [
    "ComponentLabeling",
    "PostprocessParams",
    "structure",
    "connected_components",
    "remove_dust",
    "find_holes",
    "postprocess_prediction",
    "clean_ground_truth",
]

_RANK = {6: 1, 18: 2, 26: 3}


def structure(connectivity: int) -> np.ndarray:
    """3x3x3 neighbourhood for 6-, 18- or 26-connectivity."""
    if connectivity not in _RANK:
        raise ConfigError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, _RANK[connectivity])


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Component ids per voxel (0 = background, 1..count otherwise)."""

    ids: np.ndarray
    count: int
    sizes: np.ndarray  # sizes[i] is the voxel count of component i + 1

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.ids.shape)

    def mask_of(self, component: int) -> np.ndarray:
        return self.ids == component


@dataclass(frozen=True)
class PostprocessParams:
    dust_max: int = 50
    foreground_connectivity: int = 26
    hole_background_connectivity: int = 6

    def __post_init__(self):
        if self.dust_max < 0:
            raise ConfigError(f"dust_max must be >= 0, got {self.dust_max}")
        structure(self.foreground_connectivity)
        structure(self.hole_background_connectivity)


def _as_bool(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "data", mask), dtype=bool)


def _storage_order_relabel(raw: np.ndarray, n: int) -> ComponentLabeling:
    """Renumber so ids follow first appearance in x-fastest scan order."""
    if n == 0:
        return ComponentLabeling(np.zeros(raw.shape, dtype=np.int32), 0, np.zeros(0, dtype=np.int64))
    flat = raw.ravel(order="F")
    nz = np.flatnonzero(flat)
    ids, first = np.unique(flat[nz], return_index=True)
    order = ids[np.argsort(first, kind="stable")]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    out = remap[raw]
    sizes = np.bincount(out.ravel(), minlength=len(order) + 1)[1:].astype(np.int64)
    return ComponentLabeling(out, len(order), sizes)


def connected_components(mask, connectivity: int = 26) -> ComponentLabeling:
    arr = _as_bool(mask)
    raw, n = ndimage.label(arr, structure=structure(connectivity))
    return _storage_order_relabel(raw, n)


def remove_dust(mask, params: PostprocessParams = PostprocessParams()) -> BinaryMask:
    """Clear every component with at most ``dust_max`` voxels."""
    arr = _as_bool(mask)
    cc = connected_components(arr, params.foreground_connectivity)
    keep = np.r_[False, cc.sizes > params.dust_max]
    return BinaryMask(keep[cc.ids], getattr(mask, "spacing", (1.0, 1.0, 1.0)))


def _touches_border(ids: np.ndarray, count: int) -> np.ndarray:
    touching = np.zeros(count + 1, dtype=bool)
    for axis in range(ids.ndim):
        for end in (0, -1):
            touching[np.take(ids, end, axis=axis)] = True
    return touching


def find_holes(mask, params: PostprocessParams = PostprocessParams()) -> ComponentLabeling:
    """Background components that do not reach any face of the volume."""
    arr = _as_bool(mask)
    bg = connected_components(~arr, params.hole_background_connectivity)
    border = _touches_border(bg.ids, bg.count)
    border[0] = True
    enclosed = np.where(border[bg.ids], 0, bg.ids)
    return _storage_order_relabel(enclosed, bg.count)


def _hole_voxels(mask: np.ndarray, params: PostprocessParams) -> np.ndarray:
    return find_holes(mask, params).ids > 0


def _strip_dust_then_fill(lab: np.ndarray, region: np.ndarray, parent: np.ndarray, fill_label: int,
                          params: PostprocessParams) -> None:
    """Zero the dust of ``region`` in place, then fill holes this opened in ``parent``."""
    holes_before = _hole_voxels(parent, params)
    dust = region & ~remove_dust(region, params).data
    lab[dust] = 0
    parent_after = parent & ~dust
    new_holes = _hole_voxels(parent_after, params) & ~holes_before
    lab[new_holes] = fill_label


def postprocess_prediction(lab: LabelVolume, params: PostprocessParams = PostprocessParams()) -> LabelVolume:
    """ET dust -> fill new TC holes with NCR -> TC dust -> fill new WT holes with ED -> WT dust."""
    out = np.array(lab.data, dtype=np.uint8)

    et, tc = out == ET, (out == ET) | (out == NCR)
    _strip_dust_then_fill(out, et, tc, NCR, params)

    tc, wt = (out == ET) | (out == NCR), out != 0
    _strip_dust_then_fill(out, tc, wt, ED, params)

    wt = out != 0
    out[wt & ~remove_dust(wt, params).data] = 0
    return lab.with_data(out)


def clean_ground_truth(
    lab: LabelVolume, params: PostprocessParams = PostprocessParams(), dilation_iters: int = 3
) -> LabelVolume:
    """Drop ground-truth lesions of at most ``dust_max`` voxels, region by region.

    Lesions are grouped the same way as in evaluation: components whose
    dilations overlap count as one lesion, and the size test uses the
    undilated voxel total of the whole group.
    """
    from .metrics import LesionMatchParams, identify_lesions

    if dilation_iters < 0:
        raise ConfigError(f"dilation_iters must be >= 0, got {dilation_iters}")
    match = LesionMatchParams(dilation_iters=dilation_iters)
    regions = labels_to_regions(lab)
    cleaned = []
    for mask in regions:
        keep = np.zeros(mask.data.shape, dtype=bool)
        for lesion in identify_lesions(mask, match):
            if lesion.size > params.dust_max:
                keep |= lesion.mask
        cleaned.append(keep)
    et, tc, wt = cleaned
    tc &= wt
    et &= tc
    out = regions_to_labels(RegionSet.from_arrays(et, tc, wt, lab.spacing))
    return lab.with_data(out.data)
