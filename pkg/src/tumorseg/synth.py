"""Synthetic subjects for tests, demos and the bundled golden run.

Tumors are nested ellipsoids (ET core inside NCR inside ED).  Dust is a set
of small compact blobs placed well away from any tumor.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .labels import RegionProbs, labels_to_regions
from .volume import LabelVolume, ScalarVolume

__all__ = [
    "tumor_labels",
    "inject_dust",
    "carve_holes",
    "random_label_volume",
    "noisy_probs",
    "mri_like",
]


def _grid(shape):
    return np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")


def _ellipsoid(shape, center, radii) -> np.ndarray:
    x, y, z = _grid(shape)
    return (
        ((x - center[0]) / radii[0]) ** 2
        + ((y - center[1]) / radii[1]) ** 2
        + ((z - center[2]) / radii[2]) ** 2
    ) <= 1.0


def tumor_labels(
    rng: np.random.Generator,
    shape: Sequence[int] = (48, 48, 48),
    n_tumors: int = 2,
    radius: Tuple[float, float] = (6.0, 9.0),
) -> LabelVolume:
    """Nested ED/NCR/ET ellipsoids with every region well above 50 voxels."""
    shape = tuple(shape)
    lab = np.zeros(shape, dtype=np.uint8)
    centers: List[np.ndarray] = []
    for _ in range(n_tumors):
        for _attempt in range(200):
            r = rng.uniform(*radius, size=3)
            c = np.array([rng.uniform(r[i] + 1, shape[i] - r[i] - 2) for i in range(3)])
            if all(np.linalg.norm(c - o) > 2.2 * radius[1] + 8 for o in centers):
                break
        else:
            continue
        centers.append(c)
        lab[_ellipsoid(shape, c, r)] = 2
        lab[_ellipsoid(shape, c, 0.65 * r)] = 1
        lab[_ellipsoid(shape, c, 0.4 * r)] = 3
    return LabelVolume(lab)


def _blob(rng: np.random.Generator, size: int) -> np.ndarray:
    """Offsets of a 6-connected random blob of ``size`` voxels grown from the origin."""
    cells = {(0, 0, 0)}
    steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    frontier = [(0, 0, 0)]
    while len(cells) < size:
        base = frontier[rng.integers(len(frontier))]
        step = steps[rng.integers(6)]
        cell = (base[0] + step[0], base[1] + step[1], base[2] + step[2])
        if max(abs(v) for v in cell) > 3:
            continue
        if cell not in cells:
            cells.add(cell)
            frontier.append(cell)
    return np.array(sorted(cells))


def inject_dust(
    lab: LabelVolume,
    rng: np.random.Generator,
    n_dust: int = 4,
    max_size: int = 30,
    clearance: int = 8,
) -> LabelVolume:
    """Add ``n_dust`` blobs of at most ``max_size`` voxels far from existing foreground."""
    out = np.array(lab.data)
    shape = out.shape
    taken = out != 0
    placed = 0
    for _attempt in range(50 * max(n_dust, 1)):
        if placed == n_dust:
            break
        forbidden = ndimage.binary_dilation(taken, iterations=clearance) if taken.any() else taken
        c = np.array([rng.integers(4, n - 4) for n in shape])
        offs = _blob(rng, int(rng.integers(1, max_size + 1))) + c
        if np.any(offs < 0) or np.any(offs >= np.array(shape)):
            continue
        idx = tuple(offs.T)
        if forbidden[idx].any():
            continue
        out[idx] = rng.integers(1, 4)
        taken[idx] = True
        placed += 1
    return lab.with_data(out)


def carve_holes(lab: LabelVolume, rng: np.random.Generator, n_holes: int = 2) -> LabelVolume:
    """Set a few voxels deep inside tumors to background, making enclosed holes."""
    out = np.array(lab.data)
    inner = ndimage.binary_erosion(out != 0, iterations=2)
    candidates = np.argwhere(inner)
    if len(candidates) == 0:
        return lab
    for i in rng.choice(len(candidates), size=min(n_holes, len(candidates)), replace=False):
        x, y, z = candidates[i]
        out[x, y, z] = 0
    return lab.with_data(out)


def random_label_volume(rng: np.random.Generator, shape: Sequence[int] = (32, 32, 32)) -> LabelVolume:
    """Tumors plus dust plus enclosed holes plus some scattered label noise."""
    lab = tumor_labels(rng, shape, n_tumors=int(rng.integers(1, 3)), radius=(4.0, 7.0))
    lab = carve_holes(lab, rng, int(rng.integers(0, 4)))
    lab = inject_dust(lab, rng, int(rng.integers(0, 6)), max_size=40, clearance=2)
    out = np.array(lab.data)
    flips = rng.random(out.shape) < 0.002
    out[flips] = rng.integers(0, 4, size=int(flips.sum()))
    return lab.with_data(out)


def noisy_probs(lab: LabelVolume, rng: np.random.Generator, noise: float = 0.15) -> RegionProbs:
    """Region probabilities around 0.9 inside / 0.1 outside, plus Gaussian noise."""
    chans = []
    for mask in labels_to_regions(lab):
        p = np.where(mask.data, 0.9, 0.1) + rng.normal(0.0, noise, mask.data.shape)
        chans.append(ScalarVolume(np.clip(p, 0.0, 1.0).astype(np.float32), lab.spacing))
    return RegionProbs(*chans)


def mri_like(rng: np.random.Generator, shape: Sequence[int] = (32, 32, 32)) -> ScalarVolume:
    """Skull-stripped-looking volume: positive intensities inside an ellipsoid, 0 outside."""
    shape = tuple(shape)
    brain = _ellipsoid(shape, [n / 2 for n in shape], [0.42 * n for n in shape])
    img = rng.gamma(4.0, 120.0, size=shape) + 50.0
    return ScalarVolume(np.where(brain, img, 0.0).astype(np.float32))
