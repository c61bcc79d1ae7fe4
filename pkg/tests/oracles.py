"""Slow, obviously-correct reference implementations used only by tests.

Nothing here imports the package's own geometry code.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def neighbour_offsets(connectivity):
    offs = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        nz = sum(1 for v in d if v)
        if nz == 0:
            continue
        if connectivity == 6 and nz > 1:
            continue
        if connectivity == 18 and nz > 2:
            continue
        offs.append(d)
    return offs


def flood_fill(mask, connectivity):
    """BFS labelling, ids assigned in x-fastest scan order."""
    mask = np.asarray(mask, dtype=bool)
    ids = np.zeros(mask.shape, dtype=np.int64)
    offs = neighbour_offsets(connectivity)
    nx, ny, nz = mask.shape
    nxt = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not mask[x, y, z] or ids[x, y, z]:
                    continue
                nxt += 1
                ids[x, y, z] = nxt
                queue = deque([(x, y, z)])
                while queue:
                    cx, cy, cz = queue.popleft()
                    for dx, dy, dz in offs:
                        a, b, c = cx + dx, cy + dy, cz + dz
                        if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and mask[a, b, c] and not ids[a, b, c]:
                            ids[a, b, c] = nxt
                            queue.append((a, b, c))
    return ids, nxt


def same_partition(a, b) -> bool:
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if not np.array_equal(a == 0, b == 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    left = {p for p, _ in pairs}
    right = {q for _, q in pairs}
    return len(pairs) == len(left) == len(right)


def boundary_points(mask):
    mask = np.asarray(mask, dtype=bool)
    pts = []
    nx, ny, nz = mask.shape
    for x, y, z in zip(*np.nonzero(mask)):
        for dx, dy, dz in neighbour_offsets(6):
            a, b, c = x + dx, y + dy, z + dz
            if not (0 <= a < nx and 0 <= b < ny and 0 <= c < nz) or not mask[a, b, c]:
                pts.append((x, y, z))
                break
    return np.array(pts, dtype=np.float64)


def interp_percentile(values, q):
    v = np.sort(np.asarray(values, dtype=np.float64))
    pos = (len(v) - 1) * q / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def brute_hd95(p, g, spacing=(1.0, 1.0, 1.0)):
    bp = boundary_points(p) * np.asarray(spacing)
    bg = boundary_points(g) * np.asarray(spacing)
    d = np.sqrt(((bp[:, None, :] - bg[None, :, :]) ** 2).sum(-1))
    return max(interp_percentile(d.min(axis=1), 95), interp_percentile(d.min(axis=0), 95))


def brute_dilate(mask, iters):
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(iters):
        grown = out.copy()
        nx, ny, nz = out.shape
        for x, y, z in zip(*np.nonzero(out)):
            grown[max(x - 1, 0):x + 2, max(y - 1, 0):y + 2, max(z - 1, 0):z + 2] = True
        out = grown
    return out


def central_difference(f, x, index, h=1e-4):
    xp = x.copy()
    xm = x.copy()
    xp[index] += h
    xm[index] -= h
    return (f(xp) - f(xm)) / (2 * h)


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(a), abs(b), floor)


def edge_magnitude(a):
    """Central differences with replicated borders, via explicit padding."""
    p = np.pad(np.asarray(a, dtype=np.float64), 1, mode="edge")
    gx = (p[2:, 1:-1, 1:-1] - p[:-2, 1:-1, 1:-1]) / 2
    gy = (p[1:-1, 2:, 1:-1] - p[1:-1, :-2, 1:-1]) / 2
    gz = (p[1:-1, 1:-1, 2:] - p[1:-1, 1:-1, :-2]) / 2
    return np.sqrt(gx**2 + gy**2 + gz**2)


def first_argmax(a):
    return int(np.argmax(np.asarray(a).ravel(order="F")))


def gradient_check(value_fn, grad, x, coords, h=1e-4, skip=None):
    """Compare ``grad`` with central differences of ``value_fn`` at ``coords``.

    Returns (max relative error, number of skipped coordinates).
    """
    worst, skipped = 0.0, 0
    for idx in coords:
        if skip is not None and skip(x, idx, h):
            skipped += 1
            continue
        numeric = central_difference(value_fn, x, idx, h)
        worst = max(worst, rel_err(grad[idx], numeric))
    return worst, skipped
