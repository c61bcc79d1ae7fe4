"""Segmentation losses with analytic gradients.

Per-channel losses take a prediction in [0, 1] and a binary target of the
same shape and return a :class:`LossValue` whose gradient is taken with
respect to the prediction.  :func:`channel_average` and :func:`compound_loss`
average over the (ET, TC, WT) channels.

Everything is computed in float64 with numpy's fixed reduction order, so
results are reproducible bit-for-bit on one machine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, ShapeError
from .labels import RegionProbs, RegionSet
from .volume import BinaryMask, ScalarVolume

__all__ = [
    "EPS",
    "DICE_SMOOTH",
    "LossValue",
    "LossKind",
    "CompoundLossSpec",
    "PRESETS",
    "mse_loss",
    "ce_loss",
    "dice_loss",
    "focal_loss",
    "edge_map",
    "edge_loss",
    "channel_average",
    "compound_loss",
]

EPS = 1e-7
DICE_SMOOTH = 1e-5

ArrayLike = Union[np.ndarray, ScalarVolume, BinaryMask]


@dataclass(frozen=True, eq=False)
class LossValue:
    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise FloatingPointError(f"non-finite loss value {self.value}")


def _pair(pred: ArrayLike, target: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    t = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    return p, t


def mse_loss(pred: ArrayLike, target: ArrayLike) -> LossValue:
    p, t = _pair(pred, target)
    diff = p - t
    n = diff.size
    return LossValue(float(np.sum(diff * diff) / n), (2.0 / n) * diff)


def _clamped(p: np.ndarray):
    pc = np.clip(p, EPS, 1.0 - EPS)
    active = (p >= EPS) & (p <= 1.0 - EPS)
    return pc, active


def ce_loss(pred: ArrayLike, target: ArrayLike) -> LossValue:
    """Binary cross-entropy, mean over voxels, on predictions clamped to [EPS, 1-EPS]."""
    p, t = _pair(pred, target)
    pc, active = _clamped(p)
    n = p.size
    log_p, log_q = np.log(pc), np.log(1.0 - pc)
    value = -np.sum(t * log_p + (1.0 - t) * log_q) / n
    grad = -(t / pc - (1.0 - t) / (1.0 - pc)) / n
    return LossValue(float(value), np.where(active, grad, 0.0))


def focal_loss(pred: ArrayLike, target: ArrayLike, gamma: float = 2.0) -> LossValue:
    """Binary focal loss; ``gamma=0`` reproduces :func:`ce_loss` exactly."""
    if gamma < 0:
        raise ConfigError(f"focal gamma must be >= 0, got {gamma}")
    p, t = _pair(pred, target)
    if gamma == 0:
        return ce_loss(p, t)
    pc, active = _clamped(p)
    n = p.size
    q = 1.0 - pc
    log_p, log_q = np.log(pc), np.log(q)
    w_pos, w_neg = q**gamma, pc**gamma
    value = -np.sum(t * w_pos * log_p + (1.0 - t) * w_neg * log_q) / n
    d_pos = -gamma * q ** (gamma - 1.0) * log_p + w_pos / pc
    d_neg = gamma * pc ** (gamma - 1.0) * log_q - w_neg / q
    grad = -(t * d_pos + (1.0 - t) * d_neg) / n
    return LossValue(float(value), np.where(active, grad, 0.0))


def dice_loss(pred: ArrayLike, target: ArrayLike, smooth: float = DICE_SMOOTH) -> LossValue:
    p, t = _pair(pred, target)
    inter = np.sum(p * t)
    denom = np.sum(p) + np.sum(t) + smooth
    num = 2.0 * inter + smooth
    value = 1.0 - num / denom
    grad = -(2.0 * t * denom - num) / (denom * denom)
    return LossValue(float(value), grad)


def _central_diff(a: np.ndarray, axis: int) -> np.ndarray:
    """(a[i+1] - a[i-1]) / 2 with replicated borders."""
    n = a.shape[axis]
    up = np.take(a, np.minimum(np.arange(n) + 1, n - 1), axis=axis)
    down = np.take(a, np.maximum(np.arange(n) - 1, 0), axis=axis)
    return 0.5 * (up - down)


def _central_diff_adjoint(w: np.ndarray, axis: int) -> np.ndarray:
    n = w.shape[axis]
    out = np.zeros_like(w)
    moved_w = np.moveaxis(w, axis, 0)
    moved_out = np.moveaxis(out, axis, 0)
    np.add.at(moved_out, np.minimum(np.arange(n) + 1, n - 1), 0.5 * moved_w)
    np.add.at(moved_out, np.maximum(np.arange(n) - 1, 0), -0.5 * moved_w)
    return out


def _edge_forward(a: np.ndarray):
    grads = [_central_diff(a, ax) for ax in range(a.ndim)]
    mag = np.sqrt(sum(g * g for g in grads))
    k = int(np.argmax(mag.ravel(order="F")))  # first max in storage order
    peak = mag.ravel(order="F")[k]
    edges = mag / peak if peak > 0 else np.zeros_like(mag)
    return edges, mag, grads, peak, k


def edge_map(vol: ArrayLike):
    """Gradient magnitude normalised by its global maximum (all zeros if flat)."""
    arr = np.asarray(getattr(vol, "data", vol), dtype=np.float64)
    edges = _edge_forward(arr)[0]
    if isinstance(vol, (ScalarVolume, BinaryMask)):
        return ScalarVolume(edges, vol.spacing)
    return edges


def edge_loss(pred: ArrayLike, target: ArrayLike) -> LossValue:
    """MSE between the edge maps of prediction and target."""
    p, t = _pair(pred, target)
    ep, mag, grads, peak, k = _edge_forward(p)
    et = _edge_forward(t)[0]
    inner = mse_loss(ep, et)
    if peak == 0:
        return LossValue(inner.value, np.zeros_like(p))
    # back through the max-normalisation: E = g / g[k]
    d_edges = inner.gradient
    d_mag = d_edges / peak
    flat = d_mag.ravel(order="F").copy()
    flat[k] -= np.sum(d_edges * mag) / (peak * peak)
    d_mag = flat.reshape(p.shape, order="F")
    # back through the magnitude; subgradient 0 where g == 0
    safe = np.where(mag > 0, mag, 1.0)
    scale = np.where(mag > 0, d_mag / safe, 0.0)
    grad = sum(_central_diff_adjoint(scale * g, ax) for ax, g in enumerate(grads))
    return LossValue(inner.value, grad)


class LossKind(str, enum.Enum):
    MSE = "mse"
    CE = "ce"
    DICE = "dice"
    FOCAL = "focal"
    EDGE = "edge"


LOSS_FUNCTIONS: Dict[LossKind, Callable[..., LossValue]] = {
    LossKind.MSE: mse_loss,
    LossKind.CE: ce_loss,
    LossKind.DICE: dice_loss,
    LossKind.FOCAL: focal_loss,
    LossKind.EDGE: edge_loss,
}


@dataclass(frozen=True)
class CompoundLossSpec:
    terms: Tuple[Tuple[LossKind, float], ...]

    def __init__(self, terms: Iterable[Tuple[Union[LossKind, str], float]]):
        parsed = []
        for kind, weight in terms:
            try:
                kind = LossKind(kind.lower() if isinstance(kind, str) else kind)
            except ValueError as exc:
                raise ConfigError(f"unknown loss kind {kind!r}") from exc
            weight = float(weight)
            if not (np.isfinite(weight) and weight >= 0):
                raise ConfigError(f"loss weight must be finite and >= 0, got {weight}")
            parsed.append((kind, weight))
        if not any(w > 0 for _, w in parsed):
            raise ConfigError("compound loss needs at least one nonzero weight")
        object.__setattr__(self, "terms", tuple(parsed))

    def scaled(self, factor: float) -> "CompoundLossSpec":
        return CompoundLossSpec((k, w * factor) for k, w in self.terms)

    @classmethod
    def parse(cls, text: str) -> "CompoundLossSpec":
        """Preset name (``COMBO2``) or ``dice=1,focal=1,edge=0.05``."""
        key = text.strip().upper()
        if key in PRESETS:
            return PRESETS[key]
        terms = []
        for item in filter(None, (s.strip() for s in text.split(","))):
            name, sep, weight = item.partition("=")
            if not sep:
                raise ConfigError(f"expected kind=weight, got {item!r}")
            try:
                terms.append((name.strip(), float(weight)))
            except ValueError as exc:
                raise ConfigError(f"bad weight in {item!r}") from exc
        return cls(terms)


PRESETS: Dict[str, CompoundLossSpec] = {
    "COMBO1": CompoundLossSpec([("mse", 0.25), ("ce", 0.0044), ("edge", 0.00015)]),
    "COMBO2": CompoundLossSpec([("dice", 1.0), ("focal", 1.0), ("edge", 0.05)]),
    "COMBO3": CompoundLossSpec([("dice", 1.0), ("focal", 1.0), ("edge", 0.005)]),
}


def _channels(probs, gt) -> Tuple[Sequence[np.ndarray], Sequence[np.ndarray]]:
    if isinstance(probs, RegionProbs):
        p = [c.data for c in probs]
    else:
        arr = np.asarray(probs)
        p = [arr[..., c] for c in range(3)]
    if isinstance(gt, RegionSet):
        t = [m.data for m in gt]
    else:
        arr = np.asarray(gt)
        t = [arr[..., c] for c in range(3)]
    return p, t


def channel_average(loss_fn: Callable[..., LossValue], probs, gt, **kwargs) -> LossValue:
    """Mean of ``loss_fn`` over the (ET, TC, WT) channels.

    ``probs``/``gt`` are a RegionProbs/RegionSet or ``[x, y, z, 3]`` arrays;
    the gradient comes back as an ``[x, y, z, 3]`` array.
    """
    p, t = _channels(probs, gt)
    parts = [loss_fn(pc, tc, **kwargs) for pc, tc in zip(p, t)]
    value = (parts[0].value + parts[1].value + parts[2].value) / 3.0
    grad = np.stack([part.gradient / 3.0 for part in parts], axis=-1)
    return LossValue(value, grad)


def compound_loss(spec: CompoundLossSpec, probs, gt, gamma: float = 2.0) -> LossValue:
    """Weighted sum of channel-averaged component losses."""
    if not isinstance(spec, CompoundLossSpec) or not spec.terms:
        raise ConfigError("empty compound loss specification")
    value = 0.0
    grad = None
    for kind, weight in spec.terms:
        if weight == 0:
            continue
        extra = {"gamma": gamma} if kind is LossKind.FOCAL else {}
        part = channel_average(LOSS_FUNCTIONS[kind], probs, gt, **extra)
        value += weight * part.value
        grad = weight * part.gradient if grad is None else grad + weight * part.gradient
    return LossValue(value, grad)
