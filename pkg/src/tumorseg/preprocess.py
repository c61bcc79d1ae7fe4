"""Intensity pre-processing: z-score, percentile rescaling, histogram matching.

All statistics are taken over the brain (nonzero) voxels of each volume and
background voxels are written back as exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DegenerateInput
from .volume import BinaryMask, ScalarVolume, check_same_shape, percentile

__all__ = [
    "ZScore",
    "Rescale",
    "HistMatch",
    "PreprocessPlan",
    "brain_mask",
    "zscore_normalize",
    "rescale_percentile",
    "histogram_match",
    "run_plan",
    "parse_plan",
]


def brain_mask(vol: ScalarVolume) -> BinaryMask:
    return BinaryMask(vol.data != 0, vol.spacing)


def _masked(vol: ScalarVolume, mask: BinaryMask) -> np.ndarray:
    check_same_shape(vol.data, mask.data)
    return np.asarray(vol.data, dtype=np.float64)[mask.data]


def _fill(vol: ScalarVolume, mask: BinaryMask, values: np.ndarray) -> ScalarVolume:
    out = np.zeros(vol.data.shape, dtype=np.float64)
    out[mask.data] = values
    return vol.with_data(out)


def zscore_normalize(vol: ScalarVolume, mask: BinaryMask) -> ScalarVolume:
    """Subtract the masked mean and divide by the masked population std."""
    values = _masked(vol, mask)
    if values.size < 2:
        raise DegenerateInput(f"z-score needs at least 2 masked voxels, got {values.size}")
    mu = values.mean()
    sigma = values.std()
    if not sigma > 0:
        raise DegenerateInput("z-score over a constant region (std = 0)")
    return _fill(vol, mask, (values - mu) / sigma)


def rescale_percentile(
    vol: ScalarVolume, mask: BinaryMask, p_low: float = 2.0, p_high: float = 98.0
) -> ScalarVolume:
    """Map [P_low, P_high] of the masked intensities affinely onto [0, 1], clamping outside."""
    if not 0 <= p_low < p_high <= 100:
        raise ConfigError(f"need 0 <= p_low < p_high <= 100, got {p_low}, {p_high}")
    values = _masked(vol, mask)
    if values.size == 0:
        raise DegenerateInput("rescale over an empty mask")
    lo = percentile(vol, p_low, mask)
    hi = percentile(vol, p_high, mask)
    if not hi > lo:
        raise DegenerateInput(f"percentiles coincide (P{p_low} = P{p_high} = {lo})")
    return _fill(vol, mask, np.clip((values - lo) / (hi - lo), 0.0, 1.0))


def histogram_match(
    src: ScalarVolume,
    src_mask: BinaryMask,
    ref: ScalarVolume,
    ref_mask: BinaryMask,
    n_quantiles: int = 256,
) -> ScalarVolume:
    """Quantile-map masked source intensities onto the reference distribution.

    Both distributions are summarised by ``n_quantiles`` evenly spaced
    quantiles; a source voxel is located among the source anchors and the
    same fractional position is read off the reference anchors.
    """
    if n_quantiles < 2:
        raise ConfigError(f"n_quantiles must be >= 2, got {n_quantiles}")
    values = _masked(src, src_mask)
    ref_values = _masked(ref, ref_mask)
    if values.size == 0 or ref_values.size == 0:
        raise DegenerateInput("histogram matching over an empty mask")
    q = np.linspace(0.0, 1.0, n_quantiles)
    src_anchors = np.quantile(values, q)
    ref_anchors = np.quantile(ref_values, q)
    # collapse tied source anchors so the piecewise-linear map stays a function
    src_anchors, first = np.unique(src_anchors, return_index=True)
    last = np.r_[first[1:] - 1, n_quantiles - 1]
    ref_at = 0.5 * (ref_anchors[first] + ref_anchors[last])
    ref_at[0], ref_at[-1] = ref_anchors[0], ref_anchors[-1]
    if src_anchors.size == 1:
        mapped = np.full_like(values, np.median(ref_values))
    else:
        mapped = np.interp(values, src_anchors, ref_at)
    return _fill(src, src_mask, mapped)


@dataclass(frozen=True)
class ZScore:
    name = "zscore"


@dataclass(frozen=True)
class Rescale:
    p_low: float = 2.0
    p_high: float = 98.0
    name = "rescale"

    def __post_init__(self):
        if not 0 <= self.p_low < self.p_high <= 100:
            raise ConfigError(f"rescale needs 0 <= p_low < p_high <= 100, got {self.p_low}, {self.p_high}")


@dataclass(frozen=True)
class HistMatch:
    reference: Union[str, ScalarVolume]
    n_quantiles: int = 256
    name = "hist_match"

    def __post_init__(self):
        if self.n_quantiles < 2:
            raise ConfigError(f"n_quantiles must be >= 2, got {self.n_quantiles}")

    def reference_volume(self) -> ScalarVolume:
        if isinstance(self.reference, ScalarVolume):
            return self.reference
        from .nifti import read_nifti

        return read_nifti(self.reference, labels=False)


Step = Union[ZScore, Rescale, HistMatch]


@dataclass(frozen=True)
class PreprocessPlan:
    steps: Sequence[Step] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for step in self.steps:
            if not isinstance(step, (ZScore, Rescale, HistMatch)):
                raise ConfigError(f"unknown preprocessing step {step!r}")

    def __bool__(self):
        return bool(self.steps)


def run_plan(plan: PreprocessPlan, vol: ScalarVolume) -> ScalarVolume:
    """Apply the steps in order; the brain mask comes from the raw input only."""
    if not plan.steps:
        return vol
    mask = brain_mask(vol)
    out = vol
    for step in plan.steps:
        if isinstance(step, ZScore):
            out = zscore_normalize(out, mask)
        elif isinstance(step, Rescale):
            out = rescale_percentile(out, mask, step.p_low, step.p_high)
        else:
            ref = step.reference_volume()
            out = histogram_match(out, mask, ref, brain_mask(ref), step.n_quantiles)
    return out


def parse_plan(text: str, reference: Optional[str] = None, n_quantiles: int = 256) -> PreprocessPlan:
    """Parse ``"zscore,rescale[:2:98],hist"`` into a plan.

    ``hist`` (alias ``hist_match``) takes its reference from ``reference``
    unless written as ``hist:<path>``.
    """
    steps: List[Step] = []
    for token in filter(None, (t.strip() for t in (text or "").split(","))):
        name, *args = token.split(":")
        if name == "zscore" and not args:
            steps.append(ZScore())
        elif name == "rescale" and len(args) in (0, 2):
            try:
                steps.append(Rescale(*(float(a) for a in args)))
            except ValueError as exc:
                raise ConfigError(f"bad rescale arguments in {token!r}") from exc
        elif name in ("hist", "hist_match") and len(args) <= 1:
            ref = args[0] if args else reference
            if not ref:
                raise ConfigError("histogram matching needs a reference volume")
            steps.append(HistMatch(ref, n_quantiles))
        else:
            raise ConfigError(f"unknown plan step {token!r}")
    return PreprocessPlan(steps)
