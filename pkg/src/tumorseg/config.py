"""Pipeline configuration: YAML file, overridable from the command line.

Example::

    preprocess:
      plan: zscore,rescale
      reference: null
      n_quantiles: 256
    thresholds: {wt: 0.45, tc: 0.4, et: 0.45}
    postprocess: {dust_max: 50, foreground_connectivity: 26, hole_background_connectivity: 6}
    lesion_match: {dilation_iters: 3, gt_min_size: 50, fp_hd95_penalty: 374.0, fn_hd95_penalty: 374.0}
    loss: {spec: COMBO2, gamma: 2.0}
    jobs: 1
    deterministic: true
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError
from .labels import Thresholds
from .losses import CompoundLossSpec
from .metrics import LesionMatchParams
from .postprocess import PostprocessParams
from .preprocess import PreprocessPlan, parse_plan

__all__ = ["PipelineConfig", "load_config"]


@dataclass(frozen=True)
class PipelineConfig:
    plan_text: str = "zscore,rescale"
    reference: Optional[str] = None
    n_quantiles: int = 256
    thresholds: Thresholds = field(default_factory=Thresholds)
    postprocess: PostprocessParams = field(default_factory=PostprocessParams)
    lesion_match: LesionMatchParams = field(default_factory=LesionMatchParams)
    loss_spec: str = "COMBO2"
    gamma: float = 2.0
    jobs: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")

    @property
    def plan(self) -> PreprocessPlan:
        return parse_plan(self.plan_text, self.reference, self.n_quantiles)

    @property
    def loss(self) -> CompoundLossSpec:
        return CompoundLossSpec.parse(self.loss_spec)

    def override(self, **changes: Any) -> "PipelineConfig":
        """Replace top-level or ``section.key`` values, skipping ``None``."""
        top: Dict[str, Any] = {}
        nested: Dict[str, Dict[str, Any]] = {}
        for key, value in changes.items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if name:
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = _build(type(getattr(self, section)), {**_asdict(getattr(self, section)), **values})
        return replace(self, **top)


def _asdict(obj) -> Dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _build(cls, values: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str]) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    raw = dict(raw)
    cfg: Dict[str, Any] = {}
    pre = raw.pop("preprocess", None) or {}
    if "plan" in pre:
        cfg["plan_text"] = pre.pop("plan") or ""
    cfg.update({k: pre.pop(k) for k in ("reference", "n_quantiles") if k in pre})
    if pre:
        raise ConfigError(f"unknown preprocess keys: {sorted(pre)}")
    if "thresholds" in raw:
        cfg["thresholds"] = _build(Thresholds, raw.pop("thresholds") or {})
    if "postprocess" in raw:
        cfg["postprocess"] = _build(PostprocessParams, raw.pop("postprocess") or {})
    if "lesion_match" in raw:
        cfg["lesion_match"] = _build(LesionMatchParams, raw.pop("lesion_match") or {})
    loss = raw.pop("loss", None) or {}
    if "spec" in loss:
        cfg["loss_spec"] = str(loss.pop("spec"))
    if "gamma" in loss:
        cfg["gamma"] = float(loss.pop("gamma"))
    if loss:
        raise ConfigError(f"unknown loss keys: {sorted(loss)}")
    for key in ("jobs", "deterministic"):
        if key in raw:
            cfg[key] = raw.pop(key)
    if raw:
        raise ConfigError(f"unknown config sections: {sorted(raw)}")
    return PipelineConfig(**cfg)
