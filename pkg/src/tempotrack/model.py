"""The full parameter set and its mapping to flat tensor names."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .attrans import ATTransParams, init_attrans
from .backbone import Backbone, ConvParams, init_backbone
from .config import TrackerConfig
from .errors import ArchiveError
from .numerics import as_tensor


@dataclass(frozen=True)
class HeadParams:
    """Two 3x3 conv stacks on the refined map: classification (2) and box offsets (4)."""
    cls1: ConvParams
    cls2: ConvParams
    reg1: ConvParams
    reg2: ConvParams


@dataclass(frozen=True)
class ModelParams:
    backbone: Backbone
    attrans: ATTransParams
    head: HeadParams

    @property
    def config(self) -> TrackerConfig:
        return self.backbone.config


def init_head(config: TrackerConfig, rng: np.random.Generator) -> HeadParams:
    ci = config.model_dim

    def conv(c_out, c_in):
        w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(c_in * 9)
        return ConvParams(as_tensor(w), as_tensor(rng.standard_normal(c_out) * 0.01))

    return HeadParams(conv(ci, ci), conv(2, ci), conv(ci, ci), conv(4, ci))


def init_model(config: TrackerConfig, seed: int = 0, calibration_scale: float = 0.0) -> ModelParams:
    """Random weights for a config. Calibration generators are zero by default."""
    rng = np.random.default_rng(seed)
    return ModelParams(
        init_backbone(config, rng, calibration_scale),
        init_attrans(config, rng),
        init_head(config, rng),
    )


def _walk(obj, prefix: str, out: Dict[str, np.ndarray]) -> None:
    if isinstance(obj, np.ndarray):
        out[prefix] = obj
    elif isinstance(obj, Backbone):
        for i, stage in enumerate(obj.stages):
            if stage is not None:
                _walk(stage, f"{prefix}.stage{i}", out)
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            _walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name, out)
    else:
        raise TypeError(f"cannot flatten {type(obj).__name__} at {prefix}")


def flatten_params(params: ModelParams) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    _walk(params, "", out)
    return out


def _rebuild(obj, prefix: str, tensors: Dict[str, np.ndarray]):
    if isinstance(obj, np.ndarray):
        t = tensors[prefix]
        if t.shape != obj.shape:
            raise ArchiveError(f"tensor {prefix!r} has shape {t.shape}, model expects {obj.shape}")
        return as_tensor(t)
    if isinstance(obj, Backbone):
        stages = tuple(None if s is None else _rebuild(s, f"{prefix}.stage{i}", tensors)
                       for i, s in enumerate(obj.stages))
        return dataclasses.replace(obj, stages=stages)
    changes = {f.name: _rebuild(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name, tensors)
               for f in dataclasses.fields(obj)}
    return dataclasses.replace(obj, **changes)


def unflatten_params(config: TrackerConfig, tensors: Dict[str, np.ndarray]) -> ModelParams:
    """Build a model for ``config`` from named tensors; names must match exactly."""
    skeleton = init_model(config)
    expected = set(flatten_params(skeleton))
    missing = sorted(expected - set(tensors))
    unknown = sorted(set(tensors) - expected)
    if missing:
        raise ArchiveError("missing tensors: " + ", ".join(missing))
    if unknown:
        raise ArchiveError("unknown tensors: " + ", ".join(unknown))
    return _rebuild(skeleton, "", tensors)
