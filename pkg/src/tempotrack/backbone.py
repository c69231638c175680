"""Convolutional feature extractor whose last two convolutions recalibrate per frame.

Each adaptive layer keeps a fixed-length queue of per-frame descriptors (the
channel means of the layer's own input). A pair of temporal convolutions over
that queue yields one weight factor and one bias factor per output channel;
both generators start at zero so a fresh layer behaves exactly like its base
convolution.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .config import TrackerConfig
from .errors import DimensionError, StateError
from .numerics import (
    DTYPE,
    as_tensor,
    conv1d_over_queue,
    conv2d,
    global_avg_pool,
    max_pool2d,
    relu,
)


@dataclass(frozen=True)
class ConvParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class TAdaConvLayer:
    """Base filters plus the two calibration generators (``C_out x C_in x L`` each)."""
    base: ConvParams
    calib_w: ConvParams
    calib_b: ConvParams

    @property
    def in_channels(self) -> int:
        return self.base.weight.shape[1]

    @property
    def queue_length(self) -> int:
        return self.calib_w.weight.shape[2]


class TemporalContextQueue:
    """Rolling window of the last ``capacity`` descriptors, newest first.

    Until ``capacity`` frames have been seen the empty slots repeat the first
    descriptor ever pushed.
    """

    def __init__(self, capacity: int, channels: int):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.channels = channels
        self._entries = np.zeros((capacity, channels), dtype=DTYPE)
        self.first_descriptor: Optional[np.ndarray] = None

    @property
    def started(self) -> bool:
        return self.first_descriptor is not None

    @property
    def entries(self) -> np.ndarray:
        if not self.started:
            raise StateError("queue read before the first descriptor was pushed")
        return self._entries.copy()

    def push(self, descriptor: np.ndarray) -> "TemporalContextQueue":
        descriptor = as_tensor(descriptor)
        if descriptor.shape != (self.channels,):
            raise DimensionError(
                f"descriptor of shape {descriptor.shape} does not fit a {self.channels}-wide queue")
        if not self.started:
            self.first_descriptor = descriptor.copy()
            self._entries[:] = descriptor
        else:
            self._entries[1:] = self._entries[:-1].copy()
            self._entries[0] = descriptor
        return self

    def copy(self) -> "TemporalContextQueue":
        other = TemporalContextQueue(self.capacity, self.channels)
        other._entries = self._entries.copy()
        other.first_descriptor = None if self.first_descriptor is None else self.first_descriptor.copy()
        return other

    def to_arrays(self) -> dict:
        first = self.first_descriptor if self.started else np.zeros(self.channels, DTYPE)
        return {"entries": self._entries.copy(), "first": first.copy()}

    @classmethod
    def from_arrays(cls, entries: np.ndarray, first: np.ndarray) -> "TemporalContextQueue":
        q = cls(*entries.shape)
        q._entries = as_tensor(entries).copy()
        q.first_descriptor = as_tensor(first).copy()
        return q


def push_descriptor(queue: TemporalContextQueue, feat: np.ndarray) -> TemporalContextQueue:
    """Pool ``feat`` (``C x H x W``) to a descriptor and push it as the newest entry."""
    if feat.ndim != 3 or feat.shape[0] != queue.channels:
        raise DimensionError(f"feature of shape {feat.shape} does not match a {queue.channels}-wide queue")
    return queue.push(global_avg_pool(feat))


def calibration_factors(layer: TAdaConvLayer, queue: TemporalContextQueue):
    """Per-output-channel factors ``(alpha_w, alpha_b)``, each generator output plus one."""
    q = queue.entries
    alpha_w = conv1d_over_queue(q, layer.calib_w.weight, layer.calib_w.bias) + DTYPE(1)
    alpha_b = conv1d_over_queue(q, layer.calib_b.weight, layer.calib_b.bias) + DTYPE(1)
    return as_tensor(alpha_w), as_tensor(alpha_b)


def calibrated_params(layer: TAdaConvLayer, queue: TemporalContextQueue) -> ConvParams:
    alpha_w, alpha_b = calibration_factors(layer, queue)
    weight = layer.base.weight * alpha_w[:, None, None, None]
    return ConvParams(as_tensor(weight), as_tensor(layer.base.bias * alpha_b))


def tada_forward(layer: TAdaConvLayer, x: np.ndarray, queue: TemporalContextQueue,
                 stride: int = 1) -> np.ndarray:
    """Convolve with this frame's calibrated filters.

    ``queue`` must already hold the current frame's descriptor.
    """
    if x.ndim != 3 or x.shape[0] != layer.in_channels:
        raise DimensionError(f"tada_forward: input {x.shape} does not match {layer.in_channels} channels")
    p = calibrated_params(layer, queue)
    return conv2d(x, p.weight, p.bias, stride=stride)


StageParams = Union[ConvParams, TAdaConvLayer, None]


@dataclass(frozen=True)
class Backbone:
    config: TrackerConfig
    stages: tuple  # one entry per config stage; None for pooling stages

    def new_queues(self) -> List[TemporalContextQueue]:
        return [TemporalContextQueue(self.config.queue_length, self.stages[i].in_channels)
                for i in self.config.adaptive_stages]

    def as_plain(self) -> "Backbone":
        """Same backbone with every adaptive layer replaced by its base convolution."""
        plain = tuple(p.base if isinstance(p, TAdaConvLayer) else p for p in self.stages)
        return replace(self, stages=plain)


def extract_features(backbone: Backbone, patch: np.ndarray,
                     queues: Optional[Sequence[TemporalContextQueue]] = None,
                     trace: Optional[list] = None) -> np.ndarray:
    """Run every stage on a ``C x S x S`` patch.

    With ``queues`` (the streaming search branch) each adaptive stage pushes
    this frame's descriptor into its persistent queue. Without them (the
    template branch) each adaptive stage uses a throwaway queue seeded by the
    patch's own descriptor, leaving sequence state untouched.
    """
    cfg = backbone.config
    if patch.ndim != 3 or patch.shape[0] != cfg.in_channels or patch.shape[1] != patch.shape[2] \
            or patch.shape[1] not in (cfg.template_size, cfg.search_size):
        raise DimensionError(
            f"patch of shape {patch.shape} is neither {cfg.template_size} nor {cfg.search_size} square")
    if queues is not None and len(queues) != len(cfg.adaptive_stages):
        raise DimensionError(f"expected {len(cfg.adaptive_stages)} queues, got {len(queues)}")
    last_conv = max(i for i, s in enumerate(cfg.stages) if s.kind == "conv")
    x = as_tensor(patch)
    qi = 0
    for i, (stage, params) in enumerate(zip(cfg.stages, backbone.stages)):
        if stage.kind == "pool":
            x = max_pool2d(x, stage.kernel, stage.stride)
            continue
        if isinstance(params, TAdaConvLayer):
            if queues is None:
                queue = TemporalContextQueue(params.queue_length, params.in_channels)
            else:
                queue = queues[qi]
            push_descriptor(queue, x)
            if trace is not None:
                trace.append(calibration_factors(params, queue))
            x = tada_forward(params, x, queue, stride=stage.stride)
            qi += 1
        else:
            x = conv2d(x, params.weight, params.bias, stride=stage.stride)
        if i != last_conv:
            x = relu(x)
    return x


def init_backbone(config: TrackerConfig, rng: np.random.Generator,
                  calibration_scale: float = 0.0) -> Backbone:
    """He-initialised base filters; calibration generators zero unless ``calibration_scale`` > 0."""
    stages: list = []
    adaptive = set(config.adaptive_stages)
    c_in = config.in_channels
    L = config.queue_length
    for i, s in enumerate(config.stages):
        if s.kind == "pool":
            stages.append(None)
            continue
        fan_in = c_in * s.kernel * s.kernel
        w = rng.standard_normal((s.channels, c_in, s.kernel, s.kernel)) * np.sqrt(2.0 / fan_in)
        b = rng.standard_normal(s.channels) * 0.01
        base = ConvParams(as_tensor(w), as_tensor(b))
        if i in adaptive:
            def gen():
                gw = rng.standard_normal((s.channels, c_in, L)) * calibration_scale
                gb = rng.standard_normal(s.channels) * calibration_scale
                return ConvParams(as_tensor(gw), as_tensor(gb))
            stages.append(TAdaConvLayer(base, gen(), gen()))
        else:
            stages.append(base)
        c_in = s.channels
    return Backbone(config, tuple(stages))
