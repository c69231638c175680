"""Tracker configuration and its plain-text ``key = value`` file format.

Example (the built-in tiny preset)::

    stages = conv:3:1:8, conv:3:1:12, conv:3:1:12
    template_size = 16
    search_size = 32
    queue_length = 3
    num_heads = 6
    model_dim = 12
    context = 0.5
    prior_seed = 0
    filter = on
    query = previous
    init = conv

Blank lines and ``#`` comments are ignored. Unknown keys are an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError
from .numerics import conv_output_size

QUERY_CHOICES = ("previous", "current")
INIT_CHOICES = ("conv", "random")


@dataclass(frozen=True)
class Stage:
    kind: str  # "conv" or "pool"
    kernel: int
    stride: int
    channels: int = 0  # conv only

    def __str__(self) -> str:
        if self.kind == "pool":
            return f"pool:{self.kernel}:{self.stride}"
        return f"conv:{self.kernel}:{self.stride}:{self.channels}"

    @classmethod
    def parse(cls, text: str) -> "Stage":
        parts = text.strip().split(":")
        try:
            if parts[0] == "conv" and len(parts) == 4:
                stage = cls("conv", int(parts[1]), int(parts[2]), int(parts[3]))
            elif parts[0] == "pool" and len(parts) == 3:
                stage = cls("pool", int(parts[1]), int(parts[2]))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"bad stage {text!r}; expected conv:k:s:channels or pool:k:s") from None
        if stage.kernel < 1 or stage.stride < 1 or (stage.kind == "conv" and stage.channels < 1):
            raise ConfigError(f"bad stage {text!r}; sizes must be positive")
        return stage


@dataclass(frozen=True)
class Toggles:
    """Ablation switches; the defaults are the full model."""
    filter_enabled: bool = True
    query_choice: str = "previous"
    prior_init: str = "conv"

    def __post_init__(self):
        if self.query_choice not in QUERY_CHOICES:
            raise ConfigError(f"query must be one of {QUERY_CHOICES}, got {self.query_choice!r}")
        if self.prior_init not in INIT_CHOICES:
            raise ConfigError(f"init must be one of {INIT_CHOICES}, got {self.prior_init!r}")

    def with_overrides(self, overrides: Iterable[str]) -> "Toggles":
        """Apply CLI-style ``name=value`` overrides (filter=off, query=current, init=random)."""
        values = dataclasses.asdict(self)
        for item in overrides:
            name, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"toggle {item!r} is not name=value")
            _apply_toggle(values, name.strip(), value.strip())
        return Toggles(**values)


def _parse_bool(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off, got {value!r}")


def _apply_toggle(values: dict, name: str, value: str) -> None:
    if name == "filter":
        values["filter_enabled"] = _parse_bool(value)
    elif name == "query":
        values["query_choice"] = value
    elif name == "init":
        values["prior_init"] = value
    else:
        raise ConfigError(f"unknown toggle {name!r}")


TINY_STAGES = (Stage("conv", 3, 1, 8), Stage("conv", 3, 1, 12), Stage("conv", 3, 1, 12))
PAPER_STAGES = (
    Stage("conv", 11, 2, 32),
    Stage("pool", 3, 2),
    Stage("conv", 5, 1, 64),
    Stage("pool", 3, 2),
    Stage("conv", 3, 1, 96),
    Stage("conv", 3, 1, 96),
    Stage("conv", 3, 1, 96),
)


@dataclass(frozen=True)
class TrackerConfig:
    stages: tuple = TINY_STAGES
    template_size: int = 16
    search_size: int = 32
    queue_length: int = 3
    num_heads: int = 6
    model_dim: int = 12
    in_channels: int = 3
    context: float = 0.5
    ffn_hidden: int = 0  # 0 means 2 * model_dim
    prior_seed: int = 0
    toggles: Toggles = field(default_factory=Toggles)

    def __post_init__(self):
        if not any(s.kind == "conv" for s in self.stages):
            raise ConfigError("stage plan has no convolution")
        if sum(s.kind == "conv" for s in self.stages) < 2:
            raise ConfigError("stage plan needs at least two convolutions (the adaptive ones)")
        if self.queue_length < 1:
            raise ConfigError("queue_length must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.template_size > self.search_size:
            raise ConfigError("template_size must not exceed search_size")
        for size in (self.template_size, self.search_size):
            self.feature_size(size)

    @classmethod
    def tiny(cls, **overrides) -> "TrackerConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "TrackerConfig":
        base = dict(stages=PAPER_STAGES, template_size=127, search_size=287, model_dim=96)
        base.update(overrides)
        return cls(**base)

    @property
    def hidden_dim(self) -> int:
        return self.ffn_hidden or 2 * self.model_dim

    @property
    def feature_channels(self) -> int:
        return [s for s in self.stages if s.kind == "conv"][-1].channels

    @property
    def adaptive_stages(self) -> tuple:
        """Indices of the stages run as temporally adaptive convolutions: the last two convs."""
        convs = [i for i, s in enumerate(self.stages) if s.kind == "conv"]
        return tuple(convs[-2:])

    @property
    def total_stride(self) -> int:
        out = 1
        for s in self.stages:
            out *= s.stride
        return out

    def feature_size(self, patch: int) -> int:
        size = patch
        for s in self.stages:
            size = conv_output_size(size, s.kernel, s.stride, 0)
            if size < 1:
                raise ConfigError(f"stage plan collapses a {patch}px patch at stage {s}")
        return size

    @property
    def map_size(self) -> int:
        """Spatial side of the similarity map."""
        return self.feature_size(self.search_size) - self.feature_size(self.template_size) + 1

    @property
    def num_tokens(self) -> int:
        return self.map_size ** 2

    def to_text(self) -> str:
        t = self.toggles
        lines = [
            "stages = " + ", ".join(str(s) for s in self.stages),
            f"template_size = {self.template_size}",
            f"search_size = {self.search_size}",
            f"queue_length = {self.queue_length}",
            f"num_heads = {self.num_heads}",
            f"model_dim = {self.model_dim}",
            f"in_channels = {self.in_channels}",
            f"context = {self.context!r}",
            f"ffn_hidden = {self.ffn_hidden}",
            f"prior_seed = {self.prior_seed}",
            f"filter = {'on' if t.filter_enabled else 'off'}",
            f"query = {t.query_choice}",
            f"init = {t.prior_init}",
        ]
        return "\n".join(lines) + "\n"


_INT_KEYS = ("template_size", "search_size", "queue_length", "num_heads", "model_dim",
             "in_channels", "ffn_hidden", "prior_seed")


def parse_config(text: str) -> TrackerConfig:
    kwargs: dict = {}
    toggles = dataclasses.asdict(Toggles())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = key.strip(), value.strip()
        try:
            if key == "stages":
                kwargs["stages"] = tuple(Stage.parse(p) for p in value.split(",") if p.strip())
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key == "context":
                kwargs[key] = float(value)
            elif key in ("filter", "query", "init"):
                _apply_toggle(toggles, key, value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise ConfigError(f"line {lineno}: {exc}") from None
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    kwargs["toggles"] = Toggles(**toggles)
    return TrackerConfig(**kwargs)


def load_config(path) -> TrackerConfig:
    """Read a config file; the names ``tiny`` and ``paper`` select the presets."""
    if str(path) == "tiny":
        return TrackerConfig.tiny()
    if str(path) == "paper":
        return TrackerConfig.paper()
    return parse_config(Path(path).read_text())


def config_from_mapping(values: Mapping[str, str]) -> TrackerConfig:
    return parse_config("\n".join(f"{k} = {v}" for k, v in values.items()))
