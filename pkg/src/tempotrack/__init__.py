"""Streaming temporal-context tracker with constant per-sequence state."""
from .config import TrackerConfig, Toggles, load_config
from .model import ModelParams, init_model
from .pipeline import BBox, Tracker, TrackerState, init, track

__all__ = ["BBox", "ModelParams", "Toggles", "Tracker", "TrackerConfig", "TrackerState",
           "init", "init_model", "load_config", "track"]
