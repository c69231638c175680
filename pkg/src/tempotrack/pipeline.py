"""Per-frame tracking state machine.

``init`` crops the template, extracts its (frozen) features, runs frame 1's
search region through the adaptive backbone to seed the descriptor queues
and the temporal prior. ``track`` then processes one frame at a time; the
state it mutates has the same size at every frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import archive
from .attrans import Instrument, TemporalPrior, init_prior, step
from .backbone import ConvParams, TemporalContextQueue, extract_features
from .config import TrackerConfig
from .errors import InputError, NumericError, StateError
from .model import HeadParams, ModelParams
from .numerics import DTYPE, as_tensor, conv2d, depthwise_xcorr, relu, softmax

PIXEL_SCALE = 1.0 / 255.0


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BBox":
        return cls(x + w / 2.0, y + h / 2.0, float(w), float(h))

    def to_xywh(self) -> Tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    @classmethod
    def parse(cls, text: str) -> "BBox":
        try:
            x, y, w, h = (float(v) for v in text.replace(" ", "").split(","))
        except ValueError:
            raise InputError(f"expected x,y,w,h, got {text!r}") from None
        return cls.from_xywh(x, y, w, h)


@dataclass(frozen=True)
class HeadOutput:
    cls: np.ndarray  # 2 x H x W, background/foreground logits
    reg: np.ndarray  # 4 x H x W, (l, t, r, b) in cell units


# ------------------------------------------------------------------ cropping

def crop_side(box: BBox, context: float) -> float:
    pad = context * (box.w + box.h)
    return math.sqrt((box.w + pad) * (box.h + pad))


def crop_patch(frame: np.ndarray, box: BBox, out_size: int, context: float,
               scale: float = 1.0) -> np.ndarray:
    """Bilinear square crop centred on ``box``, returned as ``3 x S x S`` float32.

    The crop side is ``crop_side(box, context) * scale``; samples falling
    outside the frame take the frame's per-channel mean.
    """
    if out_size < 1:
        raise InputError("out_size must be positive")
    h, w, _ = frame.shape
    side = crop_side(box, context) * scale
    step_ = side / out_size
    grid = (np.arange(out_size) + 0.5) * step_ - 0.5
    ys = box.cy - side / 2.0 + grid
    xs = box.cx - side / 2.0 + grid
    mean = frame.reshape(-1, frame.shape[2]).mean(axis=0)

    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    img = frame.astype(np.float64)

    def sample(yi, xi):
        vy = (yi >= 0) & (yi < h)
        vx = (xi >= 0) & (xi < w)
        vals = img[np.clip(yi, 0, h - 1)][:, np.clip(xi, 0, w - 1)]
        valid = vy[:, None] & vx[None, :]
        return np.where(valid[:, :, None], vals, mean), valid

    v00, m00 = sample(y0, x0)
    v01, m01 = sample(y0, x0 + 1)
    v10, m10 = sample(y0 + 1, x0)
    v11, m11 = sample(y0 + 1, x0 + 1)
    out = ((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11))
    outside = ~(m00 | m01 | m10 | m11)
    out = np.where(outside[:, :, None], mean, out)
    return as_tensor(out.transpose(2, 0, 1))


# -------------------------------------------------------------------- heads

def _same(x: np.ndarray, p: ConvParams) -> np.ndarray:
    return conv2d(x, p.weight, p.bias, stride=1, padding=p.weight.shape[-1] // 2)


def run_heads(refined: np.ndarray, head: HeadParams) -> HeadOutput:
    cls = _same(relu(_same(refined, head.cls1)), head.cls2)
    reg = _same(relu(_same(refined, head.reg1)), head.reg2)
    return HeadOutput(cls, reg)


def foreground_prob(cls: np.ndarray) -> np.ndarray:
    return softmax(np.moveaxis(cls, 0, -1), axis=-1)[..., 1]


def best_cell(cls: np.ndarray) -> Tuple[int, int, float]:
    """Cell with the highest foreground probability; ties go to the lowest row-major index."""
    fg = foreground_prob(cls)
    flat = int(np.argmax(fg))
    i, j = divmod(flat, fg.shape[1])
    return i, j, float(fg[i, j])


def decode_cell(i: int, j: int, offsets, stride: float, map_size: int,
                patch_size: int) -> Tuple[float, float, float, float]:
    """Cell ``(i, j)`` plus ``(l, t, r, b)`` offsets -> ``(cx, cy, w, h)`` in patch pixels.

    The response map is centred on the patch centre with ``stride`` pixels between cells.
    """
    l, t, r, b = (float(v) for v in offsets)
    mid = (map_size - 1) / 2.0
    cx = patch_size / 2.0 + (j - mid) * stride
    cy = patch_size / 2.0 + (i - mid) * stride
    return (cx + (r - l) / 2.0 * stride, cy + (b - t) / 2.0 * stride,
            (l + r) * stride, (t + b) * stride)


def clamp_box(box: BBox, frame_w: int, frame_h: int) -> BBox:
    return BBox(
        min(max(box.cx, 0.0), float(frame_w)),
        min(max(box.cy, 0.0), float(frame_h)),
        min(max(box.w, 1.0), float(frame_w)),
        min(max(box.h, 1.0), float(frame_h)),
    )


# -------------------------------------------------------------------- state

@dataclass
class TrackerState:
    config: TrackerConfig
    template_features: np.ndarray
    queues: List[TemporalContextQueue]
    prior: Optional[TemporalPrior]
    frame_index: int
    last_box: BBox
    frame_shape: Tuple[int, int]  # (H, W)
    last_refined: Optional[np.ndarray] = field(default=None, repr=False)

    def to_tensors(self) -> dict:
        out = {"template": self.template_features}
        for k, q in enumerate(self.queues):
            arrs = q.to_arrays()
            out[f"queue{k}.entries"] = arrs["entries"]
            out[f"queue{k}.first"] = arrs["first"]
        out["prior"] = self.prior.tokens
        out["counters"] = np.array([self.frame_index, self.prior.frame_index,
                                    self.frame_shape[0], self.frame_shape[1]], dtype=np.int64)
        out["last_box"] = np.array([self.last_box.cx, self.last_box.cy,
                                    self.last_box.w, self.last_box.h], dtype=np.float32)
        return out

    def serialize(self) -> bytes:
        return archive.dump_bytes(self.to_tensors())


def _similarity(params: ModelParams, search_patch: np.ndarray, template_features: np.ndarray,
                queues) -> np.ndarray:
    feats = extract_features(params.backbone, search_patch * DTYPE(PIXEL_SCALE), queues)
    return depthwise_xcorr(feats, template_features)


def init(frame: np.ndarray, box: BBox, params: ModelParams,
         probe: Optional[Instrument] = None) -> TrackerState:
    """Build the tracking state from the first frame and its target box."""
    cfg = params.config
    if box.w < 1 or box.h < 1:
        raise InputError(f"degenerate initial box {box}")
    fh, fw = frame.shape[:2]
    if not (0 <= box.cx <= fw and 0 <= box.cy <= fh):
        raise InputError(f"initial box centre ({box.cx}, {box.cy}) outside {fw}x{fh} frame")
    template = crop_patch(frame, box, cfg.template_size, cfg.context)
    template_features = extract_features(params.backbone, template * DTYPE(PIXEL_SCALE))
    queues = params.backbone.new_queues()
    search = crop_patch(frame, box, cfg.search_size, cfg.context,
                        scale=cfg.search_size / cfg.template_size)
    r1 = _similarity(params, search, template_features, queues)
    prior0 = init_prior(r1, params.attrans, cfg)
    refined, prior1 = step(prior0, r1, params.attrans, cfg, probe)
    return TrackerState(cfg, template_features, queues, prior1, 1, box, (fh, fw), refined)


def track(state: TrackerState, frame: np.ndarray, params: ModelParams,
          probe: Optional[Instrument] = None, reset_prior: bool = False) -> Tuple[BBox, float]:
    """Process the next frame; returns the predicted box and its foreground score.

    ``reset_prior`` re-derives the prior from this frame's similarity map
    before the update, cutting all temporal carry-over in the transformer.
    """
    if state is None or state.prior is None:
        raise StateError("track() called before init()")
    cfg = state.config
    side_scale = cfg.search_size / cfg.template_size
    search = crop_patch(frame, state.last_box, cfg.search_size, cfg.context, scale=side_scale)
    r = _similarity(params, search, state.template_features, state.queues)
    prior = init_prior(r, params.attrans, cfg) if reset_prior else state.prior
    refined, new_prior = step(prior, r, params.attrans, cfg, probe)
    out = run_heads(refined, params.head)
    if not (np.isfinite(out.cls).all() and np.isfinite(out.reg).all()):
        raise NumericError("head produced non-finite output")
    i, j, score = best_cell(out.cls)
    cx, cy, w, h = decode_cell(i, j, out.reg[:, i, j], cfg.total_stride, cfg.map_size, cfg.search_size)
    scale = crop_side(state.last_box, cfg.context) * side_scale / cfg.search_size
    half = cfg.search_size / 2.0
    fh, fw = frame.shape[:2]
    box = clamp_box(BBox(state.last_box.cx + (cx - half) * scale,
                         state.last_box.cy + (cy - half) * scale,
                         w * scale, h * scale), fw, fh)
    state.prior = new_prior
    state.last_box = box
    state.frame_index += 1
    state.frame_shape = (fh, fw)
    state.last_refined = refined
    return box, score


class Tracker:
    """Convenience wrapper holding weights and one sequence's state."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.state: Optional[TrackerState] = None

    def init(self, frame, box: BBox, probe=None) -> None:
        self.state = init(frame, box, self.params, probe)

    def track(self, frame, probe=None, reset_prior: bool = False):
        if self.state is None:
            raise StateError("track() called before init()")
        return track(self.state, frame, self.params, probe, reset_prior)

    def reset(self) -> None:
        self.state = None
