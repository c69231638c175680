"""Run a tracker over a whole sequence, optionally emitting a JSONL trace."""
from __future__ import annotations

import json
import time
from typing import List, Optional, Sequence

import numpy as np

from .attrans import Instrument
from .model import ModelParams
from .pipeline import BBox, Tracker


def _record(frame: int, box: BBox, score: float, probe: Instrument, prior: np.ndarray,
            latency: Optional[float]) -> dict:
    gates = [float(g.mean()) for g in probe.gates]
    rec = {
        "frame": frame,
        "box": [float(v) for v in box.to_xywh()],
        "score": score,
        "gate_mean": gates[-1] if gates else None,
        "prior_norm": float(np.linalg.norm(prior.astype(np.float64))),
        "attn_rows": probe.rows_checked,
        "attn_max_row_error": probe.max_row_error,
    }
    if latency is not None:
        rec["latency_ms"] = latency * 1e3
    return rec


def run_sequence(params: ModelParams, frames: Sequence[np.ndarray], init_box: BBox,
                 timing: bool = False):
    """Track ``frames`` from ``init_box``; returns ``(boxes_xywh, trace_records, scores)``.

    Frame 1's box is the initial box. Wall-clock latency only enters the trace
    when ``timing`` is set, so untimed traces replay byte-for-byte.
    """
    tracker = Tracker(params)
    probe = Instrument()
    t0 = time.perf_counter()
    tracker.init(frames[0], init_box, probe)
    dt = time.perf_counter() - t0
    boxes: List[tuple] = [init_box.to_xywh()]
    scores = [1.0]
    trace = [_record(1, init_box, 1.0, probe, tracker.state.prior.tokens, dt if timing else None)]
    for idx, frame in enumerate(frames[1:], start=2):
        probe = Instrument()
        t0 = time.perf_counter()
        box, score = tracker.track(frame, probe)
        dt = time.perf_counter() - t0
        boxes.append(box.to_xywh())
        scores.append(score)
        trace.append(_record(idx, box, score, probe, tracker.state.prior.tokens, dt if timing else None))
    return boxes, trace, scores


def dump_trace(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
