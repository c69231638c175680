"""Per-frame latency benchmark on a preloaded synthetic sequence."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import List

import numpy as np

from .config import TrackerConfig
from .model import ModelParams, init_model
from .pipeline import BBox, Tracker
from .synth import generate


@dataclass
class BenchReport:
    latencies: List[float]  # seconds, one per tracked frame (frame 1 is init)
    state_bytes: List[int]

    @property
    def median_ms(self) -> float:
        return float(np.median(self.latencies)) * 1e3

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.latencies, 95)) * 1e3

    @property
    def fps(self) -> float:
        return 1e3 / self.median_ms

    @property
    def peak_state_bytes(self) -> int:
        return max(self.state_bytes)

    def summary(self) -> str:
        return (f"frames={len(self.latencies)} median_ms={self.median_ms:.3f} p95_ms={self.p95_ms:.3f} "
                f"fps={self.fps:.1f} peak_state_bytes={self.peak_state_bytes}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "latency_ms", "fps", "state_bytes", "median_ms", "p95_ms", "median_fps"])
            for i, (lat, size) in enumerate(zip(self.latencies, self.state_bytes), 1):
                w.writerow([i, f"{lat * 1e3:.4f}", f"{1.0 / lat:.2f}", size,
                            f"{self.median_ms:.4f}", f"{self.p95_ms:.4f}", f"{self.fps:.2f}"])


def bench(config: TrackerConfig, n_frames: int, params: ModelParams | None = None,
          seed: int = 0) -> BenchReport:
    """Time ``n_frames`` frames (frame 1 is the init call). Disk I/O is excluded."""
    params = params or init_model(config, seed)
    size = max(4 * config.search_size, 64)
    seq = generate(seed, n_frames, (size, size))
    tracker = Tracker(params)
    latencies, sizes = [], []
    t0 = time.perf_counter()
    tracker.init(seq.frames[0], BBox.from_xywh(*seq.groundtruth[0]))
    latencies.append(time.perf_counter() - t0)
    sizes.append(len(tracker.state.serialize()))
    for frame in seq.frames[1:]:
        t0 = time.perf_counter()
        tracker.track(frame)
        latencies.append(time.perf_counter() - t0)
        sizes.append(len(tracker.state.serialize()))
    return BenchReport(latencies, sizes)
