"""Deterministic synthetic tracking sequences and their on-disk format.

A textured rectangle moves over a noise background. A script file drives
scripted events, one per line (frames are 1-based)::

    target X Y W H        # initial top-left box (default: centred, quarter size)
    velocity F VX VY      # from frame F on, move by (VX, VY) px per frame
    occlude F K           # frames F..F+K-1: target overdrawn, ground truth unchanged
    shift F DX DY         # from frame F on, whole image offset by a further (DX, DY)
    blur F K R            # frames F..F+K-1: box filter of radius R

On disk a sequence is ``frame_%06d.ppm`` (binary P6) plus ``groundtruth.txt``
with one ``x,y,w,h`` line per frame.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, ScriptError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 stream; ``block(n)`` equals ``n`` successive ``next()`` calls."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    @staticmethod
    def _mix(z):
        with np.errstate(over="ignore"):
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            return z ^ (z >> np.uint64(31))

    def next(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def block(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
            z = np.uint64(self.state) + steps
        self.state = (self.state + n * GOLDEN) & MASK64
        return self._mix(z)

    def uniform(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return ((self.block(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53).reshape(shape)


@dataclass
class Script:
    target: Tuple[int, int, int, int] | None = None
    velocity: List[Tuple[int, float, float]] = field(default_factory=list)
    occlude: List[Tuple[int, int]] = field(default_factory=list)
    shift: List[Tuple[int, int, int]] = field(default_factory=list)
    blur: List[Tuple[int, int, int]] = field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "Script":
        s = cls()
        arity = {"target": 4, "velocity": 3, "occlude": 2, "shift": 3, "blur": 3}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            kind, args = line[0], line[1:]
            if kind not in arity or len(args) != arity[kind]:
                raise ScriptError(f"line {lineno}: cannot parse {raw.strip()!r}")
            try:
                if kind == "target":
                    s.target = tuple(int(a) for a in args)
                elif kind == "velocity":
                    s.velocity.append((int(args[0]), float(args[1]), float(args[2])))
                else:
                    getattr(s, kind).append(tuple(int(a) for a in args))
            except ValueError:
                raise ScriptError(f"line {lineno}: non-numeric argument in {raw.strip()!r}") from None
        return s


@dataclass
class SequenceData:
    frames: List[np.ndarray]  # H x W x 3 uint8
    groundtruth: List[Tuple[int, int, int, int]]


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return img
    k = 2 * radius + 1
    padded = np.pad(img.astype(np.float64), ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    win = sliding_window_view(padded, (k, k), axis=(0, 1))
    return np.rint(win.mean(axis=(3, 4))).astype(np.uint8)


def generate(seed: int, n_frames: int, size: Tuple[int, int], script: Script | None = None) -> SequenceData:
    """Render a sequence in memory. ``size`` is ``(W, H)``."""
    if n_frames < 1:
        raise InputError("n_frames must be >= 1")
    script = script or Script()
    width, height = size
    rng = SplitMix64(seed)

    coarse = rng.uniform(((height + 7) // 8, (width + 7) // 8, 3))
    coarse = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:height, :width]
    background = (40 + 120 * coarse + 40 * rng.uniform((height, width, 3))).astype(np.uint8)

    if script.target is not None:
        x0, y0, tw, th = script.target
    else:
        tw, th = max(width // 4, 2), max(height // 4, 2)
        x0, y0 = (width - tw) // 2, (height - th) // 2
    if tw < 1 or th < 1:
        raise ScriptError("target must be at least 1x1")
    checker = ((np.arange(th)[:, None] // 4 + np.arange(tw)[None, :] // 4) % 2)[:, :, None]
    tint = np.array([220.0, 60.0, 40.0])
    texture = (tint * (0.6 + 0.4 * checker) + 30 * rng.uniform((th, tw, 3))).clip(0, 255).astype(np.uint8)

    pos = np.array([float(x0), float(y0)])
    vel = np.zeros(2)
    offset = np.zeros(2, dtype=np.int64)
    velocity = sorted(script.velocity)
    shifts = sorted(script.shift)
    frames, gts = [], []
    for t in range(1, n_frames + 1):
        for f, vx, vy in velocity:
            if f == t:
                vel = np.array([vx, vy])
        for f, dx, dy in shifts:
            if f == t:
                offset += (dx, dy)
        if t > 1:
            pos = pos + vel
        img = np.roll(background, (int(offset[1]), int(offset[0])), axis=(0, 1)).copy()
        bx = int(np.floor(pos[0] + 0.5)) + int(offset[0])
        by = int(np.floor(pos[1] + 0.5)) + int(offset[1])
        x1, y1 = max(bx, 0), max(by, 0)
        x2, y2 = min(bx + tw, width), min(by + th, height)
        if x2 <= x1 or y2 <= y1:
            raise ScriptError(f"frame {t}: target left the frame entirely")
        img[y1:y2, x1:x2] = texture[y1 - by:y2 - by, x1 - bx:x2 - bx]
        if any(f <= t < f + k for f, k in script.occlude):
            shade = (90 + 40 * rng.uniform((y2 - y1, x2 - x1, 1))).astype(np.uint8)
            img[y1:y2, x1:x2] = shade
        for f, k, r in script.blur:
            if f <= t < f + k:
                img = _box_blur(img, r)
        noise = np.floor(rng.uniform(img.shape) * 9).astype(np.int16) - 4
        img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)
        frames.append(img)
        gts.append((x1, y1, x2 - x1, y2 - y1))
    return SequenceData(frames, gts)


# ------------------------------------------------------------------ disk I/O

def write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img, np.uint8).tobytes())


_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos, fields = 0, []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise InputError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise InputError(f"{path}: only 8-bit binary P6 is supported")
    w, h = int(fields[1]), int(fields[2])
    body = data[pos + 1:pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise InputError(f"{path}: truncated pixel data")
    return np.frombuffer(body, np.uint8).reshape(h, w, 3).copy()


def format_box(box: Sequence[float]) -> str:
    return ",".join(f"{v:g}" if float(v).is_integer() else f"{v:.4f}" for v in box)


def write_boxes(path, boxes) -> None:
    Path(path).write_text("".join(format_box(b) + "\n" for b in boxes))


def read_boxes(path) -> List[Tuple[float, float, float, float]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            vals = [float(v) for v in re.split(r"[,\s]+", line.strip())]
            if len(vals) != 4:
                raise InputError(f"{path}: expected 4 values per line, got {line!r}")
            out.append(tuple(vals))
    return out


def save_sequence(seq: SequenceData, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(seq.frames, 1):
        write_ppm(out / f"frame_{i:06d}.ppm", img)
    write_boxes(out / "groundtruth.txt", seq.groundtruth)
    return out


def load_sequence(seq_dir) -> SequenceData:
    d = Path(seq_dir)
    paths = sorted(d.glob("frame_*.ppm"))
    gt_path = d / "groundtruth.txt"
    gts = read_boxes(gt_path) if gt_path.exists() else []
    if gts and len(gts) != len(paths):
        raise InputError(f"{d}: {len(paths)} frames but {len(gts)} ground-truth lines")
    return SequenceData([read_ppm(p) for p in paths], gts)


def synth_sequence(seed: int, n_frames: int, size: Tuple[int, int], script: Script | None,
                   out_dir) -> Path:
    return save_sequence(generate(seed, n_frames, size, script), out_dir)
