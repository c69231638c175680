"""Quick invariant checks runnable from the command line (``tempotrack selftest``)."""
from __future__ import annotations

import dataclasses
from typing import Callable, List, Tuple

import numpy as np

from . import archive, metrics
from .attrans import Instrument, encode, attention_config, TemporalPrior
from .backbone import ConvParams, TemporalContextQueue, extract_features
from .config import TrackerConfig, Toggles
from .model import flatten_params, init_model, unflatten_params
from .numerics import AttentionConfig, AttentionParams, kernels, oracles
from .runner import run_sequence
from .pipeline import BBox
from .synth import generate

Check = Callable[[np.random.Generator], Tuple[bool, str]]
CHECKS: List[Tuple[str, Check]] = []


def check(name: str):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _f32(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


@check("conv2d matches loop oracle")
def _conv(rng):
    worst = 0.0
    for _ in range(10):
        x, w, b = _f32(rng, 2, 6, 6), _f32(rng, 3, 2, 3, 3), _f32(rng, 3)
        s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        worst = max(worst, float(np.abs(kernels.conv2d(x, w, b, s, p) - oracles.conv2d(x, w, b, s, p)).max()))
    return worst <= 1e-5, f"max abs err {worst:.2e}"


@check("depthwise_xcorr matches loop oracle")
def _xcorr(rng):
    worst = 0.0
    for _ in range(10):
        s, t = _f32(rng, 3, 7, 7), _f32(rng, 3, 3, 3)
        worst = max(worst, float(np.abs(kernels.depthwise_xcorr(s, t) - oracles.depthwise_xcorr(s, t)).max()))
    return worst <= 1e-5, f"max abs err {worst:.2e}"


@check("multi-head attention matches per-head oracle")
def _mha(rng):
    cfg = AttentionConfig(6, 12)
    worst = 0.0
    for _ in range(5):
        p = AttentionParams(*(_f32(rng, 12, 12) * 0.3 for _ in range(4)))
        q, k, v = _f32(rng, 5, 12), _f32(rng, 4, 12), _f32(rng, 4, 12)
        got = kernels.multi_head_attention(q, k, v, p, cfg)
        worst = max(worst, float(np.abs(got - oracles.multi_head_attention(q, k, v, p, 6)).max()))
    return worst <= 1e-5, f"max abs err {worst:.2e}"


@check("attention rows sum to one")
def _rows(rng):
    probe = Instrument()
    cfg = AttentionConfig(6, 12)
    p = AttentionParams(*(_f32(rng, 12, 12) for _ in range(4)))
    x = _f32(rng, 9, 12) * 3
    kernels.multi_head_attention(x, x, x, p, cfg, probe)
    return probe.max_row_error <= 1e-5, f"max |row sum - 1| {probe.max_row_error:.2e}"


@check("layer_norm standardises rows")
def _ln(rng):
    x = _f32(rng, 6, 10) * 4 + 2
    y = kernels.layer_norm(x, np.ones(10, np.float32), np.zeros(10, np.float32)).astype(np.float64)
    m, v = float(np.abs(y.mean(1)).max()), float(np.abs(y.var(1) - 1).max())
    return m <= 1e-5 and v <= 1e-4, f"|mean| {m:.1e}, |var-1| {v:.1e}"


@check("queue fill rule (L=3)")
def _queue(rng):
    q = TemporalContextQueue(3, 2)
    d = [np.full(2, i, np.float32) for i in range(1, 5)]
    q.push(d[0])
    ok = np.array_equal(q.entries, np.stack([d[0]] * 3))
    for x in d[1:]:
        q.push(x)
    ok &= np.array_equal(q.entries, np.stack([d[3], d[2], d[1]]))
    return bool(ok), "t=1 (d1,d1,d1); t=4 (d4,d3,d2)"


@check("zero-initialised calibration equals plain convolution")
def _zero_init(rng):
    params = init_model(TrackerConfig.tiny(), seed=int(rng.integers(1 << 31)))
    queues = params.backbone.new_queues()
    plain = params.backbone.as_plain()
    worst = 0.0
    for _ in range(5):
        patch = rng.random((3, 32, 32)).astype(np.float32)
        a = extract_features(params.backbone, patch, queues)
        b = extract_features(plain, patch)
        worst = max(worst, float(np.abs(a - b).max()))
    return worst <= 1e-6, f"max abs diff {worst:.2e}"


@check("zeroed filter equals filter disabled")
def _gate_zero(rng):
    cfg = TrackerConfig.tiny()
    p = init_model(cfg, seed=int(rng.integers(1 << 31))).attrans
    zero = lambda c: ConvParams(np.zeros_like(c.weight), np.zeros_like(c.bias))
    ffn = p.filter_ffn
    p = dataclasses.replace(
        p, filter_conv=zero(p.filter_conv), fusion=zero(p.fusion),
        filter_ffn=type(ffn)(*(np.zeros_like(a) for a in dataclasses.astuple(ffn))))
    acfg = attention_config(cfg)
    prior = TemporalPrior(_f32(rng, cfg.num_tokens, 12), 0)
    same = True
    for _ in range(3):
        cur = _f32(rng, cfg.num_tokens, 12)
        on = encode(prior, cur, p, acfg, Toggles(filter_enabled=True))
        off = encode(prior, cur, p, acfg, Toggles(filter_enabled=False))
        same &= on.tokens.tobytes() == off.tokens.tobytes()
        prior = on
    return bool(same), "bitwise equal"


@check("tracker state size is constant")
def _memory(rng):
    cfg = TrackerConfig.tiny()
    from .pipeline import Tracker
    seq = generate(int(rng.integers(1 << 31)), 20, (64, 64))
    tr = Tracker(init_model(cfg, seed=1))
    tr.init(seq.frames[0], BBox.from_xywh(*seq.groundtruth[0]))
    sizes = set()
    for f in seq.frames[1:]:
        tr.track(f)
        sizes.add(len(tr.state.serialize()))
    return len(sizes) == 1, f"sizes {sorted(sizes)}"


@check("archive round trip is bit-exact")
def _archive(rng):
    cfg = TrackerConfig.tiny()
    params = init_model(cfg, seed=int(rng.integers(1 << 31)), calibration_scale=0.1)
    flat = flatten_params(params)
    back = flatten_params(unflatten_params(cfg, archive.load_bytes(archive.dump_bytes(flat))))
    ok = flat.keys() == back.keys() and all(flat[k].tobytes() == back[k].tobytes() for k in flat)
    return ok, f"{len(flat)} tensors"


@check("evaluation toy case")
def _metrics(rng):
    perfect = metrics.evaluate([(0, 0, 10, 10)] * 3, [(0, 0, 10, 10)] * 3)
    off = metrics.evaluate([(5, 5, 10, 10)], [(8, 9, 10, 10)])
    ok = perfect.auc == 1.0 and perfect.prec_at_20 == 1.0 and off.precision[20] == 1 and off.precision[4] == 0
    return bool(ok), "perfect auc=1, CLE 5 counted at 20 not 4"


@check("replay determinism")
def _replay(rng):
    cfg = TrackerConfig.tiny()
    seq = generate(int(rng.integers(1 << 31)), 8, (64, 64))
    params = init_model(cfg, seed=3, calibration_scale=0.05)
    box = BBox.from_xywh(*seq.groundtruth[0])
    a = run_sequence(params, seq.frames, box)
    b = run_sequence(params, seq.frames, box)
    return a[0] == b[0] and a[1] == b[1], "boxes and trace identical"


def selftest(seed: int = 0, verbose: bool = True) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name:<55} {detail}")
    if verbose:
        print("selftest:", "all checks passed" if all_ok else "FAILURES")
    return all_ok


def run_checks(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    return {name: fn(rng)[0] for name, fn in CHECKS}
