"""Command-line entry point: ``tempotrack {synth,init-weights,run,eval,bench,selftest}``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .archive import load_params, save_params
from .bench import bench
from .config import load_config
from .metrics import evaluate
from .model import init_model
from .pipeline import BBox
from .runner import dump_trace, run_sequence
from .selftest import selftest
from .synth import Script, load_sequence, read_boxes, synth_sequence, write_boxes


def _size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def cmd_synth(args) -> int:
    script = Script.parse(Path(args.script).read_text()) if args.script else None
    out = synth_sequence(args.seed, args.frames, args.size, script, args.out)
    print(f"wrote {args.frames} frames to {out}")
    return 0


def cmd_init_weights(args) -> int:
    cfg = load_config(args.config)
    save_params(init_model(cfg, args.seed, args.calibration_scale), args.out)
    print(f"wrote weights to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.toggle:
        cfg = dataclasses.replace(cfg, toggles=cfg.toggles.with_overrides(args.toggle))
    params = load_params(args.weights, cfg)
    seq = load_sequence(args.seq)
    if not seq.frames:
        print(f"no frames in {args.seq}", file=sys.stderr)
        return 2
    if args.init:
        box = BBox.parse(args.init)
    elif seq.groundtruth:
        box = BBox.from_xywh(*seq.groundtruth[0])
    else:
        print("--init is required when the sequence has no groundtruth.txt", file=sys.stderr)
        return 2
    boxes, trace, _ = run_sequence(params, seq.frames, box, timing=args.trace_timing)
    write_boxes(args.out, boxes)
    if args.trace:
        Path(args.trace).write_text(dump_trace(trace))
    if seq.groundtruth:
        curves = evaluate(boxes, seq.groundtruth)
        print(f"auc={curves.auc:.4f} prec@20={curves.prec_at_20:.4f}")
    return 0


def cmd_eval(args) -> int:
    curves = evaluate(read_boxes(args.pred), read_boxes(args.gt))
    print(f"auc={curves.auc:.4f} prec@20={curves.prec_at_20:.4f}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    params = load_params(args.weights, cfg) if args.weights else None
    report = bench(cfg, args.frames, params, seed=args.seed)
    report.write_csv(args.out)
    print(report.summary())
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest(args.seed) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempotrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--size", type=_size, default=(128, 128), help="WxH")
    p.add_argument("--script", help="event script file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init-weights", help="write randomly initialised weights")
    p.add_argument("--config", required=True, help="config file, or 'tiny' / 'paper'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--calibration-scale", type=float, default=0.0,
                   help="std of the calibration generators (0 = zero init)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("run", help="track a sequence")
    p.add_argument("--weights", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--init", help="initial box x,y,w,h (default: first ground-truth line)")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write a JSONL trace here")
    p.add_argument("--trace-timing", action="store_true", help="include wall-clock latency in the trace")
    p.add_argument("--toggle", action="append", default=[],
                   help="filter=on|off, query=previous|current, init=conv|random")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score predicted boxes against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-frame latency benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
