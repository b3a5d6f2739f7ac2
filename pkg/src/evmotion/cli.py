"""``evmotion`` command-line entry point.

Every subcommand writes machine-readable JSON lines to stdout and a short
human summary to stderr. Exit codes: 0 ok, 2 usage, 3 input, 4 format,
5 numeric, 70 internal.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io as evio
from .bench import bench_encode, parallel_max_diff, synthetic_stream
from .encode import make_clip
from .errors import EvMotionError, InputError
from .simulate import SimulatorConfig, adaptive_upsample, simulate_events
from .scenes import synth_scene

INTERNAL_EXIT = 70


def _emit(record, out=None):
    line = json.dumps(record, sort_keys=True)
    print(line)
    if out is not None:
        out.write(line + "\n")


def _note(msg):
    print(msg, file=sys.stderr)


def _read_stream(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"event file not found: {path}")
    if path.suffix.lower() == ".csv":
        return evio.csv_to_events(path)
    return evio.read_events(path)


def _sim_config(args):
    return SimulatorConfig(c_pos=args.cpos, c_neg=args.cneg, refractory_us=args.refractory_us,
                           log_eps=args.log_eps, max_interp=args.max_interp)


def _clip_bounds(value):
    if value < 0:
        raise InputError(f"--clip must be >= 0 (0 disables clipping), got {value}")
    return (-value, value) if value > 0 else None


# subcommands

def cmd_simulate(args):
    cfg = _sim_config(args)
    if args.frames:
        seq = evio.read_frame_dir(args.frames)
    else:
        try:
            params = json.loads(args.params) if args.params else {}
        except json.JSONDecodeError as exc:
            raise InputError(f"--params is not valid JSON: {exc}") from None
        seq = synth_scene(args.scene, params, (args.width, args.height), args.duration_us, args.fps, args.seed)
        if args.save_frames:
            evio.write_frame_dir(seq, args.save_frames)
    t0 = time.perf_counter()
    stream = simulate_events(adaptive_upsample(seq, cfg), cfg)
    dt = time.perf_counter() - t0
    evio.write_events(stream, args.output)
    _note(f"{len(stream)} events ({len(stream) / dt if dt > 0 else 0.0:.0f} events/s) -> {args.output}")
    _emit({"command": "simulate", "events": len(stream), "polarity_sum": stream.polarity_sum(),
           "width": stream.width, "height": stream.height, "t_start": stream.t_start, "t_end": stream.t_end,
           "output": str(args.output)})


def cmd_encode(args):
    bounds = _clip_bounds(args.clip)
    stream = _read_stream(args.input)
    raw = make_clip(stream, args.mode, args.segments, args.bins, None, args.span_us, args.training, args.seed)
    arr = raw.to_array()
    if bounds is not None:
        clipped = np.clip(arr, *bounds)
        frac = float(np.mean(clipped != arr)) if arr.size else 0.0
    else:
        clipped, frac = arr, 0.0
    evio.write_voxels(clipped, args.output)
    _note(f"pre-clip mass {raw.mass():.6g} over {len(stream)} events, clipped fraction {frac:.4f} -> {args.output}")
    _emit({"command": "encode", "events": len(stream), "polarity_sum": stream.polarity_sum(),
           "pre_clip_mass": raw.mass(), "post_clip_mass": float(clipped.sum(dtype=np.float64)),
           "clipped_fraction": frac, "shape": list(arr.shape), "mode": args.mode, "output": str(args.output)})


def cmd_viz(args):
    stream = _read_stream(args.input)
    paths = evio.render_event_frames(stream, args.window_us, args.output)
    _note(f"wrote {len(paths)} frames to {args.output}")
    _emit({"command": "viz", "frames": len(paths), "events": len(stream), "output": str(args.output)})


def cmd_bench(args):
    if args.input:
        stream = _read_stream(args.input)
    else:
        stream = synthetic_stream(args.events, args.width, args.height, args.duration_us, args.seed)
    report = bench_encode(stream, args.bins, args.repeats, args.warmup, args.threads)
    if args.threads > 1:
        report["parallel_max_abs_diff"] = parallel_max_diff(stream, args.bins, args.threads)
    report["command"] = "bench"
    _note(f"{report['events']} events: median {report['median_ms']:.2f} ms, p95 {report['p95_ms']:.2f} ms, "
          f"{report['events_per_s']:.3g} events/s")
    if args.report:
        with open(args.report, "a") as fh:
            fh.write(json.dumps(report, sort_keys=True) + "\n")
    _emit(report)


def cmd_experiment(args):
    from .experiment import ExperimentSpec, run_experiment, spec_dict

    kw = dict(seeds=tuple(range(args.seed, args.seed + args.n_seeds)), alpha=args.alpha, segments=args.segments,
              bins=args.bins, c_pos=args.cpos, c_neg=args.cneg, refractory_us=args.refractory_us, clip=args.clip)
    for name in ("iterations", "lr", "n_train", "n_test", "n_classes", "batch_size"):
        value = getattr(args, name)
        if value is not None:
            kw[name] = value
    if args.domains is not None:
        kw["domains"] = ExperimentSpec().domains[:args.domains]
    spec = ExperimentSpec(**kw)
    _clip_bounds(spec.clip)

    def progress(seed, train, rows):
        _note(f"seed {seed} train {train}: " + ", ".join(f"{r['method']}->{r['test']} {r['accuracy']:.3f}"
                                                         for r in rows))

    res = run_experiment(spec, progress=progress)
    out = open(args.output, "w") if args.output else None
    try:
        _emit({"kind": "spec", **spec_dict(spec)}, out)
        for rec in res.records():
            _emit(rec, out)
    finally:
        if out:
            out.close()
    for s in res.summary:
        _note(f"{s['method']:8s} seen {s['seen']:.4f} unseen {s['unseen']:.4f}")
    _note(f"{res.seconds:.1f} s")


# parser

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _add_sim_flags(p):
    p.add_argument("--cpos", type=_positive_float, default=0.15, help="positive contrast threshold (log units)")
    p.add_argument("--cneg", type=_positive_float, default=0.15, help="negative contrast threshold (log units)")
    p.add_argument("--refractory-us", type=_nonneg_int, default=0, help="per-pixel dead time in microseconds")
    p.add_argument("--log-eps", type=_positive_float, default=1e-3)
    p.add_argument("--max-interp", type=_nonneg_int, default=16, help="cap on frames inserted per gap")


def _add_encode_flags(p):
    p.add_argument("--bins", type=_positive_int, default=3)
    p.add_argument("--segments", type=_positive_int, default=5)
    p.add_argument("--clip", type=float, default=0.5, help="symmetric clip bound; 0 disables clipping")


def build_parser():
    parser = argparse.ArgumentParser(prog="evmotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="convert frames to an EVT1 event file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames", help="directory of .pgm frames plus timestamps.txt")
    src.add_argument("--scene", choices=["moving_bar", "translating_texture", "static"], help="synthetic scene")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--params", help="scene parameters as a JSON object")
    p.add_argument("--width", type=_positive_int, default=32)
    p.add_argument("--height", type=_positive_int, default=32)
    p.add_argument("--duration-us", type=_positive_int, default=100_000)
    p.add_argument("--fps", type=_positive_float, default=1000.0)
    p.add_argument("--save-frames", help="also write the synthetic frames to this directory")
    p.add_argument("--seed", type=int, default=0)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("encode", help="encode an event file as a clip of voxel grids (VOX1)")
    p.add_argument("input", help="EVT1 or .csv event file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mode", choices=["uniform_T", "dense_window"], default="uniform_T")
    p.add_argument("--span-us", type=_positive_float, help="dense_window length (default: half the stream)")
    p.add_argument("--training", action="store_true", help="place dense windows at random (seeded)")
    p.add_argument("--seed", type=int, default=0)
    _add_encode_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("viz", help="render red/blue event frames as PPM images")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--window-us", type=_positive_int, default=10_000)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("bench", help="time voxel-grid encoding")
    p.add_argument("--input", help="event file to encode instead of a synthetic stream")
    p.add_argument("--events", type=_nonneg_int, default=1_000_000)
    p.add_argument("--width", type=_positive_int, default=346)
    p.add_argument("--height", type=_positive_int, default=260)
    p.add_argument("--duration-us", type=_positive_int, default=1_000_000)
    p.add_argument("--bins", type=_positive_int, default=3)
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for parallel encoding")
    p.add_argument("--repeats", type=_positive_int, default=20)
    p.add_argument("--warmup", type=_nonneg_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="append the JSON report line to this file")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("experiment", help="seen/unseen domain-shift experiment on synthetic scenes")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--n-seeds", type=_positive_int, default=5)
    p.add_argument("--alpha", type=float, default=100.0, help="distillation weight")
    p.add_argument("--iterations", type=_positive_int)
    p.add_argument("--lr", type=_positive_float)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--n-train", type=_positive_int)
    p.add_argument("--n-test", type=_positive_int)
    p.add_argument("--n-classes", type=_positive_int)
    p.add_argument("--domains", type=_positive_int, help="use only the first N default domains")
    p.add_argument("-o", "--output", help="also write the JSON lines to this file")
    _add_sim_flags(p)
    _add_encode_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except EvMotionError as exc:
        _note(f"evmotion: error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _note(f"evmotion: error: {exc}")
        return InputError.exit_code
    except Exception as exc:  # noqa: BLE001
        _note(f"evmotion: internal error: {type(exc).__name__}: {exc}")
        return INTERNAL_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
