"""Command-line entry point: ``salslam <subcommand> ...``.

Exit codes: 0 success, 2 parse or config error, 3 tracking lost,
4 degenerate geometry.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .entropy import EntropyGateConfig
from .errors import DegenerateGeometry, InputError, TrackingLost
from .evaluation import (
    RunSummary,
    compute_ate,
    emit_report,
    load_euroc_groundtruth,
    load_tum,
    write_tum,
)
from .pipeline import ScenarioConfig, generate_world, render_frame, run_odometry
from .saliency import DEFAULT_GAIN_FLOOR, filter_sequence, read_saliency_dir, write_saliency_dir

log = logging.getLogger("salslam")

EXIT_OK, EXIT_INPUT, EXIT_LOST, EXIT_DEGENERATE = 0, 2, 3, 4

CONFIG_FILE = "config.json"
GROUND_TRUTH_FILE = "groundtruth.tum"
SALIENCY_DIR = "saliency"
RESULT_FILE = "result.json"


def _ns(t: float) -> int:
    return int(round(t * 1e9))


def _json_default(o):
    if isinstance(o, (np.generic,)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _none_if_nan(x):
    return None if x is None or not np.isfinite(x) else float(x)


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args):
    cfg = ScenarioConfig.load(args.config)
    world = generate_world(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.to_json() + "\n")
    write_tum(world.ground_truth(), out / GROUND_TRUTH_FILE)
    write_saliency_dir(out / SALIENCY_DIR,
                       [(_ns(t), m) for t, m in zip(world.timestamps, world.saliency_maps)])
    with open(out / "landmarks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["landmark_id", "x", "y", "z", "salient"])
        for j, (X, s) in enumerate(zip(world.landmarks, world.salient)):
            w.writerow([j, *(repr(float(v)) for v in X), int(s)])
    with open(out / "observations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_id", "timestamp", "landmark_id", "u", "v", "weight", "outlier"])
        for k in range(world.n_frames):
            b = render_frame(world, k)
            for o, bad in zip(b.observations, b.outlier):
                w.writerow([k, repr(b.timestamp), o.landmark_id, repr(float(o.pixel[0])),
                            repr(float(o.pixel[1])), repr(o.weight), int(bad)])
    print(f"wrote scenario with {world.n_frames} frames and {len(world.landmarks)} landmarks "
          f"to {out}")
    return EXIT_OK


def _load_scenario(directory):
    directory = Path(directory)
    cfg = ScenarioConfig.load(directory / CONFIG_FILE)
    world = generate_world(cfg)
    sal_dir = directory / SALIENCY_DIR
    if not sal_dir.is_dir():
        raise InputError(f"{sal_dir}: saliency directory missing")
    stamped = read_saliency_dir(sal_dir)
    expected = [_ns(t) for t in world.timestamps]
    if [ts for ts, _ in stamped] != expected:
        raise InputError(f"{sal_dir}: expected {len(expected)} maps stamped like the scenario "
                         f"frames, found {len(stamped)}")
    K = cfg.intrinsics
    for ts, m in stamped:
        if m.shape != (K.height, K.width):
            raise InputError(f"{sal_dir}/{ts}.pgm: map is {m.width}x{m.height}, "
                             f"camera is {K.width}x{K.height}")
    return cfg, world, [m for _, m in stamped]


def _write_run(out, seq, method, cfg, world, result, status):
    out.mkdir(parents=True, exist_ok=True)
    if result.poses:
        write_tum(result.trajectory(), out / "trajectory.tum")
    kfs = [{"frame_id": r.frame_id, "covariance_det": r.covariance_det, "entropy": r.entropy,
            "alpha": r.alpha} for r in result.keyframes]
    _dump(out / "keyframes.json", kfs)
    doc = {"seq": seq, "method": method, "status": status, "config": cfg.to_dict(),
           "weighting": result.weighting, "gate": result.gate.enabled,
           "alpha_threshold": result.gate.threshold, "heuristics": result.heuristics,
           "frames_tracked": len(result.poses), "keyframes": len(result.keyframes),
           "beta": result.beta(), "total_tracking_time_s": result.total_tracking_time,
           "mean_track_time_s": result.mean_tracking_time,
           "frame_log": [vars(e) for e in result.frame_log]}
    if status == "ok":
        ate = compute_ate(result.trajectory(), world.ground_truth())
        doc.update(ate_mean_m=ate.mean, ate_rmse_m=ate.rmse, ate_scale=ate.alignment.scale)
    _dump(out / RESULT_FILE, doc)
    return doc


def cmd_run(args):
    cfg, world, maps = _load_scenario(args.scenario)
    gate = EntropyGateConfig(args.alpha_threshold, enabled=args.gate == "on")
    seq = args.seq or Path(args.scenario).resolve().name
    method = args.method or f"{args.weighting}-gate-{args.gate}"
    out = Path(args.out)
    try:
        result = run_odometry(world, cfg, gate, args.weighting, heuristics=not args.no_heuristics,
                              saliency_maps=maps)
    except TrackingLost as exc:
        if exc.partial is not None:
            _write_run(out, seq, method, cfg, world, exc.partial, "tracking_lost")
        raise
    doc = _write_run(out, seq, method, cfg, world, result, "ok")
    print(f"{seq} {method}: ate_rmse_m={doc['ate_rmse_m']:.6g} keyframes={doc['keyframes']}")
    return EXIT_OK


def _is_euroc(path):
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                return "," in s
    return False


def cmd_eval(args):
    est = load_tum(args.est)
    ref = load_euroc_groundtruth(args.ref) if _is_euroc(args.ref) else load_tum(args.ref)
    ate = compute_ate(est, ref, with_scale=not args.no_scale, max_dt=args.max_dt)
    print(f"matched_pairs={ate.matched_pairs}")
    print(f"ate_mean_m={ate.mean:.6g}")
    print(f"ate_rmse_m={ate.rmse:.6g}")
    print(f"scale={ate.alignment.scale:.6g}")
    return EXIT_OK


def cmd_compare(args):
    summaries = []
    for d in args.runs:
        path = Path(d) / RESULT_FILE
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: {exc}") from None
        if doc.get("status") != "ok":
            raise InputError(f"{path}: run did not complete ({doc.get('status')})")
        summaries.append(RunSummary(doc["seq"], doc["method"], doc["ate_mean_m"], doc["ate_rmse_m"],
                                    doc["keyframes"], _none_if_nan(doc["beta"]),
                                    doc["mean_track_time_s"],
                                    {"frame_log": doc["frame_log"], "run_dir": str(d)}))
    report = Path(args.report)
    json_path = report.with_suffix(".json") if args.json else None
    text = emit_report(summaries, report, json_path, omit_timing=args.omit_timing)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_saliency_filter(args):
    stamped = read_saliency_dir(args.inp)
    if not stamped:
        raise InputError(f"{args.inp}: no .pgm files")
    filtered = filter_sequence((m for _, m in stamped), args.gain_floor)
    write_saliency_dir(args.out, [(ts, m) for (ts, _), m in zip(stamped, filtered)])
    print(f"filtered {len(stamped)} maps into {args.out}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salslam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="materialise a synthetic scenario")
    s.add_argument("--config", required=True, help="scenario JSON")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run odometry on a materialised scenario")
    s.add_argument("--scenario", required=True, help="directory written by synth")
    s.add_argument("--weighting", choices=("uniform", "saliency"), default="saliency")
    s.add_argument("--gate", choices=("on", "off"), default="on")
    s.add_argument("--alpha-threshold", type=float, default=0.9)
    s.add_argument("--no-heuristics", action="store_true",
                   help="let the entropy gate alone select keyframes")
    s.add_argument("--seq", help="sequence label (default: scenario directory name)")
    s.add_argument("--method", help="method label (default: <weighting>-gate-<on|off>)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="ATE of a TUM trajectory against ground truth")
    s.add_argument("--est", required=True, help="estimated trajectory (TUM)")
    s.add_argument("--ref", required=True, help="ground truth (TUM or EuRoC CSV)")
    s.add_argument("--no-scale", action="store_true", help="rigid instead of similarity alignment")
    s.add_argument("--max-dt", type=float, default=0.02, help="association tolerance (s)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="comparison report over run directories")
    s.add_argument("--runs", nargs="+", required=True,
                   help="run directories; the first per sequence is the baseline")
    s.add_argument("--report", required=True, help="CSV path")
    s.add_argument("--json", action="store_true", help="also write a JSON mirror next to the CSV")
    s.add_argument("--omit-timing", action="store_true",
                   help="leave wall-clock columns blank for byte-reproducible output")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("saliency-filter", help="adaptive EMA over a saliency map sequence")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--gain-floor", type=float, default=DEFAULT_GAIN_FLOOR)
    s.set_defaults(func=cmd_saliency_filter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrackingLost as exc:
        print(f"tracking lost: {exc}", file=sys.stderr)
        return EXIT_LOST
    except DegenerateGeometry as exc:
        print(f"degenerate geometry: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
