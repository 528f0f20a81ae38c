"""Command line: simulate, calibrate, evaluate, export-ply.

Exit codes: 0 success, 1 other error, 2 disconnected interaction graph,
3 initialization stuck, 4 numerical failure during refinement.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

from . import __version__
from .connectivity import build_interaction_graph, fr_variables, select_reference, to_dot
from .dataset import SCHEMA_VERSION, dumps, load_dataset, save_dataset
from .errors import CalibrationError, Disconnected, MismatchedIds, NumericalFailure, Stuck
from .metrics import evaluate
from .pipeline import CalibrationOptions, calibrate_frs, check_connected, prepare, quality
from .ply_export import export_ply
from .simulator import PRESET_NAMES, generate_scene, preset
from .solution import load_solution, save_solution

log = logging.getLogger("rigcal")

EXIT_OK, EXIT_ERROR, EXIT_DISCONNECTED, EXIT_STUCK, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def _options(args) -> CalibrationOptions:
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    doc.setdefault("threads", args.threads)
    return CalibrationOptions.from_dict(doc)


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    scene = generate_scene(preset(args.preset, args.seed, args.sigma, args.dropout))
    out = _outdir(args)
    save_dataset(scene.dataset, out / "dataset.json")
    save_solution(out / "ground_truth.json", scene.truth, patterns=scene.dataset.patterns)
    d = scene.dataset
    print(f"{args.preset}: {len(d.cameras)} cameras, {len(d.patterns)} patterns, {d.time_count} times, "
          f"{len(d.detections)} detections -> {out}")
    return EXIT_OK


def _schedule_summary(schedule) -> dict:
    kinds = Counter(s["task_kind"] for s in schedule)
    return {"singles": kinds.get("single", 0), "pairs": kinds.get("pair", 0), "steps": schedule}


def cmd_calibrate(args) -> int:
    t0 = time.perf_counter()
    out = _outdir(args)
    dataset = load_dataset(args.dataset)
    opts = _options(args)
    frs, dropped = prepare(dataset, opts)

    if args.emit_graph:
        reference = None
        try:
            check_connected(frs)
            reference = select_reference(frs)
        except Disconnected:
            pass
        Path(args.emit_graph).write_text(to_dot(build_interaction_graph(frs), reference), encoding="utf-8")

    init_log = open(args.log_init, "w", encoding="utf-8") if args.log_init else None
    try:
        on_step = (lambda rec: init_log.write(json.dumps(rec) + "\n")) if init_log else None
        result = calibrate_frs(frs, opts, on_step)
    finally:
        if init_log:
            init_log.close()

    step4, step5 = quality(result.initial, frs), quality(result.final, frs)
    patterns = dataset.patterns
    save_solution(out / "solution_step4.json", result.initial.values, result.reference, patterns)
    save_solution(out / "solution.json", result.final.values, result.reference, patterns)
    report = {
        "schema_version": SCHEMA_VERSION,
        "dataset": {
            "cameras": len(dataset.cameras),
            "patterns": len(dataset.patterns),
            "times": dataset.time_count,
            "detections": len(dataset.detections),
            "frs": len(frs),
            "dropped": dropped,
        },
        "reference": {"pattern": result.reference[0], "time": result.reference[1]},
        "components": 1,
        "schedule": _schedule_summary(result.schedule),
        "step4": step4,
        "step5": step5,
        "refinement": result.refinement.as_dict(),
        "poses": {str(v): result.final.values[v].matrix.tolist() for v in sorted(result.final.values)},
    }
    (out / "report.json").write_text(dumps(report), encoding="utf-8")
    # wall-clock time lives apart from the report so that reports are reproducible byte for byte
    (out / "timing.json").write_text(dumps({"run_time_s": time.perf_counter() - t0}), encoding="utf-8")
    print(f"rrmse {step4['rrmse']:.6g} -> {step5['rrmse']:.6g} px ({result.refinement.termination}); "
          f"reference pattern {result.reference[0]}, time {result.reference[1]} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    values, _, _ = load_solution(args.solution)
    dataset = load_dataset(args.dataset)
    frs, _ = prepare(dataset, _options(args))
    missing = sorted({v for fr in frs for v in fr_variables(fr)} - values.keys())
    if missing:
        raise MismatchedIds(f"solution lacks {len(missing)} variable(s) used by the dataset: "
                            + ", ".join(map(str, missing)))
    metrics = evaluate(values, frs)
    doc = {"schema_version": SCHEMA_VERSION, **metrics}
    out = _outdir(args)
    (out / "metrics.json").write_text(dumps(doc), encoding="utf-8")
    print(f"ae {metrics['ae']:.6g}, rrmse {metrics['rrmse']:.6g} px, median rae {metrics['rae_median']:.6g} mm^2 "
          f"over {metrics['rae_count']} points -> {out / 'metrics.json'}")
    return EXIT_OK


def cmd_export_ply(args) -> int:
    values, reference, patterns = load_solution(args.solution)
    path = Path(args.out or "scene.ply")
    path.parent.mkdir(parents=True, exist_ok=True)
    ref_time = reference[1] if reference else None
    n = export_ply(path, values, patterns, virtual=args.virtual, reference_time=ref_time, size=args.size)
    print(f"{n} vertices -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (file for export-ply)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--threads", type=int, default=1, help="worker threads for single-view pose estimation")
    common.add_argument("--config", help="JSON with lambda0, max_iters, gate_px, diversity_rad overrides")

    parser = argparse.ArgumentParser(prog="rigcal", description="Camera network extrinsic calibration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset and its ground truth")
    p.add_argument("--preset", required=True, choices=PRESET_NAMES)
    p.add_argument("--sigma", type=float, default=0.0, help="corner noise std (px)")
    p.add_argument("--dropout", type=float, default=0.0, help="probability a visible pattern is missed")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="solve camera, pattern and rig poses")
    p.add_argument("dataset")
    p.add_argument("--emit-graph", metavar="DOT", help="write the interaction graph in Graphviz format")
    p.add_argument("--log-init", metavar="JSONL", help="write one line per initialization solve")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", parents=[common], help="metrics of a solution against a dataset")
    p.add_argument("solution")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-ply", parents=[common], help="camera pyramids and pattern points as PLY")
    p.add_argument("solution")
    p.add_argument("--virtual", action="store_true", help="one pyramid per time for a single-camera solution")
    p.add_argument("--size", type=float, default=50.0, help="pyramid depth (mm)")
    p.set_defaults(func=cmd_export_ply)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Disconnected as e:
        print(f"error: {e}", file=sys.stderr)
        for c in e.components:
            print(f"  component {c['component']}: cameras {c['cameras']}, patterns {c['patterns']}, "
                  f"times {c['times']} ({c['fr_count']} FRs)", file=sys.stderr)
        return EXIT_DISCONNECTED
    except Stuck as e:
        print(f"error: initialization stuck: {e}", file=sys.stderr)
        return EXIT_STUCK
    except NumericalFailure as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CalibrationError, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
