"""Command-line interface: ``ghosteval simulate | perturb | evaluate | specs``."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import io
from .errors import GhostEvalError
from .model import EvalConfig, EvaluationReport, Rigid, SensorModel, arclength

log = logging.getLogger("ghosteval")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class InputError(Exception):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ghosteval", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic benchmark from scene and trajectory specs")
    s.add_argument("scene_spec")
    s.add_argument("trajectory_spec")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--range-noise-sigma", type=float, default=None,
                   help="override the trajectory spec's Gaussian range noise (m)")

    s = sub.add_parser("perturb", help="inject 6:1:1 pose disturbances into a trajectory")
    s.add_argument("trajectory_in")
    s.add_argument("--mode", choices=["XY", "Z", "XYZ"], required=True,
                   help="XYZ disturbs both at once (stress test, not the standard protocol)")
    s.add_argument("--out", required=True, help="perturbed trajectory path")
    s.add_argument("--plan-out", required=True, help="disturbance plan path (ground-truth areas)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pitch", type=float, default=None, help="distance between area starts (m)")
    s.add_argument("--segment-length", type=float, default=None, help="area length (m)")

    s = sub.add_parser("evaluate", help="detect bad poses of a trajectory from its clouds")
    s.add_argument("trajectory")
    s.add_argument("clouds_dir")
    s.add_argument("--report", required=True, help="report JSON path")
    s.add_argument("--table", help="per-pose TSV path (default: report path with .tsv)")
    s.add_argument("--figure", help="figure PNG path (default: report path with .png)")
    s.add_argument("--no-figure", action="store_true")
    s.add_argument("--plan", help="disturbance plan to outline in the figure")
    s.add_argument("--ghosts", metavar="DIR", help="write one PLY per bad pose into DIR")
    s.add_argument("--config", help="EvalConfig file (JSON or 'key value' lines)")
    s.add_argument("--manifest", help="benchmark manifest with the sensor model "
                                      "(default: manifest.json next to the clouds directory)")
    s.add_argument("--n-lasers", type=int)
    s.add_argument("--angular-resolution-deg", type=float)
    s.add_argument("--lidar-height", type=float)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--seed", type=int, default=None, help="accepted for symmetry; evaluation is deterministic")
    for f in fields(EvalConfig):
        s.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=int if f.type in (int, "int") else float,
                       default=None, help=f"default {f.default}")

    s = sub.add_parser("specs", help="copy the bundled 500 m loop scene and trajectory specs")
    s.add_argument("out_dir")
    return p


def _load_config(args) -> EvalConfig:
    cfg = io.read_config(args.config) if args.config else EvalConfig()
    over = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(EvalConfig)
            if getattr(args, f"cfg_{f.name}") is not None}
    return replace(cfg, **over) if over else cfg


def _load_sensor(args) -> SensorModel:
    manifest = Path(args.manifest) if args.manifest else Path(args.clouds_dir).resolve().parent / "manifest.json"
    if manifest.exists():
        sensor = SensorModel.from_dict(json.loads(manifest.read_text())["sensor"])
    elif args.manifest:
        raise InputError(f"manifest not found: {manifest}")
    else:
        sensor = SensorModel()
    over = {}
    if args.n_lasers is not None:
        over["n_lasers"] = args.n_lasers
    if args.angular_resolution_deg is not None:
        over["angular_resolution_deg"] = args.angular_resolution_deg
    if args.lidar_height is not None:
        over["lidar_extrinsic"] = Rigid(translation=[0.0, 0.0, args.lidar_height])
    return replace(sensor, **over) if over else sensor


def cmd_simulate(args) -> int:
    from .synthetic import build_benchmark

    scene = io.parse_scene(args.scene_spec)
    spec = io.parse_trajectory_spec(args.trajectory_spec)
    if args.range_noise_sigma is not None:
        spec = replace(spec, range_noise_sigma_m=args.range_noise_sigma)
    poses, clouds = build_benchmark(scene, spec, seed=args.seed,
                                    progress=lambda k: log.debug("simulated frame %d", k))
    io.write_benchmark(args.out_dir, poses, clouds, spec.sensor, args.seed,
                       extra={"range_noise_sigma_m": spec.range_noise_sigma_m})
    log.info("wrote %d frames to %s", len(poses), args.out_dir)
    return EXIT_OK


def cmd_perturb(args) -> int:
    from .synthetic import DEFAULT_PITCH_M, SEGMENT_LENGTH_M, inject_disturbance, make_plan

    poses = io.read_trajectory(args.trajectory_in)
    if len(poses) < 2:
        raise InputError("trajectory needs at least two poses")
    plan = make_plan(arclength(poses)[-1], args.mode, seed=args.seed,
                     segment_length_m=args.segment_length or SEGMENT_LENGTH_M,
                     pitch_m=args.pitch or DEFAULT_PITCH_M)
    io.write_trajectory(args.out, inject_disturbance(poses, plan))
    io.write_plan(args.plan_out, plan)
    log.info("%d disturbance areas written to %s", len(plan), args.plan_out)
    return EXIT_OK


def _companion(report_path: str, explicit: str | None, suffix: str) -> Path:
    return Path(explicit) if explicit else Path(report_path).with_suffix(suffix)


def cmd_evaluate(args) -> int:
    from .evaluator import MapContext

    if args.threads < 1:
        raise InputError("--threads must be >= 1")
    cfg = _load_config(args)
    sensor = _load_sensor(args)
    poses = io.read_trajectory(args.trajectory)
    clouds = io.read_cloud_dir(args.clouds_dir)
    if len(clouds) != len(poses):
        raise InputError(f"{len(poses)} poses but {len(clouds)} cloud files")
    plan = io.read_plan(args.plan) if args.plan else None

    ctx = MapContext(poses, clouds, cfg, sensor)
    results = ctx.evaluate(threads=args.threads, progress=lambda k: log.debug("evaluated pose %d", k))
    report = EvaluationReport.from_stats([r.stats for r in results], cfg, sensor)

    io.write_report(args.report, report)
    io.write_pose_table(_companion(args.report, args.table, ".tsv"), report)
    if not args.no_figure:
        from .plotting import plot_report

        plot_report(_companion(args.report, args.figure, ".png"), report, poses, plan)
    if args.ghosts:
        out = io.ensure_dir(args.ghosts)
        for r in results:
            if r.stats.is_bad:
                io.export_ghosts_ply(out / f"pose_{r.stats.index:06d}.ply", r.ghost_points, r.frame_points)
    print(f"p_acc={report.p_acc:.6f} bad={len(report.bad_pose_indices)} "
          f"evaluated={report.n_evaluated} unevaluated={len(report.unevaluated_indices)}")
    return EXIT_OK


def cmd_specs(args) -> int:
    out = io.ensure_dir(args.out_dir)
    for name in ("loop_scene.txt", "loop_trajectory.txt"):
        shutil.copyfile(io.bundled_spec(name), out / name)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "perturb": cmd_perturb, "evaluate": cmd_evaluate, "specs": cmd_specs}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (GhostEvalError, InputError, OSError, ValueError) as e:
        print(f"ghosteval {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # pragma: no cover - last-resort guard
        log.exception("internal error")
        print(f"ghosteval {args.command}: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
