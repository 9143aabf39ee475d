"""Command line entry point: ``gsnbv run`` and ``gsnbv render``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .geometry import PickingRing, Viewpoint, project_to_ring, ring_point
from .harness import PLANNERS, config_for, run_trials, write_poses, write_report
from .scenarios import resolve_scenario
from .scene import render, write_depth_pgm, write_semantic_pgm

RENDER_STEP_DEG = 15.0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsnbv", description="Next-best-view planning on a simulated fruit scene.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run planning trials and write a CSV report")
    run.add_argument("--scenario", required=True, help="group1, group2 or a scenario JSON file")
    run.add_argument("--planner", choices=sorted(PLANNERS), default="gsnbv")
    run.add_argument("--trials", type=int, default=10)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="per-trial CSV path")
    run.add_argument("--dump-map", help="write the first trial's final map (SVXG)")
    run.add_argument("--dump-poses", help="write every trial's visited poses (JSON)")
    run.add_argument("--mask-dropout", type=float, default=None)
    run.add_argument("--gain-rays", type=int, default=None, help="pixel stride of gain rays")

    rnd = sub.add_parser("render", help="render depth and semantic images from one pose")
    rnd.add_argument("--scenario", required=True)
    rnd.add_argument(
        "--pose-index",
        type=int,
        default=0,
        help="0 is the initial pose; i > 0 steps i*15 deg counter-clockwise on the ring "
        "(or indexes the first trial of --poses)",
    )
    rnd.add_argument("--poses", help="poses JSON written by run --dump-poses")
    rnd.add_argument("--out", required=True, help="depth.pgm,sem.pgm")
    return p


def _render_pose(sc, index: int, poses_file) -> Viewpoint:
    if poses_file:
        trials = json.loads(Path(poses_file).read_text())
        poses = trials[0]["poses"]
        if not 0 <= index < len(poses):
            raise ValueError(f"pose index {index} outside 0..{len(poses) - 1}")
        d = poses[index]
        return Viewpoint(d["position"], d["orientation"])
    if index < 0:
        raise ValueError("pose index must be >= 0")
    if index == 0:
        return sc.initial_pose
    gt = sc.ground_truth
    ring = PickingRing(gt.position, gt.axis, 0.21)
    theta = project_to_ring(ring, sc.initial_position) + math.radians(RENDER_STEP_DEG * index)
    return Viewpoint.looking_at(ring_point(ring, theta), gt.position)


def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario)
    sc.validate()
    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    cfg = config_for(sc, mask_dropout=args.mask_dropout, gain_rays=args.gain_rays)
    metrics = run_trials(sc, args.planner, args.trials, args.seed, cfg, keep_first_grid=bool(args.dump_map))
    summary = write_report(metrics, args.out)
    if args.dump_poses:
        write_poses(metrics, args.dump_poses)
    if args.dump_map:
        grid = metrics[0].result.grid
        if grid is None:
            raise ValueError("first trial produced no map")
        grid.dump(args.dump_map)
    stats = summary[args.planner]
    print(
        f"{args.planner} on {sc.name}: success {stats['success'][0]:.0%}, "
        f"iterations {stats['iterations'][0]:.2f} +- {stats['iterations'][1]:.2f}, "
        f"pos err {stats['pos_err_m'][0]:.4f} m -> {args.out}"
    )
    return 0


def cmd_render(args) -> int:
    sc = resolve_scenario(args.scenario)
    outs = args.out.split(",")
    if len(outs) != 2:
        raise ValueError("--out expects two comma-separated paths: depth.pgm,sem.pgm")
    pose = _render_pose(sc, args.pose_index, args.poses)
    obs = render(sc.scene, sc.camera, pose)
    write_depth_pgm(obs, outs[0])
    write_semantic_pgm(obs, outs[1])
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_run(args) if args.command == "run" else cmd_render(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"gsnbv: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
