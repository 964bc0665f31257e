"""Mission runner and inspection tooling.

Commands:
    run        execute a full mission from a scenario file
    stage      run exactly one pipeline stage on file inputs
    render     rasterize a grid (optionally with a trace overlay) to a PPM

Exit codes: 0 mission succeeded, 1 mission failed, 2 configuration error.
All outputs are deterministic for identical inputs and seed; wall-clock time
is reported on stderr only, so trace/metrics/render bytes stay reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .executive import MissionTrace, run_mission
from .geometry import Pose2
from .grasping import candidates_to_csv, estimate_normals, generate_candidates, score_candidates
from .mapping import OccupancyGrid, build_map, densify_route, load_grid, save_grid
from .navigation import inflate, plan_global
from .perception import triangulate
from .reconstruction import PointCloud, stitch_pointclouds
from .sensors import DepthImage
from .world import CameraIntrinsics, ParseError, ValidationError, load_scenario
from .geometry import Pose3


@dataclass
class MetricsReport:
    """Everything here except wall_time is a pure function of trace + truth."""

    mission_outcome: str
    sim_time: float
    base_path_length: float
    detection_to_triangulation_latency: float | None
    triangulation_error: float | None
    grasp_score: float | None
    delivery_error: float | None
    wall_time: float | None = None

    def to_dict(self) -> dict:
        # wall_time is intentionally absent: it is not derivable from the
        # trace, and metrics files must be byte-identical across reruns.
        return {
            "mission_outcome": self.mission_outcome,
            "sim_time": self.sim_time,
            "base_path_length": self.base_path_length,
            "detection_to_triangulation_latency": self.detection_to_triangulation_latency,
            "triangulation_error": self.triangulation_error,
            "grasp_score": self.grasp_score,
            "delivery_error": self.delivery_error,
        }


def metrics_from_trace(trace: MissionTrace, world=None, mission=None) -> MetricsReport:
    result = trace.first("mission_result")
    outcome = "unknown"
    if result is not None:
        outcome = result.data["outcome"]
        if result.data.get("failed_at"):
            outcome = f"failed({result.data['failed_at']})"
    sim_time = trace.events[-1].t if trace.events else 0.0

    path_len = 0.0
    prev = None
    for e in trace.find("base_pose"):
        if prev is not None:
            path_len += math.hypot(e.data["x"] - prev[0], e.data["y"] - prev[1])
        prev = (e.data["x"], e.data["y"])

    first_det = None
    for e in trace.find("detector"):
        if e.data.get("n_target", 0) > 0:
            first_det = e.t
            break
    tri = trace.first("triangulated")
    latency = tri.t - first_det if (tri is not None and first_det is not None) else None

    tri_err = None
    if tri is not None and world is not None and mission is not None:
        for obj in world.objects:
            if obj.class_label == mission.target_class:
                true_pos = obj.pose.translation
                est = np.asarray(tri.data["position"])
                tri_err = float(np.linalg.norm(est - true_pos))
                break

    sel = trace.first("grasp_selected")
    grasp_score = float(sel.data["score"]) if sel is not None else None

    ref = trace.first("referee")
    delivery_error = None
    if ref is not None and ref.data.get("delivery_error", -1.0) >= 0.0:
        delivery_error = float(ref.data["delivery_error"])

    return MetricsReport(
        mission_outcome=outcome,
        sim_time=sim_time,
        base_path_length=path_len,
        detection_to_triangulation_latency=latency,
        triangulation_error=tri_err,
        grasp_score=grasp_score,
        delivery_error=delivery_error,
    )


# ---------------------------------------------------------------------------
# Rendering: grid to a binary portable pixmap (P6), deterministic bytes.

def render_grid_ppm(grid: OccupancyGrid, trajectory=None, markers=None) -> bytes:
    """Grayscale occupancy render, row 0 at max y. Trajectory pixels are red,
    object markers green."""
    probs = grid.probabilities()
    gray = np.rint((1.0 - probs) * 254.0).astype(np.uint8)
    img = np.repeat(gray[::-1, :, None], 3, axis=2)  # flip so north is up

    def paint(x, y, color):
        ix, iy = grid.world_to_cell(x, y)
        if grid.in_bounds(ix, iy):
            img[grid.height - 1 - iy, ix] = color

    if trajectory:
        for x, y in trajectory:
            paint(x, y, (220, 30, 30))
    if markers:
        for x, y in markers:
            ix, iy = grid.world_to_cell(x, y)
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if grid.in_bounds(ix + dx, iy + dy):
                        img[grid.height - 1 - (iy + dy), ix + dx] = (40, 200, 40)
    header = f"P6\n{grid.width} {grid.height}\n255\n".encode()
    return header + img.tobytes()


def _trace_overlays(trace: MissionTrace):
    trajectory = [(e.data["x"], e.data["y"]) for e in trace.find("base_pose")]
    markers = []
    started = trace.first("mission_started")
    if started is not None:
        markers = [(o["x"], o["y"]) for o in started.data.get("objects", [])]
    return trajectory, markers


# ---------------------------------------------------------------------------
# Commands

def _fail_config(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    try:
        world, robot, mission = load_scenario(args.scenario)
    except (ParseError, ValidationError) as exc:
        return _fail_config(str(exc))
    cfg = PipelineConfig()
    try:
        for override in args.set or []:
            dotted, _, value = override.partition("=")
            if not _:
                raise KeyError(f"--set needs section.key=value, got {override!r}")
            cfg.apply_override(dotted, value)
    except (KeyError, ValueError) as exc:
        return _fail_config(str(exc))
    if args.seed is not None:
        mission = replace(mission, seed=args.seed)
    if args.fault is not None and args.fault not in (
        "search", "approach", "scan", "grasp", "drop"
    ):
        return _fail_config(f"unknown fault action {args.fault!r}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    run = run_mission(world, robot, mission, cfg, fault=args.fault)
    wall = time.perf_counter() - t0

    (out_dir / "trace.jsonl").write_text(run.trace.to_jsonl(), encoding="utf-8")
    report = metrics_from_trace(run.trace, world, mission)
    report.wall_time = wall
    (out_dir / "metrics.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if args.render:
        trajectory, markers = _trace_overlays(run.trace)
        (out_dir / "map.ppm").write_bytes(
            render_grid_ppm(run.context.grid, trajectory, markers)
        )
    outcome = run.outcome
    status = "succeeded" if outcome.succeeded else f"failed({outcome.failed_at})"
    print(
        f"mission {status}; delivered={outcome.delivered} "
        f"wall={wall:.2f}s sim={report.sim_time:.2f}s",
        file=sys.stderr,
    )
    return 0 if outcome.succeeded else 1


def _load_depth_npz(path) -> DepthImage:
    with np.load(path) as data:
        intr = data["intrinsics"]
        K = CameraIntrinsics(
            fx=float(intr[0]), fy=float(intr[1]), cx=float(intr[2]), cy=float(intr[3]),
            width=int(intr[4]), height=int(intr[5]),
        )
        pose = data["pose"]
        return DepthImage(
            timestamp=0.0,
            camera_pose=Pose3(pose[:3], pose[3:]),
            intrinsics=K,
            depths=data["depths"].astype(float),
        )


def save_depth_npz(path, depth: DepthImage) -> None:
    K = depth.intrinsics
    np.savez(
        path,
        depths=depth.depths,
        intrinsics=np.array([K.fx, K.fy, K.cx, K.cy, K.width, K.height], dtype=float),
        pose=np.concatenate([depth.camera_pose.translation, depth.camera_pose.rotation]),
    )


def cmd_stage(args) -> int:
    stage = args.stage
    out = Path(args.out)
    try:
        if stage == "map":
            world, robot, mission = load_scenario(args.inputs[0])
            cfg = PipelineConfig()
            rng = np.random.default_rng(np.random.SeedSequence(args.seed or mission.seed))
            loop = list(mission.waypoints) + [mission.waypoints[0]]
            route = densify_route(loop, cfg.mapping.route_spacing)
            grid = build_map(world, route, robot, rng, cfg.mapping, cfg.lidar)
            save_grid(out, grid)
        elif stage == "plan":
            grid = load_grid(args.inputs[0])
            coords = [float(v) for v in args.inputs[1:7]]
            if len(coords) != 6:
                raise ValueError("plan needs: grid_file x0 y0 t0 x1 y1 t1")
            cfg = PipelineConfig()
            cost = inflate(grid, 0.35, cfg.navigation.occupied_threshold)
            path = plan_global(cost, Pose2(*coords[:3]), Pose2(*coords[3:]), cfg.navigation)
            out.write_text(path.to_csv(), encoding="utf-8")
        elif stage == "triangulate":
            rows = np.loadtxt(args.inputs[0], delimiter=",", ndmin=2)
            obs = []
            for row in rows:
                d = row[3:6] / np.linalg.norm(row[3:6])
                obs.append((Pose3(row[:3]), d))
            est = triangulate(obs)
            out.write_text(
                json.dumps(
                    {"position": [float(v) for v in est.position],
                     "n_rays": est.n_rays,
                     "residual_rms": est.residual_rms},
                    sort_keys=True, indent=2,
                ) + "\n",
                encoding="utf-8",
            )
        elif stage == "reconstruct":
            depths = [_load_depth_npz(p) for p in args.inputs]
            cfg = PipelineConfig().reconstruction
            if args.center is not None:
                center = np.array([float(v) for v in args.center.split(",")])
            else:
                from .sensors import backproject

                pts = np.vstack([backproject(d) for d in depths if d.valid_mask().any()])
                center = pts.mean(axis=0)
            cloud = stitch_pointclouds(depths, center, cfg)
            out.write_text(cloud.to_xyz(), encoding="utf-8")
        elif stage == "grasp":
            cloud = PointCloud.from_xyz(Path(args.inputs[0]).read_text(encoding="utf-8"))
            cfg = PipelineConfig().grasping
            from .world import GripperModel

            if args.viewpoint is not None:
                viewpoint = np.array([float(v) for v in args.viewpoint.split(",")])
            else:
                viewpoint = cloud.points.mean(axis=0) + np.array([0.0, 0.0, 1.0])
            gripper = GripperModel()
            normals = estimate_normals(cloud.points, min(cfg.knn, len(cloud.points)), viewpoint)
            rng = np.random.default_rng(args.seed or 0)
            cands = generate_candidates(cloud.points, normals, gripper,
                                        cfg.n_samples, rng, cfg)
            ranked = score_candidates(cands, cloud.points, normals, gripper, cfg)
            out.write_text(candidates_to_csv(ranked), encoding="utf-8")
        else:
            return _fail_config(f"unknown stage {stage!r}")
    except FileNotFoundError as exc:
        return _fail_config(f"missing input: {exc}")
    except Exception as exc:  # bad inputs surface as config errors with context
        return _fail_config(f"stage {stage} failed: {exc}")
    return 0


def cmd_render(args) -> int:
    try:
        grid = load_grid(args.grid)
    except (OSError, ValueError) as exc:
        return _fail_config(f"cannot load grid: {exc}")
    trajectory, markers = None, None
    if args.trace:
        try:
            trace = MissionTrace.from_jsonl(Path(args.trace).read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError) as exc:
            return _fail_config(f"cannot load trace: {exc}")
        trajectory, markers = _trace_overlays(trace)
    Path(args.out).write_bytes(render_grid_ppm(grid, trajectory, markers))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fetchsim",
        description="Deterministic fetch-and-carry mission simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full mission from a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_run.add_argument("--fault", default=None,
                       help="inject a failure into one action (search|approach|scan|grasp|drop)")
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--render", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_stage = sub.add_parser("stage", help="run one pipeline stage on file inputs")
    p_stage.add_argument("stage", help="map | plan | triangulate | reconstruct | grasp")
    p_stage.add_argument("inputs", nargs="+")
    p_stage.add_argument("--out", required=True)
    p_stage.add_argument("--seed", type=int, default=None)
    p_stage.add_argument("--center", default=None, help="crop center x,y,z for reconstruct")
    p_stage.add_argument("--viewpoint", default=None, help="normal orientation point x,y,z")
    p_stage.set_defaults(fn=cmd_stage)

    p_render = sub.add_parser("render", help="rasterize a grid file to a PPM image")
    p_render.add_argument("grid")
    p_render.add_argument("--trace", default=None)
    p_render.add_argument("--out", required=True)
    p_render.set_defaults(fn=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
