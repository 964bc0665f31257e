"""Action servers, the five high-level actions, and the mission state machine.

One logical loop owns all mutable state and advances sim time by a fixed tick.
Actions run strictly in the pre-defined order search, approach, scan, grasp,
drop; any abort ends the mission with no recovery. Sensor scheduling (detector
at 2 Hz, tracker at camera rate, LiDAR at its own rate) is enforced here, and
every event lands in an append-only trace.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PipelineConfig
from .geometry import Pose2, Pose3, quat_from_rpy, wrap_angle
from .grasping import (
    NEEDS_REPOSITION,
    NO_FEASIBLE_GRASP,
    SELECTED,
    GraspCandidate,
    NoCandidates,
    TooFewPoints,
    execute_grasp,
    estimate_normals,
    generate_candidates,
    score_candidates,
    select_grasp,
)
from .mapping import OccupancyGrid, PoseEstimate, build_map, densify_route, localize
from .navigation import (
    CostGrid,
    GoalOccupied,
    NoApproach,
    NoPath,
    Path2,
    compute_approach_pose,
    follow_step,
    inflate,
    plan_global,
    step_unicycle,
)
from .perception import Tracker
from .reconstruction import EmptyVolume, TsdfGrid, extract_surface, scan_views, stitch_pointclouds, tsdf_integrate
from .sensors import detect_objects, render_depth, simulate_lidar
from .world import MissionSpec, RobotModel, WorldModel

PENDING, ACTIVE, SUCCEEDED, ABORTED, PREEMPTED = (
    "pending", "active", "succeeded", "aborted", "preempted",
)
LEGAL_TRANSITIONS = {
    (PENDING, ACTIVE),
    (ACTIVE, SUCCEEDED),
    (ACTIVE, ABORTED),
    (ACTIVE, PREEMPTED),
}
CANONICAL_SEQUENCE = ("search", "approach", "scan", "grasp", "drop")

MISSION_TIME_CAP = 600.0  # sim seconds; runaway guard, never hit in practice


class TraceError(Exception):
    """Trace invariant violated (timestamps, terminal events, transitions)."""


@dataclass(frozen=True)
class TraceEvent:
    t: float
    tick: int
    kind: str
    data: dict = field(default_factory=dict)


class MissionTrace:
    """Append-only, time-ordered event log with exactly one terminal event."""

    def __init__(self):
        self.events: list[TraceEvent] = []
        self._terminal = False

    def append(self, t: float, tick: int, kind: str, **data):
        if self._terminal:
            raise TraceError("trace already has its terminal mission event")
        if self.events and t < self.events[-1].t - 1e-12:
            raise TraceError(f"timestamp regression: {t} after {self.events[-1].t}")
        self.events.append(TraceEvent(float(t), int(tick), kind, data))
        if kind == "mission_result":
            self._terminal = True

    def find(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def first(self, kind: str) -> TraceEvent | None:
        for e in self.events:
            if e.kind == kind:
                return e
        return None

    def to_jsonl(self) -> str:
        lines = []
        for e in self.events:
            rec = {"t": e.t, "tick": e.tick, "kind": e.kind, **e.data}
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "MissionTrace":
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            t = rec.pop("t")
            tick = rec.pop("tick")
            kind = rec.pop("kind")
            trace.append(t, tick, kind, **rec)
        return trace


def validate_action_transitions(trace: MissionTrace):
    """Raise TraceError if any action's status sequence is illegal."""
    last: dict[str, str] = {}
    for e in trace.find("action_status"):
        action = e.data["action"]
        status = e.data["status"]
        prev = last.get(action, PENDING)
        if status != PENDING and (prev, status) not in LEGAL_TRANSITIONS:
            raise TraceError(f"illegal transition {prev} -> {status} for {action}")
        last[action] = status


@dataclass(frozen=True)
class MissionOutcome:
    succeeded: bool
    failed_at: str | None
    delivered: bool
    delivery_error: float | None


def _base3(pose: Pose2) -> Pose3:
    return Pose3(np.array([pose.x, pose.y, 0.0]), quat_from_rpy(0.0, 0.0, pose.theta))


class MissionContext:
    """All mutable mission state, owned by one logical loop."""

    def __init__(self, world: WorldModel, robot: RobotModel, mission: MissionSpec,
                 cfg: PipelineConfig, fault: str | None = None, tick_hooks=()):
        self.world = world
        self.robot = robot
        self.mission = mission
        self.cfg = cfg
        self.fault = fault
        self.tick_hooks = list(tick_hooks)

        seq = np.random.SeedSequence(mission.seed)
        children = seq.spawn(5)
        self.rng_map = np.random.default_rng(children[0])
        self.rng_loc = np.random.default_rng(children[1])
        self.rng_det = np.random.default_rng(children[2])
        self.rng_trk = np.random.default_rng(children[3])
        self.rng_grasp = np.random.default_rng(children[4])

        ex = cfg.executive
        self.tick_dt = 1.0 / ex.tick_hz
        self.camera_every = max(1, round(ex.tick_hz / ex.camera_rate_hz))
        self.detector_every = max(1, round(ex.tick_hz / cfg.detector.rate_hz))
        self.lidar_every = max(1, round(ex.tick_hz / ex.lidar_rate_hz))

        self.tick = 0
        self.true_pose: Pose2 = mission.waypoints[0]
        self.pose_overrides: dict[str, Pose3] = {}
        self.attached: str | None = None
        self._attach_rel: Pose3 | None = None
        self.camera_override: Pose3 | None = None
        self.suppress_detections = fault == "search"
        self.preempt = False

        self.grid: OccupancyGrid | None = None
        self.cost: CostGrid | None = None
        self.tracker = Tracker(mission.target_class, cfg.perception)
        self.object_estimate = None
        self.selected_grasp: GraspCandidate | None = None
        self.approach_bearing: float | None = None

        self.trace = MissionTrace()
        self._estimate = localize(self.true_pose, cfg.localization, self.rng_loc, 0.0)

    # -- clocks and poses ---------------------------------------------------

    def time(self) -> float:
        return self.tick / self.cfg.executive.tick_hz

    def estimate(self) -> PoseEstimate:
        return self._estimate

    def camera_pose_true(self) -> Pose3:
        if self.camera_override is not None:
            return self.camera_override
        return self.robot.camera_pose(self.true_pose)

    def camera_pose_believed(self) -> Pose3:
        if self.camera_override is not None:
            return self.camera_override
        return self.robot.camera_pose(self._estimate.pose)

    def log(self, kind: str, **data):
        self.trace.append(self.time(), self.tick, kind, **data)

    # -- the tick loop ------------------------------------------------------

    def step(self, v: float = 0.0, w: float = 0.0):
        """Advance one tick: hooks, localization, scheduled sensing, motion."""
        for hook in self.tick_hooks:
            hook(self)
        self._estimate = localize(
            self.true_pose, self.cfg.localization, self.rng_loc, self.time()
        )
        self._sense()
        if v or w:
            self.true_pose = step_unicycle(self.true_pose, v, w, self.tick_dt)
            if self.attached is not None:
                self.pose_overrides[self.attached] = _base3(self.true_pose).compose(
                    self._attach_rel
                )
        self.tick += 1

    def wait(self, duration: float):
        for _ in range(int(round(duration * self.cfg.executive.tick_hz))):
            self.step()

    def _sense(self):
        K = self.robot.camera.detector_intrinsics()
        if self.tick % self.lidar_every == 0:
            for mount in ("front", "back"):
                simulate_lidar(self.world, self.true_pose, self.robot, mount,
                               self.cfg.lidar, self.rng_map, self.time())
            self.log("lidar", mounts=2)
            self.log("base_pose", x=self.true_pose.x, y=self.true_pose.y,
                     theta=self.true_pose.theta)
        if self.tick % self.camera_every == 0:
            cam_bel = self.camera_pose_believed()
            lost = self.tracker.on_camera_frame(
                cam_bel, self.world, K, self.rng_trk, self.pose_overrides
            )
            self.log("camera", n_tracks=len(self.tracker.live_tracks()))
            for track in lost:
                self.log("track_lost", track_id=track.id, frames=track.frames_tracked)
            for track, est in self.tracker.ready_estimates():
                self.log(
                    "triangulated",
                    track_id=track.id,
                    frames=track.frames_tracked,
                    n_rays=est.n_rays,
                    position=[float(x) for x in est.position],
                    residual_rms=float(est.residual_rms),
                )
                if self.object_estimate is None and \
                        est.class_label == self.mission.target_class:
                    self.object_estimate = est
        if self.tick % self.detector_every == 0:
            if self.suppress_detections:
                detections = []
            else:
                detections = detect_objects(
                    self.world, self.camera_pose_true(), K,
                    self.cfg.detector, self.rng_det,
                    self.pose_overrides, self.time(),
                )
            n_target = sum(
                1 for d in detections if d.class_label == self.mission.target_class
            )
            pairs, spawned = self.tracker.on_detections(
                detections, self.camera_pose_believed(), self.world, K,
                self.pose_overrides,
            )
            self.log("detector", n_detections=len(detections), n_target=n_target,
                     n_matched=len(pairs))
            for track in spawned:
                self.log("track_spawned", track_id=track.id,
                         class_label=track.class_label)

    # -- attachment ----------------------------------------------------------

    def attach(self, object_id: str):
        obj_pose = self.pose_overrides.get(object_id, self.world.object_by_id(object_id).pose)
        self.attached = object_id
        self._attach_rel = _base3(self.true_pose).inverse().compose(obj_pose)
        self.pose_overrides[object_id] = obj_pose

    def release(self):
        """Detach and rest the held object on the support under the release point."""
        if self.attached is None:
            return None
        obj = self.world.object_by_id(self.attached)
        ahead = self.cfg.executive.release_ahead
        x = self.true_pose.x + ahead * math.cos(self.true_pose.theta)
        y = self.true_pose.y + ahead * math.sin(self.true_pose.theta)
        current = self.pose_overrides[self.attached]
        probe = Pose3(np.array([x, y, current.translation[2]]), current.rotation)
        drop_height = current.translation[2] - obj.shape.min_z(probe)
        support = self.world.support_height(x, y)
        self.pose_overrides[self.attached] = Pose3(
            np.array([x, y, support + drop_height]), current.rotation
        )
        released = self.attached
        self.attached = None
        self._attach_rel = None
        return released

    def target_object_position(self) -> np.ndarray | None:
        for obj in self.world.objects:
            if obj.class_label == self.mission.target_class:
                pose = self.pose_overrides.get(obj.id, obj.pose)
                return pose.translation
        return None


# ---------------------------------------------------------------------------
# Navigation helper shared by search / approach / drop

_NAV_OK, _NAV_BLOCKED_OUT, _NAV_NO_PATH, _NAV_PREEMPTED, _NAV_TIMEOUT = range(5)


def _navigate_to(ctx: MissionContext, goal: Pose2, deadline: float,
                 stop_when=None) -> int:
    """Plan and follow to a goal, re-planning on Blocked up to the retry bound.

    stop_when(ctx) may end navigation early (search uses it to stop on the
    first localized target). Returns one of the _NAV_* codes.
    """
    nav_cfg = ctx.cfg.navigation
    replans = 0
    path: Path2 | None = None
    while True:
        if ctx.preempt:
            return _NAV_PREEMPTED
        if ctx.time() > deadline:
            return _NAV_TIMEOUT
        if stop_when is not None and stop_when(ctx):
            return _NAV_OK
        if path is None:
            try:
                path = plan_global(ctx.cost, ctx.estimate().pose, goal, nav_cfg)
            except (NoPath, GoalOccupied) as exc:
                ctx.log("plan_failed", goal=[goal.x, goal.y], reason=str(exc))
                return _NAV_NO_PATH
            ctx.log("plan", goal=[goal.x, goal.y], cost=path.cost,
                    n_waypoints=len(path.waypoints))
        result = follow_step(path, ctx.estimate(), nav_cfg, ctx.cost)
        if result.status == "arrived":
            return _NAV_OK
        if result.status == "blocked":
            replans += 1
            ctx.log("replan", count=replans)
            if replans > nav_cfg.n_replan:
                return _NAV_BLOCKED_OUT
            path = None
            ctx.step()
            continue
        ctx.step(result.v, result.w)


# ---------------------------------------------------------------------------
# Actions. Each emits pending/active and exactly one terminal status.

def _start(ctx: MissionContext, action: str):
    ctx.log("action_status", action=action, status=PENDING)
    ctx.log("action_status", action=action, status=ACTIVE)


def _finish(ctx: MissionContext, action: str, status: str, reason: str = ""):
    data = {"action": action, "status": status}
    if reason:
        data["reason"] = reason
    ctx.log("action_status", **data)
    return status


def run_action_search(ctx: MissionContext) -> str:
    """Follow the waypoint cycle until the target is detected and localized.

    Succeeds the moment a mature track of the target class triangulates.
    Aborts once every waypoint has been visited search_laps times without one.
    """
    _start(ctx, "search")
    waypoints = ctx.mission.waypoints
    max_arrivals = ctx.cfg.executive.search_laps * len(waypoints)
    deadline = ctx.time() + MISSION_TIME_CAP / 2.0
    arrivals = 0
    wp_idx = 1 % len(waypoints)

    def localized(c: MissionContext) -> bool:
        return c.object_estimate is not None

    while True:
        code = _navigate_to(ctx, waypoints[wp_idx], deadline, stop_when=localized)
        if localized(ctx):
            est = ctx.object_estimate
            ctx.log("search_localized", position=[float(v) for v in est.position],
                    residual_rms=float(est.residual_rms))
            return _finish(ctx, "search", SUCCEEDED)
        if code == _NAV_PREEMPTED:
            return _finish(ctx, "search", PREEMPTED)
        if code in (_NAV_NO_PATH, _NAV_BLOCKED_OUT):
            return _finish(ctx, "search", ABORTED, "navigation failed")
        if code == _NAV_TIMEOUT:
            return _finish(ctx, "search", ABORTED, "search time cap")
        arrivals += 1
        if arrivals >= max_arrivals:
            return _finish(ctx, "search", ABORTED,
                           "waypoints exhausted without a localized target")
        wp_idx = (wp_idx + 1) % len(waypoints)


def _compute_approach(ctx: MissionContext, excluded_bearing: float | None):
    object_xy = ctx.object_estimate.position[:2]
    if ctx.fault == "approach":
        raise NoApproach("fault injected: approach disabled")
    return compute_approach_pose(
        ctx.cost, object_xy, ctx.cfg.navigation.standoff, ctx.cfg.navigation,
        footprint_radius=ctx.robot.footprint_radius,
        robot_xy=(ctx.estimate().pose.x, ctx.estimate().pose.y),
        excluded_bearing=excluded_bearing,
    )


def _approach_once(ctx: MissionContext, excluded_bearing: float | None = None) -> str:
    """Shared by the approach action and the scan action's reposition."""
    try:
        goal = _compute_approach(ctx, excluded_bearing)
    except NoApproach as exc:
        ctx.log("approach_failed", reason=str(exc))
        return ABORTED
    object_xy = ctx.object_estimate.position[:2]
    bearing = math.atan2(goal.y - float(object_xy[1]), goal.x - float(object_xy[0]))
    ctx.approach_bearing = bearing
    ctx.log("approach_pose", x=goal.x, y=goal.y, theta=goal.theta, ring_bearing=bearing)
    code = _navigate_to(ctx, goal, ctx.time() + MISSION_TIME_CAP / 2.0)
    if code == _NAV_OK:
        return SUCCEEDED
    if code == _NAV_PREEMPTED:
        return PREEMPTED
    return ABORTED


def run_action_approach(ctx: MissionContext) -> str:
    """Drive to a collision-free pose near the object estimate, facing it."""
    _start(ctx, "approach")
    if ctx.object_estimate is None:
        return _finish(ctx, "approach", ABORTED, "no object estimate")
    status = _approach_once(ctx)
    if status == SUCCEEDED:
        return _finish(ctx, "approach", SUCCEEDED)
    if status == PREEMPTED:
        return _finish(ctx, "approach", PREEMPTED)
    return _finish(ctx, "approach", ABORTED, "no approach pose or path")


def _capture_views(ctx: MissionContext, views) -> list:
    depths = []
    K = ctx.robot.camera.intrinsics
    for i, view in enumerate(views):
        ctx.camera_override = view
        ctx.wait(ctx.cfg.executive.view_move_time)
        depth = render_depth(ctx.world, view, K, ctx.cfg.reconstruction.depth_max,
                             ctx.pose_overrides, ctx.time())
        if ctx.fault == "scan":
            depth.depths[:] = 0.0
        ctx.log("depth_captured", view=i, n_valid=int(depth.valid_mask().sum()))
        depths.append(depth)
    ctx.camera_override = None
    return depths


def _reconstruct(ctx: MissionContext, depths, center):
    cfg = ctx.cfg.reconstruction
    if cfg.mode == "tsdf":
        grid = TsdfGrid.around(center, cfg)
        for depth in depths:
            tsdf_integrate(grid, depth, cfg.weight_cap)
        cloud = extract_surface(grid, cfg.w_min)
    else:
        cloud = stitch_pointclouds(depths, center, cfg)
    ctx.log("cloud", n_points=len(cloud), mode=cfg.mode)
    return cloud


def run_action_scan(ctx: MissionContext) -> str:
    """Four-view capture, reconstruction, grasp planning and selection.

    On NEEDS_REPOSITION the base is re-approached once from a different ring
    bearing and the scan repeats; a second reposition verdict aborts.
    """
    _start(ctx, "scan")
    if ctx.object_estimate is None:
        return _finish(ctx, "scan", ABORTED, "no object estimate")
    grasp_cfg = ctx.cfg.grasping
    for attempt in (0, 1):
        if ctx.preempt:
            return _finish(ctx, "scan", PREEMPTED)
        center = np.asarray(ctx.object_estimate.position, dtype=float)
        views = scan_views(center, ctx.cfg.reconstruction,
                           robot_heading=ctx.estimate().pose.theta)
        depths = _capture_views(ctx, views)
        try:
            cloud = _reconstruct(ctx, depths, center)
        except EmptyVolume as exc:
            return _finish(ctx, "scan", ABORTED, f"empty volume: {exc}")
        try:
            viewpoint = np.mean([v.translation for v in views], axis=0)
            normals = estimate_normals(
                cloud.points, min(grasp_cfg.knn, max(3, len(cloud.points) - 1)), viewpoint
            )
            candidates = generate_candidates(
                cloud.points, normals, ctx.robot.gripper,
                grasp_cfg.n_samples, ctx.rng_grasp, grasp_cfg,
            )
        except (NoCandidates, TooFewPoints) as exc:
            return _finish(ctx, "scan", ABORTED, f"no candidates: {exc}")
        ranked = score_candidates(candidates, cloud.points, normals,
                                  ctx.robot.gripper, grasp_cfg)
        ctx.log("grasp_candidates", n=len(ranked),
                best_score=float(ranked[0].score) if ranked else 0.0)
        sel = select_grasp(ranked, ctx.estimate().pose, ctx.robot.arm)
        if sel.status == SELECTED:
            cand = sel.candidate
            ctx.selected_grasp = cand
            ctx.log("grasp_selected", score=float(cand.score),
                    opening=float(cand.opening),
                    position=[float(v) for v in cand.pose.translation])
            return _finish(ctx, "scan", SUCCEEDED)
        if sel.status == NO_FEASIBLE_GRASP:
            return _finish(ctx, "scan", ABORTED, "no feasible grasp")
        # NEEDS_REPOSITION
        if attempt == 1:
            return _finish(ctx, "scan", ABORTED, "unreachable after reposition")
        ctx.log("reposition", excluded_bearing=ctx.approach_bearing)
        status = _approach_once(ctx, excluded_bearing=ctx.approach_bearing)
        if status != SUCCEEDED:
            return _finish(ctx, "scan", ABORTED, "reposition failed")
    return _finish(ctx, "scan", ABORTED, "unreachable after reposition")


def run_action_grasp(ctx: MissionContext) -> str:
    """Open-loop execution of the selected grasp."""
    _start(ctx, "grasp")
    if ctx.selected_grasp is None:
        return _finish(ctx, "grasp", ABORTED, "no selected grasp")
    ctx.wait(ctx.cfg.executive.grasp_time)
    if ctx.preempt:
        return _finish(ctx, "grasp", PREEMPTED)
    grasp = ctx.selected_grasp
    if ctx.fault == "grasp":
        shifted = grasp.pose.translation + 0.05 * grasp.closing_axis
        grasp = replace(grasp, pose=Pose3(shifted, grasp.pose.rotation))
        ctx.log("fault", action="grasp", detail="candidate perturbed 0.05 m")
    outcome = execute_grasp(ctx.world, grasp, ctx.robot.gripper, ctx.pose_overrides)
    ctx.log("grasp_executed", held=outcome.held,
            object_id=outcome.object_id or "", width=float(outcome.width))
    if not outcome.held:
        return _finish(ctx, "grasp", ABORTED, "grasp missed")
    ctx.attach(outcome.object_id)
    return _finish(ctx, "grasp", SUCCEEDED)


def run_action_drop(ctx: MissionContext) -> str:
    """Navigate to the drop location and release 0.4 m ahead of the base.

    Losing the object en route is NOT detected: the action still reports
    success; only the ground-truth referee records the delivery failure.
    """
    _start(ctx, "drop")
    if ctx.fault == "drop":
        ctx.log("fault", action="drop", detail="drop navigation disabled")
        return _finish(ctx, "drop", ABORTED, "no path to drop pose")
    code = _navigate_to(ctx, ctx.mission.drop_pose,
                        ctx.time() + MISSION_TIME_CAP / 2.0)
    if code == _NAV_PREEMPTED:
        return _finish(ctx, "drop", PREEMPTED)
    if code != _NAV_OK:
        return _finish(ctx, "drop", ABORTED, "navigation failed")
    ctx.wait(ctx.cfg.executive.drop_time)
    released = ctx.release()
    pos = ctx.pose_overrides.get(released).translation if released else None
    ctx.log("released", object_id=released or "",
            x=float(pos[0]) if pos is not None else 0.0,
            y=float(pos[1]) if pos is not None else 0.0)
    return _finish(ctx, "drop", SUCCEEDED)


_ACTIONS = {
    "search": run_action_search,
    "approach": run_action_approach,
    "scan": run_action_scan,
    "grasp": run_action_grasp,
    "drop": run_action_drop,
}


@dataclass
class MissionRun:
    outcome: MissionOutcome
    trace: MissionTrace
    context: MissionContext


def prepare_context(world: WorldModel, robot: RobotModel, mission: MissionSpec,
                    cfg: PipelineConfig | None = None, fault: str | None = None,
                    tick_hooks=()) -> MissionContext:
    """Build the context and run the pre-mission mapping pass."""
    cfg = cfg or PipelineConfig()
    ctx = MissionContext(world, robot, mission, cfg, fault, tick_hooks)
    ctx.log("mission_started", seed=mission.seed, target_class=mission.target_class,
            objects=[
                {"id": o.id, "class": o.class_label,
                 "x": float(o.pose.translation[0]), "y": float(o.pose.translation[1]),
                 "z": float(o.pose.translation[2])}
                for o in world.objects
            ],
            drop_pose=[mission.drop_pose.x, mission.drop_pose.y])
    loop = list(mission.waypoints) + [mission.waypoints[0]]
    route = densify_route(loop, cfg.mapping.route_spacing)
    ctx.grid = build_map(world, route, robot, ctx.rng_map, cfg.mapping, cfg.lidar)
    ctx.cost = inflate(
        ctx.grid,
        robot.footprint_radius + cfg.navigation.inflation_margin,
        cfg.navigation.occupied_threshold,
    )
    occupied = int((ctx.cost.states == 2).sum())
    ctx.log("map_built", route_poses=len(route), occupied_cells=occupied)
    return ctx


def run_mission(world: WorldModel, robot: RobotModel, mission: MissionSpec,
                cfg: PipelineConfig | None = None, fault: str | None = None,
                tick_hooks=()) -> MissionRun:
    """Execute the full pre-defined sequence; no recovery on any abort."""
    ctx = prepare_context(world, robot, mission, cfg, fault, tick_hooks)
    failed_at = None
    for action in CANONICAL_SEQUENCE:
        status = _ACTIONS[action](ctx)
        if status != SUCCEEDED:
            failed_at = action
            break

    target = ctx.target_object_position()
    if target is not None:
        err = math.hypot(
            float(target[0]) - mission.drop_pose.x,
            float(target[1]) - mission.drop_pose.y,
        )
        delivered = failed_at is None and err <= ctx.cfg.executive.drop_tolerance
        delivery_error = err
    else:
        delivered, delivery_error = False, None
    ctx.log("referee", delivered=delivered,
            delivery_error=delivery_error if delivery_error is not None else -1.0)
    outcome = MissionOutcome(
        succeeded=failed_at is None,
        failed_at=failed_at,
        delivered=delivered,
        delivery_error=delivery_error,
    )
    ctx.log("mission_result",
            outcome="succeeded" if outcome.succeeded else "failed",
            failed_at=failed_at or "")
    return MissionRun(outcome, ctx.trace, ctx)
