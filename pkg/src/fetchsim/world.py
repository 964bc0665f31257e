"""Scenario file model and exact geometric queries.

The world is a static 2.5D floorplan: wall segments (extruded to a single
configured height for 3D queries), axis-aligned table boxes, and labeled
object primitives resting on a support surface. Everything simulated sensors
see is answered from here, so the math stays closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import (
    Pose2,
    Pose3,
    fibonacci_sphere,
    line_box_interval,
    line_capsule_interval,
    line_cylinder_interval,
    quat_from_rpy,
    ray_quads,
    rays_segments_2d,
    rect_edges,
)


class ParseError(Exception):
    """Scenario file missing or syntactically malformed."""


class ValidationError(Exception):
    """Scenario parsed but violates a model invariant; message carries the field path."""


# ---------------------------------------------------------------------------
# Shapes

@dataclass(frozen=True)
class Box:
    size: tuple[float, float, float]

    @property
    def half(self):
        return tuple(s / 2.0 for s in self.size)

    def line_interval(self, origin, dirs, pose: Pose3):
        return line_box_interval(origin, dirs, pose, self.half)

    def min_z(self, pose: Pose3) -> float:
        R = pose.matrix()
        drop = sum(abs(R[2, i]) * h for i, h in enumerate(self.half))
        return pose.translation[2] - drop

    def surface_points(self, pose: Pose3, n: int = 96) -> np.ndarray:
        k = max(2, int(round(math.sqrt(n / 6.0))))
        u = (np.arange(k) + 0.5) / k * 2.0 - 1.0
        uu, vv = np.meshgrid(u, u)
        uu, vv = uu.ravel(), vv.ravel()
        hx, hy, hz = self.half
        ones = np.ones_like(uu)
        faces = [
            np.column_stack([ones * hx, uu * hy, vv * hz]),
            np.column_stack([-ones * hx, uu * hy, vv * hz]),
            np.column_stack([uu * hx, ones * hy, vv * hz]),
            np.column_stack([uu * hx, -ones * hy, vv * hz]),
            np.column_stack([uu * hx, vv * hy, ones * hz]),
            np.column_stack([uu * hx, vv * hy, -ones * hz]),
        ]
        return pose.transform(np.vstack(faces))


@dataclass(frozen=True)
class Cylinder:
    radius: float
    length: float  # along local z

    def line_interval(self, origin, dirs, pose: Pose3):
        return line_cylinder_interval(origin, dirs, pose, self.radius, self.length)

    def min_z(self, pose: Pose3) -> float:
        az = abs(pose.matrix()[2, 2])
        h = self.length / 2.0
        return pose.translation[2] - (h * az + self.radius * math.sqrt(max(0.0, 1.0 - az * az)))

    def surface_points(self, pose: Pose3, n: int = 96) -> np.ndarray:
        r, h = self.radius, self.length / 2.0
        area_side = 2.0 * math.pi * r * self.length
        area_caps = 2.0 * math.pi * r * r
        n_side = max(8, int(round(n * area_side / (area_side + area_caps))))
        n_cap = max(4, (n - n_side) // 2)
        golden = math.pi * (3.0 - math.sqrt(5.0))
        i = np.arange(n_side, dtype=float)
        phi = golden * i
        z = (i + 0.5) / n_side * self.length - h
        side = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        j = np.arange(n_cap, dtype=float)
        rad = r * np.sqrt((j + 0.5) / n_cap)
        ang = golden * j
        disk = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        top = np.column_stack([disk, np.full(n_cap, h)])
        bot = np.column_stack([disk, np.full(n_cap, -h)])
        return pose.transform(np.vstack([side, top, bot]))


@dataclass(frozen=True)
class Capsule:
    radius: float
    length: float  # segment length along local z, excluding the end caps

    def line_interval(self, origin, dirs, pose: Pose3):
        return line_capsule_interval(origin, dirs, pose, self.radius, self.length)

    def min_z(self, pose: Pose3) -> float:
        az = abs(pose.matrix()[2, 2])
        return pose.translation[2] - (self.length / 2.0 * az + self.radius)

    def surface_points(self, pose: Pose3, n: int = 96) -> np.ndarray:
        r, h = self.radius, self.length / 2.0
        area_cyl = 2.0 * math.pi * r * self.length
        area_caps = 4.0 * math.pi * r * r
        n_cyl = max(8, int(round(n * area_cyl / (area_cyl + area_caps))))
        n_caps = max(8, n - n_cyl)
        golden = math.pi * (3.0 - math.sqrt(5.0))
        i = np.arange(n_cyl, dtype=float)
        phi = golden * i
        z = (i + 0.5) / n_cyl * self.length - h
        cyl = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        sph = fibonacci_sphere(n_caps) * r
        caps = sph.copy()
        caps[:, 2] += np.where(sph[:, 2] >= 0.0, h, -h)
        return pose.transform(np.vstack([cyl, caps]))


Shape = Box | Cylinder | Capsule


@dataclass(frozen=True)
class SceneObject:
    id: str
    class_label: str
    shape: Shape
    pose: Pose3


@dataclass(frozen=True)
class Table:
    footprint: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    top_height: float

    def box_pose(self) -> Pose3:
        x0, y0, x1, y1 = self.footprint
        return Pose3(np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0, self.top_height / 2.0]))

    def box_half(self):
        x0, y0, x1, y1 = self.footprint
        return ((x1 - x0) / 2.0, (y1 - y0) / 2.0, self.top_height / 2.0)

    def contains_xy(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.footprint
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass(frozen=True)
class WorldModel:
    wall_segments: np.ndarray  # (M, 4) as x1, y1, x2, y2
    tables: tuple[Table, ...]
    objects: tuple[SceneObject, ...]
    bounds: tuple[float, float, float, float]
    wall_height: float = 2.5
    tables_opaque_2d: bool = False
    _wall_quads: np.ndarray = field(init=False, repr=False)
    _segments_2d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        segs = np.asarray(self.wall_segments, dtype=float).reshape(-1, 4)
        object.__setattr__(self, "wall_segments", segs)
        quads = np.empty((len(segs), 4, 3))
        for i, (x1, y1, x2, y2) in enumerate(segs):
            quads[i] = [
                [x1, y1, 0.0],
                [x2, y2, 0.0],
                [x2, y2, self.wall_height],
                [x1, y1, self.wall_height],
            ]
        object.__setattr__(self, "_wall_quads", quads)
        parts = [segs]
        if self.tables_opaque_2d:
            parts += [rect_edges(*t.footprint) for t in self.tables]
        object.__setattr__(self, "_segments_2d", np.vstack(parts) if parts else segs)

    def object_by_id(self, obj_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.id == obj_id:
                return obj
        raise KeyError(obj_id)

    def support_height(self, x: float, y: float) -> float:
        """Height of the support surface under (x, y): table top or floor."""
        h = 0.0
        for t in self.tables:
            if t.contains_xy(x, y):
                h = max(h, t.top_height)
        return h

    def contains_xy(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1


def raycast_2d(world: WorldModel, origin, direction, max_range: float):
    """Distance to the nearest 2D obstacle edge, or None on a miss.

    2D obstacles are wall segments, plus table footprint edges only when the
    scenario sets tables_opaque_2d (LiDARs sense an ankle-height plane, so
    table tops are invisible to them by default).
    """
    t = rays_segments_2d(origin, np.asarray(direction, dtype=float).reshape(1, 2),
                         world._segments_2d)[0]
    if t <= max_range:
        return float(t)
    return None


def raycast_2d_batch(world: WorldModel, origin, directions) -> np.ndarray:
    """Vectorized raycast_2d: (N,) distances with inf for misses."""
    return rays_segments_2d(origin, directions, world._segments_2d)


def raycast_3d(world: WorldModel, origin, direction, max_range: float,
               pose_overrides: dict[str, Pose3] | None = None):
    """Nearest 3D hit among objects, tables, and extruded walls.

    Returns (distance, label) where label is the object id or "structure",
    or None when nothing is hit within max_range. pose_overrides substitutes
    current object poses (e.g. while an object rides the gripper).
    """
    d = np.asarray(direction, dtype=float).reshape(1, 3)
    t, labels = batch_raycast(world, origin, d, pose_overrides)
    if t[0] <= max_range:
        return float(t[0]), labels[0]
    return None


def batch_raycast(world: WorldModel, origin, dirs, pose_overrides=None):
    """First-hit distances and labels for a bundle of rays from one origin.

    dirs may be non-unit; distances are in units of |dir| per ray.
    Returns (t (N,), labels list of str) with inf / "" where nothing is hit.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    origin = np.asarray(origin, dtype=float)
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    idx = np.full(n, -1, dtype=int)
    labels = ["structure"]

    if len(world._wall_quads):
        t = ray_quads(origin, dirs, world._wall_quads)
        closer = t < best
        best = np.where(closer, t, best)
        idx = np.where(closer, 0, idx)
    for table in world.tables:
        enter, exit_ = line_box_interval(origin, dirs, table.box_pose(), table.box_half())
        t = np.where((enter <= exit_) & (exit_ >= 0.0), np.maximum(enter, 0.0), np.inf)
        closer = t < best
        best = np.where(closer, t, best)
        idx = np.where(closer, 0, idx)
    for obj in world.objects:
        pose = obj.pose
        if pose_overrides and obj.id in pose_overrides:
            pose = pose_overrides[obj.id]
        enter, exit_ = obj.shape.line_interval(origin, dirs, pose)
        t = np.where((enter <= exit_) & (exit_ >= 0.0), np.maximum(enter, 0.0), np.inf)
        closer = t < best
        best = np.where(closer, t, best)
        labels.append(obj.id)
        idx = np.where(closer, len(labels) - 1, idx)

    out_labels = [labels[i] if i >= 0 else "" for i in idx]
    return best, out_labels


# ---------------------------------------------------------------------------
# Robot model

@dataclass(frozen=True)
class ArmModel:
    reach_min: float = 0.15
    reach_max: float = 0.56
    z_min: float = 0.10
    z_max: float = 1.10
    workspace_sector: float = math.radians(100.0)  # half-angle about base heading


@dataclass(frozen=True)
class GripperModel:
    max_opening: float = 0.05
    finger_depth: float = 0.04
    finger_thickness: float = 0.01
    hand_width: float = 0.07


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 60.0
    fy: float = 60.0
    cx: float = 40.0
    cy: float = 30.0
    width: int = 80
    height: int = 60


@dataclass(frozen=True)
class WristCamera:
    intrinsics: CameraIntrinsics  # depth channel; kept small so fusion is fast
    mount_xyz: tuple[float, float, float] = (0.30, 0.0, 1.00)
    mount_pitch_deg: float = 15.0
    detector_scale: int = 4  # the RGB detector runs at a finer resolution

    def detector_intrinsics(self) -> CameraIntrinsics:
        k = self.intrinsics
        s = self.detector_scale
        return CameraIntrinsics(
            fx=k.fx * s, fy=k.fy * s, cx=k.cx * s, cy=k.cy * s,
            width=k.width * s, height=k.height * s,
        )

    def mount_pose(self) -> Pose3:
        """Camera pose in the base frame: forward-looking, pitched down."""
        pitch = math.radians(self.mount_pitch_deg)
        # Base x-forward/z-up to camera z-forward/y-down, then pitch about
        # the camera x axis (positive pitch tips the optical axis downward).
        base_to_cam = np.array([
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
        ])
        cp, sp = math.cos(pitch), math.sin(pitch)
        pitch_rot = np.array([
            [1.0, 0.0, 0.0],
            [0.0, cp, sp],
            [0.0, -sp, cp],
        ])
        from .geometry import quat_from_matrix

        return Pose3(np.asarray(self.mount_xyz, dtype=float),
                     quat_from_matrix(base_to_cam @ pitch_rot))


@dataclass(frozen=True)
class RobotModel:
    footprint_radius: float = 0.30
    lidar_front: Pose2 = field(default_factory=lambda: Pose2(0.35, 0.0, 0.0))
    lidar_back: Pose2 = field(default_factory=lambda: Pose2(-0.35, 0.0, math.pi))
    camera: WristCamera = field(default_factory=lambda: WristCamera(CameraIntrinsics()))
    arm: ArmModel = field(default_factory=ArmModel)
    gripper: GripperModel = field(default_factory=GripperModel)

    def lidar_mount(self, mount: str) -> Pose2:
        if mount == "front":
            return self.lidar_front
        if mount == "back":
            return self.lidar_back
        raise ValueError(f"unknown lidar mount {mount!r}")

    def camera_pose(self, base: Pose2) -> Pose3:
        """World pose of the wrist camera in its navigation (carry) posture."""
        base3 = Pose3(np.array([base.x, base.y, 0.0]), quat_from_rpy(0.0, 0.0, base.theta))
        return base3.compose(self.camera.mount_pose())


@dataclass(frozen=True)
class MissionSpec:
    waypoints: tuple[Pose2, ...]
    target_class: str
    drop_pose: Pose2
    seed: int


# ---------------------------------------------------------------------------
# Scenario loading

def _require(mapping, key, path):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ParseError(f"missing required field {path}.{key}")
    return mapping[key]


def _parse_shape(spec, path) -> Shape:
    kind = _require(spec, "shape", path)
    if kind == "box":
        size = tuple(float(v) for v in _require(spec, "size", path))
        if len(size) != 3:
            raise ParseError(f"{path}.size must have 3 entries")
        return Box(size)
    if kind in ("cylinder", "capsule"):
        radius = float(_require(spec, "radius", path))
        length = float(_require(spec, "length", path))
        return Cylinder(radius, length) if kind == "cylinder" else Capsule(radius, length)
    raise ParseError(f"{path}.shape: unknown primitive {kind!r}")


def _shape_dims(shape: Shape):
    if isinstance(shape, Box):
        return shape.size
    return (shape.radius, shape.length)


def _parse_pose2(raw, path) -> Pose2:
    try:
        x, y, theta = (float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: expected [x, y, theta]") from exc
    return Pose2(x, y, theta)


def _validate_world(world: WorldModel):
    x0, y0, x1, y1 = world.bounds
    if not (x1 > x0 and y1 > y0):
        raise ValidationError("world.bounds: empty rectangle")
    seen = set()
    for i, obj in enumerate(world.objects):
        path = f"world.objects[{i}] ({obj.id})"
        if not obj.class_label:
            raise ValidationError(f"{path}.class: empty class label")
        if obj.id in seen:
            raise ValidationError(f"{path}: duplicate object id")
        seen.add(obj.id)
        if any(d <= 0 for d in _shape_dims(obj.shape)):
            raise ValidationError(f"{path}: dimensions must be strictly positive")
        ox, oy = obj.pose.translation[:2]
        if not world.contains_xy(ox, oy):
            raise ValidationError(f"{path}: object lies outside world bounds")
        support = world.support_height(ox, oy)
        bottom = obj.shape.min_z(obj.pose)
        if abs(bottom - support) > 1e-6:
            raise ValidationError(
                f"{path}: object does not rest on its support "
                f"(bottom z {bottom:.6f}, support {support:.6f})"
            )


def _validate_robot(robot: RobotModel):
    if not robot.arm.reach_min < robot.arm.reach_max:
        raise ValidationError("robot.arm: reach_min must be < reach_max")
    if robot.gripper.max_opening <= 0:
        raise ValidationError("robot.gripper.max_opening must be > 0")
    if not (0.0 < robot.arm.workspace_sector <= math.pi):
        raise ValidationError("robot.arm.workspace_sector must be in (0, pi]")
    if robot.camera.intrinsics.fx <= 0 or robot.camera.intrinsics.fy <= 0:
        raise ValidationError("robot.camera: fx and fy must be positive")


def load_scenario(path) -> tuple[WorldModel, RobotModel, MissionSpec]:
    """Load and fully validate a scenario file (see scenarios/ for the schema)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed scenario file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError("scenario root must be a mapping")
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict) -> tuple[WorldModel, RobotModel, MissionSpec]:
    wspec = _require(raw, "world", "scenario")
    bounds = tuple(float(v) for v in _require(wspec, "bounds", "world"))
    if len(bounds) != 4:
        raise ParseError("world.bounds must be [xmin, ymin, xmax, ymax]")
    walls = np.asarray(wspec.get("walls", []), dtype=float).reshape(-1, 4)
    tables = tuple(
        Table(tuple(float(v) for v in _require(t, "footprint", f"world.tables[{i}]")),
              float(_require(t, "top_height", f"world.tables[{i}]")))
        for i, t in enumerate(wspec.get("tables", []))
    )
    objects = []
    for i, ospec in enumerate(wspec.get("objects", [])):
        path = f"world.objects[{i}]"
        shape = _parse_shape(ospec, path)
        pos = [float(v) for v in _require(ospec, "position", path)]
        rpy = [float(v) for v in ospec.get("rpy", (0.0, 0.0, 0.0))]
        objects.append(
            SceneObject(
                id=str(_require(ospec, "id", path)),
                class_label=str(_require(ospec, "class", path)),
                shape=shape,
                pose=Pose3.from_rpy(pos, rpy),
            )
        )
    world = WorldModel(
        wall_segments=walls,
        tables=tables,
        objects=tuple(objects),
        bounds=bounds,
        wall_height=float(wspec.get("wall_height", 2.5)),
        tables_opaque_2d=bool(wspec.get("tables_opaque_2d", False)),
    )
    _validate_world(world)

    rspec = raw.get("robot", {}) or {}
    cam = rspec.get("camera", {}) or {}
    intr = CameraIntrinsics(
        fx=float(cam.get("fx", 60.0)),
        fy=float(cam.get("fy", 60.0)),
        cx=float(cam.get("cx", 40.0)),
        cy=float(cam.get("cy", 30.0)),
        width=int(cam.get("width", 80)),
        height=int(cam.get("height", 60)),
    )
    arm = rspec.get("arm", {}) or {}
    grip = rspec.get("gripper", {}) or {}
    robot = RobotModel(
        footprint_radius=float(rspec.get("footprint_radius", 0.30)),
        lidar_front=_parse_pose2(rspec.get("lidar_front", (0.35, 0.0, 0.0)), "robot.lidar_front"),
        lidar_back=_parse_pose2(rspec.get("lidar_back", (-0.35, 0.0, math.pi)), "robot.lidar_back"),
        camera=WristCamera(
            intrinsics=intr,
            mount_xyz=tuple(float(v) for v in cam.get("mount_xyz", (0.30, 0.0, 1.00))),
            mount_pitch_deg=float(cam.get("mount_pitch_deg", 15.0)),
            detector_scale=int(cam.get("detector_scale", 4)),
        ),
        arm=ArmModel(
            reach_min=float(arm.get("reach_min", 0.15)),
            reach_max=float(arm.get("reach_max", 0.56)),
            z_min=float(arm.get("z_min", 0.10)),
            z_max=float(arm.get("z_max", 1.10)),
            workspace_sector=math.radians(float(arm.get("workspace_sector_deg", 100.0))),
        ),
        gripper=GripperModel(
            max_opening=float(grip.get("max_opening", 0.05)),
            finger_depth=float(grip.get("finger_depth", 0.04)),
            finger_thickness=float(grip.get("finger_thickness", 0.01)),
            hand_width=float(grip.get("hand_width", 0.07)),
        ),
    )
    _validate_robot(robot)

    mspec = _require(raw, "mission", "scenario")
    waypoints = tuple(
        _parse_pose2(w, f"mission.waypoints[{i}]")
        for i, w in enumerate(_require(mspec, "waypoints", "mission"))
    )
    if not waypoints:
        raise ValidationError("mission.waypoints: at least one waypoint required")
    drop = _parse_pose2(_require(mspec, "drop_pose", "mission"), "mission.drop_pose")
    if not world.contains_xy(drop.x, drop.y):
        raise ValidationError("mission.drop_pose: outside world bounds")
    mission = MissionSpec(
        waypoints=waypoints,
        target_class=str(_require(mspec, "target_class", "mission")),
        drop_pose=drop,
        seed=int(mspec.get("seed", 0)),
    )
    return world, robot, mission


def scenario_to_dict(world: WorldModel, robot: RobotModel, mission: MissionSpec) -> dict:
    """Inverse of scenario_from_dict; load -> dump -> load round-trips."""

    def shape_dict(shape: Shape):
        if isinstance(shape, Box):
            return {"shape": "box", "size": [float(s) for s in shape.size]}
        kind = "cylinder" if isinstance(shape, Cylinder) else "capsule"
        return {"shape": kind, "radius": float(shape.radius), "length": float(shape.length)}

    def rpy_of(pose: Pose3):
        R = pose.matrix()
        pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
        return [roll, pitch, yaw]

    cam = robot.camera
    return {
        "world": {
            "bounds": [float(v) for v in world.bounds],
            "wall_height": float(world.wall_height),
            "tables_opaque_2d": bool(world.tables_opaque_2d),
            "walls": [[float(v) for v in seg] for seg in world.wall_segments],
            "tables": [
                {"footprint": [float(v) for v in t.footprint], "top_height": float(t.top_height)}
                for t in world.tables
            ],
            "objects": [
                {
                    "id": o.id,
                    "class": o.class_label,
                    **shape_dict(o.shape),
                    "position": [float(v) for v in o.pose.translation],
                    "rpy": rpy_of(o.pose),
                }
                for o in world.objects
            ],
        },
        "robot": {
            "footprint_radius": float(robot.footprint_radius),
            "lidar_front": [robot.lidar_front.x, robot.lidar_front.y, robot.lidar_front.theta],
            "lidar_back": [robot.lidar_back.x, robot.lidar_back.y, robot.lidar_back.theta],
            "camera": {
                "fx": cam.intrinsics.fx, "fy": cam.intrinsics.fy,
                "cx": cam.intrinsics.cx, "cy": cam.intrinsics.cy,
                "width": cam.intrinsics.width, "height": cam.intrinsics.height,
                "mount_xyz": [float(v) for v in cam.mount_xyz],
                "mount_pitch_deg": float(cam.mount_pitch_deg),
                "detector_scale": int(cam.detector_scale),
            },
            "arm": {
                "reach_min": robot.arm.reach_min, "reach_max": robot.arm.reach_max,
                "z_min": robot.arm.z_min, "z_max": robot.arm.z_max,
                "workspace_sector_deg": math.degrees(robot.arm.workspace_sector),
            },
            "gripper": {
                "max_opening": robot.gripper.max_opening,
                "finger_depth": robot.gripper.finger_depth,
                "finger_thickness": robot.gripper.finger_thickness,
                "hand_width": robot.gripper.hand_width,
            },
        },
        "mission": {
            "waypoints": [[w.x, w.y, w.theta] for w in mission.waypoints],
            "target_class": mission.target_class,
            "drop_pose": [mission.drop_pose.x, mission.drop_pose.y, mission.drop_pose.theta],
            "seed": mission.seed,
        },
    }


def save_scenario(path, world: WorldModel, robot: RobotModel, mission: MissionSpec):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scenario_to_dict(world, robot, mission), fh, sort_keys=False)
