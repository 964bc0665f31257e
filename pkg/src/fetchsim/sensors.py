"""Simulated sensing: twin 2D LiDARs, wrist depth camera, detector oracle.

All three channels are pure functions of (world, pose, config, rng); identical
inputs give bit-identical outputs. The detector stands in for a learned
network: it reads ground-truth geometry, then degrades the result with seeded
jitter, misses, and false positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import DetectorConfig, LidarConfig
from .geometry import Pose2, Pose3
from .world import (
    Box,
    CameraIntrinsics,
    Capsule,
    Cylinder,
    RobotModel,
    SceneObject,
    WorldModel,
    batch_raycast,
    raycast_2d_batch,
)


@dataclass
class LaserScan:
    timestamp: float
    mount: str  # "front" | "back"
    angle_min: float  # relative to the mount heading
    angle_max: float
    n_beams: int
    ranges: np.ndarray
    max_range: float
    mount_offset: Pose2 = field(default_factory=lambda: Pose2(0.0, 0.0, 0.0))

    @property
    def sentinel(self) -> float:
        return self.max_range + 1.0

    def beam_angles(self) -> np.ndarray:
        """Mount-relative beam angles; beam i at angle_min + i * fov / n."""
        fov = self.angle_max - self.angle_min
        return self.angle_min + np.arange(self.n_beams) * (fov / self.n_beams)


def simulate_lidar(world: WorldModel, base_pose: Pose2, robot: RobotModel, mount: str,
                   cfg: LidarConfig, rng: np.random.Generator,
                   timestamp: float = 0.0) -> LaserScan:
    """One 270-degree scan from the given mount, with Gaussian range noise."""
    if not world.contains_xy(base_pose.x, base_pose.y):
        raise ValueError(f"base pose ({base_pose.x}, {base_pose.y}) outside world bounds")
    offset = robot.lidar_mount(mount)
    sensor = base_pose.compose(offset)
    half = cfg.fov / 2.0
    angles = sensor.theta - half + np.arange(cfg.n_beams) * (cfg.fov / cfg.n_beams)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    dists = raycast_2d_batch(world, sensor.xy, dirs)
    noise = rng.normal(0.0, cfg.noise_sigma, cfg.n_beams) if cfg.noise_sigma > 0 else 0.0
    measured = dists + noise
    hit = np.isfinite(dists) & (measured <= cfg.max_range)
    ranges = np.where(hit, np.maximum(measured, 1e-6), cfg.max_range + 1.0)
    return LaserScan(
        timestamp=timestamp,
        mount=mount,
        angle_min=-half,
        angle_max=half,
        n_beams=cfg.n_beams,
        ranges=ranges,
        max_range=cfg.max_range,
        mount_offset=offset,
    )


@dataclass
class DepthImage:
    timestamp: float
    camera_pose: Pose3
    intrinsics: CameraIntrinsics
    depths: np.ndarray  # (height, width), meters; 0 marks an invalid pixel

    def valid_mask(self) -> np.ndarray:
        return self.depths > 0.0


def pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with z=1 for each pixel center, (H*W, 3)."""
    u = (np.arange(intrinsics.width) + 0.5 - intrinsics.cx) / intrinsics.fx
    v = (np.arange(intrinsics.height) + 0.5 - intrinsics.cy) / intrinsics.fy
    uu, vv = np.meshgrid(u, v)
    return np.column_stack([uu.ravel(), vv.ravel(), np.ones(uu.size)])


def render_depth(world: WorldModel, camera_pose: Pose3, intrinsics: CameraIntrinsics,
                 depth_max: float = 5.0, pose_overrides: dict[str, Pose3] | None = None,
                 timestamp: float = 0.0) -> DepthImage:
    """Pinhole z-depth render: each pixel stores the camera-frame z of the hit.

    Rays are parametrized with unit z in the camera frame, so the hit
    parameter is the z-depth directly (not the ray length).
    """
    if intrinsics.fx <= 0 or intrinsics.fy <= 0:
        raise ValueError("intrinsics must have positive focal lengths")
    dirs_cam = pixel_rays(intrinsics)
    dirs_world = camera_pose.rotate(dirs_cam)
    t, _ = batch_raycast(world, camera_pose.translation, dirs_world, pose_overrides)
    depths = np.where(np.isfinite(t) & (t <= depth_max), t, 0.0)
    return DepthImage(
        timestamp=timestamp,
        camera_pose=camera_pose,
        intrinsics=intrinsics,
        depths=depths.reshape(intrinsics.height, intrinsics.width),
    )


def backproject(depth: DepthImage) -> np.ndarray:
    """World-frame points for all valid pixels of a depth image, (N, 3)."""
    mask = depth.valid_mask().ravel()
    dirs = pixel_rays(depth.intrinsics)[mask]
    z = depth.depths.ravel()[mask]
    pts_cam = dirs * z[:, None]
    return depth.camera_pose.transform(pts_cam)


@dataclass
class Detection:
    timestamp: float
    class_label: str
    bbox: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max (pixels)
    confidence: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def _project(points_cam: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    z = points_cam[:, 2]
    u = K.fx * points_cam[:, 0] / z + K.cx
    v = K.fy * points_cam[:, 1] / z + K.cy
    return np.column_stack([u, v])


def _sphere_bbox(center_cam: np.ndarray, radius: float, K: CameraIntrinsics):
    """Exact pixel bbox of a sphere silhouette (tangent-line conic bounds)."""
    c = np.asarray(center_cam, dtype=float)
    if c[2] <= radius + 1e-9:
        return None
    M = np.outer(c, c) - (float(c @ c) - radius * radius) * np.eye(3)
    Kinv = np.array(
        [[1.0 / K.fx, 0.0, -K.cx / K.fx],
         [0.0, 1.0 / K.fy, -K.cy / K.fy],
         [0.0, 0.0, 1.0]]
    )
    Q = Kinv.T @ M @ Kinv
    Qs = np.linalg.inv(Q) * np.linalg.det(Q)  # adjugate
    du = Qs[0, 2] ** 2 - Qs[0, 0] * Qs[2, 2]
    dv = Qs[1, 2] ** 2 - Qs[1, 1] * Qs[2, 2]
    if du < 0 or dv < 0 or abs(Qs[2, 2]) < 1e-15:
        return None
    u0, u1 = sorted(((Qs[0, 2] - math.sqrt(du)) / Qs[2, 2],
                     (Qs[0, 2] + math.sqrt(du)) / Qs[2, 2]))
    v0, v1 = sorted(((Qs[1, 2] - math.sqrt(dv)) / Qs[2, 2],
                     (Qs[1, 2] + math.sqrt(dv)) / Qs[2, 2]))
    return u0, v0, u1, v1


def silhouette_bbox(obj: SceneObject, camera_pose: Pose3, K: CameraIntrinsics,
                    pose: Pose3 | None = None):
    """Projected silhouette bounding rectangle in continuous pixel coords.

    None when the primitive is not entirely in front of the camera.
    """
    pose = pose or obj.pose
    cam_inv = camera_pose.inverse()
    shape = obj.shape
    if isinstance(shape, Box):
        signs = np.array(list(np.ndindex(2, 2, 2))) * 2 - 1
        corners_local = signs * np.asarray(shape.half)
        pts = cam_inv.transform(pose.transform(corners_local))
        if np.any(pts[:, 2] <= 1e-6):
            return None
        uv = _project(pts, K)
        return uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max()
    if isinstance(shape, Capsule):
        h = shape.length / 2.0
        ends_local = np.array([[0.0, 0.0, -h], [0.0, 0.0, h]])
        a, b = cam_inv.transform(pose.transform(ends_local))
        boxes = []
        for s in np.linspace(0.0, 1.0, 33):
            bb = _sphere_bbox(a + s * (b - a), shape.radius, K)
            if bb is None:
                return None
            boxes.append(bb)
        boxes = np.asarray(boxes)
        return boxes[:, 0].min(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].max()
    if isinstance(shape, Cylinder):
        h = shape.length / 2.0
        phi = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
        ring = np.column_stack([shape.radius * np.cos(phi), shape.radius * np.sin(phi)])
        rims = np.vstack(
            [np.column_stack([ring, np.full(64, z)]) for z in (-h, h)]
        )
        pts = cam_inv.transform(pose.transform(rims))
        if np.any(pts[:, 2] <= 1e-6):
            return None
        uv = _project(pts, K)
        return uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max()
    raise TypeError(f"unsupported shape {shape!r}")


def visible_fraction(world: WorldModel, obj: SceneObject, camera_pose: Pose3,
                     K: CameraIntrinsics, pose_overrides=None, n_samples: int = 96) -> float:
    """Fraction of silhouette sample points whose view ray reaches the object."""
    pose = obj.pose
    if pose_overrides and obj.id in pose_overrides:
        pose = pose_overrides[obj.id]
    pts_world = obj.shape.surface_points(pose, n_samples)
    cam_inv = camera_pose.inverse()
    pts_cam = cam_inv.transform(pts_world)
    front = pts_cam[:, 2] > 1e-6
    if not np.any(front):
        return 0.0
    uv = _project(pts_cam[front], K)
    in_img = (
        (uv[:, 0] >= 0.0) & (uv[:, 0] <= K.width)
        & (uv[:, 1] >= 0.0) & (uv[:, 1] <= K.height)
    )
    candidates = pts_world[front][in_img]
    if len(candidates) == 0:
        return 0.0
    dirs = candidates - camera_pose.translation
    _, labels = batch_raycast(world, camera_pose.translation, dirs, pose_overrides)
    visible = sum(1 for lab in labels if lab == obj.id)
    return visible / len(candidates)


def detect_objects(world: WorldModel, camera_pose: Pose3, K: CameraIntrinsics,
                   cfg: DetectorConfig, rng: np.random.Generator,
                   pose_overrides: dict[str, Pose3] | None = None,
                   timestamp: float = 0.0) -> list[Detection]:
    """Detector oracle: true-class boxes with seeded jitter, misses, and FPs."""
    detections: list[Detection] = []
    for obj in world.objects:
        pose = obj.pose
        if pose_overrides and obj.id in pose_overrides:
            pose = pose_overrides[obj.id]
        dist = np.linalg.norm(pose.translation - camera_pose.translation)
        if dist > cfg.depth_max:
            continue
        bb = silhouette_bbox(obj, camera_pose, K, pose)
        if bb is None:
            continue
        x0 = max(0.0, bb[0])
        y0 = max(0.0, bb[1])
        x1 = min(float(K.width), bb[2])
        y1 = min(float(K.height), bb[3])
        if x1 - x0 < cfg.min_bbox_px or y1 - y0 < cfg.min_bbox_px:
            continue
        frac = visible_fraction(world, obj, camera_pose, K, pose_overrides)
        if frac < cfg.min_visible_fraction:
            continue
        if rng.random() < cfg.p_miss:
            continue
        if cfg.jitter_px > 0:
            jit = rng.normal(0.0, cfg.jitter_px, 4)
            x0, y0, x1, y1 = x0 + jit[0], y0 + jit[1], x1 + jit[2], y1 + jit[3]
            x0, x1 = min(x0, x1), max(x0, x1)
            y0, y1 = min(y0, y1), max(y0, y1)
        x0 = float(np.clip(x0, 0.0, K.width - 1e-3))
        x1 = float(np.clip(x1, x0 + 1e-3, K.width))
        y0 = float(np.clip(y0, 0.0, K.height - 1e-3))
        y1 = float(np.clip(y1, y0 + 1e-3, K.height))
        detections.append(
            Detection(timestamp, obj.class_label, (x0, y0, x1, y1), min(1.0, max(0.0, frac)))
        )
    for _ in range(rng.poisson(cfg.p_fp)):
        w = rng.uniform(2.0, 12.0)
        h = rng.uniform(2.0, 12.0)
        x0 = rng.uniform(0.0, K.width - w)
        y0 = rng.uniform(0.0, K.height - h)
        label = cfg.vocabulary[rng.integers(len(cfg.vocabulary))]
        detections.append(
            Detection(timestamp, label, (x0, y0, x0 + w, y0 + h), float(rng.uniform(0.2, 0.8)))
        )
    return detections


def scan_to_csv(scan: LaserScan) -> str:
    """Debug dump: one `angle,range` row per beam (mount-relative angles)."""
    lines = ["angle,range"]
    for ang, rng_ in zip(scan.beam_angles(), scan.ranges):
        lines.append(f"{ang:.6f},{rng_:.6f}")
    return "\n".join(lines) + "\n"


def depth_to_pgm(depth: DepthImage, depth_max: float = 5.0) -> bytes:
    """Debug dump: depth as an 8-bit portable graymap (near = bright)."""
    d = depth.depths
    scaled = np.where(d > 0.0, 255 - np.clip(d / depth_max, 0.0, 1.0) * 254.0, 0.0)
    data = scaled.astype(np.uint8)
    header = f"P5\n{depth.intrinsics.width} {depth.intrinsics.height}\n255\n".encode()
    return header + data.tobytes()
