"""Image-space tracks and bearing-only triangulation.

Detections (2 Hz) are associated to tracks by IoU with a class gate; between
detections each track is re-projected at camera rate from a provisional 3D
anchor, standing in for a learned correlation-filter tracker. Once a track
has been seen for the maturity frame count, all accumulated bearing rays are
triangulated exactly once by the closed-form midpoint method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import PerceptionConfig
from .geometry import Pose3
from .sensors import Detection
from .world import CameraIntrinsics, WorldModel, raycast_3d

TENTATIVE, MATURE, LOST = "tentative", "mature", "lost"


class InsufficientObservations(Exception):
    """Triangulation needs at least two bearing rays."""


class DegenerateBaseline(Exception):
    """Bearing rays are near parallel (only raised when the check is enabled)."""


def iou(a, b) -> float:
    """Intersection over union of two (x0, y0, x1, y1) rectangles."""
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


@dataclass
class Track:
    id: int
    class_label: str
    bbox: tuple[float, float, float, float]
    frames_tracked: int = 1
    observations: list[tuple[Pose3, np.ndarray]] = field(default_factory=list)
    depths: list[float] = field(default_factory=list)
    state: str = TENTATIVE
    triangulated: bool = False
    anchor_z: float = 1.0  # camera-frame depth of the anchor at the last frame

    def bbox_center(self):
        x0, y0, x1, y1 = self.bbox
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))


@dataclass(frozen=True)
class ObjectEstimate:
    class_label: str
    position: np.ndarray  # (3,) meters, world frame
    n_rays: int
    residual_rms: float

    def __post_init__(self):
        if self.n_rays < 2:
            raise ValueError("estimate needs at least two rays")


def associate(tracks: list[Track], detections: list[Detection], iou_min: float):
    """Greedy descending-IoU matching with a class gate.

    Returns (pairs, unmatched_track_idx, unmatched_detection_idx); pairs are
    (track_index, detection_index). Each side is used at most once. Ties in
    IoU resolve by (track, detection) index order, keeping runs reproducible.
    """
    scored = []
    for ti, track in enumerate(tracks):
        if track.state == LOST:
            continue
        for di, det in enumerate(detections):
            if det.class_label != track.class_label:
                continue
            v = iou(track.bbox, det.bbox)
            if v >= iou_min:
                scored.append((-v, ti, di))
    scored.sort()
    pairs = []
    used_t: set[int] = set()
    used_d: set[int] = set()
    for _, ti, di in scored:
        if ti in used_t or di in used_d:
            continue
        pairs.append((ti, di))
        used_t.add(ti)
        used_d.add(di)
    unmatched_t = [i for i, t in enumerate(tracks) if i not in used_t and t.state != LOST]
    unmatched_d = [i for i in range(len(detections)) if i not in used_d]
    return pairs, unmatched_t, unmatched_d


def bearing_ray(camera_pose: Pose3, K: CameraIntrinsics, u: float, v: float) -> np.ndarray:
    """World-frame unit ray through pixel (u, v)."""
    d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    d = camera_pose.rotate(d / np.linalg.norm(d))
    return d / np.linalg.norm(d)


def _record_observation(track: Track, camera_pose: Pose3, K: CameraIntrinsics,
                        world: WorldModel, pose_overrides=None):
    u, v = track.bbox_center()
    ray = bearing_ray(camera_pose, K, u, v)
    track.observations.append((camera_pose, ray))
    hit = raycast_3d(world, camera_pose.translation, ray, 20.0, pose_overrides)
    if hit is not None:
        track.depths.append(hit[0])
    elif track.depths:
        track.depths.append(track.depths[-1])
    else:
        track.depths.append(2.0)


def _anchor(track: Track) -> np.ndarray:
    """Provisional 3D anchor: back-projections at the current median depth."""
    depth = float(np.median(track.depths))
    pts = [pose.translation + depth * ray for pose, ray in track.observations]
    return np.mean(pts, axis=0)


def spawn_track(track_id: int, det: Detection, camera_pose: Pose3, K: CameraIntrinsics,
                world: WorldModel, pose_overrides=None) -> Track:
    track = Track(id=track_id, class_label=det.class_label, bbox=det.bbox)
    _record_observation(track, camera_pose, K, world, pose_overrides)
    anchor_cam = camera_pose.inverse().transform(_anchor(track))
    track.anchor_z = max(float(anchor_cam[2]), 1e-3)
    return track


def propagate(track: Track, camera_pose: Pose3, world: WorldModel, K: CameraIntrinsics,
              rng: np.random.Generator, jitter_px: float = 0.0,
              maturity_frames: int = 30, pose_overrides=None) -> Track:
    """Advance a track one camera frame: re-project its anchor, append a ray.

    The bbox is re-centered on the anchor's projection and rescaled by the
    depth ratio, with seeded pixel jitter. A track whose re-projection leaves
    the image is marked lost.
    """
    if track.state == LOST:
        raise ValueError("cannot propagate a lost track")
    anchor = _anchor(track)
    pc = camera_pose.inverse().transform(anchor)
    if pc[2] <= 1e-6:
        track.state = LOST
        return track
    u = K.fx * pc[0] / pc[2] + K.cx
    v = K.fy * pc[1] / pc[2] + K.cy
    if not (0.0 <= u <= K.width and 0.0 <= v <= K.height):
        track.state = LOST
        return track
    scale = track.anchor_z / float(pc[2])
    x0, y0, x1, y1 = track.bbox
    half_w = 0.5 * (x1 - x0) * scale
    half_h = 0.5 * (y1 - y0) * scale
    if jitter_px > 0.0:
        u += rng.normal(0.0, jitter_px)
        v += rng.normal(0.0, jitter_px)
    track.bbox = (u - half_w, v - half_h, u + half_w, v + half_h)
    track.anchor_z = float(pc[2])
    track.frames_tracked += 1
    _record_observation(track, camera_pose, K, world, pose_overrides)
    if track.frames_tracked >= maturity_frames and track.state == TENTATIVE:
        track.state = MATURE
    return track


def triangulate(observations, min_baseline_check: bool = False,
                max_condition: float = 1e8, class_label: str = "") -> ObjectEstimate:
    """Midpoint-method least squares: the point minimizing summed squared
    distances to all rays, solved in closed form from the 3x3 normal system.
    """
    if len(observations) < 2:
        raise InsufficientObservations(f"{len(observations)} ray(s), need >= 2")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    projs = []
    origins = []
    for pose, ray in observations:
        d = np.asarray(ray, dtype=float)
        c = np.asarray(pose.translation if isinstance(pose, Pose3) else pose, dtype=float)
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ c
        projs.append(P)
        origins.append(c)
    if min_baseline_check:
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > max_condition:
            raise DegenerateBaseline(f"normal-system condition number {cond:.3g}")
    # lstsq tolerates the singular system of perfectly parallel rays: the
    # estimate is then the minimum-norm solution, reproducing the pipeline's
    # accept-any-baseline behavior when the check is off.
    point, *_ = np.linalg.lstsq(A, b, rcond=None)
    sq = [float(np.dot(P @ (point - c), P @ (point - c))) for P, c in zip(projs, origins)]
    rms = math.sqrt(sum(sq) / len(sq))
    return ObjectEstimate(class_label, point, len(observations), rms)


def maybe_localize_target(track: Track, cfg: PerceptionConfig | None = None):
    """ObjectEstimate once the track is mature; None while not ready.

    Fires exactly once per track (no Bayesian refinement afterwards) unless
    cfg.refine_after_first is set.
    """
    cfg = cfg or PerceptionConfig()
    if track.state == LOST or track.frames_tracked < cfg.maturity_frames:
        return None
    if track.triangulated and not cfg.refine_after_first:
        return None
    est = triangulate(
        track.observations,
        min_baseline_check=cfg.min_baseline_check,
        max_condition=cfg.max_condition,
        class_label=track.class_label,
    )
    track.triangulated = True
    return est


class Tracker:
    """Single-writer track store driven by the mission loop."""

    def __init__(self, target_class: str, cfg: PerceptionConfig):
        self.target_class = target_class
        self.cfg = cfg
        self.tracks: list[Track] = []
        self._next_id = 1

    def live_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.state != LOST]

    def on_detections(self, detections, camera_pose, world, K, pose_overrides=None):
        """Associate a detector frame; unmatched target-class detections spawn
        tentative tracks. Returns (matched_pairs, spawned_tracks)."""
        live = self.live_tracks()
        pairs, _, unmatched_d = associate(live, detections, self.cfg.iou_min)
        for ti, di in pairs:
            live[ti].bbox = detections[di].bbox
        spawned = []
        for di in unmatched_d:
            det = detections[di]
            if det.class_label != self.target_class:
                continue
            track = spawn_track(self._next_id, det, camera_pose, K, world, pose_overrides)
            self._next_id += 1
            self.tracks.append(track)
            spawned.append(track)
        return pairs, spawned

    def on_camera_frame(self, camera_pose, world, K, rng, pose_overrides=None):
        """Propagate all live tracks one camera frame; returns newly lost ones."""
        lost = []
        for track in self.live_tracks():
            propagate(
                track, camera_pose, world, K, rng,
                jitter_px=self.cfg.track_jitter_px,
                maturity_frames=self.cfg.maturity_frames,
                pose_overrides=pose_overrides,
            )
            if track.state == LOST:
                lost.append(track)
        # Tracks lost before maturity carry too little evidence; drop them.
        self.tracks = [
            t for t in self.tracks
            if t.state != LOST or t.frames_tracked >= self.cfg.maturity_frames
        ]
        return lost

    def ready_estimates(self):
        """Estimates from tracks that just crossed maturity (each fires once)."""
        out = []
        for track in self.tracks:
            est = maybe_localize_target(track, self.cfg)
            if est is not None:
                out.append((track, est))
        return out
