"""Antipodal grasp planning on reconstructed point clouds.

Candidates are built from local Darboux frames (surface normal, principal
tangent direction) and scored by a geometric antipodal-quality times
collision-free term. This replaces a learned grasp classifier while keeping
the scored-hypothesis interface; the ranking, reachability gate, and
execution test are what the rest of the pipeline consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import GraspConfig
from .geometry import Pose2, Pose3, quat_from_matrix, wrap_angle
from .world import ArmModel, GripperModel, WorldModel

SELECTED, NEEDS_REPOSITION, NO_FEASIBLE_GRASP = "selected", "needs_reposition", "no_feasible_grasp"


class TooFewPoints(Exception):
    """Cloud smaller than the neighbor count."""


class NoCandidates(Exception):
    """No seed produced a valid grasp candidate."""


@dataclass
class GraspCandidate:
    """6-DoF grasp. Rotation columns are (approach, closing, hand) axes."""

    pose: Pose3
    opening: float
    score: float = 0.0

    @property
    def approach_axis(self) -> np.ndarray:
        return self.pose.matrix()[:, 0]

    @property
    def closing_axis(self) -> np.ndarray:
        return self.pose.matrix()[:, 1]

    @property
    def hand_axis(self) -> np.ndarray:
        return self.pose.matrix()[:, 2]


def estimate_normals(points: np.ndarray, k: int, viewpoint) -> np.ndarray:
    """Per-point unit normals from k-NN PCA, oriented toward the viewpoint.

    The normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance; `viewpoint` is typically the centroid of the scan camera
    origins, so normals face outward toward the sensor.
    """
    points = np.asarray(points, dtype=float)
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(points) < k:
        raise TooFewPoints(f"cloud has {len(points)} points, need >= {k}")
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k)
    nbrs = points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    covs = np.einsum("nki,nkj->nij", centered, centered) / (k - 1)
    _, vecs = np.linalg.eigh(covs)
    normals = vecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=float) - points
    flip = np.einsum("ij,ij->i", normals, to_view) < 0.0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.maximum(norms, 1e-12)


def _local_coords(points, center, R):
    return (points - center) @ R


def _hand_masks(local, opening, gripper: GripperModel, palm_depth: float):
    """Boolean masks (closing region, finger collision, palm collision)."""
    ua, uc, ub = local[:, 0], local[:, 1], local[:, 2]
    half_open = opening / 2.0
    lateral = np.abs(ub) <= gripper.hand_width / 2.0
    in_depth = np.abs(ua) <= gripper.finger_depth / 2.0
    closing = lateral & in_depth & (np.abs(uc) <= half_open)
    fingers = (
        lateral & in_depth
        & (np.abs(uc) > half_open)
        & (np.abs(uc) <= half_open + gripper.finger_thickness)
    )
    palm = (
        lateral
        & (ua < -gripper.finger_depth / 2.0)
        & (ua >= -gripper.finger_depth / 2.0 - palm_depth)
        & (np.abs(uc) <= half_open + gripper.finger_thickness)
    )
    return closing, fingers, palm


def surface_variation(points: np.ndarray, k: int) -> np.ndarray:
    """Pauly surface variation per point: lambda_min / trace of the k-NN
    covariance. Zero on planes, large on tightly curved patches and edges."""
    points = np.asarray(points, dtype=float)
    k = min(k, len(points))
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k)
    nbrs = points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    covs = np.einsum("nki,nkj->nij", centered, centered)
    vals = np.linalg.eigvalsh(covs)
    trace = vals.sum(axis=1)
    return np.where(trace > 1e-18, vals[:, 0] / trace, 0.0)


def _darboux_frame(points, neighbor_deltas, normal, coplanar_sigma=0.008):
    """Approach anti-parallel to the normal, closing along the minor tangent
    (the max-curvature direction on curved patches).

    The tangent covariance is weighted by coplanarity with the seed's tangent
    plane so nearby support-surface points (a table under the object) do not
    drag the principal direction off the object's own axis.
    """
    d = np.asarray(neighbor_deltas, dtype=float)
    w = np.exp(-(d @ normal) ** 2 / (2.0 * coplanar_sigma * coplanar_sigma))
    cov = (d * w[:, None]).T @ d
    P = np.eye(3) - np.outer(normal, normal)
    cov_t = P @ cov @ P
    _, vecs = np.linalg.eigh(cov_t)
    major = vecs[:, 2]
    major = major - normal * float(normal @ major)
    n_major = np.linalg.norm(major)
    if n_major < 1e-9:
        return None
    major /= n_major
    closing = np.cross(normal, major)
    closing /= np.linalg.norm(closing)
    approach = -normal
    hand = np.cross(approach, closing)
    return np.column_stack([approach, closing, hand])


def generate_candidates(cloud: np.ndarray, normals: np.ndarray, gripper: GripperModel,
                        n_samples: int, rng: np.random.Generator,
                        cfg: GraspConfig | None = None) -> list[GraspCandidate]:
    """Sample seed points, build Darboux frames, slide to a collision-free
    standoff, keep candidates with enough points between the fingers."""
    cfg = cfg or GraspConfig()
    points = np.asarray(cloud, dtype=float)
    if len(points) == 0:
        raise NoCandidates("empty cloud")
    k = min(cfg.knn, len(points))
    if k < 3:
        raise NoCandidates("cloud too small for local frames")
    tree = cKDTree(points)
    # Seeds are drawn with probability proportional to local surface
    # variation: curved patches are where antipodal grasps live, while a flat
    # support surface contributes (near) nothing. A soft gravity gate further
    # favors points graspable from above. Purely geometric, so every curved
    # object in the volume gets sampled, not just the target.
    variation = surface_variation(points, k)
    weights = variation + 1e-6
    if cfg.seed_up_min > -1.0:
        weights = weights * np.where(
            normals[:, 2] >= cfg.seed_up_min, 1.0, cfg.seed_gate_weight
        )
    weights /= weights.sum()
    seeds = rng.choice(len(points), size=n_samples, p=weights)
    out: list[GraspCandidate] = []
    half_depth = gripper.finger_depth / 2.0
    deltas = np.arange(half_depth, -half_depth - 1e-12, -cfg.slide_step)
    half_open = gripper.max_opening / 2.0
    frame_radius = max(3.0 * cfg.slide_step, gripper.max_opening)
    for seed in seeds:
        seed_pt = points[seed]
        nn = tree.query_ball_point(seed_pt, frame_radius)
        R = _darboux_frame(points, points[nn] - seed_pt, normals[seed])
        if R is None:
            continue
        approach = R[:, 0]
        local = _local_coords(points, seed_pt, R)
        ua, uc, ub = local[:, 0], local[:, 1], local[:, 2]
        lateral = np.abs(ub) <= gripper.hand_width / 2.0
        closing_band = lateral & (np.abs(uc) <= half_open)
        finger_band = lateral & (np.abs(uc) > half_open) & (
            np.abs(uc) <= half_open + gripper.finger_thickness
        )
        palm_band = lateral & (np.abs(uc) <= half_open + gripper.finger_thickness)
        ua_shift = ua[None, :] - deltas[:, None]
        in_depth = np.abs(ua_shift) <= half_depth
        finger_hit = (in_depth & finger_band[None, :]).any(axis=1)
        palm_hit = (
            (ua_shift < -half_depth)
            & (ua_shift >= -half_depth - cfg.palm_depth)
            & palm_band[None, :]
        ).any(axis=1)
        collision_free = ~(finger_hit | palm_hit)
        if not collision_free.any():
            continue
        di = int(np.argmax(collision_free))  # deepest collision-free standoff
        enclosed = in_depth[di] & closing_band
        if int(enclosed.sum()) < cfg.n_min:
            continue
        span = float(uc[enclosed].max() - uc[enclosed].min())
        opening = min(gripper.max_opening, span + 2.0 * cfg.opening_clearance)
        center = seed_pt + approach * float(deltas[di])
        out.append(GraspCandidate(Pose3(center, quat_from_matrix(R)), opening))
    if not out:
        raise NoCandidates("no seed yielded a collision-free enclosing grasp")
    return out


def score_candidates(candidates: list[GraspCandidate], cloud: np.ndarray,
                     normals: np.ndarray, gripper: GripperModel,
                     cfg: GraspConfig | None = None) -> list[GraspCandidate]:
    """Antipodal quality times a binary collision term; ranked descending.

    Quality is the fraction of closing-region points whose normals align with
    either closing direction within angle_max, and both directions must be
    touched (a pinch needs opposing contacts). Ties keep generation order.
    """
    cfg = cfg or GraspConfig()
    points = np.asarray(cloud, dtype=float)
    cos_max = math.cos(math.radians(cfg.angle_max_deg))
    for cand in candidates:
        R = cand.pose.matrix()
        local = _local_coords(points, cand.pose.translation, R)
        closing, fingers, palm = _hand_masks(local, gripper.max_opening, gripper, cfg.palm_depth)
        if fingers.any() or palm.any():
            cand.score = 0.0
            continue
        n_in = int(closing.sum())
        if n_in == 0:
            cand.score = 0.0
            continue
        align = normals[closing] @ R[:, 1]
        pos = align >= cos_max
        neg = -align >= cos_max
        if not (pos.any() and neg.any()):
            cand.score = 0.0
            continue
        cand.score = float((pos.sum() + neg.sum()) / n_in)
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    return [candidates[i] for i in order]


def check_reachable(base_pose: Pose2, grasp: GraspCandidate, arm: ArmModel) -> bool:
    """Workspace model: horizontal reach annulus, height band, heading sector."""
    t = grasp.pose.translation
    dx = float(t[0]) - base_pose.x
    dy = float(t[1]) - base_pose.y
    dist = math.hypot(dx, dy)
    if not (arm.reach_min <= dist <= arm.reach_max):
        return False
    if not (arm.z_min <= float(t[2]) <= arm.z_max):
        return False
    bearing = wrap_angle(math.atan2(dy, dx) - base_pose.theta)
    return abs(bearing) <= arm.workspace_sector


@dataclass(frozen=True)
class GraspSelection:
    status: str  # SELECTED | NEEDS_REPOSITION | NO_FEASIBLE_GRASP
    candidate: GraspCandidate | None = None


def select_grasp(ranked: list[GraspCandidate], base_pose: Pose2,
                 arm: ArmModel) -> GraspSelection:
    """Highest-ranked reachable candidate; NEEDS_REPOSITION when scored
    candidates exist but none is reachable from here."""
    scored = [c for c in ranked if c.score > 0.0]
    if not scored:
        return GraspSelection(NO_FEASIBLE_GRASP)
    for cand in scored:
        if check_reachable(base_pose, cand, arm):
            return GraspSelection(SELECTED, cand)
    return GraspSelection(NEEDS_REPOSITION)


@dataclass(frozen=True)
class GraspOutcome:
    held: bool
    object_id: str | None = None
    width: float = 0.0


def execute_grasp(world: WorldModel, grasp: GraspCandidate, gripper: GripperModel,
                  pose_overrides: dict[str, Pose3] | None = None) -> GraspOutcome:
    """Simulated open-loop closing test.

    Held iff the closing segment (max_opening long, through the grasp point)
    meets an object on both sides of the gripper center and the object's
    local width fits inside the opening. No regrasping, no feedback.
    """
    center = grasp.pose.translation
    c_axis = grasp.closing_axis
    half = gripper.max_opening / 2.0
    for obj in world.objects:
        pose = obj.pose
        if pose_overrides and obj.id in pose_overrides:
            pose = pose_overrides[obj.id]
        enter, exit_ = obj.shape.line_interval(center, c_axis.reshape(1, 3), pose)
        t0, t1 = float(enter[0]), float(exit_[0])
        if t0 > t1:
            continue
        lo = max(t0, -half)
        hi = min(t1, half)
        if lo < -1e-9 and hi > 1e-9 and (t1 - t0) <= gripper.max_opening + 1e-9:
            return GraspOutcome(True, obj.id, t1 - t0)
    return GraspOutcome(False)


def candidates_to_csv(candidates: list[GraspCandidate]) -> str:
    lines = ["tx,ty,tz,qw,qx,qy,qz,opening,score"]
    for c in candidates:
        t = c.pose.translation
        q = c.pose.rotation
        lines.append(
            f"{t[0]:.6f},{t[1]:.6f},{t[2]:.6f},"
            f"{q[0]:.6f},{q[1]:.6f},{q[2]:.6f},{q[3]:.6f},"
            f"{c.opening:.6f},{c.score:.6f}"
        )
    return "\n".join(lines) + "\n"
