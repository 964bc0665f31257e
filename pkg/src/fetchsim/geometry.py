"""Poses, rotations, and closed-form ray/primitive intersections.

Units are meters and radians throughout. Quaternions are stored (w, x, y, z).
Camera frames follow the pinhole convention: +z optical axis, +x image right,
+y image down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(theta: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    return -((-theta + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True, eq=False)
class Pose2:
    """Planar pose (x, y, heading). Heading is normalized on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def transform_xy(self, local: np.ndarray) -> np.ndarray:
        """Map local-frame 2D points (..., 2) into the world frame."""
        local = np.asarray(local, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(local)
        out[..., 0] = c * local[..., 0] - s * local[..., 1] + self.x
        out[..., 1] = s * local[..., 0] + c * local[..., 1] + self.y
        return out

    def compose(self, other: "Pose2") -> "Pose2":
        """Pose of `other` expressed in this pose's parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero quaternion")
    return q / n


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic x-y-z (roll, pitch, yaw) Euler angles to quaternion."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R) -> np.ndarray:
    """Rotation matrix to quaternion (Shepperd's method, w >= 0)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform: rotation (unit quaternion, w-first) then translation."""

    translation: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n:.9f} is not 1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q / n)

    @classmethod
    def identity(cls) -> "Pose3":
        return cls(np.zeros(3))

    @classmethod
    def from_rpy(cls, xyz, rpy) -> "Pose3":
        return cls(np.asarray(xyz, dtype=float), quat_from_rpy(*rpy))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Local points (..., 3) into the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix().T + self.translation

    def inv_transform(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation) @ self.matrix()

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.matrix().T

    def inv_rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.matrix()

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.transform(other.translation), quat_mul(self.rotation, other.rotation))

    def inverse(self) -> "Pose3":
        R = self.matrix()
        qinv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose3(-(R.T @ self.translation), qinv)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose3:
    """Camera pose at `eye` with the optical axis through `target`.

    Uses the +z-forward / +y-down camera convention; `up` fixes the roll.
    """
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look_at target coincides with eye")
    z = fwd / n
    right = np.cross(z, np.asarray(up, dtype=float))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        right = np.cross(z, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
    x = right / rn
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return Pose3(eye, quat_from_matrix(R))


# ---------------------------------------------------------------------------
# 2D ray casting

def ray_segments_2d(origin, direction, segments) -> np.ndarray:
    """Ray-vs-segment distances.

    segments has shape (M, 4) as (x1, y1, x2, y2). Returns an (M,) array of
    hit distances along the ray (inf where the segment is missed).
    """
    segments = np.asarray(segments, dtype=float).reshape(-1, 4)
    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = float(direction[0]), float(direction[1])
    ex = segments[:, 2] - segments[:, 0]
    ey = segments[:, 3] - segments[:, 1]
    denom = dx * ey - dy * ex
    qx = segments[:, 0] - ox
    qy = segments[:, 1] - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qx * ey - qy * ex) / denom
        s = (qx * dy - qy * dx) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
    return np.where(hit, t, np.inf)


def rays_segments_2d(origin, directions, segments) -> np.ndarray:
    """Nearest segment hit for a fan of rays from one origin.

    directions (N, 2), segments (M, 4); returns (N,) distances (inf = miss).
    """
    segments = np.asarray(segments, dtype=float).reshape(-1, 4)
    if segments.shape[0] == 0:
        return np.full(len(directions), np.inf)
    directions = np.asarray(directions, dtype=float)
    ox, oy = float(origin[0]), float(origin[1])
    ex = segments[:, 2] - segments[:, 0]      # (M,)
    ey = segments[:, 3] - segments[:, 1]
    qx = segments[:, 0] - ox
    qy = segments[:, 1] - oy
    dx = directions[:, 0:1]                   # (N,1)
    dy = directions[:, 1:2]
    denom = dx * ey - dy * ex                 # (N,M)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qx * ey - qy * ex) / denom
        s = (qx * dy - qy * dx) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
    t = np.where(hit, t, np.inf)
    return t.min(axis=1)


def rect_edges(xmin: float, ymin: float, xmax: float, ymax: float) -> np.ndarray:
    """Four boundary segments of an axis-aligned rectangle, shape (4, 4)."""
    return np.array(
        [
            [xmin, ymin, xmax, ymin],
            [xmax, ymin, xmax, ymax],
            [xmax, ymax, xmin, ymax],
            [xmin, ymax, xmin, ymin],
        ]
    )


# ---------------------------------------------------------------------------
# 3D line/ray vs solid primitives.
#
# Interval functions return (t_enter, t_exit) arrays for a bundle of lines
# p(t) = origin + t * dir sharing one origin; where the line misses,
# t_enter > t_exit. Directions need not be unit length: t is expressed in
# units of |dir|, which callers exploit for z-depth parametrization.

_BIG = 1e30


def _slab(o: float, d, lo: float, hi: float):
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - o) / d
        t1 = (hi - o) / d
    swap = d < 0
    enter = np.where(swap, t1, t0)
    exit_ = np.where(swap, t0, t1)
    inside = (o >= lo) & (o <= hi)
    degenerate = np.abs(d) < 1e-14
    enter = np.where(degenerate, np.where(inside, -_BIG, _BIG), enter)
    exit_ = np.where(degenerate, np.where(inside, _BIG, -_BIG), exit_)
    return enter, exit_


def line_box_interval(origin, dirs, pose: Pose3, half_extents):
    """Entry/exit parameters of lines through an oriented box."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    o = pose.inv_transform(np.asarray(origin, dtype=float))
    d = pose.inv_rotate(dirs)
    hx, hy, hz = [float(h) for h in half_extents]
    e0, x0 = _slab(o[0], d[:, 0], -hx, hx)
    e1, x1 = _slab(o[1], d[:, 1], -hy, hy)
    e2, x2 = _slab(o[2], d[:, 2], -hz, hz)
    enter = np.maximum(np.maximum(e0, e1), e2)
    exit_ = np.minimum(np.minimum(x0, x1), x2)
    return enter, exit_


def _line_sphere_local(o, d, center, radius):
    oc = o - center
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * (d @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - 4.0 * a * c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
    enter = np.where(ok, t0, _BIG)
    exit_ = np.where(ok, t1, -_BIG)
    return enter, exit_


def line_cylinder_interval(origin, dirs, pose: Pose3, radius: float, length: float):
    """Solid finite cylinder, axis along local +z, centered at the pose origin."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    o = pose.inv_transform(np.asarray(origin, dtype=float))
    d = pose.inv_rotate(dirs)
    h = 0.5 * float(length)
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[0] * d[:, 0] + o[1] * d[:, 1])
    c = o[0] ** 2 + o[1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    radial = a > 1e-14
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        q0 = (-b - sq) / (2.0 * a)
        q1 = (-b + sq) / (2.0 * a)
    inside_r = c <= 0.0
    enter_r = np.where(radial, np.where(ok, q0, _BIG), np.where(inside_r, -_BIG, _BIG))
    exit_r = np.where(radial, np.where(ok, q1, -_BIG), np.where(inside_r, _BIG, -_BIG))
    enter_z, exit_z = _slab(o[2], d[:, 2], -h, h)
    return np.maximum(enter_r, enter_z), np.minimum(exit_r, exit_z)


def line_capsule_interval(origin, dirs, pose: Pose3, radius: float, length: float):
    """Solid capsule: segment of `length` along local z, inflated by `radius`."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    o = pose.inv_transform(np.asarray(origin, dtype=float))
    d = pose.inv_rotate(dirs)
    h = 0.5 * float(length)
    # Cylinder body clipped to |z| <= h, plus the two end spheres. The union
    # along any line through a convex solid is a single interval.
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[0] * d[:, 0] + o[1] * d[:, 1])
    c = o[0] ** 2 + o[1] ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    radial = a > 1e-14
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        q0 = (-b - sq) / (2.0 * a)
        q1 = (-b + sq) / (2.0 * a)
    inside_r = c <= 0.0
    enter_r = np.where(radial, np.where(ok, q0, _BIG), np.where(inside_r, -_BIG, _BIG))
    exit_r = np.where(radial, np.where(ok, q1, -_BIG), np.where(inside_r, _BIG, -_BIG))
    enter_z, exit_z = _slab(o[2], d[:, 2], -h, h)
    enter_cyl = np.maximum(enter_r, enter_z)
    exit_cyl = np.minimum(exit_r, exit_z)

    enter_a, exit_a = _line_sphere_local(o, d, np.array([0.0, 0.0, -h]), radius)
    enter_b, exit_b = _line_sphere_local(o, d, np.array([0.0, 0.0, h]), radius)

    enters = np.stack([enter_cyl, enter_a, enter_b])
    exits = np.stack([exit_cyl, exit_a, exit_b])
    valid = enters <= exits
    enters = np.where(valid, enters, _BIG)
    exits = np.where(valid, exits, -_BIG)
    return enters.min(axis=0), exits.max(axis=0)


def ray_quads(origin, dirs, corners) -> np.ndarray:
    """First-hit distances of rays against a set of rectangles in 3D.

    corners has shape (M, 4, 3), each rectangle given as p0, p1, p2, p3 with
    p1 - p0 and p3 - p0 the edge directions. Returns (N,) min distances.
    """
    corners = np.asarray(corners, dtype=float)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    origin = np.asarray(origin, dtype=float)
    best = np.full(dirs.shape[0], np.inf)
    for quad in corners:
        p0 = quad[0]
        eu = quad[1] - p0
        ev = quad[3] - p0
        n = np.cross(eu, ev)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p0 - origin) @ n) / denom
            pts = origin + t[:, None] * dirs
            rel = pts - p0
            u = (rel @ eu) / float(eu @ eu)
            v = (rel @ ev) / float(ev @ ev)
        hit = (
            (np.abs(denom) > 1e-14)
            & (t >= 0.0)
            & (u >= -1e-9)
            & (u <= 1.0 + 1e-9)
            & (v >= -1e-9)
            & (v <= 1.0 + 1e-9)
        )
        best = np.minimum(best, np.where(hit, t, np.inf))
    return best


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic quasi-uniform unit vectors (n, 3)."""
    i = np.arange(n, dtype=float) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
