"""Dense capture around the localized object.

Four predefined camera views on a circle above the object feed either the
TSDF route (volumetric fusion + zero-crossing extraction) or the default
point-cloud-stitching fallback, which is how the reference mission runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ReconstructionConfig
from .geometry import Pose3, look_at
from .sensors import DepthImage, backproject


class EmptyVolume(Exception):
    """No surface inside the scan volume; signals scan failure."""


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) world frame
    view_index: np.ndarray | None = None  # optional per-point source view

    def __len__(self):
        return len(self.points)

    def to_xyz(self) -> str:
        lines = [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}" for p in self.points]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_xyz(cls, text: str) -> "PointCloud":
        rows = [
            [float(v) for v in line.split()]
            for line in text.splitlines()
            if line.strip()
        ]
        return cls(np.asarray(rows, dtype=float).reshape(-1, 3))


def scan_views(object_pos, cfg: ReconstructionConfig | None = None,
               robot_heading: float = 0.0) -> list[Pose3]:
    """Four camera poses on a circle of r_view around the object, h_view above
    it, at azimuths 45/135/225/315 degrees from the robot heading, each looking
    at the object."""
    cfg = cfg or ReconstructionConfig()
    obj = np.asarray(object_pos, dtype=float)
    poses = []
    for k in range(4):
        az = robot_heading + math.radians(45.0 + 90.0 * k)
        eye = obj + np.array(
            [cfg.r_view * math.cos(az), cfg.r_view * math.sin(az), cfg.h_view]
        )
        poses.append(look_at(eye, obj))
    return poses


@dataclass
class TsdfGrid:
    origin: np.ndarray  # (3,) world position of the voxel (0,0,0) center
    voxel_size: float
    dims: tuple[int, int, int]
    tsdf: np.ndarray    # (nx, ny, nz) signed meters, clamped to +-truncation
    weight: np.ndarray  # (nx, ny, nz) >= 0; 0 means never observed
    truncation: float

    @classmethod
    def around(cls, center, cfg: ReconstructionConfig) -> "TsdfGrid":
        n = int(round(cfg.volume_size / cfg.voxel_size))
        center = np.asarray(center, dtype=float)
        origin = center - (n - 1) / 2.0 * cfg.voxel_size
        return cls(
            origin=origin,
            voxel_size=cfg.voxel_size,
            dims=(n, n, n),
            tsdf=np.zeros((n, n, n)),
            weight=np.zeros((n, n, n)),
            truncation=cfg.truncation,
        )

    def voxel_centers(self) -> np.ndarray:
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.column_stack([ix.ravel(), iy.ravel(), iz.ravel()])
        return self.origin + idx * self.voxel_size


def tsdf_integrate(grid: TsdfGrid, depth: DepthImage,
                   weight_cap: float = 64.0) -> TsdfGrid:
    """Fuse one posed depth image into the grid (projective signed distance).

    Per voxel in the frustum: sdf = observed depth - voxel z; voxels deeper
    than one truncation band behind the surface are left untouched; the rest
    update the running average with unit observation weight, capped.
    """
    K = depth.intrinsics
    centers = grid.voxel_centers()
    pc = depth.camera_pose.inverse().transform(centers)
    z = pc[:, 2]
    front = z > 1e-9
    u = np.full(len(pc), -1.0)
    v = np.full(len(pc), -1.0)
    u[front] = K.fx * pc[front, 0] / z[front] + K.cx
    v[front] = K.fy * pc[front, 1] / z[front] + K.cy
    ui = np.floor(u).astype(int)
    vi = np.floor(v).astype(int)
    in_img = front & (ui >= 0) & (ui < K.width) & (vi >= 0) & (vi < K.height)
    d = np.zeros(len(pc))
    d[in_img] = depth.depths[vi[in_img], ui[in_img]]
    valid = in_img & (d > 0.0)
    sdf = d - z
    update = valid & (sdf >= -grid.truncation)
    sdf_c = np.clip(sdf, -grid.truncation, grid.truncation)

    flat_t = grid.tsdf.ravel()
    flat_w = grid.weight.ravel()
    idx = np.flatnonzero(update)
    w = flat_w[idx]
    flat_t[idx] = (w * flat_t[idx] + sdf_c[idx]) / (w + 1.0)
    flat_w[idx] = np.minimum(w + 1.0, weight_cap)
    return grid


def extract_surface(grid: TsdfGrid, w_min: float = 1.0,
                    dedupe: bool = True) -> PointCloud:
    """Zero crossings along axis-aligned voxel edges, linearly interpolated.

    Both edge endpoints must be observed (weight > w_min) and carry opposite
    tsdf signs. Points are deduplicated on a voxel_size/10 lattice.
    """
    pts = []
    t, w = grid.tsdf, grid.weight
    for axis in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(None, -1)
        sl_b[axis] = slice(1, None)
        ta, tb = t[tuple(sl_a)], t[tuple(sl_b)]
        wa, wb = w[tuple(sl_a)], w[tuple(sl_b)]
        crossing = (wa > w_min) & (wb > w_min) & (ta * tb < 0.0)
        if not crossing.any():
            continue
        ia, ib, ic = np.nonzero(crossing)
        frac = ta[crossing] / (ta[crossing] - tb[crossing])
        base = np.column_stack([ia, ib, ic]).astype(float)
        base[:, axis] += frac
        pts.append(grid.origin + base * grid.voxel_size)
    if not pts:
        raise EmptyVolume("no zero crossings in the TSDF grid")
    points = np.vstack(pts)
    if dedupe:
        quantum = grid.voxel_size / 10.0
        keys = np.round(points / quantum).astype(np.int64)
        _, keep = np.unique(keys, axis=0, return_index=True)
        points = points[np.sort(keep)]
    return PointCloud(points)


def stitch_pointclouds(depths: list[DepthImage], center,
                       cfg: ReconstructionConfig | None = None) -> PointCloud:
    """Back-project every valid pixel of every view, crop to the scan volume,
    and voxel-downsample (centroid per occupied voxel). The mission-default
    reconstruction path."""
    cfg = cfg or ReconstructionConfig()
    center = np.asarray(center, dtype=float)
    half = cfg.volume_size / 2.0
    clouds = []
    views = []
    for vi, depth in enumerate(depths):
        pts = backproject(depth)
        if len(pts) == 0:
            continue
        keep = np.all(np.abs(pts - center) <= half, axis=1)
        pts = pts[keep]
        clouds.append(pts)
        views.append(np.full(len(pts), vi, dtype=int))
    if not clouds or sum(len(c) for c in clouds) == 0:
        raise EmptyVolume("no valid points inside the scan volume")
    pts = np.vstack(clouds)
    view_idx = np.concatenate(views)

    lo = center - half
    keys = np.floor((pts - lo) / cfg.voxel_size).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys, pts, view_idx = keys[order], pts[order], view_idx[order]
    uniq, start, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    sums = np.add.reduceat(pts, start, axis=0)
    centroids = sums / counts[:, None]
    first_view = view_idx[start]
    return PointCloud(centroids, first_view)
