"""Log-odds occupancy mapping from posed scans, plus the localization oracle.

The occupancy grid is the pre-mission product built by accumulating LiDAR
scans at known route poses. Online localization is a seeded noisy-pose oracle
standing in for a visual-inertial estimator; it is the declared simulation
boundary for state estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import LidarConfig, LocalizationConfig, MappingConfig
from .geometry import Pose2, wrap_angle
from .sensors import LaserScan, simulate_lidar
from .world import RobotModel, WorldModel


class OutOfBounds(Exception):
    """Sensor pose falls outside the grid."""


@dataclass
class OccupancyGrid:
    origin: Pose2  # world position of the lower-left corner of cell (0, 0)
    resolution: float
    width: int
    height: int
    log_odds: np.ndarray  # (height, width)
    l_clamp: float = 5.0

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if abs(self.origin.theta) > 1e-12:
            raise ValueError("rotated grids are not supported")

    @classmethod
    def blank(cls, origin: Pose2, resolution: float, width: int, height: int,
              l_clamp: float = 5.0) -> "OccupancyGrid":
        return cls(origin, resolution, width, height,
                   np.zeros((height, width)), l_clamp)

    @classmethod
    def for_bounds(cls, bounds, resolution: float, l_clamp: float = 5.0) -> "OccupancyGrid":
        x0, y0, x1, y1 = bounds
        width = int(math.ceil((x1 - x0) / resolution)) + 1
        height = int(math.ceil((y1 - y0) / resolution)) + 1
        return cls.blank(Pose2(x0, y0, 0.0), resolution, width, height, l_clamp)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin.x) / self.resolution)),
            int(math.floor((y - self.origin.y) / self.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin.x + (ix + 0.5) * self.resolution,
            self.origin.y + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def probabilities(self) -> np.ndarray:
        """p(occupied) per cell; the prior (log-odds 0) maps to 0.5."""
        return 1.0 - 1.0 / (1.0 + np.exp(self.log_odds))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.origin, self.resolution, self.width, self.height,
                             self.log_odds.copy(), self.l_clamp)


def _clip_lengths(grid: OccupancyGrid, ox: float, oy: float,
                  dirs: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Per-beam lengths clipped to the grid rectangle (slab test)."""
    tmax = lengths.astype(float).copy()
    hi_x = grid.origin.x + grid.width * grid.resolution
    hi_y = grid.origin.y + grid.height * grid.resolution
    for o, d, lo, hi in (
        (ox, dirs[:, 0], grid.origin.x, hi_x),
        (oy, dirs[:, 1], grid.origin.y, hi_y),
    ):
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (lo - o) / d
            t1 = (hi - o) / d
        far = np.where(d >= 0, t1, t0)
        far = np.where(np.abs(d) < 1e-12, np.inf, far)
        tmax = np.minimum(tmax, far)
    return np.maximum(tmax, 0.0)


def integrate_scan(grid: OccupancyGrid, pose: Pose2, scan: LaserScan,
                   cfg: MappingConfig | None = None) -> OccupancyGrid:
    """Apply one scan's inverse sensor model to the grid, in place.

    Per beam: cells strictly between the sensor cell and the hit cell get
    l_free; the hit cell gets l_occ. Sentinel (max-range) beams mark free
    space only, and beams leaving the grid are truncated at the boundary
    (free-space updates only, no occupied endpoint).
    """
    cfg = cfg or MappingConfig()
    sensor = pose.compose(scan.mount_offset)
    six, siy = grid.world_to_cell(sensor.x, sensor.y)
    if not grid.in_bounds(six, siy):
        raise OutOfBounds(f"sensor cell ({six}, {siy}) outside grid")

    angles = sensor.theta + scan.beam_angles()
    is_hit = scan.ranges <= scan.max_range
    lengths = np.where(is_hit, scan.ranges, scan.max_range)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    clipped = _clip_lengths(grid, sensor.x, sensor.y, dirs, lengths)
    truncated = clipped < lengths - 1e-12

    res = grid.resolution
    ncells = grid.width * grid.height
    end_x = sensor.x + dirs[:, 0] * clipped
    end_y = sensor.y + dirs[:, 1] * clipped
    end_ix = np.clip(np.floor((end_x - grid.origin.x) / res).astype(int), 0, grid.width - 1)
    end_iy = np.clip(np.floor((end_y - grid.origin.y) / res).astype(int), 0, grid.height - 1)
    end_lin = end_iy * grid.width + end_ix
    sensor_lin = siy * grid.width + six

    # Free-space cells: dense ray samples at sub-cell spacing, deduplicated
    # per beam so each beam contributes one l_free to every cell it crosses.
    step = res * 0.3
    n = np.maximum(1, np.ceil(clipped / step)).astype(int)
    total = int(n.sum())
    beam = np.repeat(np.arange(len(n)), n)
    offsets = np.concatenate([[0], np.cumsum(n)[:-1]])
    t = (np.arange(total) - np.repeat(offsets, n)) * step
    xs = sensor.x + np.repeat(dirs[:, 0], n) * t
    ys = sensor.y + np.repeat(dirs[:, 1], n) * t
    ix = np.floor((xs - grid.origin.x) / res).astype(int)
    iy = np.floor((ys - grid.origin.y) / res).astype(int)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    lin = iy * grid.width + ix
    keep = inside & (lin != sensor_lin) & (lin != np.repeat(end_lin, n))
    keys = np.unique(beam[keep].astype(np.int64) * ncells + lin[keep])
    flat = grid.log_odds.ravel()
    np.add.at(flat, (keys % ncells).astype(int), cfg.l_free)

    occupied = is_hit & ~truncated & (clipped > 0)
    np.add.at(flat, end_lin[occupied], cfg.l_occ)

    np.clip(flat, -grid.l_clamp, grid.l_clamp, out=flat)
    return grid


def densify_route(waypoints, spacing: float) -> list[Pose2]:
    """Interpolate straight segments between waypoints at roughly `spacing`."""
    waypoints = list(waypoints)
    if len(waypoints) == 1:
        return [waypoints[0]]
    poses: list[Pose2] = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        dist = a.distance_to(b)
        n = max(1, int(math.ceil(dist / spacing)))
        heading = math.atan2(b.y - a.y, b.x - a.x) if dist > 1e-9 else a.theta
        for k in range(n):
            s = k / n
            poses.append(Pose2(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), heading))
    poses.append(waypoints[-1])
    return poses


def build_map(world: WorldModel, route, robot: RobotModel, rng: np.random.Generator,
              cfg: MappingConfig | None = None,
              lidar_cfg: LidarConfig | None = None) -> OccupancyGrid:
    """Accumulate both LiDARs over a mapping route into a fresh grid."""
    cfg = cfg or MappingConfig()
    lidar_cfg = lidar_cfg or LidarConfig()
    grid = OccupancyGrid.for_bounds(world.bounds, cfg.resolution, cfg.l_clamp)
    for pose in route:
        for mount in ("front", "back"):
            scan = simulate_lidar(world, pose, robot, mount, lidar_cfg, rng)
            integrate_scan(grid, pose, scan, cfg)
    return grid


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose2
    timestamp: float


def localize(true_pose: Pose2, cfg: LocalizationConfig, rng: np.random.Generator,
             timestamp: float = 0.0) -> PoseEstimate:
    """Noisy-pose oracle standing in for online visual-inertial localization."""
    est = Pose2(
        true_pose.x + rng.normal(0.0, cfg.sigma_xy),
        true_pose.y + rng.normal(0.0, cfg.sigma_xy),
        wrap_angle(true_pose.theta + rng.normal(0.0, cfg.sigma_theta)),
    )
    return PoseEstimate(est, timestamp)


# ---------------------------------------------------------------------------
# Grid persistence: text header + row-major probability bytes. The prior
# (p = 0.5) round-trips exactly as byte 127 = 0.5 * 254.

def save_grid(path, grid: OccupancyGrid) -> None:
    header = (
        f"OGRID {grid.origin.x!r} {grid.origin.y!r} {grid.origin.theta!r} "
        f"{grid.resolution!r} {grid.width} {grid.height}\n"
    )
    probs = grid.probabilities()
    data = np.rint(probs * 254.0).clip(0, 254).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())


def load_grid(path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 7 or header[0] != "OGRID":
            raise ValueError(f"not a grid file: {path}")
        x, y, theta, res = (float(v) for v in header[1:5])
        width, height = int(header[5]), int(header[6])
        data = np.frombuffer(fh.read(width * height), dtype=np.uint8)
    if data.size != width * height:
        raise ValueError(f"grid file truncated: {path}")
    bytes_grid = data.reshape(height, width)
    p = np.clip(bytes_grid / 254.0, 1e-6, 1.0 - 1e-6)
    log_odds = np.log(p / (1.0 - p))
    log_odds[bytes_grid == 127] = 0.0
    return OccupancyGrid(Pose2(x, y, theta), res, width, height, log_odds)
