"""Global planning on the inflated grid, a pure-pursuit follower, and the
object approach-pose search.

The planner is 8-connected A* with a Euclidean heuristic; unknown cells are
traversable at a configurable penalty so the robot can cross never-observed
pockets. There is deliberately no trajectory smoothing.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import NavigationConfig
from .geometry import Pose2, wrap_angle
from .mapping import OccupancyGrid, PoseEstimate

FREE, INFLATED, OCCUPIED, UNKNOWN = 0, 1, 2, 3


class NoPath(Exception):
    """Goal is unreachable on the current cost grid."""


class GoalOccupied(Exception):
    """Goal cell is occupied or inflated."""


class NoApproach(Exception):
    """No collision-free approach pose within max standoff."""


@dataclass
class CostGrid:
    origin: Pose2
    resolution: float
    width: int
    height: int
    states: np.ndarray  # (height, width) of FREE/INFLATED/OCCUPIED/UNKNOWN
    inflation_radius: float
    occupied_threshold: float

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

    def state_at(self, x: float, y: float) -> int:
        ix, iy = self.world_to_cell(x, y)
        if not self.in_bounds(ix, iy):
            return OCCUPIED
        return int(self.states[iy, ix])


def inflate(grid: OccupancyGrid, robot_radius: float,
            occupied_threshold: float = 0.65) -> CostGrid:
    """Classify cells and grow obstacles by the robot radius.

    Occupied: p >= threshold. Inflated: center within robot_radius of an
    occupied cell center (Euclidean). Unknown: still at the prior. Inflation
    wins over unknown so the safety margin is never eroded.
    """
    if robot_radius < 0:
        raise ValueError("robot_radius must be >= 0")
    probs = grid.probabilities()
    occupied = probs >= occupied_threshold
    unknown = (grid.log_odds == 0.0) & ~occupied
    states = np.full(occupied.shape, FREE, dtype=np.uint8)
    if occupied.any() and robot_radius > 0:
        dist = ndimage.distance_transform_edt(
            ~occupied, sampling=(grid.resolution, grid.resolution)
        )
        states[dist <= robot_radius + 1e-12] = INFLATED
    states[unknown & (states == FREE)] = UNKNOWN
    states[occupied] = OCCUPIED
    return CostGrid(
        origin=grid.origin,
        resolution=grid.resolution,
        width=grid.width,
        height=grid.height,
        states=states,
        inflation_radius=robot_radius,
        occupied_threshold=occupied_threshold,
    )


@dataclass
class Path2:
    waypoints: list[Pose2]
    cost: float

    def length(self) -> float:
        return sum(a.distance_to(b) for a, b in zip(self.waypoints[:-1], self.waypoints[1:]))

    def to_csv(self) -> str:
        lines = ["x,y,theta"]
        lines += [f"{w.x:.6f},{w.y:.6f},{w.theta:.6f}" for w in self.waypoints]
        return "\n".join(lines) + "\n"


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _cell_multiplier(state: int, unknown_cost: float):
    if state == FREE:
        return 1.0
    if state == UNKNOWN:
        return unknown_cost
    return None


def plan_global(cost: CostGrid, start: Pose2, goal: Pose2,
                cfg: NavigationConfig | None = None) -> Path2:
    """8-connected A* from start to goal; cost equals the Dijkstra optimum.

    Step cost is the Euclidean cell-center distance times the destination
    cell's multiplier (1 for free, cfg.unknown_cost for unknown). The start
    cell is always traversable for departure.
    """
    cfg = cfg or NavigationConfig()
    sx, sy = cost.world_to_cell(start.x, start.y)
    gx, gy = cost.world_to_cell(goal.x, goal.y)
    if not cost.in_bounds(sx, sy):
        raise NoPath("start outside grid")
    if not cost.in_bounds(gx, gy):
        raise NoPath("goal outside grid")
    if cost.states[gy, gx] in (OCCUPIED, INFLATED):
        raise GoalOccupied(f"goal cell ({gx}, {gy}) not free")

    if (sx, sy) == (gx, gy):
        return Path2([Pose2(goal.x, goal.y, goal.theta)], 0.0)

    res = cost.resolution
    goal_c = np.array([gx, gy], dtype=float)
    g_cost = {(sx, sy): 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    h0 = math.hypot(gx - sx, gy - sy) * res
    frontier = [(h0, counter, (sx, sy))]
    closed: set[tuple[int, int]] = set()
    while frontier:
        _, _, cur = heapq.heappop(frontier)
        if cur in closed:
            continue
        if cur == (gx, gy):
            break
        closed.add(cur)
        cx, cy = cur
        base = g_cost[cur]
        for dx, dy in _NEIGHBORS:
            nx, ny = cx + dx, cy + dy
            if not cost.in_bounds(nx, ny) or (nx, ny) in closed:
                continue
            mult = _cell_multiplier(int(cost.states[ny, nx]), cfg.unknown_cost)
            if mult is None:
                continue
            step = res * (math.sqrt(2.0) if dx and dy else 1.0) * mult
            new_g = base + step
            if new_g < g_cost.get((nx, ny), math.inf) - 1e-12:
                g_cost[(nx, ny)] = new_g
                parent[(nx, ny)] = cur
                counter += 1
                h = math.hypot(goal_c[0] - nx, goal_c[1] - ny) * res
                heapq.heappush(frontier, (new_g + h, counter, (nx, ny)))
    if (gx, gy) not in g_cost:
        raise NoPath("goal unreachable")

    cells = [(gx, gy)]
    while cells[-1] != (sx, sy):
        cells.append(parent[cells[-1]])
    cells.reverse()
    waypoints: list[Pose2] = []
    centers = [cost.cell_center(ix, iy) for ix, iy in cells]
    for i, (x, y) in enumerate(centers):
        if i + 1 < len(centers):
            nx, ny = centers[i + 1]
            theta = math.atan2(ny - y, nx - x)
        else:
            theta = goal.theta
        waypoints.append(Pose2(x, y, theta))
    waypoints[-1] = Pose2(goal.x, goal.y, goal.theta)
    return Path2(waypoints, g_cost[(gx, gy)])


@dataclass(frozen=True)
class FollowResult:
    status: str  # "cmd" | "arrived" | "blocked"
    v: float = 0.0
    w: float = 0.0


def _project_progress(path: Path2, x: float, y: float):
    """Arclength of the closest point on the waypoint polyline to (x, y)."""
    best_s, best_d = 0.0, math.inf
    s_acc = 0.0
    pts = path.waypoints
    if len(pts) == 1:
        return 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        seg = np.array([b.x - a.x, b.y - a.y])
        L = float(np.hypot(*seg))
        if L < 1e-12:
            continue
        u = np.clip(((x - a.x) * seg[0] + (y - a.y) * seg[1]) / (L * L), 0.0, 1.0)
        px, py = a.x + u * seg[0], a.y + u * seg[1]
        d = math.hypot(px - x, py - y)
        if d < best_d:
            best_d = d
            best_s = s_acc + u * L
        s_acc += L
    return best_s


def _point_at(path: Path2, s: float):
    s_acc = 0.0
    pts = path.waypoints
    for a, b in zip(pts[:-1], pts[1:]):
        L = a.distance_to(b)
        if s_acc + L >= s and L > 1e-12:
            u = (s - s_acc) / L
            return a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)
        s_acc += L
    return pts[-1].x, pts[-1].y


def follow_step(path: Path2, est: PoseEstimate, cfg: NavigationConfig,
                cost: CostGrid | None = None) -> FollowResult:
    """Pure pursuit toward a lookahead point on the path.

    Arrived once within the xy and heading tolerances of the final pose.
    Blocked (zero command) when the segment from the robot to the lookahead
    point crosses an occupied or inflated cell; the executive owns re-planning.
    """
    if not path.waypoints:
        raise ValueError("empty path")
    pose = est.pose
    final = path.waypoints[-1]
    dist_final = pose.distance_to(final)
    if dist_final <= cfg.xy_tolerance:
        dtheta = wrap_angle(final.theta - pose.theta)
        if abs(dtheta) <= cfg.theta_tolerance:
            return FollowResult("arrived")
        return FollowResult("cmd", 0.0, float(np.clip(2.0 * dtheta, -cfg.w_max, cfg.w_max)))

    s = _project_progress(path, pose.x, pose.y)
    tx, ty = _point_at(path, s + cfg.lookahead)
    if cost is not None and _segment_blocked(cost, pose.x, pose.y, tx, ty):
        return FollowResult("blocked")

    alpha = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.theta)
    if abs(alpha) > math.pi / 2.0:
        return FollowResult("cmd", 0.0, float(np.clip(2.0 * alpha, -cfg.w_max, cfg.w_max)))
    lookahead_dist = max(math.hypot(tx - pose.x, ty - pose.y), 1e-6)
    v = cfg.v_max * max(0.25, math.cos(alpha))
    v = min(v, cfg.v_max, max(0.5 * dist_final, 0.05))
    curvature = 2.0 * math.sin(alpha) / lookahead_dist
    w = float(np.clip(v * curvature, -cfg.w_max, cfg.w_max))
    return FollowResult("cmd", v, w)


def _segment_blocked(cost: CostGrid, x0: float, y0: float, x1: float, y1: float) -> bool:
    length = math.hypot(x1 - x0, y1 - y0)
    n = max(2, int(math.ceil(length / (cost.resolution * 0.5))) + 1)
    for i in range(n):
        u = i / (n - 1)
        state = cost.state_at(x0 + u * (x1 - x0), y0 + u * (y1 - y0))
        if state in (OCCUPIED, INFLATED):
            return True
    return False


def step_unicycle(pose: Pose2, v: float, w: float, dt: float) -> Pose2:
    """Integrate a unicycle command (exact arc integration)."""
    if abs(w) < 1e-9:
        return Pose2(pose.x + v * dt * math.cos(pose.theta),
                     pose.y + v * dt * math.sin(pose.theta),
                     pose.theta)
    theta1 = pose.theta + w * dt
    r = v / w
    return Pose2(pose.x + r * (math.sin(theta1) - math.sin(pose.theta)),
                 pose.y - r * (math.cos(theta1) - math.cos(pose.theta)),
                 theta1)


def _footprint_free(cost: CostGrid, x: float, y: float, footprint_radius: float) -> bool:
    k = int(math.ceil(footprint_radius / cost.resolution))
    cx, cy = cost.world_to_cell(x, y)
    for dy in range(-k, k + 1):
        for dx in range(-k, k + 1):
            ix, iy = cx + dx, cy + dy
            if not cost.in_bounds(ix, iy):
                return False
            px, py = cost.cell_center(ix, iy)
            if math.hypot(px - x, py - y) > footprint_radius:
                continue
            if cost.states[iy, ix] != FREE:
                return False
    return True


def compute_approach_pose(cost: CostGrid, object_xy, standoff: float,
                          cfg: NavigationConfig, footprint_radius: float,
                          robot_xy=None, excluded_bearing: float | None = None,
                          exclusion_margin: float = math.radians(60.0)) -> Pose2:
    """Nearest collision-free pose on rings around the object, facing it.

    Rings grow from `standoff` to cfg.max_standoff; on each ring, candidates
    are tried in order of increasing angular offset from the side the robot
    currently stands on, so the first hit is the closest pose with the
    smallest detour. `excluded_bearing` masks out the side a previous attempt
    used (scan-action reposition).
    """
    ox, oy = float(object_xy[0]), float(object_xy[1])
    if not cost.in_bounds(*cost.world_to_cell(ox, oy)):
        raise NoApproach("object estimate outside grid")
    if robot_xy is not None:
        side = math.atan2(float(robot_xy[1]) - oy, float(robot_xy[0]) - ox)
    else:
        side = 0.0
    base_angles = np.linspace(-math.pi, math.pi, cfg.ring_angles, endpoint=False)
    order = np.argsort(np.abs([wrap_angle(a - side) for a in base_angles]), kind="stable")
    radii = np.arange(standoff, cfg.max_standoff + 1e-9, cfg.ring_step)
    for r in radii:
        for idx in order:
            phi = float(base_angles[idx])
            if excluded_bearing is not None and \
                    abs(wrap_angle(phi - excluded_bearing)) < exclusion_margin:
                continue
            x = ox + r * math.cos(phi)
            y = oy + r * math.sin(phi)
            if not _footprint_free(cost, x, y, footprint_radius):
                continue
            return Pose2(x, y, math.atan2(oy - y, ox - x))
    raise NoApproach(f"no collision-free pose within {cfg.max_standoff} m of object")
