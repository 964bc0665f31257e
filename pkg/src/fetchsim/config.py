"""Pipeline configuration with dotted-path overrides for the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields


@dataclass
class LidarConfig:
    n_beams: int = 540
    fov: float = 1.5 * math.pi  # 270 degrees
    max_range: float = 10.0
    noise_sigma: float = 0.01
    rate_hz: float = 10.0


@dataclass
class DetectorConfig:
    p_miss: float = 0.1
    p_fp: float = 0.01
    jitter_px: float = 0.5
    min_visible_fraction: float = 0.3
    min_bbox_px: float = 2.0
    rate_hz: float = 2.0
    depth_max: float = 8.0
    vocabulary: tuple = ("banana", "cup", "book", "bottle")


@dataclass
class MappingConfig:
    resolution: float = 0.05
    l_occ: float = 0.85
    l_free: float = -0.4
    l_clamp: float = 5.0
    route_spacing: float = 0.5  # densification of the mapping route


@dataclass
class LocalizationConfig:
    sigma_xy: float = 0.02
    sigma_theta: float = 0.01


@dataclass
class NavigationConfig:
    inflation_margin: float = 0.05  # added to the robot footprint radius
    occupied_threshold: float = 0.65
    unknown_cost: float = 2.0       # step-cost multiplier for unknown cells
    v_max: float = 0.5
    w_max: float = 1.0
    xy_tolerance: float = 0.05
    theta_tolerance: float = 0.1
    lookahead: float = 0.4
    standoff: float = 0.6
    max_standoff: float = 1.2
    ring_step: float = 0.05
    ring_angles: int = 72
    n_replan: int = 5


@dataclass
class PerceptionConfig:
    iou_min: float = 0.3
    maturity_frames: int = 30
    track_jitter_px: float = 0.3
    min_baseline_check: bool = False
    max_condition: float = 1e8
    refine_after_first: bool = False


@dataclass
class ReconstructionConfig:
    mode: str = "stitch"  # "stitch" (mission default) or "tsdf"
    voxel_size: float = 0.01
    truncation: float = 0.04
    weight_cap: float = 64.0
    w_min: float = 1.0
    volume_size: float = 0.6  # cube edge, centered on the object estimate
    r_view: float = 0.40
    h_view: float = 0.18  # low enough that the views see the graspable side band
    depth_max: float = 3.0


@dataclass
class GraspConfig:
    n_samples: int = 200
    n_min: int = 10
    angle_max_deg: float = 30.0
    knn: int = 8
    slide_step: float = 0.005
    palm_depth: float = 0.02
    opening_clearance: float = 0.004
    # Gravity-aware seeding: prefer seeds whose approach (anti-normal) points
    # down within ~60 degrees, the natural prior for tabletop picks. Set to
    # -1.0 to sample by curvature alone.
    seed_up_min: float = 0.5
    seed_gate_weight: float = 0.02


@dataclass
class ExecutiveConfig:
    tick_hz: float = 30.0
    camera_rate_hz: float = 15.0
    lidar_rate_hz: float = 10.0
    view_move_time: float = 2.0
    grasp_time: float = 3.0
    drop_time: float = 3.0
    search_laps: int = 2
    drop_tolerance: float = 0.5
    release_ahead: float = 0.4


@dataclass
class PipelineConfig:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    navigation: NavigationConfig = field(default_factory=NavigationConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    executive: ExecutiveConfig = field(default_factory=ExecutiveConfig)
    grasping: GraspConfig = field(default_factory=GraspConfig)

    def apply_override(self, dotted: str, value: str) -> None:
        """Apply a `section.key=value` override, coercing to the field's type."""
        try:
            section_name, key = dotted.split(".", 1)
        except ValueError:
            raise KeyError(f"override path {dotted!r} must be section.key") from None
        if not hasattr(self, section_name):
            raise KeyError(f"unknown config section {section_name!r}")
        section = getattr(self, section_name)
        for f in fields(section):
            if f.name == key:
                setattr(section, key, _coerce(value, getattr(section, key)))
                return
        raise KeyError(f"unknown config key {dotted!r}")


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        return tuple(v.strip() for v in str(value).split(","))
    return type(current)(value)
