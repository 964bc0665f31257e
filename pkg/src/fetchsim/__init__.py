"""fetchsim: a deterministic desk-scale mobile fetch-and-carry simulator.

Pipeline stages are importable as submodules: world, sensors, mapping,
navigation, perception, reconstruction, grasping, executive, cli.
"""

from .config import PipelineConfig
from .executive import MissionOutcome, MissionTrace, run_mission
from .geometry import Pose2, Pose3
from .world import MissionSpec, RobotModel, WorldModel, load_scenario

__all__ = [
    "MissionOutcome",
    "MissionSpec",
    "MissionTrace",
    "PipelineConfig",
    "Pose2",
    "Pose3",
    "RobotModel",
    "WorldModel",
    "load_scenario",
    "run_mission",
]

__version__ = "0.1.0"
