"""Speed-dependent gait gain optimization for a planar five-link biped."""

from .controller import ControllerConfig, GainVector, GaitReference, synthesize_reference
from .dynamics import RobotModel, RobotState
from .episode import EpisodeConfig, EpisodeResult, cost, run_episode

__all__ = [
    "ControllerConfig", "EpisodeConfig", "EpisodeResult", "GainVector", "GaitReference",
    "RobotModel", "RobotState", "cost", "run_episode", "synthesize_reference",
]
__version__ = "0.1.0"
