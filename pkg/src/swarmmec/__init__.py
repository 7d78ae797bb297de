"""Energy-aware UAV swarm edge-computing simulator with coupled tabular Q-learners."""

from .config import ConfigError, LearnerParams, PropulsionParams, SimConfig
from .rldc import MODES, TrainingResult, run_training
from .world import World, build_world

__all__ = [
    "ConfigError", "LearnerParams", "PropulsionParams", "SimConfig", "MODES",
    "TrainingResult", "run_training", "World", "build_world",
]
__version__ = "0.1.0"
