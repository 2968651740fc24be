"""Entity alignment and KG completion with biased random walks and a
recurrent skipping network."""

from .kg import Kg, JointGraph, add_reverse_relations, build_joint_graph
from .model import RsnModel, TrainConfig
from .walker import BACKEND, WalkConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "JointGraph",
    "Kg",
    "RsnModel",
    "TrainConfig",
    "WalkConfig",
    "add_reverse_relations",
    "build_joint_graph",
]
