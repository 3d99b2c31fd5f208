"""momart: a desk-scale mobile-manipulation workbench.

Planar kitchen simulator with five multi-stage tasks, recurrent imitation
policies with mixture action heads, a goal-reconstruction error detector with
a recover/terminate runtime monitor, counterfactual evaluation, scripted and
human demonstration collection.
"""

from . import checkpoint, data, detector, evaluation, operators, optim, policy, teleop, tensorcore, training
from .sim import ACTION_DIM, EPISODE_CAP, OBS_DIM, KitchenSim, TaskSpec

__version__ = "0.1.0"

__all__ = [
    "checkpoint", "data", "detector", "evaluation", "operators", "optim", "policy",
    "teleop", "tensorcore", "training", "ACTION_DIM", "EPISODE_CAP", "OBS_DIM",
    "KitchenSim", "TaskSpec", "__version__",
]
