from .env import (ACTION_DIM, EPISODE_CAP, KitchenSim, SimError, SimState, StepResult,
                  render_topdown, to_ppm)
from .observe import OBS_DIM, Observation
from .tasks import TASK_IDS, TaskSpec
from .world import make_layout

__all__ = [
    "ACTION_DIM", "EPISODE_CAP", "KitchenSim", "SimError", "SimState", "StepResult",
    "render_topdown", "to_ppm", "OBS_DIM", "Observation", "TASK_IDS", "TaskSpec",
    "make_layout",
]
