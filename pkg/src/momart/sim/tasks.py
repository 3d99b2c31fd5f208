"""Task specifications: stage predicates, randomization ranges, layout variant.

Each task is an ordered list of stages.  A stage latches once its predicate
holds while every earlier stage has already latched, so the stage index is
monotone and success means the final stage latched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import DOOR_MAX, DOOR_OPEN_FRACTION

TASK_IDS = (
    "cleanup-dishwasher",
    "cleanup-sink",
    "setup-dresser",
    "setup-dishwasher",
    "unload-dishwasher",
)

APPROACH_DISTANCE = 0.7   # base-to-furniture distance that counts as "at" it
TRAY_OUT_THRESHOLD = 0.9
DRAWER_OPEN_THRESHOLD = 0.6
DOOR_OPEN_THRESHOLD = DOOR_OPEN_FRACTION * DOOR_MAX


class TaskError(Exception):
    pass


def _near(state, rect) -> bool:
    return rect.distance(state.base_x, state.base_y) <= APPROACH_DISTANCE


def _stage_approach(furniture_name):
    def pred(env):
        rect = {"table": env.layout.table,
                "dishwasher": env.layout.dishwasher.rect,
                "sink": env.layout.sink.rect,
                "dresser": env.layout.dresser.rect}[furniture_name]
        return _near(env.state, rect)
    return pred


def _stage_bowl_grasped(env):
    return env.state.held == "bowl"


def _stage_trash_emptied(env):
    return env.state.trash_emptied


def _stage_door_open(env):
    return env.state.door_angle >= DOOR_OPEN_THRESHOLD


def _stage_tray_out(env):
    return env.state.tray_ext >= TRAY_OUT_THRESHOLD


def _stage_bowl_in_tray(env):
    return env.state.bowl_support == "tray" and env.state.held is None


def _stage_bowl_in_sink(env):
    s = env.state
    return (s.held is None and s.bowl_support == "world"
            and env.layout.sink_basin().contains(s.bowl_x, s.bowl_y))


def _stage_bowl_found(env):
    return env.state.drawer_ext[env.state.bowl_drawer] >= DRAWER_OPEN_THRESHOLD


def _stage_bowl_on_table(env):
    s = env.state
    return (s.held is None and s.bowl_support == "world"
            and env.layout.table.contains(s.bowl_x, s.bowl_y))


def _stage_top_drawer_open(env):
    return env.state.drawer_ext[0] >= DRAWER_OPEN_THRESHOLD


def _stage_bowl_in_top_drawer(env):
    return env.state.bowl_support == "drawer0" and env.state.held is None


_TASK_STAGES = {
    "cleanup-dishwasher": [
        ("approach-table", _stage_approach("table")),
        ("bowl-grasped", _stage_bowl_grasped),
        ("trash-emptied", _stage_trash_emptied),
        ("dishwasher-open", _stage_door_open),
        ("tray-out", _stage_tray_out),
        ("bowl-in-tray", _stage_bowl_in_tray),
    ],
    "cleanup-sink": [
        ("approach-table", _stage_approach("table")),
        ("bowl-grasped", _stage_bowl_grasped),
        ("trash-emptied", _stage_trash_emptied),
        ("approach-sink", _stage_approach("sink")),
        ("bowl-in-sink", _stage_bowl_in_sink),
    ],
    "setup-dresser": [
        ("approach-dresser", _stage_approach("dresser")),
        ("bowl-found", _stage_bowl_found),
        ("bowl-grasped", _stage_bowl_grasped),
        ("bowl-on-table", _stage_bowl_on_table),
    ],
    "setup-dishwasher": [
        ("approach-dishwasher", _stage_approach("dishwasher")),
        ("dishwasher-open", _stage_door_open),
        ("tray-out", _stage_tray_out),
        ("bowl-grasped", _stage_bowl_grasped),
        ("bowl-on-table", _stage_bowl_on_table),
    ],
    "unload-dishwasher": [
        ("approach-dishwasher", _stage_approach("dishwasher")),
        ("bowl-grasped", _stage_bowl_grasped),
        ("top-drawer-open", _stage_top_drawer_open),
        ("bowl-in-drawer", _stage_bowl_in_top_drawer),
    ],
}


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    layout_variant: str = "canonical"

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise TaskError(f"unknown task id {self.task_id!r}")
        if self.layout_variant not in ("canonical", "swapped"):
            raise TaskError(f"unknown layout variant {self.layout_variant!r}")

    @property
    def stage_names(self) -> list[str]:
        return [name for name, _ in _TASK_STAGES[self.task_id]]

    @property
    def stages(self):
        return _TASK_STAGES[self.task_id]

    @property
    def n_stages(self) -> int:
        return len(_TASK_STAGES[self.task_id])

    @property
    def randomize_trash_can(self) -> bool:
        return self.task_id in ("cleanup-dishwasher", "cleanup-sink")

    @property
    def trash_starts_in_bowl(self) -> bool:
        return self.task_id in ("cleanup-dishwasher", "cleanup-sink")

    @property
    def bowl_start(self) -> str:
        """Where the bowl spawns: table, drawer, or tray."""
        if self.task_id in ("cleanup-dishwasher", "cleanup-sink"):
            return "table"
        if self.task_id == "setup-dresser":
            return "drawer"
        return "tray"

    @property
    def dishwasher_starts_open(self) -> bool:
        return self.task_id == "unload-dishwasher"

    def to_json(self) -> dict:
        return {"task_id": self.task_id, "layout_variant": self.layout_variant}

    @classmethod
    def from_json(cls, d) -> "TaskSpec":
        return cls(task_id=d["task_id"], layout_variant=d.get("layout_variant", "canonical"))
