"""Kitchen layout: furniture placement and articulated-part kinematics.

All furniture is wall-mounted except the table and the trash can.  Each
wall-mounted piece has an `outward` unit vector pointing into the room from
its front face; articulated parts (dishwasher door and tray, three dresser
drawers) move along/around that face.  Articulation values live in SimState;
this module turns them into geometry (footprints, handle positions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Rect

WORLD_SIZE = 5.0
WALL = 0.05

DOOR_LEN = 0.6
DOOR_MAX = math.pi / 2
TRAY_TRAVEL = 0.45
TRAY_HALF_WIDTH = 0.3
DRAWER_TRAVEL = 0.3
DRAWER_HALF_WIDTH = 0.22
HANDLE_GRAB_RADIUS = 0.12
TRASH_CAN_RADIUS = 0.18
BOWL_RADIUS = 0.07
TRASH_PIECE_RADIUS = 0.03

# a mechanism engages the tray only once the door is essentially open
DOOR_OPEN_FRACTION = 0.8


@dataclass(frozen=True)
class Placement:
    rect: Rect
    outward: tuple[float, float]   # unit vector into the room

    @property
    def lateral(self) -> tuple[float, float]:
        ox, oy = self.outward
        return (-oy, ox)

    @property
    def front(self) -> tuple[float, float]:
        ox, oy = self.outward
        h = self.rect.hw if ox else self.rect.hh
        return (self.rect.cx + ox * h, self.rect.cy + oy * h)

    def point(self, along_outward: float, along_lateral: float) -> tuple[float, float]:
        fx, fy = self.front
        ox, oy = self.outward
        lx, ly = self.lateral
        return (fx + ox * along_outward + lx * along_lateral,
                fy + oy * along_outward + ly * along_lateral)


@dataclass(frozen=True)
class Layout:
    variant: str
    table: Rect
    dishwasher: Placement
    sink: Placement
    dresser: Placement
    trash_home: tuple[float, float]
    spawn: Rect                      # robot start-pose randomization range
    trash_zone: Rect                 # trash-can randomization range (cleanup tasks)

    # -- dishwasher ----------------------------------------------------------

    def door_hinge(self) -> tuple[float, float]:
        return self.dishwasher.point(0.0, -DOOR_LEN / 2)

    def door_dir(self, angle: float) -> tuple[float, float]:
        """Door direction from the hinge; angle 0 = closed (along the face)."""
        ox, oy = self.dishwasher.outward
        lx, ly = self.dishwasher.lateral
        c, s = math.cos(angle), math.sin(angle)
        return (lx * c + ox * s, ly * c + oy * s)

    def door_segment(self, angle: float):
        hx, hy = self.door_hinge()
        dx, dy = self.door_dir(angle)
        return (hx, hy, hx + DOOR_LEN * dx, hy + DOOR_LEN * dy)

    def door_handle(self, angle: float) -> tuple[float, float]:
        seg = self.door_segment(angle)
        return (seg[2], seg[3])

    def tray_handle(self, extension: float) -> tuple[float, float]:
        return self.dishwasher.point(extension * TRAY_TRAVEL + 0.02, 0.0)

    def tray_rect(self, extension: float) -> Rect:
        depth = extension * TRAY_TRAVEL + 0.1
        cx, cy = self.dishwasher.point(extension * TRAY_TRAVEL - depth / 2, 0.0)
        ox = abs(self.dishwasher.outward[0])
        hw = depth / 2 if ox else TRAY_HALF_WIDTH
        hh = TRAY_HALF_WIDTH if ox else depth / 2
        return Rect(cx, cy, hw, hh)

    def tray_anchor(self, extension: float, lateral_offset: float) -> tuple[float, float]:
        """Where an object riding the tray sits."""
        return self.dishwasher.point(extension * TRAY_TRAVEL - 0.12, lateral_offset)

    # -- dresser ---------------------------------------------------------------

    def drawer_offsets(self) -> list[float]:
        """Lateral offsets of the three drawer slots, index 0 = highest in y."""
        offs = [0.5, 0.0, -0.5]
        pts = [self.dresser.point(0.0, o) for o in offs]
        order = sorted(range(3), key=lambda i: -pts[i][1])
        return [offs[i] for i in order]

    def drawer_handle(self, index: int, extension: float) -> tuple[float, float]:
        off = self.drawer_offsets()[index]
        return self.dresser.point(extension * DRAWER_TRAVEL + 0.02, off)

    def drawer_rect(self, index: int, extension: float) -> Rect:
        off = self.drawer_offsets()[index]
        depth = extension * DRAWER_TRAVEL + 0.04
        cx, cy = self.dresser.point(extension * DRAWER_TRAVEL - depth / 2, off)
        ox = abs(self.dresser.outward[0])
        hw = depth / 2 if ox else DRAWER_HALF_WIDTH
        hh = DRAWER_HALF_WIDTH if ox else depth / 2
        return Rect(cx, cy, hw, hh)

    def drawer_anchor(self, index: int, extension: float, lateral_offset: float):
        off = self.drawer_offsets()[index]
        return self.dresser.point(extension * DRAWER_TRAVEL - 0.12, off + lateral_offset)

    # -- sink -------------------------------------------------------------------

    def sink_basin(self) -> Rect:
        r = self.sink.rect
        ox, oy = self.sink.outward
        hw = 0.2 if ox else 0.28
        hh = 0.28 if ox else 0.2
        # basin sits toward the room side of the body
        return Rect(r.cx + ox * 0.08, r.cy + oy * 0.08, hw, hh)

    # -- collections -------------------------------------------------------------

    def body_rects(self) -> list[Rect]:
        return [self.table, self.dishwasher.rect, self.sink.rect, self.dresser.rect]


def canonical_layout() -> Layout:
    return Layout(
        variant="canonical",
        table=Rect(2.5, 2.6, 0.6, 0.4),
        dishwasher=Placement(Rect(4.55, 1.5, 0.4, 0.4), (-1.0, 0.0)),
        sink=Placement(Rect(1.5, 4.6, 0.45, 0.35), (0.0, -1.0)),
        dresser=Placement(Rect(0.45, 2.4, 0.35, 0.75), (1.0, 0.0)),
        trash_home=(3.4, 3.9),
        spawn=Rect(2.1, 1.3, 0.6, 0.4),
        trash_zone=Rect(3.5, 3.8, 0.4, 0.4),
    )


def swapped_layout() -> Layout:
    """Few-shot generalization variant: dishwasher and dresser exchange
    positions exactly; the sink relocates to the bottom wall."""
    return Layout(
        variant="swapped",
        table=Rect(2.5, 2.6, 0.6, 0.4),
        dishwasher=Placement(Rect(0.45, 2.4, 0.4, 0.4), (1.0, 0.0)),
        sink=Placement(Rect(3.5, 0.4, 0.45, 0.35), (0.0, 1.0)),
        dresser=Placement(Rect(4.55, 1.5, 0.35, 0.75), (-1.0, 0.0)),
        trash_home=(3.4, 3.9),
        spawn=Rect(2.1, 1.3, 0.6, 0.4),
        trash_zone=Rect(3.5, 3.8, 0.4, 0.4),
    )


def make_layout(variant: str) -> Layout:
    if variant == "canonical":
        return canonical_layout()
    if variant == "swapped":
        return swapped_layout()
    raise ValueError(f"unknown layout variant {variant!r}")
