"""Observation assembly: ego semantic raster, ray scan, proprioception.

The raster is strictly ego-centric: a 5-channel 24x24 grid sampled in the
robot frame over a forward-biased 3 m window (x in [-0.6, 2.4] ahead,
y in [-1.5, 1.5] across), rotating with the robot's heading.  Channels:
walls, furniture, bowl, trash, gripper footprint.  The scan is 30 ranges
over 240 degrees, capped at 3 m.  Everything is normalized to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Rect, raycast, segment_to_point_distance
from .world import (BOWL_RADIUS, TRASH_CAN_RADIUS, WALL, WORLD_SIZE)

RASTER_CHANNELS = 5
RASTER_SIZE = 24
RASTER_FWD = (-0.6, 2.4)
RASTER_LAT = (-1.5, 1.5)
SCAN_RAYS = 30
SCAN_FOV = 4.0 * np.pi / 3.0   # 240 degrees
SCAN_RANGE = 3.0
PROPRIO_DIM = 7

OBS_DIM = RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE + SCAN_RAYS + PROPRIO_DIM

# local-frame cell centers, row 0 = furthest forward, col 0 = robot's left
_cell = (RASTER_FWD[1] - RASTER_FWD[0]) / RASTER_SIZE
_fwd = RASTER_FWD[1] - (np.arange(RASTER_SIZE) + 0.5) * _cell
_lat = RASTER_LAT[1] - (np.arange(RASTER_SIZE) + 0.5) * _cell
_LOCAL_PTS = np.stack(
    [np.repeat(_fwd, RASTER_SIZE), np.tile(_lat, RASTER_SIZE)], axis=1
)  # (576, 2): (forward, lateral)

# fattened radii so small objects always light at least one cell center
_BOWL_HIT = BOWL_RADIUS + 0.04
_PIECE_HIT = 0.08
_GRIPPER_HIT = 0.09
_DOOR_HIT = 0.05


@dataclass(frozen=True)
class Observation:
    raster: np.ndarray   # (5, 24, 24) in [0, 1]
    scan: np.ndarray     # (30,) in [0, 1]
    proprio: np.ndarray  # (7,) in [0, 1]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.raster.ravel(), self.scan, self.proprio])


def world_points(base_x, base_y, theta) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    fx, fy = c, s           # forward axis in world
    lx, ly = -s, c          # left axis in world
    xs = base_x + _LOCAL_PTS[:, 0] * fx + _LOCAL_PTS[:, 1] * lx
    ys = base_y + _LOCAL_PTS[:, 0] * fy + _LOCAL_PTS[:, 1] * ly
    return np.stack([xs, ys], axis=1)


def _disk(pts, cx, cy, r) -> np.ndarray:
    return (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2 <= r * r


def build_observation(env) -> Observation:
    s = env.state
    lay = env.layout
    pts = world_points(s.base_x, s.base_y, s.theta)

    walls = ((pts[:, 0] < WALL) | (pts[:, 0] > WORLD_SIZE - WALL)
             | (pts[:, 1] < WALL) | (pts[:, 1] > WORLD_SIZE - WALL))

    furn = np.zeros(len(pts), dtype=bool)
    for rect in lay.body_rects():
        furn |= rect.contains_many(pts)
    if s.tray_ext > 0.02:
        furn |= lay.tray_rect(s.tray_ext).contains_many(pts)
    for i in range(3):
        if s.drawer_ext[i] > 0.02:
            furn |= lay.drawer_rect(i, s.drawer_ext[i]).contains_many(pts)
    if s.door_angle > 0.02:
        seg = lay.door_segment(s.door_angle)
        d = np.array([segment_to_point_distance(p[0], p[1], *seg) for p in pts])
        furn |= d <= _DOOR_HIT

    bowl = np.zeros(len(pts), dtype=bool)
    if env.bowl_visible():
        bowl = _disk(pts, s.bowl_x, s.bowl_y, _BOWL_HIT)

    trash = _disk(pts, s.trash_can_x, s.trash_can_y, TRASH_CAN_RADIUS)
    if s.trash_support == "bowl" and env.bowl_visible():
        trash |= _disk(pts, s.bowl_x, s.bowl_y, _PIECE_HIT)

    ee_x, ee_y = env.ee_world()
    gripper = _disk(pts, ee_x, ee_y, _GRIPPER_HIT)

    raster = np.stack([walls, furn, bowl, trash, gripper]).astype(np.float64)
    raster = raster.reshape(RASTER_CHANNELS, RASTER_SIZE, RASTER_SIZE)

    scan = env.ray_scan() / SCAN_RANGE

    proprio = np.array([
        (s.ee_dx / env.REACH + 1.0) / 2.0,
        (s.ee_dy / env.REACH + 1.0) / 2.0,
        1.0 if s.gripper_closed else 0.0,
        (s.last_v_lin + 1.0) / 2.0,
        (s.last_v_ang + 1.0) / 2.0,
        1.0 if env.at_default_pose() else 0.0,
        1.0 if s.held is not None else 0.0,
    ])
    return Observation(raster=raster, scan=np.clip(scan, 0.0, 1.0), proprio=proprio)
