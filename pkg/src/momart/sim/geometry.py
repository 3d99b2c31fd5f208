"""Planar geometry helpers: axis-aligned rectangles, circles, ray casting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rect:
    cx: float
    cy: float
    hw: float  # half width (x)
    hh: float  # half height (y)

    @property
    def x0(self):
        return self.cx - self.hw

    @property
    def x1(self):
        return self.cx + self.hw

    @property
    def y0(self):
        return self.cy - self.hh

    @property
    def y1(self):
        return self.cy + self.hh

    def contains(self, px, py) -> bool:
        return (abs(px - self.cx) <= self.hw) and (abs(py - self.cy) <= self.hh)

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        return (np.abs(pts[:, 0] - self.cx) <= self.hw) & (np.abs(pts[:, 1] - self.cy) <= self.hh)

    def distance(self, px, py) -> float:
        """Distance from a point to the rectangle (0 inside)."""
        dx = max(abs(px - self.cx) - self.hw, 0.0)
        dy = max(abs(py - self.cy) - self.hh, 0.0)
        return float(np.hypot(dx, dy))

    def segments(self) -> list[tuple[float, float, float, float]]:
        x0, x1, y0, y1 = self.x0, self.x1, self.y0, self.y1
        return [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)]


def circle_rect_pushout(px, py, r, rect: Rect):
    """Minimum translation to move a circle at (px, py) out of `rect`.

    Returns (dx, dy) or None when not penetrating.
    """
    qx = min(max(px, rect.x0), rect.x1)
    qy = min(max(py, rect.y0), rect.y1)
    dx, dy = px - qx, py - qy
    d2 = dx * dx + dy * dy
    if d2 >= r * r:
        return None
    if d2 > 1e-12:
        d = np.sqrt(d2)
        push = (r - d) / d
        return dx * push, dy * push
    # center inside the rect: push along the axis of least escape
    left, right = px - rect.x0, rect.x1 - px
    down, up = py - rect.y0, rect.y1 - py
    m = min(left, right, down, up)
    if m == left:
        return -(left + r), 0.0
    if m == right:
        return right + r, 0.0
    if m == down:
        return 0.0, -(down + r)
    return 0.0, up + r


def circle_circle_pushout(px, py, r, ox, oy, orad):
    dx, dy = px - ox, py - oy
    d2 = dx * dx + dy * dy
    rr = r + orad
    if d2 >= rr * rr:
        return None
    d = np.sqrt(d2)
    if d < 1e-9:
        return rr, 0.0
    push = (rr - d) / d
    return dx * push, dy * push


def segment_to_point_distance(px, py, x0, y0, x1, y1) -> float:
    vx, vy = x1 - x0, y1 - y0
    wx, wy = px - x0, py - y0
    vv = vx * vx + vy * vy
    t = 0.0 if vv < 1e-12 else min(max((wx * vx + wy * vy) / vv, 0.0), 1.0)
    return float(np.hypot(px - (x0 + t * vx), py - (y0 + t * vy)))


def raycast(origin, angles, segments, circles, max_range: float) -> np.ndarray:
    """Distance to the nearest obstacle along each angle, capped at max_range.

    `segments` is an (S, 4) array of (x0, y0, x1, y1); `circles` an (C, 3)
    array of (cx, cy, r).
    """
    ox, oy = origin
    n = len(angles)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (n, 2)
    dist = np.full(n, max_range)

    if len(segments):
        seg = np.asarray(segments, dtype=np.float64)
        ex = seg[:, 2] - seg[:, 0]
        ey = seg[:, 3] - seg[:, 1]
        # solve origin + t*dir = p0 + u*edge for each (ray, segment) pair
        dx = dirs[:, 0][:, None]
        dy = dirs[:, 1][:, None]
        denom = dx * (-ey)[None, :] + dy * ex[None, :]
        wx = (seg[:, 0] - ox)[None, :]
        wy = (seg[:, 1] - oy)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (wx * (-ey)[None, :] + wy * ex[None, :]) / denom
            u = (dx * wy - dy * wx) / denom
        hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
        t = np.where(hit, t, np.inf)
        dist = np.minimum(dist, t.min(axis=1))

    for cx, cy, r in circles:
        fx, fy = ox - cx, oy - cy
        b = dirs[:, 0] * fx + dirs[:, 1] * fy
        c = fx * fx + fy * fy - r * r
        disc = b * b - c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = -b - sq
        t = np.where(ok & (t > 1e-9), t, np.inf)
        dist = np.minimum(dist, t)

    return np.minimum(dist, max_range)


def rotate(vx, vy, theta):
    c, s = np.cos(theta), np.sin(theta)
    return c * vx - s * vy, s * vx + c * vy
