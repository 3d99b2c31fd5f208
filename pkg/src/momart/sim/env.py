"""Deterministic planar kitchen environment.

Five multi-stage tasks on a 5 m x 5 m floor with a differential-drive base,
a planar end-effector on a reach disk, one graspable bowl, a trash piece,
and articulated furniture (dishwasher door + tray, three dresser drawers).
Physics is kinematic: 20 Hz ticks, unicycle base integration, pull-to-follow
articulation, penetration-free collisions resolved by sliding.

Action layout: [v_lin, v_ang, dx, dy, grasp, reset], each clamped to [-1, 1].
grasp > 0 closes the gripper; reset > 0 overrides (dx, dy) and walks the
end-effector toward its default pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (Rect, circle_circle_pushout, circle_rect_pushout, raycast, rotate)
from .observe import (OBS_DIM, SCAN_FOV, SCAN_RANGE, SCAN_RAYS, Observation, build_observation)
from .tasks import TaskSpec
from .world import (BOWL_RADIUS, DOOR_LEN, DOOR_MAX, DOOR_OPEN_FRACTION, DRAWER_TRAVEL,
                    HANDLE_GRAB_RADIUS, Layout, TRASH_CAN_RADIUS, TRAY_TRAVEL, WALL,
                    WORLD_SIZE, make_layout)

ACTION_DIM = 6
EPISODE_CAP = 1200
DT = 0.05
V_MAX = 0.5
OMEGA_MAX = 1.5
EE_STEP = 0.02          # max end-effector travel per tick
REACH = 0.8
ROBOT_RADIUS = 0.22
GRASP_RADIUS = 0.06
EE_DEFAULT = (0.35, 0.0)
DEFAULT_POSE_TOL = 0.02
VISIBLE_EXT = 0.5       # tray/drawer extension at which contents are exposed


class SimError(Exception):
    pass


@dataclass
class SimState:
    base_x: float
    base_y: float
    theta: float
    last_v_lin: float = 0.0
    last_v_ang: float = 0.0
    ee_dx: float = EE_DEFAULT[0]
    ee_dy: float = EE_DEFAULT[1]
    gripper_closed: bool = False
    held: str | None = None
    bowl_x: float = 0.0
    bowl_y: float = 0.0
    bowl_support: str = "world"      # world | held | tray | drawer{i}
    bowl_local: float = 0.0          # lateral offset within tray/drawer
    bowl_drawer: int = 0             # which drawer hides the bowl (setup-dresser)
    trash_can_x: float = 0.0
    trash_can_y: float = 0.0
    trash_support: str = "can"       # bowl | can
    trash_emptied: bool = False
    door_angle: float = 0.0
    tray_ext: float = 0.0
    drawer_ext: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    steps: int = 0

    def to_bytes(self) -> bytes:
        """Bit-exact encoding for determinism checks."""
        floats = np.array([
            self.base_x, self.base_y, self.theta, self.last_v_lin, self.last_v_ang,
            self.ee_dx, self.ee_dy, self.bowl_x, self.bowl_y, self.bowl_local,
            self.trash_can_x, self.trash_can_y, self.door_angle, self.tray_ext,
            *self.drawer_ext,
        ], dtype="<f8")
        tags = f"{self.gripper_closed}|{self.held}|{self.bowl_support}|{self.bowl_drawer}|" \
               f"{self.trash_support}|{self.trash_emptied}|{self.steps}"
        return floats.tobytes() + tags.encode()


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    events: list[str]
    terminal: bool
    success: bool


class KitchenSim:
    REACH = REACH

    def __init__(self, task: TaskSpec, seed: int):
        self.task = task
        self.seed = seed
        self.layout: Layout = make_layout(task.layout_variant)
        self.state: SimState | None = None
        self._stage_latched: list[bool] = []
        self._stage_times: list[int] = []
        self._terminal = False
        self._success = False
        self.rng = None
        self.reset()

    # -- reset ------------------------------------------------------------------

    def reset(self) -> np.ndarray:
        """Deterministic layout from (task, seed); returns the initial observation."""
        ids = (hash_task(self.task.task_id), self.seed,
               0 if self.task.layout_variant == "canonical" else 1)
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(ids)))
        lay = self.layout
        rng = self.rng

        # robot pose: uniform in the spawn rect; heading roughly into the room
        # (a +-75 degree fan) so episodes do not start fully blind
        for _ in range(100):
            bx = rng.uniform(lay.spawn.x0, lay.spawn.x1)
            by = rng.uniform(lay.spawn.y0, lay.spawn.y1)
            if all(r.distance(bx, by) > ROBOT_RADIUS + 0.02 for r in lay.body_rects()):
                break
        theta = math.pi / 4 + rng.uniform(-1.3, 1.3)

        st = SimState(base_x=bx, base_y=by, theta=theta)
        st.trash_can_x, st.trash_can_y = lay.trash_home

        if self.task.bowl_start == "table":
            st.bowl_x = rng.uniform(lay.table.x0 + 0.12, lay.table.x1 - 0.12)
            st.bowl_y = rng.uniform(lay.table.y0 + 0.12, lay.table.y1 - 0.12)
            st.bowl_support = "world"
        elif self.task.bowl_start == "drawer":
            st.bowl_drawer = int(rng.integers(0, 3))
            st.bowl_local = rng.uniform(-0.08, 0.08)
            st.bowl_support = f"drawer{st.bowl_drawer}"
        else:  # tray
            st.bowl_local = rng.uniform(-0.1, 0.1)
            st.bowl_support = "tray"

        if self.task.randomize_trash_can:
            for _ in range(100):
                tx = rng.uniform(lay.trash_zone.x0, lay.trash_zone.x1)
                ty = rng.uniform(lay.trash_zone.y0, lay.trash_zone.y1)
                if all(r.distance(tx, ty) > TRASH_CAN_RADIUS + 0.02 for r in lay.body_rects()):
                    st.trash_can_x, st.trash_can_y = tx, ty
                    break

        st.trash_support = "bowl" if self.task.trash_starts_in_bowl else "can"
        if self.task.dishwasher_starts_open:
            st.door_angle = DOOR_MAX
            st.tray_ext = 1.0

        self.state = st
        self._sync_carried()
        self._stage_latched = [False] * self.task.n_stages
        self._stage_times = [-1] * self.task.n_stages
        self._terminal = False
        self._success = False
        self._update_stages()
        return self.observe().vector()

    # -- queries -----------------------------------------------------------------

    @property
    def terminal(self) -> bool:
        return self._terminal

    @property
    def success(self) -> bool:
        return self._success

    def ee_world(self) -> tuple[float, float]:
        s = self.state
        dx, dy = rotate(s.ee_dx, s.ee_dy, s.theta)
        return (s.base_x + dx, s.base_y + dy)

    def at_default_pose(self) -> bool:
        s = self.state
        return math.hypot(s.ee_dx - EE_DEFAULT[0], s.ee_dy - EE_DEFAULT[1]) < DEFAULT_POSE_TOL

    def bowl_visible(self) -> bool:
        s = self.state
        if s.bowl_support == "tray":
            return s.door_angle >= DOOR_OPEN_FRACTION * DOOR_MAX and s.tray_ext >= VISIBLE_EXT
        if s.bowl_support.startswith("drawer"):
            return s.drawer_ext[int(s.bowl_support[6:])] >= VISIBLE_EXT
        return True

    def bowl_graspable(self) -> bool:
        return self.state.held is None and self.bowl_visible()

    def stage_status(self) -> tuple[int, list[bool]]:
        """Current stage index (count of latched prefix) and per-stage booleans."""
        idx = 0
        for latched in self._stage_latched:
            if not latched:
                break
            idx += 1
        return idx, list(self._stage_latched)

    def stage_events(self) -> list[tuple[int, str]]:
        return [(t, name) for (name, _), t, l in
                zip(self.task.stages, self._stage_times, self._stage_latched) if l]

    # -- stepping -----------------------------------------------------------------

    def step(self, action) -> StepResult:
        if self._terminal:
            raise SimError("step() after terminal")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(ACTION_DIM), -1.0, 1.0)
        s = self.state

        # base: unicycle integration with the pre-update heading
        v_lin = a[0] * V_MAX
        v_ang = a[1] * OMEGA_MAX
        s.base_x += v_lin * math.cos(s.theta) * DT
        s.base_y += v_lin * math.sin(s.theta) * DT
        s.theta = _wrap_angle(s.theta + v_ang * DT)
        s.last_v_lin = float(a[0])
        s.last_v_ang = float(a[1])
        self._resolve_collisions()

        # end-effector: reset overrides the delta command
        if a[5] > 0.0:
            tx, ty = EE_DEFAULT
            ddx, ddy = tx - s.ee_dx, ty - s.ee_dy
            d = math.hypot(ddx, ddy)
            if d > 1e-9:
                scale = min(1.0, EE_STEP / d)
                s.ee_dx += ddx * scale
                s.ee_dy += ddy * scale
        else:
            s.ee_dx += a[2] * EE_STEP
            s.ee_dy += a[3] * EE_STEP
        r = math.hypot(s.ee_dx, s.ee_dy)
        if r > REACH:
            s.ee_dx *= REACH / r
            s.ee_dy *= REACH / r

        # gripper: level semantics
        want_closed = a[4] > 0.0
        ee_x, ee_y = self.ee_world()
        if want_closed and not s.gripper_closed:
            s.gripper_closed = True
            if (s.held is None and self.bowl_graspable()
                    and math.hypot(ee_x - s.bowl_x, ee_y - s.bowl_y) <= GRASP_RADIUS):
                s.held = "bowl"
                s.bowl_support = "held"
        elif want_closed and s.gripper_closed and s.held is None:
            # already closed on empty gripper: may still snap onto the bowl
            if (self.bowl_graspable()
                    and math.hypot(ee_x - s.bowl_x, ee_y - s.bowl_y) <= GRASP_RADIUS):
                s.held = "bowl"
                s.bowl_support = "held"
        elif not want_closed and s.gripper_closed:
            s.gripper_closed = False
            if s.held == "bowl":
                self._release_bowl(ee_x, ee_y)

        # articulation: a closed empty gripper near a handle drags it
        if s.gripper_closed and s.held is None:
            self._articulate(ee_x, ee_y)

        self._sync_carried()
        s.steps += 1

        events = self._update_stages()
        if self._success:
            self._terminal = True
        elif s.steps >= EPISODE_CAP:
            self._terminal = True
        return StepResult(obs=self.observe().vector(), events=events,
                          terminal=self._terminal, success=self._success)

    # -- internals ------------------------------------------------------------------

    def _release_bowl(self, ee_x, ee_y):
        s = self.state
        lay = self.layout
        s.held = None
        # dump: releasing the trash-filled bowl over the can empties it
        if (s.trash_support == "bowl"
                and math.hypot(ee_x - s.trash_can_x, ee_y - s.trash_can_y) <= TRASH_CAN_RADIUS):
            s.trash_support = "can"
            s.trash_emptied = True
        s.bowl_x, s.bowl_y = ee_x, ee_y
        door_open = s.door_angle >= DOOR_OPEN_FRACTION * DOOR_MAX
        if door_open and s.tray_ext >= VISIBLE_EXT and lay.tray_rect(s.tray_ext).contains(ee_x, ee_y):
            s.bowl_support = "tray"
            s.bowl_local = self._lateral_offset(lay.dishwasher, ee_x, ee_y)
        else:
            for i in range(3):
                if s.drawer_ext[i] >= VISIBLE_EXT and lay.drawer_rect(i, s.drawer_ext[i]).contains(ee_x, ee_y):
                    s.bowl_support = f"drawer{i}"
                    s.bowl_local = (self._lateral_offset(lay.dresser, ee_x, ee_y)
                                    - lay.drawer_offsets()[i])
                    break
            else:
                s.bowl_support = "world"

    @staticmethod
    def _lateral_offset(placement, px, py) -> float:
        fx, fy = placement.front
        lx, ly = placement.lateral
        return (px - fx) * lx + (py - fy) * ly

    def _articulate(self, ee_x, ee_y):
        s = self.state
        lay = self.layout
        door_open = s.door_angle >= DOOR_OPEN_FRACTION * DOOR_MAX
        handles = [("door", lay.door_handle(s.door_angle))]
        if door_open:
            handles.append(("tray", lay.tray_handle(s.tray_ext)))
        for i in range(3):
            handles.append((f"drawer{i}", lay.drawer_handle(i, s.drawer_ext[i])))

        best, best_d = None, HANDLE_GRAB_RADIUS
        for name, (hx, hy) in handles:
            d = math.hypot(ee_x - hx, ee_y - hy)
            if d <= best_d:
                best, best_d = name, d

        if best is None:
            return
        if best == "door":
            hx, hy = lay.door_hinge()
            ox, oy = lay.dishwasher.outward
            lx, ly = lay.dishwasher.lateral
            vx, vy = ee_x - hx, ee_y - hy
            target = math.atan2(vx * ox + vy * oy, vx * lx + vy * ly)
            target = min(max(target, 0.0), DOOR_MAX)
            rate = EE_STEP / DOOR_LEN
            s.door_angle = min(max(target, s.door_angle - rate), s.door_angle + rate)
        elif best == "tray":
            along = self._along_outward(lay.dishwasher, ee_x, ee_y) - 0.02
            target = min(max(along / TRAY_TRAVEL, 0.0), 1.0)
            rate = EE_STEP / TRAY_TRAVEL
            s.tray_ext = min(max(target, s.tray_ext - rate), s.tray_ext + rate)
        else:
            i = int(best[6:])
            off = lay.drawer_offsets()[i]
            fx, fy = lay.dresser.point(0.0, off)
            ox, oy = lay.dresser.outward
            along = (ee_x - fx) * ox + (ee_y - fy) * oy - 0.02
            target = min(max(along / DRAWER_TRAVEL, 0.0), 1.0)
            rate = EE_STEP / DRAWER_TRAVEL
            s.drawer_ext[i] = min(max(target, s.drawer_ext[i] - rate), s.drawer_ext[i] + rate)

    @staticmethod
    def _along_outward(placement, px, py) -> float:
        fx, fy = placement.front
        ox, oy = placement.outward
        return (px - fx) * ox + (py - fy) * oy

    def _sync_carried(self):
        """Objects riding the gripper, tray, or a drawer follow their carrier."""
        s = self.state
        lay = self.layout
        if s.bowl_support == "held":
            s.bowl_x, s.bowl_y = self.ee_world()
        elif s.bowl_support == "tray":
            s.bowl_x, s.bowl_y = lay.tray_anchor(s.tray_ext, s.bowl_local)
        elif s.bowl_support.startswith("drawer"):
            i = int(s.bowl_support[6:])
            s.bowl_x, s.bowl_y = lay.drawer_anchor(i, s.drawer_ext[i], s.bowl_local)

    def _resolve_collisions(self):
        s = self.state
        lay = self.layout
        for _ in range(4):
            moved = False
            s.base_x = min(max(s.base_x, WALL + ROBOT_RADIUS), WORLD_SIZE - WALL - ROBOT_RADIUS)
            s.base_y = min(max(s.base_y, WALL + ROBOT_RADIUS), WORLD_SIZE - WALL - ROBOT_RADIUS)
            for rect in lay.body_rects():
                push = circle_rect_pushout(s.base_x, s.base_y, ROBOT_RADIUS, rect)
                if push is not None:
                    s.base_x += push[0]
                    s.base_y += push[1]
                    moved = True
            push = circle_circle_pushout(s.base_x, s.base_y, ROBOT_RADIUS,
                                         s.trash_can_x, s.trash_can_y, TRASH_CAN_RADIUS)
            if push is not None:
                s.base_x += push[0]
                s.base_y += push[1]
                moved = True
            if not moved:
                break

    def _update_stages(self) -> list[str]:
        events = []
        for i, (name, pred) in enumerate(self.task.stages):
            if self._stage_latched[i]:
                continue
            if i > 0 and not self._stage_latched[i - 1]:
                break
            if pred(self):
                self._stage_latched[i] = True
                self._stage_times[i] = self.state.steps
                events.append(name)
            else:
                break
        if all(self._stage_latched):
            self._success = True
        return events

    # -- sensing ------------------------------------------------------------------

    def scan_obstacles(self):
        s = self.state
        lay = self.layout
        segments = [
            (WALL, WALL, WORLD_SIZE - WALL, WALL),
            (WORLD_SIZE - WALL, WALL, WORLD_SIZE - WALL, WORLD_SIZE - WALL),
            (WORLD_SIZE - WALL, WORLD_SIZE - WALL, WALL, WORLD_SIZE - WALL),
            (WALL, WORLD_SIZE - WALL, WALL, WALL),
        ]
        for rect in lay.body_rects():
            segments.extend(rect.segments())
        if s.door_angle > 0.02:
            segments.append(lay.door_segment(s.door_angle))
        if s.tray_ext > 0.02:
            segments.extend(lay.tray_rect(s.tray_ext).segments())
        for i in range(3):
            if s.drawer_ext[i] > 0.02:
                segments.extend(lay.drawer_rect(i, s.drawer_ext[i]).segments())
        circles = [(s.trash_can_x, s.trash_can_y, TRASH_CAN_RADIUS)]
        return segments, circles

    def ray_scan(self) -> np.ndarray:
        s = self.state
        angles = s.theta + np.linspace(-SCAN_FOV / 2, SCAN_FOV / 2, SCAN_RAYS)
        segments, circles = self.scan_obstacles()
        return raycast((s.base_x, s.base_y), angles, segments, circles, SCAN_RANGE)

    def observe(self) -> Observation:
        return build_observation(self)

    # -- rendering ------------------------------------------------------------------

    def render(self, view: str = "ego-raster"):
        if view == "ego-raster":
            return self.observe().raster
        if view == "topdown-rgb":
            return render_topdown(self)
        raise SimError(f"unknown view {view!r}")


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def hash_task(task_id: str) -> int:
    """Stable small integer for seeding; independent of PYTHONHASHSEED."""
    h = 0
    for ch in task_id:
        h = (h * 131 + ord(ch)) % (2 ** 31)
    return h


# -- top-down debug view ------------------------------------------------------------

_PX_PER_M = 100


def render_topdown(env: KitchenSim) -> np.ndarray:
    """(500, 500, 3) uint8 image, y up."""
    n = int(WORLD_SIZE * _PX_PER_M)
    img = np.full((n, n, 3), 235, dtype=np.uint8)
    s = env.state
    lay = env.layout

    def fill_rect(rect: Rect, color):
        x0 = max(int(rect.x0 * _PX_PER_M), 0)
        x1 = min(int(rect.x1 * _PX_PER_M), n)
        y0 = max(int(rect.y0 * _PX_PER_M), 0)
        y1 = min(int(rect.y1 * _PX_PER_M), n)
        img[n - y1:n - y0, x0:x1] = color

    def fill_disk(cx, cy, r, color):
        x0, x1 = int((cx - r) * _PX_PER_M), int((cx + r) * _PX_PER_M) + 1
        y0, y1 = int((cy - r) * _PX_PER_M), int((cy + r) * _PX_PER_M) + 1
        for yy in range(max(y0, 0), min(y1, n)):
            for xx in range(max(x0, 0), min(x1, n)):
                px, py = (xx + 0.5) / _PX_PER_M, (yy + 0.5) / _PX_PER_M
                if (px - cx) ** 2 + (py - cy) ** 2 <= r * r:
                    img[n - 1 - yy, xx] = color

    wall_px = int(WALL * _PX_PER_M)
    img[:wall_px] = img[-wall_px:] = (60, 60, 60)
    img[:, :wall_px] = img[:, -wall_px:] = (60, 60, 60)

    fill_rect(lay.table, (150, 105, 60))
    fill_rect(lay.dishwasher.rect, (110, 130, 170))
    fill_rect(lay.sink.rect, (120, 160, 170))
    fill_rect(lay.sink_basin(), (90, 130, 140))
    fill_rect(lay.dresser.rect, (140, 120, 100))
    if s.tray_ext > 0.02:
        fill_rect(lay.tray_rect(s.tray_ext), (160, 175, 205))
    for i in range(3):
        if s.drawer_ext[i] > 0.02:
            fill_rect(lay.drawer_rect(i, s.drawer_ext[i]), (175, 155, 130))
    if s.door_angle > 0.02:
        x0, y0, x1, y1 = lay.door_segment(s.door_angle)
        for t in np.linspace(0.0, 1.0, 60):
            fill_disk(x0 + t * (x1 - x0), y0 + t * (y1 - y0), 0.03, (90, 110, 150))

    fill_disk(s.trash_can_x, s.trash_can_y, TRASH_CAN_RADIUS, (70, 110, 70))
    if s.trash_support == "can":
        fill_disk(s.trash_can_x, s.trash_can_y, 0.05, (30, 30, 30))
    if env.bowl_visible():
        fill_disk(s.bowl_x, s.bowl_y, BOWL_RADIUS, (200, 40, 40))
        if s.trash_support == "bowl":
            fill_disk(s.bowl_x, s.bowl_y, 0.03, (30, 30, 30))

    fill_disk(s.base_x, s.base_y, ROBOT_RADIUS, (230, 190, 60))
    hx = s.base_x + math.cos(s.theta) * ROBOT_RADIUS
    hy = s.base_y + math.sin(s.theta) * ROBOT_RADIUS
    fill_disk(hx, hy, 0.05, (40, 40, 40))
    ex, ey = env.ee_world()
    fill_disk(ex, ey, 0.05, (30, 30, 200) if not s.gripper_closed else (200, 30, 200))
    return img


def to_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + img.astype(np.uint8).tobytes()
