"""Scripted demonstrators: deterministic waypoint controllers per task.

The operator reads privileged simulator state (it is a data generator, not a
policy) and drives each task through its stages: grid A* navigation with
line-of-sight smoothing, end-effector servoing, handle pulls, grasp/place and
the trash dump.  An OperatorProfile perturbs the motion channels to imitate
sloppy teleoperation; the all-zeros profile is the expert.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .data import Episode
from .sim.env import (EE_STEP, EPISODE_CAP, GRASP_RADIUS, KitchenSim, ROBOT_RADIUS,
                      hash_task)
from .sim.geometry import rotate
from .sim.tasks import TaskSpec
from .sim.world import (DOOR_MAX, TRASH_CAN_RADIUS, WORLD_SIZE)


@dataclass(frozen=True)
class OperatorProfile:
    noise_scale: float = 0.0    # std added to the motion channels each step
    dither_prob: float = 0.0    # chance of a wasted wander step
    pause_prob: float = 0.0     # chance of a do-nothing step
    seed: int = 0

    def __post_init__(self):
        if self.noise_scale < 0 or not (0 <= self.dither_prob <= 1) or not (0 <= self.pause_prob <= 1):
            raise ValueError("invalid operator profile")

    @property
    def is_expert(self) -> bool:
        return self.noise_scale == 0 and self.dither_prob == 0 and self.pause_prob == 0


EXPERT = OperatorProfile()
SUBOPTIMAL = OperatorProfile(noise_scale=0.25, dither_prob=0.08, pause_prob=0.05, seed=1)


class GiveUp(Exception):
    """A stage failed its retry budget; the episode is abandoned."""


# -- path planning ----------------------------------------------------------------

_RES = 0.05
_INFLATE = ROBOT_RADIUS + 0.05


class Planner:
    """A* over an inflated occupancy grid with line-of-sight smoothing."""

    def __init__(self, env: KitchenSim):
        n = int(round(WORLD_SIZE / _RES))
        self.n = n
        xs = (np.arange(n) + 0.5) * _RES
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        blocked = ((pts[:, 0] < _INFLATE) | (pts[:, 0] > WORLD_SIZE - _INFLATE)
                   | (pts[:, 1] < _INFLATE) | (pts[:, 1] > WORLD_SIZE - _INFLATE))
        for rect in env.layout.body_rects():
            dx = np.maximum(np.abs(pts[:, 0] - rect.cx) - rect.hw, 0.0)
            dy = np.maximum(np.abs(pts[:, 1] - rect.cy) - rect.hh, 0.0)
            blocked |= np.hypot(dx, dy) < _INFLATE
        s = env.state
        blocked |= (np.hypot(pts[:, 0] - s.trash_can_x, pts[:, 1] - s.trash_can_y)
                    < TRASH_CAN_RADIUS + _INFLATE)
        self.blocked = blocked.reshape(n, n)

    def _cell(self, x, y):
        return (min(max(int(x / _RES), 0), self.n - 1),
                min(max(int(y / _RES), 0), self.n - 1))

    def free(self, x, y) -> bool:
        i, j = self._cell(x, y)
        return not self.blocked[i, j]

    def _nearest_free(self, cell):
        if not self.blocked[cell]:
            return cell
        for radius in range(1, 12):
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    i, j = cell[0] + di, cell[1] + dj
                    if 0 <= i < self.n and 0 <= j < self.n and not self.blocked[i, j]:
                        return (i, j)
        raise GiveUp("no free cell near target")

    def plan(self, start, goal) -> list[tuple[float, float]]:
        s = self._nearest_free(self._cell(*start))
        g = self._nearest_free(self._cell(*goal))
        if s == g:
            return [goal]
        steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
        dist = {s: 0.0}
        prev = {}
        pq = [(0.0, s)]
        while pq:
            _, cur = heapq.heappop(pq)
            if cur == g:
                break
            for di, dj in steps:
                nxt = (cur[0] + di, cur[1] + dj)
                if not (0 <= nxt[0] < self.n and 0 <= nxt[1] < self.n) or self.blocked[nxt]:
                    continue
                nd = dist[cur] + math.hypot(di, dj)
                if nd < dist.get(nxt, math.inf):
                    dist[nxt] = nd
                    prev[nxt] = cur
                    heapq.heappush(pq, (nd + math.hypot(g[0] - nxt[0], g[1] - nxt[1]), nxt))
        if g not in prev and s != g:
            raise GiveUp("no path")
        cells = [g]
        while cells[-1] != s:
            cells.append(prev[cells[-1]])
        cells.reverse()
        pts = [((i + 0.5) * _RES, (j + 0.5) * _RES) for i, j in cells]
        pts.append(goal)
        return self._smooth(start, pts)

    def _smooth(self, start, pts):
        out = []
        cur = start
        i = 0
        while i < len(pts):
            j = len(pts) - 1
            while j > i and not self._clear(cur, pts[j]):
                j -= 1
            out.append(pts[j])
            cur = pts[j]
            i = j + 1
        return out

    def _clear(self, a, b) -> bool:
        d = math.hypot(b[0] - a[0], b[1] - a[1])
        n = max(int(d / 0.04), 1)
        for k in range(1, n + 1):
            t = k / n
            if not self.free(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])):
                return False
        return True


# -- low-level control -------------------------------------------------------------

def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def _grasp_hold(env):
    return 1.0 if env.state.gripper_closed else -1.0


def _action(env, v=0.0, w=0.0, dx=0.0, dy=0.0, grasp=None, reset=-1.0):
    if grasp is None:
        grasp = _grasp_hold(env)
    return np.array([v, w, dx, dy, grasp, reset])


def _turn_to(env, heading, tol=0.1, max_steps=150):
    for _ in range(max_steps):
        err = _wrap(heading - env.state.theta)
        if abs(err) <= tol:
            return
        yield _action(env, w=float(np.clip(err * 3.0, -1, 1)))
    raise GiveUp("turn timed out")


def _drive_to(env, planner, target, face=None, tol=0.06, max_steps=700):
    s = env.state
    waypoints = planner.plan((s.base_x, s.base_y), target)
    step = 0
    for wi, (wx, wy) in enumerate(waypoints):
        wp_tol = tol if wi == len(waypoints) - 1 else 0.12
        stall = 0
        while True:
            s = env.state
            d = math.hypot(wx - s.base_x, wy - s.base_y)
            if d <= wp_tol:
                break
            err = _wrap(math.atan2(wy - s.base_y, wx - s.base_x) - s.theta)
            v = 0.0 if abs(err) > 0.6 else float(np.clip(d * 5.0, 0.0, 1.0)) * max(math.cos(err), 0.0)
            w = float(np.clip(err * 3.0, -1, 1))
            yield _action(env, v=v, w=w)
            step += 1
            stall += 1
            if step > max_steps:
                raise GiveUp("drive timed out")
            if stall > 250:
                raise GiveUp("drive stalled")
    if face is not None:
        yield from _turn_to(env, face)


def _ee_to(env, target, tol=0.012, max_steps=250):
    """Servo the end-effector to a world point (base stays put)."""
    for _ in range(max_steps):
        ex, ey = env.ee_world()
        d = math.hypot(target[0] - ex, target[1] - ey)
        if d <= tol:
            return
        lx, ly = rotate(target[0] - ex, target[1] - ey, -env.state.theta)
        scale = 1.0 / max(d, EE_STEP)
        yield _action(env, dx=float(np.clip(lx * scale, -1, 1)),
                      dy=float(np.clip(ly * scale, -1, 1)))
    raise GiveUp("end-effector servo timed out")


def _set_grasp(env, closed: bool):
    yield _action(env, grasp=1.0 if closed else -1.0)


def _arm_reset(env, steps=20):
    for _ in range(steps):
        if env.at_default_pose():
            return
        yield _action(env, reset=1.0)


# -- manipulation routines ----------------------------------------------------------

def _pull_door(env, lay, target_angle, max_steps=160):
    yield from _ee_to(env, lay.door_handle(env.state.door_angle), tol=0.02)
    yield from _set_grasp(env, True)
    rate = EE_STEP / 0.6
    for _ in range(max_steps):
        if env.state.door_angle >= target_angle:
            break
        nxt = min(env.state.door_angle + rate, DOOR_MAX)
        hx, hy = lay.door_handle(nxt)
        ex, ey = env.ee_world()
        lx, ly = rotate(hx - ex, hy - ey, -env.state.theta)
        yield _action(env, dx=float(np.clip(lx / EE_STEP, -1, 1)),
                      dy=float(np.clip(ly / EE_STEP, -1, 1)), grasp=1.0)
    yield from _set_grasp(env, False)
    if env.state.door_angle < target_angle:
        raise GiveUp("door pull failed")


def _pull_slide(env, handle_fn, value_fn, travel, target, max_steps=120):
    yield from _ee_to(env, handle_fn(value_fn()), tol=0.02)
    yield from _set_grasp(env, True)
    rate = EE_STEP / travel
    for _ in range(max_steps):
        if value_fn() >= target:
            break
        hx, hy = handle_fn(min(value_fn() + rate, 1.0))
        ex, ey = env.ee_world()
        lx, ly = rotate(hx - ex, hy - ey, -env.state.theta)
        yield _action(env, dx=float(np.clip(lx / EE_STEP, -1, 1)),
                      dy=float(np.clip(ly / EE_STEP, -1, 1)), grasp=1.0)
    yield from _set_grasp(env, False)
    if value_fn() < target:
        raise GiveUp("pull failed")


def _grasp_bowl(env, max_tries=3):
    for _ in range(max_tries):
        yield from _set_grasp(env, False)
        yield from _ee_to(env, (env.state.bowl_x, env.state.bowl_y), tol=GRASP_RADIUS * 0.5)
        yield from _set_grasp(env, True)
        if env.state.held == "bowl":
            return
    raise GiveUp("grasp failed")


def _place_bowl(env, point, settle=1, tol=0.03):
    yield from _ee_to(env, point, tol=tol)
    yield from _set_grasp(env, False)
    for _ in range(settle):
        yield _action(env)


def _dump_trash(env, max_tries=3):
    for _ in range(max_tries):
        yield from _ee_to(env, (env.state.trash_can_x, env.state.trash_can_y), tol=0.04)
        yield from _set_grasp(env, False)
        yield from _set_grasp(env, True)
        if env.state.trash_emptied and env.state.held == "bowl":
            return
        if env.state.held != "bowl":
            yield from _grasp_bowl(env)
    raise GiveUp("dump failed")


# -- approach helpers ------------------------------------------------------------------

def _approach_table_point(env, planner, target_xy, reach=0.33):
    """A free standoff just outside the table, nearest edge first."""
    t = env.layout.table
    bx, by = target_xy
    options = sorted([
        (bx - t.x0, (t.x0 - reach, by), 0.0),
        (t.x1 - bx, (t.x1 + reach, by), math.pi),
        (by - t.y0, (bx, t.y0 - reach), math.pi / 2),
        (t.y1 - by, (bx, t.y1 + reach), -math.pi / 2),
    ])
    for _, (px, py), face in options:
        if planner.free(px, py):
            return (px, py), face
    raise GiveUp("no free table approach")


def _approach_circle(env, planner, center, standoff: float = 0.5):
    s = env.state
    base = math.atan2(s.base_y - center[1], s.base_x - center[0])
    for dk in (0, 1, -1, 2, -2, 3, -3, 4):
        a = base + dk * (math.pi / 4)
        px, py = center[0] + standoff * math.cos(a), center[1] + standoff * math.sin(a)
        if planner.free(px, py):
            return (px, py), _wrap(a + math.pi)
    raise GiveUp("no free approach around point")


# -- task scripts ------------------------------------------------------------------------

def _retry(gen_fn, check, attempts=3):
    last = None
    for _ in range(attempts):
        try:
            yield from gen_fn()
        except GiveUp as e:
            last = e
        if check():
            return
    raise last if last is not None else GiveUp("stage checks failed")


def _script(env: KitchenSim, planner: Planner, rng: np.random.Generator):
    """Expert behavior for one episode.

    Work poses are jittered per episode (within reach margins) so the dataset
    covers a spread of manipulation base poses, each demonstrated with arm
    motions adapted to the actual pose.
    """
    lay = env.layout
    task = env.task.task_id
    st = env.state

    def dish_work_point():
        off = (rng.uniform(-0.05, 0.03), rng.uniform(-0.05, 0.05))
        return lay.dishwasher.point(0.55 + off[0], 0.15 + off[1]), _face_of(lay.dishwasher)

    def dresser_point(slot_off):
        off = rng.uniform(-0.08, 0.08, 2)
        return lay.dresser.point(0.5 + off[0], slot_off + off[1]), _face_of(lay.dresser)

    if task in ("cleanup-dishwasher", "cleanup-sink"):
        target, face = _approach_table_point(env, planner, (st.bowl_x, st.bowl_y),
                                             reach=0.33 + rng.uniform(-0.05, 0.05))
        yield from _drive_to(env, planner, target, face=face)
        yield from _retry(lambda: _grasp_bowl(env), lambda: env.state.held == "bowl")
        can = (st.trash_can_x, st.trash_can_y)
        target, face = _approach_circle(env, planner, can,
                                        standoff=0.5 + rng.uniform(-0.02, 0.08))
        yield from _drive_to(env, planner, target, face=face)
        yield from _retry(lambda: _dump_trash(env),
                          lambda: env.state.trash_emptied and env.state.held == "bowl")
        yield from _arm_reset(env)
        if task == "cleanup-sink":
            target = lay.sink.point(0.45 + rng.uniform(-0.08, 0.02), rng.uniform(-0.08, 0.08))
            yield from _drive_to(env, planner, target, face=_face_of(lay.sink))
            basin = lay.sink_basin()
            yield from _place_bowl(env, (basin.cx + rng.uniform(-0.05, 0.05),
                                         basin.cy + rng.uniform(-0.05, 0.05)))
            return
        target, face = dish_work_point()
        yield from _drive_to(env, planner, target, face=face)
        park = lay.dishwasher.point(0.35 + rng.uniform(-0.04, 0.04),
                                    0.55 + rng.uniform(-0.04, 0.04))
        yield from _place_bowl(env, park)
        yield from _retry(lambda: _pull_door(env, lay, 0.97 * DOOR_MAX),
                          lambda: env.state.door_angle >= 0.9 * DOOR_MAX)
        yield from _retry(
            lambda: _pull_slide(env, lay.tray_handle, lambda: env.state.tray_ext, 0.45, 0.999),
            lambda: env.state.tray_ext >= 0.95)
        yield from _retry(lambda: _grasp_bowl(env), lambda: env.state.held == "bowl")
        yield from _place_bowl(env, lay.dishwasher.point(0.25, rng.uniform(-0.08, 0.08)))
        return

    if task == "setup-dishwasher":
        target, face = dish_work_point()
        yield from _drive_to(env, planner, target, face=face)
        yield from _retry(lambda: _pull_door(env, lay, 0.97 * DOOR_MAX),
                          lambda: env.state.door_angle >= 0.9 * DOOR_MAX)
        yield from _retry(
            lambda: _pull_slide(env, lay.tray_handle, lambda: env.state.tray_ext, 0.45, 0.999),
            lambda: env.state.tray_ext >= 0.95)
        yield from _retry(lambda: _grasp_bowl(env), lambda: env.state.held == "bowl")
        yield from _goto_table_and_drop(env, planner, rng)
        return

    if task == "setup-dresser":
        for i in range(3):
            off = lay.drawer_offsets()[i]
            target, face = dresser_point(off)
            yield from _drive_to(env, planner, target, face=face)
            yield from _retry(
                lambda i=i: _pull_slide(env, lambda e, i=i: lay.drawer_handle(i, e),
                                        lambda i=i: env.state.drawer_ext[i], 0.3, 0.95),
                lambda i=i: env.state.drawer_ext[i] >= 0.7)
            if env.bowl_visible():
                break
        yield from _retry(lambda: _grasp_bowl(env), lambda: env.state.held == "bowl")
        yield from _goto_table_and_drop(env, planner, rng)
        return

    if task == "unload-dishwasher":
        target, face = dish_work_point()
        yield from _drive_to(env, planner, target, face=face)
        yield from _retry(lambda: _grasp_bowl(env), lambda: env.state.held == "bowl")
        off0 = lay.drawer_offsets()[0]
        target, face = dresser_point(off0)
        yield from _drive_to(env, planner, target, face=face)
        park = lay.dresser.point(0.55 + rng.uniform(-0.04, 0.04),
                                 off0 - 0.45 + rng.uniform(-0.04, 0.04))
        yield from _place_bowl(env, park)
        yield from _retry(
            lambda: _pull_slide(env, lambda e: lay.drawer_handle(0, e),
                                lambda: env.state.drawer_ext[0], 0.3, 0.95),
            lambda: env.state.drawer_ext[0] >= 0.7)
        yield from _retry(lambda: _grasp_bowl(env), lambda: env.state.held == "bowl")
        yield from _place_bowl(env, lay.drawer_anchor(0, env.state.drawer_ext[0],
                                                      rng.uniform(-0.06, 0.06)))
        return

    raise GiveUp(f"no script for task {task}")


def _face_of(placement):
    ox, oy = placement.outward
    return math.atan2(-oy, -ox)


def _goto_table_and_drop(env, planner, rng):
    t = env.layout.table
    dx = rng.uniform(-0.25, 0.25)
    drop = (t.cx + dx, t.y0 + 0.22 + rng.uniform(0.0, 0.08))
    target = (t.cx + dx, t.y0 - 0.35 + rng.uniform(-0.06, 0.0))
    if not planner.free(*target):
        drop = (t.cx + dx, t.y1 - 0.22)
        target = (t.cx + dx, t.y1 + 0.35)
    face = math.pi / 2 if target[1] < t.cy else -math.pi / 2
    yield from _drive_to(env, planner, target, face=face)
    yield from _place_bowl(env, drop)


# -- public API ------------------------------------------------------------------------


def quantize_action(a: np.ndarray) -> np.ndarray:
    """Round-trip through float32 so the applied action equals the stored one."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def generate_demo(task: TaskSpec, seed: int, profile: OperatorProfile) -> Episode:
    """Run the scripted controller on (task, seed) and record the episode."""
    env = KitchenSim(task, seed)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([profile.seed, hash_task(task.task_id), seed, 7])))
    planner = Planner(env)

    obs_list = [env.observe().vector()]
    act_list = []

    def perturb(action):
        u_dither = rng.random()
        u_pause = rng.random()
        eps = rng.normal(0.0, 1.0, size=4)
        a = action.copy()
        if profile.dither_prob > 0 and u_dither < profile.dither_prob:
            a[:4] = (eps / 3.0).clip(-0.6, 0.6)
        elif profile.pause_prob > 0 and u_pause < profile.pause_prob:
            a[:4] = 0.0
        elif profile.noise_scale > 0:
            a[:4] = a[:4] + eps * profile.noise_scale
        return quantize_action(np.clip(a, -1.0, 1.0))

    try:
        for raw in _script(env, planner, rng):
            a = perturb(raw)
            result = env.step(a)
            act_list.append(a)
            if result.terminal:
                break
            obs_list.append(result.obs)
            if env.state.steps >= EPISODE_CAP:
                break
    except GiveUp:
        pass

    n = len(act_list)
    return Episode(
        task_id=task.task_id, seed=seed,
        operator="expert" if profile.is_expert else "suboptimal",
        success=env.success,
        obs=np.asarray(obs_list[:n], dtype=np.float32),
        actions=np.asarray(act_list, dtype=np.float32),
        stage_events=env.stage_events(),
        extra={"layout": task.layout_variant},
    )


def generate_dataset(task: TaskSpec, n_success: int, profile: OperatorProfile,
                     start_seed: int = 0, keep_failures: bool = True,
                     max_attempts_factor: int = 4):
    """Episodes until `n_success` successes; returns (episodes, seeds_used)."""
    episodes = []
    successes = 0
    seed = start_seed
    attempts = 0
    while successes < n_success and attempts < n_success * max_attempts_factor:
        ep = generate_demo(task, seed, profile)
        if ep.success:
            successes += 1
            episodes.append(ep)
        elif keep_failures:
            episodes.append(ep)
        seed += 1
        attempts += 1
    return episodes, seed - start_seed
