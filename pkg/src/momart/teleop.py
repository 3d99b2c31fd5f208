"""Real-time teleoperation service: joystick mapping, 20 Hz session loop,
demonstration recording.

The browser client sends raw inputs; ALL control mapping happens here so the
recorded action always equals the applied action.  Frames go out as JSON with
the ego raster base64-encoded as uint8 (value * 255, channel-major 5x24x24).

Joystick geometry (unit disk, u lateral, v longitudinal):
  * dead zone: |(u, v)| < 0.15 -> (0, 0)
  * rotation band: |v| < 0.2 and |u| >= 0.15 -> pure rotation (0, -u)
  * hourglass: |u| <= |v| -> (v, -u)
  * remaining corners project onto the nearest of the two region boundaries
Rightward stick (u > 0) yields clockwise rotation (v_ang < 0).
"""

from __future__ import annotations

import asyncio
import base64
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, HTMLResponse

from .data import Episode, DatasetReader, write_dataset
from .operators import quantize_action
from .sim import KitchenSim, TaskSpec

DEAD_ZONE = 0.15
ROTATION_BAND = 0.2
TICK_SECONDS = 0.05
COMMAND_STALE_SECONDS = 0.25
EE_DRAG_GAIN = 1.0
SESSION_RETAIN_SECONDS = 60.0


class TeleopError(Exception):
    pass


def joystick_map(u: float, v: float) -> tuple[float, float]:
    """Map a unit-disk joystick position to (v_lin, v_ang), each in [-1, 1]."""
    if u * u + v * v > 1.0 + 1e-9:
        raise TeleopError(f"joystick input ({u}, {v}) outside the unit disk")
    if math.hypot(u, v) < DEAD_ZONE:
        return (0.0, 0.0)
    if abs(v) < ROTATION_BAND and abs(u) >= DEAD_ZONE:
        return (0.0, -u)
    if abs(u) <= abs(v):
        return (v, -u)
    # corner: project onto the nearer of the hourglass edge / rotation band edge
    d_hour = (abs(u) - abs(v)) / math.sqrt(2.0)
    d_band = abs(v) - ROTATION_BAND
    if d_band <= d_hour:
        return (0.0, -u)
    m = (abs(u) + abs(v)) / 2.0
    return (math.copysign(m, v), -math.copysign(m, u))


@dataclass
class CommandState:
    """Last-writer-wins mailbox the network reader fills and the tick consumes."""

    joy: tuple[float, float] = (0.0, 0.0)
    joy_time: float = -math.inf
    ee_accum: list = field(default_factory=lambda: [0.0, 0.0])
    gripper_closed: bool = False
    reset_latched: bool = False

    def take_ee(self) -> tuple[float, float]:
        dx, dy = self.ee_accum
        self.ee_accum[0] = self.ee_accum[1] = 0.0
        return dx, dy


@dataclass
class Recording:
    active: bool = False
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    marks: list = field(default_factory=list)


class Session:
    """One live environment driven at 20 Hz by one client."""

    def __init__(self, task: TaskSpec, seed: int, out_path=None):
        self.task = task
        self.seed = seed
        self.out_path = out_path
        self.env = KitchenSim(task, seed)
        self.commands = CommandState()
        self.recording = Recording()
        self.tick_index = 0
        self.episodes_written = 0
        self.tick_intervals: list[float] = []
        self._next_seed = seed + 1

    # -- message handling --------------------------------------------------------

    def handle_message(self, msg: dict) -> dict | None:
        kind = msg.get("type")
        cmd = self.commands
        if kind == "joy":
            u, v = float(msg["u"]), float(msg["v"])
            n = math.hypot(u, v)
            if n > 1.0:
                u, v = u / n, v / n
            cmd.joy = (u, v)
            cmd.joy_time = time.monotonic()
            return None
        if kind == "ee":
            cmd.ee_accum[0] += float(msg["dx"]) * EE_DRAG_GAIN
            cmd.ee_accum[1] += float(msg["dy"]) * EE_DRAG_GAIN
            return None
        if kind == "grasp_toggle":
            cmd.gripper_closed = not cmd.gripper_closed
            return None
        if kind == "arm_reset":
            cmd.reset_latched = True
            return None
        if kind == "record":
            return self._handle_record(msg.get("op"))
        if kind == "ping":
            return {"type": "pong", "t": msg.get("t")}
        return {"type": "error", "message": f"unknown message type {kind!r}"}

    def _handle_record(self, op: str) -> dict:
        rec = self.recording
        if op == "start":
            # a fresh episode needs a fresh (non-terminal) environment
            self.env = KitchenSim(self.task, self._next_seed)
            self._next_seed += 1
            self.commands = CommandState()
            rec.active = True
            rec.obs = []
            rec.actions = []
            rec.marks = []
            return {"type": "record_ack", "op": "start", "seed": self.env.seed}
        if op == "mark":
            if not rec.active:
                return {"type": "error", "message": "mark without active recording"}
            rec.marks.append(self.tick_index)
            return {"type": "record_ack", "op": "mark"}
        if op == "stop":
            if not rec.active:
                return {"type": "error", "message": "stop without start"}
            rec.active = False
            episode = self._finalize_episode()
            return {"type": "record_ack", "op": "stop", "length": episode.length,
                    "success": episode.success, "written": self.out_path is not None}
        return {"type": "error", "message": f"unknown record op {op!r}"}

    def _finalize_episode(self) -> Episode:
        rec = self.recording
        obs_dim = self.env.observe().vector().shape[0]
        obs = (np.asarray(rec.obs, dtype=np.float32) if rec.obs
               else np.zeros((0, obs_dim), dtype=np.float32))
        actions = (np.asarray(rec.actions, dtype=np.float32) if rec.actions
                   else np.zeros((0, 6), dtype=np.float32))
        episode = Episode(
            task_id=self.task.task_id, seed=self.env.seed, operator="human",
            success=self.env.success, obs=obs, actions=actions,
            stage_events=self.env.stage_events(),
            extra={"layout": self.task.layout_variant, "marks": rec.marks},
        )
        if self.out_path and episode.length > 0:
            append_episode(self.out_path, episode)
            self.episodes_written += 1
        return episode

    # -- ticking --------------------------------------------------------------------

    def compose_action(self, now: float) -> np.ndarray:
        cmd = self.commands
        if now - cmd.joy_time > COMMAND_STALE_SECONDS:
            v_lin, v_ang = 0.0, 0.0   # safety hold
        else:
            v_lin, v_ang = joystick_map(*cmd.joy)
        dx, dy = cmd.take_ee()
        dx = min(max(dx, -1.0), 1.0)
        dy = min(max(dy, -1.0), 1.0)
        if cmd.reset_latched and self.env.at_default_pose():
            cmd.reset_latched = False
        reset = 1.0 if cmd.reset_latched else -1.0
        grasp = 1.0 if cmd.gripper_closed else -1.0
        return quantize_action(np.array([v_lin, v_ang, dx, dy, grasp, reset]))

    def tick(self, now: float | None = None) -> dict:
        """Apply the latest command, step the sim once, return the frame."""
        now = time.monotonic() if now is None else now
        action = self.compose_action(now)
        if not self.env.terminal:
            obs_before = self.env.observe().vector()
            result = self.env.step(action)
            if self.recording.active:
                self.recording.obs.append(obs_before.astype(np.float32))
                self.recording.actions.append(action.astype(np.float32))
        self.tick_index += 1
        return self.frame()

    def frame(self) -> dict:
        ob = self.env.observe()
        stage, _ = self.env.stage_status()
        raster_u8 = np.round(ob.raster * 255.0).astype(np.uint8)
        return {
            "type": "frame",
            "t": self.tick_index,
            "ego": base64.b64encode(raster_u8.tobytes()).decode(),
            "scan": [float(x) for x in ob.scan],
            "proprio": [float(x) for x in ob.proprio],
            "stage": stage,
            "success": self.env.success,
            "terminal": self.env.terminal,
            "recording": self.recording.active,
            "gripper": self.env.state.gripper_closed,
        }


def append_episode(path, episode: Episode) -> None:
    """Add an episode to an MMDS file, recomputing header stats (small files)."""
    path = Path(path)
    episodes = []
    if path.exists():
        episodes = DatasetReader(path).episodes()
    episodes.append(episode)
    write_dataset(path, episodes, header_extra={"source": "teleop"})


# -- network layer ------------------------------------------------------------------


def create_app(task: TaskSpec, out_path=None, seed: int = 0, static_dir=None):
    """FastAPI app exposing the /session websocket and the client assets."""
    app = FastAPI()
    sessions: dict[str, tuple[Session, float]] = {}

    if static_dir is None:
        static_dir = Path(__file__).parent / "static"
    static_dir = Path(static_dir)

    @app.get("/")
    def index():
        page = static_dir / "index.html"
        if page.exists():
            return FileResponse(page)
        return HTMLResponse("<h1>momart teleop</h1><p>No client assets built; "
                            "connect a websocket client to /session.</p>")

    @app.get("/static/{name:path}")
    def assets(name: str):
        f = static_dir / name
        if not f.exists() or not f.resolve().is_relative_to(static_dir.resolve()):
            return HTMLResponse("not found", status_code=404)
        return FileResponse(f)

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        sid = ws.query_params.get("id", "default")
        now = time.monotonic()
        stale = [k for k, (_, t0) in sessions.items() if now - t0 > SESSION_RETAIN_SECONDS]
        for k in stale:
            del sessions[k]
        if sid in sessions:
            session, _ = sessions.pop(sid)
        else:
            session = Session(task, seed=seed, out_path=out_path)

        async def reader():
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps({"type": "error", "message": "bad json"}))
                    continue
                reply = session.handle_message(msg)
                if reply is not None:
                    await ws.send_text(json.dumps(reply))

        read_task = asyncio.create_task(reader())
        last = time.monotonic()
        try:
            while True:
                frame = session.tick()
                await ws.send_text(json.dumps(frame))
                nxt = last + TICK_SECONDS
                now = time.monotonic()
                session.tick_intervals.append(now - last)
                last = now
                await asyncio.sleep(max(nxt - now, 0.0))
                if read_task.done():
                    read_task.result()
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            read_task.cancel()
            sessions[sid] = (session, time.monotonic())

    return app
