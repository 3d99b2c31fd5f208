// Teleoperation client: ego view, ray-scan view, virtual joystick, drag pad
// for the end-effector, grasp/reset buttons, recording controls, keyboard
// fallback (WASD + QE rotate, arrows for the end-effector).

import { FrameGate, LatencyTracker } from "./frames.js";
import { JoystickWidget } from "./joystick.js";
import { Frame, ServerMessage } from "./protocol.js";
import { drawFrame, drawScan } from "./render.js";
import { SessionSocket, SocketState } from "./socket.js";

const EE_DRAG_GAIN = 0.02;   // pixels -> per-tick delta command

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main() {
  const ego = el<HTMLCanvasElement>("ego");
  const scan = el<HTMLCanvasElement>("scan");
  const joyCanvas = el<HTMLCanvasElement>("joystick");
  const pad = el<HTMLCanvasElement>("pad");
  const status = el<HTMLSpanElement>("status");
  const stageLabel = el<HTMLSpanElement>("stage");
  const latency = el<HTMLSpanElement>("latency");
  const recordBtn = el<HTMLButtonElement>("record");
  const markBtn = el<HTMLButtonElement>("mark");
  const graspBtn = el<HTMLButtonElement>("grasp");
  const resetBtn = el<HTMLButtonElement>("reset");
  const reconnectBtn = el<HTMLButtonElement>("reconnect");

  const gate = new FrameGate();
  const rtt = new LatencyTracker();
  let recording = false;
  let lastFrame: Frame | null = null;

  const url = `ws://${location.host}/session?id=browser`;
  const socket = new SessionSocket(url, onMessage, onState);

  function onState(s: SocketState) {
    status.textContent = s;
    reconnectBtn.style.display = s === "closed" ? "inline-block" : "none";
    ego.style.opacity = s === "open" ? "1.0" : "0.35";
    if (s === "closed") gate.reset();
  }

  function onMessage(msg: ServerMessage) {
    if (msg.type === "pong") {
      rtt.pong(msg.t, performance.now());
      if (rtt.estimateMs !== null) latency.textContent = `${rtt.estimateMs.toFixed(0)} ms`;
      return;
    }
    if (msg.type === "record_ack") {
      if (msg.op === "start") recording = true;
      if (msg.op === "stop") {
        recording = false;
        status.textContent = `saved: len=${msg["length"]} success=${msg["success"]}`;
      }
      recordBtn.textContent = recording ? "stop recording" : "start recording";
      return;
    }
    if (msg.type === "error") {
      console.warn("server error:", msg.message);
      return;
    }
    const frame = gate.admit(msg);
    if (!frame) return;
    lastFrame = frame;
    drawFrame(ego, frame.ego);
    drawScan(scan, frame.scan);
    stageLabel.textContent =
      `stage ${frame.stage}` +
      (frame.success ? " SUCCESS" : frame.terminal ? " (terminal)" : "") +
      (frame.recording ? " REC" : "") +
      (frame.gripper ? " [closed]" : " [open]");
  }

  new JoystickWidget(joyCanvas, (o) => socket.send({ type: "joy", u: o.u, v: o.v }));

  // end-effector drag pad: accumulate pixel motion into delta commands
  let padPointer: number | null = null;
  let padLast: [number, number] | null = null;
  pad.addEventListener("pointerdown", (e) => {
    padPointer = e.pointerId;
    padLast = [e.clientX, e.clientY];
    pad.setPointerCapture(e.pointerId);
  });
  pad.addEventListener("pointermove", (e) => {
    if (e.pointerId !== padPointer || !padLast) return;
    const dx = (e.clientX - padLast[0]) * EE_DRAG_GAIN;
    const dy = -(e.clientY - padLast[1]) * EE_DRAG_GAIN;
    padLast = [e.clientX, e.clientY];
    socket.send({ type: "ee", dx, dy });
  });
  const padEnd = (e: PointerEvent) => {
    if (e.pointerId === padPointer) {
      padPointer = null;
      padLast = null;
    }
  };
  pad.addEventListener("pointerup", padEnd);
  pad.addEventListener("pointercancel", padEnd);
  const padCtx = pad.getContext("2d")!;
  padCtx.fillStyle = "#20242c";
  padCtx.fillRect(0, 0, pad.width, pad.height);
  padCtx.fillStyle = "#888";
  padCtx.font = "12px sans-serif";
  padCtx.fillText("drag: end-effector", 10, pad.height / 2);

  graspBtn.addEventListener("click", () => socket.send({ type: "grasp_toggle" }));
  resetBtn.addEventListener("click", () => socket.send({ type: "arm_reset" }));
  markBtn.addEventListener("click", () => socket.send({ type: "record", op: "mark" }));
  recordBtn.addEventListener("click", () =>
    socket.send({ type: "record", op: recording ? "stop" : "start" }));
  reconnectBtn.addEventListener("click", () => socket.connect());

  // keyboard fallback
  const held = new Set<string>();
  const keyTwist = () => {
    let u = 0;
    let v = 0;
    if (held.has("w")) v += 1;
    if (held.has("s")) v -= 1;
    if (held.has("q")) u -= 1;
    if (held.has("e")) u += 1;
    // a/d strafe has no base analog; map to gentle rotation
    if (held.has("a")) u -= 0.5;
    if (held.has("d")) u += 0.5;
    const n = Math.hypot(u, v);
    if (n > 1) {
      u /= n;
      v /= n;
    }
    socket.send({ type: "joy", u, v });
  };
  window.addEventListener("keydown", (e) => {
    const k = e.key.toLowerCase();
    if ("wasdqe".includes(k) && k.length === 1) {
      held.add(k);
      keyTwist();
    }
    const arrows: Record<string, [number, number]> = {
      arrowup: [0, 1], arrowdown: [0, -1], arrowleft: [1, 0], arrowright: [-1, 0],
    };
    const key = e.key.toLowerCase();
    if (key in arrows) {
      const [dy, dx] = arrows[key];
      socket.send({ type: "ee", dx, dy });
      e.preventDefault();
    }
    if (key === "g") socket.send({ type: "grasp_toggle" });
    if (key === "r") socket.send({ type: "arm_reset" });
  });
  window.addEventListener("keyup", (e) => {
    const k = e.key.toLowerCase();
    if (held.delete(k)) keyTwist();
  });

  setInterval(() => {
    if (socket.state === "open") socket.send(rtt.ping(performance.now()));
  }, 1000);

  socket.connect();
}

main();
