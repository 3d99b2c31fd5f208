// Virtual joystick: pointer offset -> unit-disk (u, v) messages at <= 30 Hz.
// The zone geometry drawn here is cosmetic; the authoritative mapping lives
// on the server. Releasing snaps to (0, 0) and emits exactly one zero message.

export interface JoyOutput {
  u: number;
  v: number;
}

export const DEAD_ZONE = 0.15;
export const ROTATION_BAND = 0.2;
export const MAX_RATE_HZ = 30;

// pointer offset in pixels -> unit disk, y up
export function normalizeOffset(dxPx: number, dyPx: number, radiusPx: number): JoyOutput {
  let u = dxPx / radiusPx;
  let v = -dyPx / radiusPx;   // screen y grows downward
  const n = Math.hypot(u, v);
  if (n > 1) {
    u /= n;
    v /= n;
  }
  return { u, v };
}

export type Zone = "dead" | "rotation" | "hourglass" | "corner";

export function zoneOf(u: number, v: number): Zone {
  if (Math.hypot(u, v) < DEAD_ZONE) return "dead";
  if (Math.abs(v) < ROTATION_BAND && Math.abs(u) >= DEAD_ZONE) return "rotation";
  if (Math.abs(u) <= Math.abs(v)) return "hourglass";
  return "corner";
}

export class RateLimiter {
  private last = -Infinity;
  constructor(private readonly minIntervalMs: number = 1000 / MAX_RATE_HZ) {}

  ready(nowMs: number): boolean {
    if (nowMs - this.last >= this.minIntervalMs) {
      this.last = nowMs;
      return true;
    }
    return false;
  }
}

/**
 * Drag session state machine. Feed it pointer events in pixels; it emits
 * rate-limited joy outputs plus a single guaranteed zero on release.
 */
export class JoystickCore {
  private limiter: RateLimiter;
  private active = false;
  current: JoyOutput = { u: 0, v: 0 };

  constructor(private readonly radiusPx: number, minIntervalMs?: number) {
    this.limiter = new RateLimiter(minIntervalMs ?? 1000 / MAX_RATE_HZ);
  }

  press(dxPx: number, dyPx: number, nowMs: number): JoyOutput | null {
    this.active = true;
    return this.move(dxPx, dyPx, nowMs);
  }

  move(dxPx: number, dyPx: number, nowMs: number): JoyOutput | null {
    if (!this.active) return null;
    this.current = normalizeOffset(dxPx, dyPx, this.radiusPx);
    if (!this.limiter.ready(nowMs)) return null;
    return this.current;
  }

  /** Always emits the zero message, bypassing the rate limit. */
  release(): JoyOutput | null {
    if (!this.active) return null;
    this.active = false;
    this.current = { u: 0, v: 0 };
    return this.current;
  }
}

/** DOM widget wrapping JoystickCore; draws the zone geometry on a canvas. */
export class JoystickWidget {
  readonly core: JoystickCore;
  private pointerId: number | null = null;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly onOutput: (o: JoyOutput) => void,
  ) {
    this.core = new JoystickCore(canvas.width / 2 - 8);
    canvas.addEventListener("pointerdown", (e) => {
      if (this.pointerId !== null) return;
      this.pointerId = e.pointerId;
      canvas.setPointerCapture(e.pointerId);
      this.emit(this.core.press(...this.offset(e), performance.now()));
    });
    canvas.addEventListener("pointermove", (e) => {
      if (e.pointerId !== this.pointerId) return;
      this.emit(this.core.move(...this.offset(e), performance.now()));
    });
    const end = (e: PointerEvent) => {
      if (e.pointerId !== this.pointerId) return;
      this.pointerId = null;
      this.emit(this.core.release());
    };
    canvas.addEventListener("pointerup", end);
    canvas.addEventListener("pointercancel", end);
    this.draw();
  }

  private offset(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [e.clientX - (rect.left + rect.width / 2), e.clientY - (rect.top + rect.height / 2)];
  }

  private emit(o: JoyOutput | null) {
    if (o) {
      this.onOutput(o);
      this.draw();
    }
  }

  draw() {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const w = this.canvas.width;
    const r = w / 2 - 8;
    const cx = w / 2;
    ctx.clearRect(0, 0, w, w);

    // disk
    ctx.fillStyle = "#2a2f3a";
    ctx.beginPath();
    ctx.arc(cx, cx, r, 0, Math.PI * 2);
    ctx.fill();

    // hourglass region |u| <= |v|: an up and a down wedge
    ctx.fillStyle = "#39445a";
    for (const [a0, a1] of [[-0.75 * Math.PI, -0.25 * Math.PI],
                            [0.25 * Math.PI, 0.75 * Math.PI]]) {
      ctx.beginPath();
      ctx.moveTo(cx, cx);
      ctx.arc(cx, cx, r, a0, a1);
      ctx.closePath();
      ctx.fill();
    }

    // rotation band |v| < band
    ctx.fillStyle = "#4a3a50";
    ctx.fillRect(cx - r, cx - ROTATION_BAND * r, 2 * r, 2 * ROTATION_BAND * r);

    // dead zone, drawn white per the interface convention
    ctx.fillStyle = "#f0f0f0";
    ctx.beginPath();
    ctx.arc(cx, cx, DEAD_ZONE * r, 0, Math.PI * 2);
    ctx.fill();

    // knob
    const { u, v } = this.core.current;
    ctx.fillStyle = "#e8b84a";
    ctx.beginPath();
    ctx.arc(cx + u * r, cx - v * r, 10, 0, Math.PI * 2);
    ctx.fill();
  }
}
