// Frame ordering gate and round-trip latency estimate. Every rendered pixel
// originates from a server frame; stale (out-of-order) frames are dropped.

import { Frame, ServerMessage, isValidFrame } from "./protocol.js";

export class FrameGate {
  private lastTick = -1;
  dropped = 0;

  /** Returns the frame if it should be rendered, null if dropped. */
  admit(msg: ServerMessage): Frame | null {
    if (!isValidFrame(msg)) return null;
    if (msg.t <= this.lastTick) {
      this.dropped += 1;
      return null;
    }
    this.lastTick = msg.t;
    return msg;
  }

  reset() {
    this.lastTick = -1;
  }
}

export class LatencyTracker {
  private sent = new Map<number, number>();
  private seq = 0;
  estimateMs: number | null = null;

  ping(nowMs: number): { type: "ping"; t: number } {
    this.seq += 1;
    this.sent.set(this.seq, nowMs);
    return { type: "ping", t: this.seq };
  }

  pong(t: number, nowMs: number): void {
    const sentAt = this.sent.get(t);
    if (sentAt === undefined) return;
    this.sent.delete(t);
    const rtt = nowMs - sentAt;
    this.estimateMs = this.estimateMs === null ? rtt : 0.8 * this.estimateMs + 0.2 * rtt;
  }
}
