// Wire schema of the teleoperation session socket. The client sends raw
// inputs only; all control mapping happens server-side so the recorded action
// always equals the applied one.

export type ClientMessage =
  | { type: "joy"; u: number; v: number }
  | { type: "ee"; dx: number; dy: number }
  | { type: "grasp_toggle" }
  | { type: "arm_reset" }
  | { type: "record"; op: "start" | "stop" | "mark" }
  | { type: "ping"; t: number };

export interface Frame {
  type: "frame";
  t: number;
  ego: string;          // base64 uint8, channel-major 5x24x24
  scan: number[];       // 30 normalized ranges
  proprio: number[];    // 7 values
  stage: number;
  success: boolean;
  terminal: boolean;
  recording: boolean;
  gripper: boolean;
}

export type ServerMessage =
  | Frame
  | { type: "record_ack"; op: string; [k: string]: unknown }
  | { type: "pong"; t: number }
  | { type: "error"; message: string };

export const RASTER_CHANNELS = 5;
export const RASTER_SIZE = 24;
export const SCAN_RAYS = 30;
export const PROPRIO_DIM = 7;

export function encode(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

export function decode(text: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null || !("type" in raw)) return null;
  return raw as ServerMessage;
}

export function isValidFrame(msg: ServerMessage): msg is Frame {
  if (msg.type !== "frame") return false;
  const f = msg as Frame;
  return (
    typeof f.t === "number" &&
    typeof f.ego === "string" &&
    Array.isArray(f.scan) && f.scan.length === SCAN_RAYS &&
    Array.isArray(f.proprio) && f.proprio.length === PROPRIO_DIM &&
    typeof f.stage === "number"
  );
}

// atob-free base64 decoder so the pure logic also runs under node tests
export function decodeBase64(b64: string): Uint8Array {
  const alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  const clean = b64.replace(/=+$/, "");
  const out: number[] = [];
  let buffer = 0;
  let bits = 0;
  for (const ch of clean) {
    const val = alphabet.indexOf(ch);
    if (val < 0) continue;
    buffer = (buffer << 6) | val;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push((buffer >> bits) & 0xff);
    }
  }
  return new Uint8Array(out);
}

export function decodeRaster(b64: string): Uint8Array {
  const bytes = decodeBase64(b64);
  const expected = RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE;
  if (bytes.length !== expected) {
    throw new Error(`raster payload has ${bytes.length} bytes, expected ${expected}`);
  }
  return bytes;
}
