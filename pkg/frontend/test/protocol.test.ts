import { describe, expect, it } from "vitest";

import {
  RASTER_CHANNELS,
  RASTER_SIZE,
  decode,
  decodeBase64,
  decodeRaster,
  encode,
  isValidFrame,
} from "../src/protocol.js";

function b64encode(bytes: Uint8Array): string {
  const alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const a = bytes[i];
    const b = i + 1 < bytes.length ? bytes[i + 1] : 0;
    const c = i + 2 < bytes.length ? bytes[i + 2] : 0;
    out += alphabet[a >> 2] + alphabet[((a & 3) << 4) | (b >> 4)];
    out += i + 1 < bytes.length ? alphabet[((b & 15) << 2) | (c >> 6)] : "=";
    out += i + 2 < bytes.length ? alphabet[c & 63] : "=";
  }
  return out;
}

describe("encode/decode", () => {
  it("round-trips client messages", () => {
    const msg = { type: "joy", u: 0.25, v: -0.5 } as const;
    expect(JSON.parse(encode(msg))).toEqual(msg);
  });

  it("rejects malformed server text", () => {
    expect(decode("{not json")).toBeNull();
    expect(decode("42")).toBeNull();
  });
});

describe("frame validation", () => {
  const valid = {
    type: "frame", t: 3, ego: "", scan: new Array(30).fill(0.5),
    proprio: new Array(7).fill(0), stage: 1, success: false,
    terminal: false, recording: false, gripper: false,
  };

  it("accepts a well-formed frame", () => {
    expect(isValidFrame(valid as any)).toBe(true);
  });

  it("rejects wrong scan length", () => {
    expect(isValidFrame({ ...valid, scan: [1, 2, 3] } as any)).toBe(false);
  });
});

describe("raster decoding", () => {
  it("round-trips bytes through base64", () => {
    const bytes = new Uint8Array(256).map((_, i) => i);
    expect(Array.from(decodeBase64(b64encode(bytes)))).toEqual(Array.from(bytes));
  });

  it("enforces the expected payload size", () => {
    const ok = new Uint8Array(RASTER_CHANNELS * RASTER_SIZE * RASTER_SIZE);
    expect(decodeRaster(b64encode(ok)).length).toBe(ok.length);
    expect(() => decodeRaster(b64encode(new Uint8Array(10)))).toThrow(/raster payload/);
  });
});
