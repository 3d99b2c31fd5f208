// Ego-raster compositing: 5 semantic channels -> RGBA pixels, upscaled with
// nearest-neighbor on the canvas.

import { RASTER_SIZE, decodeRaster } from "./protocol.js";

// channel draw order (later wins): walls, furniture, bowl, trash, gripper
const CHANNEL_COLORS: Array<[number, number, number]> = [
  [70, 70, 70],      // walls
  [100, 125, 170],   // furniture
  [210, 60, 60],     // bowl
  [80, 140, 80],     // trash
  [235, 200, 80],    // gripper footprint
];
const FLOOR: [number, number, number] = [24, 26, 30];

export function compositeRaster(b64: string): Uint8ClampedArray {
  const bytes = decodeRaster(b64);
  const n = RASTER_SIZE * RASTER_SIZE;
  const rgba = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    let [r, g, b] = FLOOR;
    for (let c = 0; c < CHANNEL_COLORS.length; c++) {
      if (bytes[c * n + i] > 127) {
        [r, g, b] = CHANNEL_COLORS[c];
      }
    }
    rgba[i * 4] = r;
    rgba[i * 4 + 1] = g;
    rgba[i * 4 + 2] = b;
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}

export function drawFrame(canvas: HTMLCanvasElement, b64: string): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const rgba = compositeRaster(b64);
  const img = new ImageData(RASTER_SIZE, RASTER_SIZE);
  img.data.set(rgba);
  // draw small, then upscale without smoothing
  const off = document.createElement("canvas");
  off.width = RASTER_SIZE;
  off.height = RASTER_SIZE;
  off.getContext("2d")!.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

export function drawScan(canvas: HTMLCanvasElement, scan: number[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.fillStyle = "#14161a";
  ctx.fillRect(0, 0, w, h);
  ctx.strokeStyle = "#5fd18a";
  ctx.beginPath();
  const fov = (240 * Math.PI) / 180;
  for (let i = 0; i < scan.length; i++) {
    const a = -fov / 2 + (fov * i) / (scan.length - 1);
    const d = scan[i] * (h * 0.9);
    // robot at bottom center, heading up
    const x = w / 2 + Math.sin(a) * d;
    const y = h - 4 - Math.cos(a) * d;
    ctx.moveTo(w / 2, h - 4);
    ctx.lineTo(x, y);
  }
  ctx.stroke();
}
