/**
 * Minimal PNG reader: 8-bit grayscale or RGB, non-interlaced, which is what
 * the anomaly-detection datasets use. Decoding goes through node's zlib;
 * scanline unfiltering implements the five standard filter types.
 */

import * as zlib from "node:zlib";

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export interface DecodedImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** Row-major interleaved bytes, length = width * height * channels. */
  data: Uint8Array;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export function decodePng(buf: Buffer): DecodedImage {
  if (buf.length < 8 || !buf.subarray(0, 8).equals(PNG_SIGNATURE)) {
    throw new Error("not a PNG file (bad signature)");
  }
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = -1;
  const idat: Buffer[] = [];
  let off = 8;
  while (off + 8 <= buf.length) {
    const length = buf.readUInt32BE(off);
    const type = buf.toString("ascii", off + 4, off + 8);
    const payload = buf.subarray(off + 8, off + 8 + length);
    if (type === "IHDR") {
      width = payload.readUInt32BE(0);
      height = payload.readUInt32BE(4);
      bitDepth = payload.readUInt8(8);
      colorType = payload.readUInt8(9);
      const interlace = payload.readUInt8(12);
      if (bitDepth !== 8) throw new Error(`unsupported PNG bit depth ${bitDepth}`);
      if (colorType !== 0 && colorType !== 2) {
        throw new Error(`unsupported PNG color type ${colorType} (need gray or RGB)`);
      }
      if (interlace !== 0) throw new Error("interlaced PNG not supported");
    } else if (type === "IDAT") {
      idat.push(payload);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + length; // length + type + payload + crc
  }
  if (width === 0 || height === 0 || idat.length === 0) {
    throw new Error("truncated PNG (missing IHDR or IDAT)");
  }
  const channels = colorType === 0 ? 1 : 3;
  const raw = zlib.inflateSync(Buffer.concat(idat));
  const stride = width * channels;
  if (raw.length < height * (stride + 1)) {
    throw new Error("truncated PNG pixel data");
  }
  const out = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const lineIn = (y * (stride + 1)) + 1;
    const lineOut = y * stride;
    for (let x = 0; x < stride; x++) {
      const rawByte = raw[lineIn + x];
      const left = x >= channels ? out[lineOut + x - channels] : 0;
      const up = y > 0 ? out[lineOut - stride + x] : 0;
      const upLeft = y > 0 && x >= channels ? out[lineOut - stride + x - channels] : 0;
      let value: number;
      switch (filter) {
        case 0:
          value = rawByte;
          break;
        case 1:
          value = rawByte + left;
          break;
        case 2:
          value = rawByte + up;
          break;
        case 3:
          value = rawByte + ((left + up) >> 1);
          break;
        case 4:
          value = rawByte + paeth(left, up, upLeft);
          break;
        default:
          throw new Error(`unknown PNG filter type ${filter}`);
      }
      out[lineOut + x] = value & 0xff;
    }
  }
  return { width, height, channels, data: out };
}

/**
 * Bilinear-resize to resolution x resolution and return RGB floats in [0, 1]
 * (grayscale inputs are replicated across channels).
 */
export function toFloatRgb(img: DecodedImage, resolution: number): Float32Array {
  const { width, height, channels, data } = img;
  const out = new Float32Array(resolution * resolution * 3);
  const sx = width / resolution;
  const sy = height / resolution;
  for (let y = 0; y < resolution; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, height - 1);
    const y0 = Math.max(Math.floor(fy), 0);
    const y1 = Math.min(y0 + 1, height - 1);
    const wy = Math.max(fy - y0, 0);
    for (let x = 0; x < resolution; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, width - 1);
      const x0 = Math.max(Math.floor(fx), 0);
      const x1 = Math.min(x0 + 1, width - 1);
      const wx = Math.max(fx - x0, 0);
      for (let c = 0; c < 3; c++) {
        const cc = channels === 1 ? 0 : c;
        const v00 = data[(y0 * width + x0) * channels + cc];
        const v01 = data[(y0 * width + x1) * channels + cc];
        const v10 = data[(y1 * width + x0) * channels + cc];
        const v11 = data[(y1 * width + x1) * channels + cc];
        const top = v00 + (v01 - v00) * wx;
        const bottom = v10 + (v11 - v10) * wx;
        out[(y * resolution + x) * 3 + c] = (top + (bottom - top) * wy) / 255.0;
      }
    }
  }
  return out;
}
