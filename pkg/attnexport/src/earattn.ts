/**
 * EARATTN1 attention-map interchange format.
 *
 * Layout: bytes 0-7 ASCII "EARATTN1"; bytes 8-11 height (u32 LE); bytes
 * 12-15 width (u32 LE); then height*width IEEE-754 float32 LE, row-major.
 */

export const EARATTN_MAGIC = "EARATTN1";

export interface AttentionGrid {
  height: number;
  width: number;
  scores: Float32Array;
}

export function encodeEarattn(grid: AttentionGrid): Buffer {
  const { height, width, scores } = grid;
  if (scores.length !== height * width) {
    throw new Error(`scores length ${scores.length} != ${height}x${width}`);
  }
  const buf = Buffer.alloc(16 + 4 * scores.length);
  buf.write(EARATTN_MAGIC, 0, "ascii");
  buf.writeUInt32LE(height, 8);
  buf.writeUInt32LE(width, 12);
  for (let i = 0; i < scores.length; i++) {
    buf.writeFloatLE(scores[i], 16 + 4 * i);
  }
  return buf;
}

export function decodeEarattn(buf: Buffer): AttentionGrid {
  if (buf.length < 16 || buf.toString("ascii", 0, 8) !== EARATTN_MAGIC) {
    throw new Error("not an EARATTN1 buffer (bad magic)");
  }
  const height = buf.readUInt32LE(8);
  const width = buf.readUInt32LE(12);
  const need = 16 + 4 * height * width;
  if (buf.length < need) {
    throw new Error(`truncated EARATTN1 payload (need ${need} bytes, have ${buf.length})`);
  }
  const scores = new Float32Array(height * width);
  for (let i = 0; i < scores.length; i++) {
    scores[i] = buf.readFloatLE(16 + 4 * i);
    if (!Number.isFinite(scores[i])) throw new Error("non-finite attention value");
  }
  return { height, width, scores };
}
