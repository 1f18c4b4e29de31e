/**
 * Vision transformer forward pass that stops where we need it: the last
 * block's [CLS]-to-patch attention, averaged over heads.
 *
 * Pre-norm blocks (x += attn(LN(x)); x += mlp(LN(x))), 8x8 patch embedding,
 * learned positional embeddings. Weights come either from a named-tensor
 * file (converted from a pretrained checkpoint) or from a seeded initialiser
 * that stands in when no pretrained model is available; both are fully
 * deterministic.
 */

import * as fs from "node:fs";

import { Rng } from "./rng.js";
import { addBias, addInPlace, geluInPlace, layerNorm, matmul, softmaxRows } from "./tensor.js";

export interface VitConfig {
  name: string;
  dim: number;
  depth: number;
  heads: number;
  patch: number;
  mlpRatio: number;
}

/** ViT-S/8 shape: 384 wide, 12 blocks, 6 heads, 8x8 patches. */
export const VIT_SMALL_8: VitConfig = {
  name: "vit-small-8",
  dim: 384,
  depth: 12,
  heads: 6,
  patch: 8,
  mlpRatio: 4,
};

/** Down-scaled shape for tests and quick runs. */
export const VIT_TINY_8: VitConfig = {
  name: "vit-tiny-8",
  dim: 64,
  depth: 3,
  heads: 4,
  patch: 8,
  mlpRatio: 2,
};

export const PRESETS: Record<string, VitConfig> = {
  "vit-small-8": VIT_SMALL_8,
  "vit-tiny-8": VIT_TINY_8,
};

interface BlockWeights {
  ln1Gamma: Float32Array;
  ln1Beta: Float32Array;
  qkvWeight: Float32Array; // (dim, 3*dim) row-major
  qkvBias: Float32Array;
  projWeight: Float32Array; // (dim, dim)
  projBias: Float32Array;
  ln2Gamma: Float32Array;
  ln2Beta: Float32Array;
  fc1Weight: Float32Array; // (dim, hidden)
  fc1Bias: Float32Array;
  fc2Weight: Float32Array; // (hidden, dim)
  fc2Bias: Float32Array;
}

export interface VitWeights {
  patchWeight: Float32Array; // (3*patch*patch, dim)
  patchBias: Float32Array;
  clsToken: Float32Array; // (dim)
  /** (1 + grid*grid, dim) at the grid it was created/loaded for. */
  posEmbed: Float32Array;
  posGrid: number;
  blocks: BlockWeights[];
}

const IMAGENET_MEAN = [0.485, 0.456, 0.406];
const IMAGENET_STD = [0.229, 0.224, 0.225];

export function seededWeights(cfg: VitConfig, gridSize: number, seed: number): VitWeights {
  const rng = new Rng(seed);
  const dim = cfg.dim;
  const hidden = cfg.dim * cfg.mlpRatio;
  const patchIn = 3 * cfg.patch * cfg.patch;
  const tokens = 1 + gridSize * gridSize;
  const blocks: BlockWeights[] = [];
  for (let i = 0; i < cfg.depth; i++) {
    blocks.push({
      ln1Gamma: new Float32Array(dim).fill(1),
      ln1Beta: new Float32Array(dim),
      qkvWeight: rng.normals(dim * 3 * dim, 1.0 / Math.sqrt(dim)),
      qkvBias: new Float32Array(3 * dim),
      projWeight: rng.normals(dim * dim, 1.0 / Math.sqrt(dim)),
      projBias: new Float32Array(dim),
      ln2Gamma: new Float32Array(dim).fill(1),
      ln2Beta: new Float32Array(dim),
      fc1Weight: rng.normals(dim * hidden, 1.0 / Math.sqrt(dim)),
      fc1Bias: new Float32Array(hidden),
      fc2Weight: rng.normals(hidden * dim, 1.0 / Math.sqrt(hidden)),
      fc2Bias: new Float32Array(dim),
    });
  }
  return {
    patchWeight: rng.normals(patchIn * dim, 1.0 / Math.sqrt(patchIn)),
    patchBias: new Float32Array(dim),
    clsToken: rng.normals(dim, 0.02),
    posEmbed: rng.normals(tokens * dim, 0.02),
    posGrid: gridSize,
    blocks,
  };
}

/** Bilinear interpolation of the patch part of the positional embedding. */
export function resamplePosEmbed(weights: VitWeights, targetGrid: number): Float32Array {
  const { posEmbed, posGrid } = weights;
  const dim = posEmbed.length / (1 + posGrid * posGrid);
  if (targetGrid === posGrid) return posEmbed;
  const out = new Float32Array((1 + targetGrid * targetGrid) * dim);
  out.set(posEmbed.subarray(0, dim), 0); // CLS slot passes through
  const scale = posGrid / targetGrid;
  for (let gy = 0; gy < targetGrid; gy++) {
    const fy = Math.min(Math.max((gy + 0.5) * scale - 0.5, 0), posGrid - 1);
    const y0 = Math.floor(fy);
    const y1 = Math.min(y0 + 1, posGrid - 1);
    const wy = fy - y0;
    for (let gx = 0; gx < targetGrid; gx++) {
      const fx = Math.min(Math.max((gx + 0.5) * scale - 0.5, 0), posGrid - 1);
      const x0 = Math.floor(fx);
      const x1 = Math.min(x0 + 1, posGrid - 1);
      const wx = fx - x0;
      const o = (1 + gy * targetGrid + gx) * dim;
      for (let d = 0; d < dim; d++) {
        const v00 = posEmbed[(1 + y0 * posGrid + x0) * dim + d];
        const v01 = posEmbed[(1 + y0 * posGrid + x1) * dim + d];
        const v10 = posEmbed[(1 + y1 * posGrid + x0) * dim + d];
        const v11 = posEmbed[(1 + y1 * posGrid + x1) * dim + d];
        const top = v00 + (v01 - v00) * wx;
        const bottom = v10 + (v11 - v10) * wx;
        out[o + d] = top + (bottom - top) * wy;
      }
    }
  }
  return out;
}

/**
 * Last-layer [CLS]-to-patch attention, mean over heads.
 *
 * @param rgb resolution*resolution*3 floats in [0, 1]
 * @returns grid*grid scores (softmax mass, non-negative)
 */
export function clsAttention(cfg: VitConfig, weights: VitWeights, rgb: Float32Array,
                             resolution: number): Float32Array {
  if (resolution % cfg.patch !== 0) {
    throw new Error(`resolution ${resolution} not divisible by patch ${cfg.patch}`);
  }
  const grid = resolution / cfg.patch;
  const tokens = 1 + grid * grid;
  const dim = cfg.dim;
  const heads = cfg.heads;
  const headDim = dim / heads;
  const hidden = dim * cfg.mlpRatio;

  // patch embedding on ImageNet-normalized pixels
  const patchIn = 3 * cfg.patch * cfg.patch;
  const patches = new Float32Array(grid * grid * patchIn);
  for (let gy = 0; gy < grid; gy++) {
    for (let gx = 0; gx < grid; gx++) {
      const base = (gy * grid + gx) * patchIn;
      let k = 0;
      for (let c = 0; c < 3; c++) {
        for (let py = 0; py < cfg.patch; py++) {
          for (let px = 0; px < cfg.patch; px++) {
            const y = gy * cfg.patch + py;
            const x = gx * cfg.patch + px;
            const v = rgb[(y * resolution + x) * 3 + c];
            patches[base + k++] = (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
          }
        }
      }
    }
  }
  const embedded = addBias(matmul(patches, grid * grid, patchIn, weights.patchWeight, dim),
                           grid * grid, dim, weights.patchBias);

  let x = new Float32Array(tokens * dim);
  x.set(weights.clsToken, 0);
  x.set(embedded, dim);
  addInPlace(x, resamplePosEmbed(weights, grid));

  const scale = 1.0 / Math.sqrt(headDim);

  const attentionProbs = (qkv: Float32Array, clsOnly: boolean): Float32Array => {
    // returns (heads, rows, tokens) softmax rows; rows = 1 for CLS-only
    const rows = clsOnly ? 1 : tokens;
    const probs = new Float32Array(heads * rows * tokens);
    for (let h = 0; h < heads; h++) {
      const qOff = h * headDim;
      const kOff = dim + h * headDim;
      for (let i = 0; i < rows; i++) {
        const qRow = i * 3 * dim + qOff;
        const pRow = (h * rows + i) * tokens;
        for (let j = 0; j < tokens; j++) {
          const kRow = j * 3 * dim + kOff;
          let dot = 0;
          for (let d = 0; d < headDim; d++) dot += qkv[qRow + d] * qkv[kRow + d];
          probs[pRow + j] = dot * scale;
        }
      }
    }
    return softmaxRows(probs, heads * rows, tokens);
  };

  for (let layer = 0; layer < cfg.depth; layer++) {
    const blk = weights.blocks[layer];
    const normed = layerNorm(x, tokens, dim, blk.ln1Gamma, blk.ln1Beta);
    const qkv = addBias(matmul(normed, tokens, dim, blk.qkvWeight, 3 * dim),
                        tokens, 3 * dim, blk.qkvBias);

    if (layer === cfg.depth - 1) {
      // the exported map: CLS row of the final block, averaged over heads
      const probs = attentionProbs(qkv, true);
      const out = new Float32Array(grid * grid);
      for (let j = 0; j < grid * grid; j++) {
        let acc = 0;
        for (let h = 0; h < heads; h++) acc += probs[h * tokens + 1 + j];
        out[j] = acc / heads;
      }
      return out;
    }

    const probs = attentionProbs(qkv, false);
    const attnOut = new Float32Array(tokens * dim);
    for (let h = 0; h < heads; h++) {
      const vOff = 2 * dim + h * headDim;
      for (let i = 0; i < tokens; i++) {
        const pRow = (h * tokens + i) * tokens;
        const oRow = i * dim + h * headDim;
        for (let j = 0; j < tokens; j++) {
          const p = probs[pRow + j];
          if (p === 0) continue;
          const vRow = j * 3 * dim + vOff;
          for (let d = 0; d < headDim; d++) attnOut[oRow + d] += p * qkv[vRow + d];
        }
      }
    }
    addInPlace(x, addBias(matmul(attnOut, tokens, dim, blk.projWeight, dim),
                          tokens, dim, blk.projBias));

    const normed2 = layerNorm(x, tokens, dim, blk.ln2Gamma, blk.ln2Beta);
    const up = geluInPlace(addBias(matmul(normed2, tokens, dim, blk.fc1Weight, hidden),
                                   tokens, hidden, blk.fc1Bias));
    addInPlace(x, addBias(matmul(up, tokens, hidden, blk.fc2Weight, dim),
                          tokens, dim, blk.fc2Bias));
  }
  throw new Error("unreachable: transformer has no blocks");
}

const WEIGHTS_MAGIC = "EARVITW1";

/**
 * Load weights from the named-tensor container (magic EARVITW1, u32 version,
 * u32 count, then per tensor: u16 name length, name, u8 rank, u32 dims,
 * float32 LE payload). Tensor names follow the usual transformer layout:
 * patch_embed.weight/.bias, cls_token, pos_embed,
 * blocks.<i>.{norm1,norm2}.{weight,bias}, blocks.<i>.attn.qkv.{weight,bias},
 * blocks.<i>.attn.proj.{weight,bias}, blocks.<i>.mlp.{fc1,fc2}.{weight,bias}.
 */
export function loadWeights(path: string, cfg: VitConfig): VitWeights {
  const buf = fs.readFileSync(path);
  if (buf.length < 16 || buf.toString("ascii", 0, 8) !== WEIGHTS_MAGIC) {
    throw new Error(`not an EARVITW1 file: ${path}`);
  }
  const version = buf.readUInt32LE(8);
  if (version !== 1) throw new Error(`unsupported weights version ${version}`);
  const count = buf.readUInt32LE(12);
  let off = 16;
  const tensors = new Map<string, Float32Array>();
  for (let i = 0; i < count; i++) {
    const nameLen = buf.readUInt16LE(off);
    off += 2;
    const name = buf.toString("utf8", off, off + nameLen);
    off += nameLen;
    const rank = buf.readUInt8(off);
    off += 1;
    let size = 1;
    for (let r = 0; r < rank; r++) {
      size *= buf.readUInt32LE(off);
      off += 4;
    }
    const data = new Float32Array(size);
    for (let k = 0; k < size; k++) data[k] = buf.readFloatLE(off + 4 * k);
    off += 4 * size;
    tensors.set(name, data);
  }
  const need = (name: string): Float32Array => {
    const t = tensors.get(name);
    if (t === undefined) throw new Error(`weights file missing tensor ${name}`);
    return t;
  };
  const posEmbed = need("pos_embed");
  const posTokens = posEmbed.length / cfg.dim;
  const posGrid = Math.round(Math.sqrt(posTokens - 1));
  const blocks: BlockWeights[] = [];
  for (let i = 0; i < cfg.depth; i++) {
    blocks.push({
      ln1Gamma: need(`blocks.${i}.norm1.weight`),
      ln1Beta: need(`blocks.${i}.norm1.bias`),
      qkvWeight: need(`blocks.${i}.attn.qkv.weight`),
      qkvBias: need(`blocks.${i}.attn.qkv.bias`),
      projWeight: need(`blocks.${i}.attn.proj.weight`),
      projBias: need(`blocks.${i}.attn.proj.bias`),
      ln2Gamma: need(`blocks.${i}.norm2.weight`),
      ln2Beta: need(`blocks.${i}.norm2.bias`),
      fc1Weight: need(`blocks.${i}.mlp.fc1.weight`),
      fc1Bias: need(`blocks.${i}.mlp.fc1.bias`),
      fc2Weight: need(`blocks.${i}.mlp.fc2.weight`),
      fc2Bias: need(`blocks.${i}.mlp.fc2.bias`),
    });
  }
  return {
    patchWeight: need("patch_embed.weight"),
    patchBias: need("patch_embed.bias"),
    clsToken: need("cls_token"),
    posEmbed,
    posGrid,
    blocks,
  };
}
