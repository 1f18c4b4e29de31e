/**
 * Batch exporter: for every input PNG, resize to the working resolution, run
 * the transformer, take the head-averaged last-layer [CLS] attention, min-max
 * normalize to [0, 1] and write one EARATTN1 file per image stem plus a
 * manifest with checksums. Output files are written atomically (temp file +
 * rename) so parallel consumers never observe a partial map.
 */

import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

import { encodeEarattn } from "./earattn.js";
import { decodePng, toFloatRgb } from "./png.js";
import { PRESETS, VitConfig, VitWeights, clsAttention, loadWeights, seededWeights } from "./vit.js";

export interface ExportOptions {
  /** Directory of PNGs or explicit file list. */
  images: string;
  outDir: string;
  resolution: number;
  preset: string;
  seed: number;
  weightsPath?: string;
  normalization: "minmax" | "none";
}

export const DEFAULT_OPTIONS: Omit<ExportOptions, "images" | "outDir"> = {
  resolution: 256,
  preset: "vit-small-8",
  seed: 0,
  normalization: "minmax",
};

export interface ManifestImage {
  stem: string;
  file: string;
  sha256: string;
  height: number;
  width: number;
}

export interface Manifest {
  model: string;
  weights: string;
  resolution: number;
  normalization: string;
  images: ManifestImage[];
}

export function listPngs(imagesDir: string): string[] {
  const entries = fs
    .readdirSync(imagesDir)
    .filter((name) => name.toLowerCase().endsWith(".png"))
    .sort();
  if (entries.length === 0) {
    throw new Error(`no PNG images found in ${imagesDir}`);
  }
  return entries.map((name) => path.join(imagesDir, name));
}

export function minmaxNormalize(scores: Float32Array): Float32Array {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of scores) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!(hi > lo)) return new Float32Array(scores.length);
  const out = new Float32Array(scores.length);
  for (let i = 0; i < scores.length; i++) out[i] = (scores[i] - lo) / (hi - lo);
  return out;
}

function writeAtomic(target: string, payload: Buffer): void {
  const tmp = `${target}.tmp-${process.pid}`;
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, target);
}

export function exportAttention(opts: ExportOptions): Manifest {
  const cfg: VitConfig | undefined = PRESETS[opts.preset];
  if (cfg === undefined) {
    throw new Error(`unknown preset ${opts.preset}; have ${Object.keys(PRESETS).join(", ")}`);
  }
  if (opts.resolution % cfg.patch !== 0) {
    throw new Error(`resolution ${opts.resolution} must be divisible by ${cfg.patch}`);
  }
  const grid = opts.resolution / cfg.patch;
  const weights: VitWeights = opts.weightsPath
    ? loadWeights(opts.weightsPath, cfg)
    : seededWeights(cfg, grid, opts.seed);
  const weightsLabel = opts.weightsPath ?? `seeded:${opts.seed}`;

  fs.mkdirSync(opts.outDir, { recursive: true });
  const images: ManifestImage[] = [];
  for (const imagePath of listPngs(opts.images)) {
    const decoded = decodePng(fs.readFileSync(imagePath));
    const rgb = toFloatRgb(decoded, opts.resolution);
    let scores = clsAttention(cfg, weights, rgb, opts.resolution);
    if (opts.normalization === "minmax") {
      scores = minmaxNormalize(scores);
    }
    const payload = encodeEarattn({ height: grid, width: grid, scores });
    const stem = path.basename(imagePath, path.extname(imagePath));
    const fileName = `${stem}.earattn`;
    writeAtomic(path.join(opts.outDir, fileName), payload);
    images.push({
      stem,
      file: fileName,
      sha256: crypto.createHash("sha256").update(payload).digest("hex"),
      height: grid,
      width: grid,
    });
  }
  const manifest: Manifest = {
    model: cfg.name,
    weights: weightsLabel,
    resolution: opts.resolution,
    normalization: opts.normalization,
    images,
  };
  writeAtomic(path.join(opts.outDir, "manifest.json"),
              Buffer.from(JSON.stringify(manifest, null, 2) + "\n"));
  return manifest;
}
