#!/usr/bin/env node
/**
 * attnexport --images <dir> --out <dir> [--resolution 256] [--preset vit-small-8]
 *            [--seed 0] [--weights file.earvitw] [--normalization minmax|none]
 */

import { DEFAULT_OPTIONS, ExportOptions, exportAttention } from "./exporter.js";

function parseArgs(argv: string[]): ExportOptions {
  const opts: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new Error(`malformed arguments near ${key}`);
    }
    opts[key.slice(2)] = value;
  }
  if (!opts.images || !opts.out) {
    throw new Error("required: --images <dir> --out <dir>");
  }
  const normalization = (opts.normalization ?? DEFAULT_OPTIONS.normalization) as
    ExportOptions["normalization"];
  if (normalization !== "minmax" && normalization !== "none") {
    throw new Error(`normalization must be minmax or none, got ${normalization}`);
  }
  return {
    images: opts.images,
    outDir: opts.out,
    resolution: opts.resolution ? parseInt(opts.resolution, 10) : DEFAULT_OPTIONS.resolution,
    preset: opts.preset ?? DEFAULT_OPTIONS.preset,
    seed: opts.seed ? parseInt(opts.seed, 10) : DEFAULT_OPTIONS.seed,
    weightsPath: opts.weights,
    normalization,
  };
}

function main(): number {
  try {
    const opts = parseArgs(process.argv.slice(2));
    const manifest = exportAttention(opts);
    console.log(`exported ${manifest.images.length} attention map(s) to ${opts.outDir} ` +
                `(model ${manifest.model}, grid ${manifest.images[0]?.height ?? 0})`);
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

process.exit(main());
