import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { decodeEarattn } from "../src/earattn.js";
import { exportAttention, minmaxNormalize } from "../src/exporter.js";

const FIXTURES = path.join(__dirname, "fixtures");

let workDir: string;
let imageDir: string;

beforeAll(() => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), "attnexport-"));
  imageDir = path.join(workDir, "images");
  fs.mkdirSync(imageDir);
  for (const name of ["disc0.png", "disc1.png", "disc2.png"]) {
    fs.copyFileSync(path.join(FIXTURES, name), path.join(imageDir, name));
  }
});

afterAll(() => {
  fs.rmSync(workDir, { recursive: true, force: true });
});

function runExport(outName: string) {
  return exportAttention({
    images: imageDir,
    outDir: path.join(workDir, outName),
    resolution: 64,
    preset: "vit-tiny-8",
    seed: 0,
    normalization: "minmax",
  });
}

describe("attention export", () => {
  it("writes one conformant file per stem plus a manifest", () => {
    const manifest = runExport("outA");
    expect(manifest.images.map((m) => m.stem)).toEqual(["disc0", "disc1", "disc2"]);
    for (const entry of manifest.images) {
      const buf = fs.readFileSync(path.join(workDir, "outA", entry.file));
      const grid = decodeEarattn(buf);
      expect([grid.height, grid.width]).toEqual([8, 8]); // 64 / 8
      let lo = Infinity;
      let hi = -Infinity;
      for (const v of grid.scores) {
        lo = Math.min(lo, v);
        hi = Math.max(hi, v);
      }
      expect(lo).toBeCloseTo(0, 6);
      expect(hi).toBeCloseTo(1, 6);
    }
    const fromDisk = JSON.parse(
      fs.readFileSync(path.join(workDir, "outA", "manifest.json"), "utf8"),
    );
    expect(fromDisk.model).toBe("vit-tiny-8");
    expect(fromDisk.images).toHaveLength(3);
  });

  it("re-export is bit-identical", () => {
    runExport("outB");
    runExport("outC");
    for (const name of ["disc0.earattn", "disc1.earattn", "disc2.earattn"]) {
      const a = fs.readFileSync(path.join(workDir, "outB", name));
      const b = fs.readFileSync(path.join(workDir, "outC", name));
      expect(a.equals(b)).toBe(true);
    }
  });

  it("leaves no temp files behind", () => {
    runExport("outD");
    const leftovers = fs.readdirSync(path.join(workDir, "outD")).filter((n) => n.includes(".tmp-"));
    expect(leftovers).toEqual([]);
  });

  it("different stems give different maps", () => {
    runExport("outE");
    const a = fs.readFileSync(path.join(workDir, "outE", "disc0.earattn"));
    const b = fs.readFileSync(path.join(workDir, "outE", "disc1.earattn"));
    expect(a.equals(b)).toBe(false);
  });

  it("min-max guard maps constant scores to zeros", () => {
    const flat = minmaxNormalize(new Float32Array([0.4, 0.4, 0.4]));
    expect(Array.from(flat)).toEqual([0, 0, 0]);
  });

  it("rejects an empty image directory", () => {
    const empty = path.join(workDir, "empty");
    fs.mkdirSync(empty, { recursive: true });
    expect(() =>
      exportAttention({
        images: empty,
        outDir: path.join(workDir, "outF"),
        resolution: 64,
        preset: "vit-tiny-8",
        seed: 0,
        normalization: "minmax",
      }),
    ).toThrow(/no PNG images/);
  });
});
