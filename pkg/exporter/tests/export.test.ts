import { createHash } from "node:crypto";
import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { exportMasksAndFeatures, exportQueryEmbeddings, defaultJob } from "../src/export.js";
import { pngDimensions } from "../src/format.js";
import { rleArea, rleDecode, rleEncode } from "../src/rle.js";
import { solidPng } from "./png.js";

let workDir: string;
let imageDir: string;
let datasetDir: string;

function sha256(filePath: string): string {
  return createHash("sha256").update(fs.readFileSync(filePath)).digest("hex");
}

function fixtureJob(outDir: string, overrides: Partial<typeof defaultJob> = {}) {
  return {
    ...defaultJob,
    imageDir,
    outDir,
    fixture: true,
    ...overrides,
  };
}

beforeAll(() => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), "exporter-"));
  imageDir = path.join(workDir, "images");
  fs.mkdirSync(imageDir);
  const colors: Array<[number, number, number]> = [
    [200, 40, 40],
    [40, 200, 40],
    [40, 40, 200],
  ];
  colors.forEach((rgb, i) => {
    fs.writeFileSync(path.join(imageDir, `frame_${i}.png`), solidPng(96, 72, rgb));
  });
  datasetDir = path.join(workDir, "dataset");
  exportMasksAndFeatures(fixtureJob(datasetDir));
});

afterAll(() => {
  fs.rmSync(workDir, { recursive: true, force: true });
});

describe("rle", () => {
  it("round-trips random bitmaps", () => {
    for (let trial = 0; trial < 50; trial++) {
      const h = 5 + (trial % 7);
      const w = 4 + (trial % 5);
      const bm = new Uint8Array(h * w);
      for (let i = 0; i < bm.length; i++) bm[i] = (trial * 31 + i * 7) % 3 === 0 ? 1 : 0;
      const counts = rleEncode(bm, h, w);
      expect(Array.from(rleDecode(counts, h, w))).toEqual(Array.from(bm));
      expect(rleArea(counts)).toBe(bm.reduce((a, b) => a + b, 0));
    }
  });

  it("uses a single zero-length run for all-false", () => {
    expect(rleEncode(new Uint8Array(16), 4, 4)).toEqual([0]);
    expect(rleEncode(new Uint8Array(16).fill(1), 4, 4)).toEqual([16]);
  });
});

describe("png reading", () => {
  it("reads dimensions from the header", () => {
    const dims = pngDimensions(path.join(imageDir, "frame_0.png"));
    expect(dims).toEqual({ width: 96, height: 72 });
  });
});

describe("export-masks fixture mode", () => {
  it("writes the full dataset layout", () => {
    for (const name of [
      "manifest.json",
      "poses.json",
      "propagated.json",
      "masks_sp.json",
      "masks_wp.json",
      "features_sp.bin",
      "features_wp.bin",
      "frames/0000.png",
      "frames/0002.png",
    ]) {
      expect(fs.existsSync(path.join(datasetDir, name)), name).toBe(true);
    }
    const manifest = JSON.parse(fs.readFileSync(path.join(datasetDir, "manifest.json"), "utf8"));
    expect(manifest.frames).toHaveLength(3);
    expect(manifest.dim).toBe(512);
    const masks = JSON.parse(fs.readFileSync(path.join(datasetDir, "masks_wp.json"), "utf8"));
    const header = fs.readFileSync(path.join(datasetDir, "features_wp.bin")).subarray(0, 16);
    expect(header.toString("ascii", 0, 4)).toBe("SSF1");
    expect(header.readUInt32LE(8)).toBe(masks.length);
    expect(header.readUInt32LE(12)).toBe(512);
  });

  it("re-runs with --force to an identical manifest hash", () => {
    const first = sha256(path.join(datasetDir, "manifest.json"));
    const maskHash = sha256(path.join(datasetDir, "masks_sp.json"));
    const featHash = sha256(path.join(datasetDir, "features_sp.bin"));
    exportMasksAndFeatures(fixtureJob(datasetDir, { force: true }));
    expect(sha256(path.join(datasetDir, "manifest.json"))).toBe(first);
    expect(sha256(path.join(datasetDir, "masks_sp.json"))).toBe(maskHash);
    expect(sha256(path.join(datasetDir, "features_sp.bin"))).toBe(featHash);
  });

  it("refuses a non-empty output without --force", () => {
    expect(() => exportMasksAndFeatures(fixtureJob(datasetDir))).toThrow(/--force/);
  });

  it("fails on an empty image directory without writing anything", () => {
    const emptyDir = path.join(workDir, "no-images");
    fs.mkdirSync(emptyDir, { recursive: true });
    const out = path.join(workDir, "should-not-exist");
    expect(() =>
      exportMasksAndFeatures({ ...fixtureJob(out), imageDir: emptyDir }),
    ).toThrow(/no \.png frames/);
    expect(fs.existsSync(out)).toBe(false);
  });

  it("demands the fixture flag when real weights are unavailable", () => {
    const out = path.join(workDir, "real-mode");
    expect(() => exportMasksAndFeatures({ ...fixtureJob(out), fixture: false })).toThrow(
      /model backend unavailable/,
    );
    expect(fs.existsSync(out)).toBe(false);
  });
});

describe("training library interop", () => {
  it("loads with zero schema warnings and filters into disjoint masks", () => {
    // the associate stage loads the dataset through the trainer's own
    // reader, quality-filters every frame, and labels masks against the
    // exporter's propagated category masks
    execFileSync("python3", ["-m", "semsplat.cli", "associate", "--root", datasetDir], {
      stdio: ["ignore", "pipe", "pipe"],
    });
    const stagesRoot = path.join(datasetDir, "stages");
    const hashDir = fs.readdirSync(stagesRoot)[0];
    const assocDir = path.join(stagesRoot, hashDir, "associate");
    const stats = JSON.parse(fs.readFileSync(path.join(assocDir, "stats.json"), "utf8"));
    expect(stats.load_warnings).toBe(0);
    expect(stats.labeled).toBeGreaterThan(0);

    const manifest = JSON.parse(fs.readFileSync(path.join(datasetDir, "manifest.json"), "utf8"));
    const sizes = new Map<number, { width: number; height: number }>();
    for (const fr of manifest.frames) sizes.set(fr.frame_id, fr);
    for (const scale of ["sp", "wp"]) {
      const masks = JSON.parse(
        fs.readFileSync(path.join(assocDir, `masks_${scale}.json`), "utf8"),
      ) as Array<{ frame_id: number; rle: number[] }>;
      expect(masks.length).toBeGreaterThan(0);
      const byFrame = new Map<number, number[][]>();
      for (const m of masks) {
        if (!byFrame.has(m.frame_id)) byFrame.set(m.frame_id, []);
        byFrame.get(m.frame_id)!.push(m.rle);
      }
      for (const [frameId, rles] of byFrame) {
        const { width, height } = sizes.get(frameId)!;
        const bitmaps = rles.map((r) => rleDecode(r, height, width));
        for (let i = 0; i < bitmaps.length; i++) {
          for (let j = i + 1; j < bitmaps.length; j++) {
            let overlap = 0;
            for (let p = 0; p < bitmaps[i].length; p++) {
              overlap += bitmaps[i][p] & bitmaps[j][p];
            }
            expect(overlap, `scale ${scale} frame ${frameId} masks ${i},${j}`).toBe(0);
          }
        }
      }
    }
  }, 60000);
});

describe("export-queries", () => {
  it("writes unit rows with duplicates identical", () => {
    const prefix = path.join(workDir, "queries");
    exportQueryEmbeddings(["mug", "plate", "mug"], prefix, {
      fixture: true,
      seed: 0,
      dim: 64,
    });
    const buf = fs.readFileSync(prefix + ".bin");
    expect(buf.readUInt32LE(8)).toBe(3);
    const row = (i: number) => {
      const out = new Float32Array(64);
      for (let j = 0; j < 64; j++) out[j] = buf.readFloatLE(16 + (i * 64 + j) * 4);
      return out;
    };
    const norm = (v: Float32Array) => Math.sqrt(v.reduce((a, b) => a + b * b, 0));
    expect(Math.abs(norm(row(0)) - 1)).toBeLessThan(1e-6);
    expect(Array.from(row(0))).toEqual(Array.from(row(2)));
    expect(Array.from(row(0))).not.toEqual(Array.from(row(1)));
  });

  it("single phrase gives a 1-row file with golden-stable bytes", () => {
    const a = path.join(workDir, "qa");
    const b = path.join(workDir, "qb");
    exportQueryEmbeddings(["teapot"], a, { fixture: true, seed: 3, dim: 32 });
    exportQueryEmbeddings(["teapot"], b, { fixture: true, seed: 3, dim: 32 });
    expect(sha256(a + ".bin")).toBe(sha256(b + ".bin"));
    expect(fs.readFileSync(a + ".bin").readUInt32LE(8)).toBe(1);
  });

  it("rejects an empty phrase list", () => {
    expect(() =>
      exportQueryEmbeddings([], path.join(workDir, "qx"), {
        fixture: true,
        seed: 0,
        dim: 16,
      }),
    ).toThrow(/no phrases/);
  });
});
