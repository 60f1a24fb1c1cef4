/**
 * Dataset export: runs a segmentation backend over an image sequence with a
 * uniform point-prompt grid at three granularities, merges them into the
 * two aggregated scale sets (subpart+part, whole+part), extracts one
 * embedding per mask, tracks the first frame's whole-object masks through
 * the sequence, and writes the exact on-disk layout the training library
 * loads.
 *
 * Only the fixture backend is runnable here: real model weights are not
 * available in this environment, so requesting them fails with a clear
 * diagnostic instead of a degraded silent fallback.
 */
import * as fs from "node:fs";
import * as path from "node:path";

import { createFixtureModel, RawMask } from "./fixtures.js";
import { ensureDir, ensureEmptyOutput, pngDimensions, writeFeatureBin, writeJson } from "./format.js";
import { rleEncode } from "./rle.js";

export interface ExportJob {
  imageDir: string;
  outDir: string;
  samModel: string;     // e.g. "sam-vit-h"
  clipModel: string;    // e.g. "openclip-vit-b16"
  device: string;
  gridSize: number;     // point-prompt grid, 32 by default
  fixture: boolean;
  force: boolean;
  seed: number;
  dim: number;
  maskedFullImage: boolean; // embed the full image with background zeroed vs a tight crop
}

export const defaultJob: Omit<ExportJob, "imageDir" | "outDir"> = {
  samModel: "sam-vit-h",
  clipModel: "openclip-vit-b16",
  device: "cpu",
  gridSize: 32,
  fixture: false,
  force: false,
  seed: 0,
  dim: 512,
  maskedFullImage: true,
};

interface MaskRecord {
  mask_id: number;
  frame_id: number;
  rle: number[];
  pred_iou: number;
  stability: number;
  label: number;
}

export function listImages(imageDir: string): string[] {
  if (!fs.existsSync(imageDir)) {
    throw new Error(`image directory ${imageDir} does not exist`);
  }
  const names = fs
    .readdirSync(imageDir)
    .filter((f) => f.toLowerCase().endsWith(".png"))
    .sort();
  if (names.length === 0) {
    throw new Error(`image directory ${imageDir} holds no .png frames`);
  }
  return names.map((f) => path.join(imageDir, f));
}

export function exportMasksAndFeatures(job: ExportJob): { manifestPath: string } {
  if (!job.fixture) {
    throw new Error(
      `model backend unavailable: ${job.samModel}/${job.clipModel} weights ` +
        "cannot be loaded in this environment; run with --fixture",
    );
  }
  const images = listImages(job.imageDir);
  ensureEmptyOutput(job.outDir, job.force);
  const model = createFixtureModel(job.seed, job.dim, job.gridSize);

  const frames: Array<{ frame_id: number; width: number; height: number; image: string }> = [];
  const poses: Array<Record<string, unknown>> = [];
  const masks: Record<"sp" | "wp", MaskRecord[]> = { sp: [], wp: [] };
  const feats: Record<"sp" | "wp", Float32Array[]> = { sp: [], wp: [] };
  const propagated: Array<{ frame_id: number; categories: number[][] }> = [];

  ensureDir(path.join(job.outDir, "frames"));
  images.forEach((src, frameId) => {
    const { width, height } = pngDimensions(src);
    const rel = `frames/${String(frameId).padStart(4, "0")}.png`;
    fs.copyFileSync(src, path.join(job.outDir, rel));
    frames.push({ frame_id: frameId, width, height, image: rel });
    const focal = 1.1 * Math.max(width, height);
    poses.push({
      frame_id: frameId,
      intrinsics: [
        [focal, 0, width / 2],
        [0, focal, height / 2],
        [0, 0, 1],
      ],
      world_to_camera: [
        [1, 0, 0, 0.1 * frameId],
        [0, 1, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
      ],
    });

    const raw = model.frameMasks(frameId, width, height);
    // conflicting granularities merge into the two aggregated sets
    const spSet: RawMask[] = [...raw.subpart, ...raw.part];
    const wpSet: RawMask[] = [...raw.whole, ...raw.part];
    (["sp", "wp"] as const).forEach((scale) => {
      const set = scale === "sp" ? spSet : wpSet;
      set.forEach((m, i) => {
        masks[scale].push({
          mask_id: masks[scale].filter((r) => r.frame_id === frameId).length,
          frame_id: frameId,
          rle: rleEncode(m.bitmap, height, width),
          pred_iou: Number(m.predIou.toFixed(6)),
          stability: Number(m.stability.toFixed(6)),
          label: -1,
        });
        feats[scale].push(model.embedding(m.objectId, frameId, i));
      });
    });
    propagated.push({ frame_id: frameId, categories: model.propagated(frameId, width, height) });
  });

  writeJson(path.join(job.outDir, "poses.json"), poses);
  writeJson(path.join(job.outDir, "propagated.json"), propagated);
  (["sp", "wp"] as const).forEach((scale) => {
    writeJson(path.join(job.outDir, `masks_${scale}.json`), masks[scale]);
    writeFeatureBin(path.join(job.outDir, `features_${scale}.bin`), feats[scale], job.dim);
  });
  const manifest = {
    format: "semsplat-dataset",
    version: 1,
    dim: job.dim,
    feature_dim: 8,
    scales: ["sp", "wp"],
    n_categories: model.nObjects,
    frames,
    files: {
      poses: "poses.json",
      propagated: "propagated.json",
      masks_sp: "masks_sp.json",
      masks_wp: "masks_wp.json",
      features_sp: "features_sp.bin",
      features_wp: "features_wp.bin",
    },
    export: {
      sam_model: job.samModel,
      clip_model: job.clipModel,
      grid_size: job.gridSize,
      fixture: job.fixture,
      seed: job.seed,
      masked_full_image: job.maskedFullImage,
    },
  };
  const manifestPath = path.join(job.outDir, "manifest.json");
  writeJson(manifestPath, manifest);
  return { manifestPath };
}

export function exportQueryEmbeddings(
  phrases: string[],
  outPrefix: string,
  options: { fixture: boolean; seed: number; dim: number },
): void {
  if (phrases.length === 0) {
    throw new Error("no phrases given");
  }
  if (!options.fixture) {
    throw new Error(
      "text encoder unavailable: no model weights in this environment; run with --fixture",
    );
  }
  const model = createFixtureModel(options.seed, options.dim);
  const rows = phrases.map((p) => model.textEmbedding(p));
  writeFeatureBin(outPrefix + ".bin", rows, options.dim);
  writeJson(outPrefix + ".json", {
    phrases,
    file: path.basename(outPrefix) + ".bin",
  });
}
