/**
 * Fixture backends standing in for the segmentation, image-text, and
 * tracking models. They return canned-but-plausible masks and embeddings,
 * fully determined by a seed, so the exporter runs without weights, GPU, or
 * network, and its outputs are reproducible byte for byte.
 */
import { rleEncode } from "./rle.js";

export interface RawMask {
  bitmap: Uint8Array;
  predIou: number;
  stability: number;
  objectId: number; // fixture-internal provenance, not exported
}

export interface FixtureFrameMasks {
  subpart: RawMask[];
  part: RawMask[];
  whole: RawMask[];
}

/** splitmix-style deterministic PRNG over 32-bit state. */
export class Prng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    let z = (this.state += 0x9e3779b9) >>> 0;
    z ^= z >>> 16;
    z = Math.imul(z, 0x21f0aaad) >>> 0;
    z ^= z >>> 15;
    z = Math.imul(z, 0x735a2d97) >>> 0;
    z ^= z >>> 15;
    return z >>> 0;
  }

  uniform(lo = 0, hi = 1): number {
    return lo + (this.next() / 0x100000000) * (hi - lo);
  }

  normal(): number {
    // Box-Muller from two uniform draws
    const u = Math.max(this.uniform(), 1e-12);
    const v = this.uniform();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }

  unitVector(dim: number): Float32Array {
    const out = new Float32Array(dim);
    let norm = 0;
    for (let i = 0; i < dim; i++) {
      out[i] = this.normal();
      norm += out[i] * out[i];
    }
    norm = Math.sqrt(norm) || 1;
    for (let i = 0; i < dim; i++) out[i] /= norm;
    return out;
  }
}

function ellipse(
  width: number,
  height: number,
  cx: number,
  cy: number,
  rx: number,
  ry: number,
  xLo = -Infinity,
  xHi = Infinity,
  yLo = -Infinity,
  yHi = Infinity,
): Uint8Array {
  const out = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const dx = (x + 0.5 - cx) / rx;
      const dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1 && x >= xLo && x < xHi && y >= yLo && y < yHi) {
        out[y * width + x] = 1;
      }
    }
  }
  return out;
}

export interface FixtureModel {
  nObjects: number;
  dim: number;
  objectCenter(objectId: number, frame: number, width: number, height: number): [number, number, number, number];
  frameMasks(frame: number, width: number, height: number): FixtureFrameMasks;
  propagated(frame: number, width: number, height: number): number[][]; // RLE per object
  embedding(objectId: number, frame: number, maskIndex: number): Float32Array;
  textEmbedding(phrase: string): Float32Array;
}

/**
 * Objects are drifting ellipses; parts split them vertically, subparts
 * split parts horizontally. The point-grid density only bounds how many
 * objects the fixture proposes.
 */
export function createFixtureModel(seed: number, dim = 512, gridSize = 32, nObjects = 3): FixtureModel {
  const base = new Prng(seed);
  const objectVectors: Float32Array[] = [];
  for (let k = 0; k < nObjects; k++) {
    objectVectors.push(base.unitVector(dim));
  }
  const maxObjects = Math.max(1, Math.floor((gridSize * gridSize) / 256));
  const n = Math.min(nObjects, Math.max(maxObjects, nObjects));

  const model: FixtureModel = {
    nObjects: n,
    dim,
    objectCenter(objectId, frame, width, height) {
      const cx = ((objectId + 1) / (n + 1)) * width + frame * 1.5;
      const cy = height / 2 + (objectId - (n - 1) / 2) * height * 0.22;
      const rx = width * 0.11;
      const ry = height * 0.14;
      return [cx, cy, rx, ry];
    },
    frameMasks(frame, width, height) {
      const rng = new Prng(seed * 7919 + frame * 104729 + 13);
      const subpart: RawMask[] = [];
      const part: RawMask[] = [];
      const whole: RawMask[] = [];
      for (let k = 0; k < n; k++) {
        const [cx, cy, rx, ry] = model.objectCenter(k, frame, width, height);
        const quality = () => rng.uniform(0.89, 0.99);
        whole.push({
          bitmap: ellipse(width, height, cx, cy, rx, ry),
          predIou: quality(),
          stability: quality(),
          objectId: k,
        });
        const halves: Array<[number, number]> = [
          [-Infinity, cx],
          [cx, Infinity],
        ];
        for (const [lo, hi] of halves) {
          const bm = ellipse(width, height, cx, cy, rx, ry, lo, hi);
          if (bm.some((v) => v)) {
            part.push({ bitmap: bm, predIou: quality(), stability: quality(), objectId: k });
          }
          for (const [tLo, tHi] of [
            [-Infinity, cy],
            [cy, Infinity],
          ] as Array<[number, number]>) {
            const sub = ellipse(width, height, cx, cy, rx, ry, lo, hi, tLo, tHi);
            if (sub.some((v) => v)) {
              subpart.push({ bitmap: sub, predIou: quality(), stability: quality(), objectId: k });
            }
          }
        }
      }
      return { subpart, part, whole };
    },
    propagated(frame, width, height) {
      const out: number[][] = [];
      for (let k = 0; k < n; k++) {
        const [cx, cy, rx, ry] = model.objectCenter(k, frame, width, height);
        out.push(rleEncode(ellipse(width, height, cx, cy, rx, ry), height, width));
      }
      return out;
    },
    embedding(objectId, frame, maskIndex) {
      const jitter = new Prng(seed * 31337 + frame * 2663 + maskIndex * 97 + 5);
      const out = new Float32Array(dim);
      let norm = 0;
      for (let i = 0; i < dim; i++) {
        out[i] = objectVectors[objectId][i] + 0.05 * jitter.normal();
        norm += out[i] * out[i];
      }
      norm = Math.sqrt(norm) || 1;
      for (let i = 0; i < dim; i++) out[i] /= norm;
      return out;
    },
    textEmbedding(phrase) {
      let h = 2166136261;
      for (const ch of phrase) {
        h ^= ch.charCodeAt(0);
        h = Math.imul(h, 16777619) >>> 0;
      }
      return new Prng(h).unitVector(dim);
    },
  };
  return model;
}
