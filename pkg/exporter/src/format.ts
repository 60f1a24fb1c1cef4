/**
 * Binary and JSON emission for the dataset layout the training library
 * consumes: feature files are a 16-byte header (magic "SSF1", then
 * version, count, dim as uint32 LE) followed by count*dim float32 LE.
 */
import * as fs from "node:fs";
import * as path from "node:path";

export const FEATURE_MAGIC = "SSF1";
export const FEATURE_VERSION = 1;

export function writeFeatureBin(filePath: string, records: Float32Array[], dim: number): void {
  const count = records.length;
  const buf = Buffer.alloc(16 + count * dim * 4);
  buf.write(FEATURE_MAGIC, 0, "ascii");
  buf.writeUInt32LE(FEATURE_VERSION, 4);
  buf.writeUInt32LE(count, 8);
  buf.writeUInt32LE(dim, 12);
  for (let i = 0; i < count; i++) {
    if (records[i].length !== dim) {
      throw new Error(`record ${i} has ${records[i].length} floats, expected ${dim}`);
    }
    for (let j = 0; j < dim; j++) {
      buf.writeFloatLE(records[i][j], 16 + (i * dim + j) * 4);
    }
  }
  fs.writeFileSync(filePath, buf);
}

/** Stable JSON emission: sorted keys, fixed indentation. */
export function writeJson(filePath: string, value: unknown): void {
  fs.writeFileSync(filePath, canonicalJson(value) + "\n");
}

export function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value), null, 1);
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as object).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function ensureDir(dir: string): void {
  fs.mkdirSync(dir, { recursive: true });
}

export function ensureEmptyOutput(dir: string, force: boolean): void {
  if (fs.existsSync(dir) && fs.readdirSync(dir).length > 0) {
    if (!force) {
      throw new Error(`output directory ${dir} is not empty (use --force to overwrite)`);
    }
    fs.rmSync(dir, { recursive: true });
  }
  ensureDir(dir);
}

/** Minimal PNG header parse: width and height from the IHDR chunk. */
export function pngDimensions(filePath: string): { width: number; height: number } {
  const buf = fs.readFileSync(filePath);
  const signature = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  if (buf.length < 24 || !buf.subarray(0, 8).equals(signature)) {
    throw new Error(`${path.basename(filePath)} is not a PNG file`);
  }
  if (buf.toString("ascii", 12, 16) !== "IHDR") {
    throw new Error(`${path.basename(filePath)}: missing IHDR chunk`);
  }
  return { width: buf.readUInt32BE(16), height: buf.readUInt32BE(20) };
}
