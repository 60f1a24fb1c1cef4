/**
 * Run-length encoding matching the dataset layout: a bitmap flattens
 * row-major into alternating run lengths starting with a run of true
 * pixels; the trailing false run is trimmed, so an all-false bitmap
 * encodes to the single zero-length run [0].
 */

export function rleEncode(bitmap: Uint8Array, height: number, width: number): number[] {
  const total = height * width;
  if (bitmap.length !== total) {
    throw new Error(`bitmap has ${bitmap.length} entries, grid needs ${total}`);
  }
  const counts: number[] = [];
  let value = 1;
  let run = 0;
  for (let i = 0; i < total; i++) {
    const v = bitmap[i] ? 1 : 0;
    if (v === value) {
      run += 1;
    } else {
      counts.push(run);
      value = v;
      run = 1;
    }
  }
  counts.push(run);
  if (counts.length % 2 === 0) {
    counts.pop(); // trailing false run is implicit
  }
  return counts;
}

export function rleDecode(counts: number[], height: number, width: number): Uint8Array {
  const total = height * width;
  let covered = 0;
  for (const c of counts) {
    if (c < 0) throw new Error(`negative run length in ${counts}`);
    covered += c;
  }
  if (covered > total) {
    throw new Error(`runs cover ${covered} pixels but grid has ${total}`);
  }
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 1;
  for (const c of counts) {
    if (value) out.fill(1, pos, pos + c);
    pos += c;
    value = value ? 0 : 1;
  }
  return out;
}

export function rleArea(counts: number[]): number {
  let area = 0;
  for (let i = 0; i < counts.length; i += 2) area += counts[i];
  return area;
}
