/**
 * Readers and writers for the reconstruction pipeline's image artifacts:
 * `.raw` (little-endian float32, row-major, square), a `.hdr` text sidecar
 * (grid size, slice id, update index), and an 8-bit `.pgm` preview.
 */

import fs from 'node:fs';
import path from 'node:path';

export interface SliceImage {
  values: Float32Array;
  n: number;
  meta: Record<string, number | string>;
}

export function readSliceImage(basePath: string): SliceImage {
  const meta: Record<string, number | string> = {};
  const header = fs.readFileSync(basePath + '.hdr', 'utf8');
  for (const line of header.split('\n')) {
    if (!line.trim()) continue;
    const space = line.indexOf(' ');
    const key = line.slice(0, space);
    const value = line.slice(space + 1);
    meta[key] = /^-?\d+$/.test(value) ? parseInt(value, 10) : value;
  }
  const n = meta['n'] as number;
  if (!Number.isInteger(n) || n < 1) {
    throw new Error(`bad or missing grid size in ${basePath}.hdr`);
  }
  const raw = fs.readFileSync(basePath + '.raw');
  if (raw.length !== n * n * 4) {
    throw new Error(
      `${basePath}.raw is ${raw.length} bytes, expected ${n * n * 4}`);
  }
  const values = new Float32Array(
    raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.length));
  return { values, n, meta };
}

export function writeSliceImage(
    basePath: string, values: Float32Array, n: number,
    sliceId: number, updateIndex: number): void {
  if (values.length !== n * n) {
    throw new Error(`value count ${values.length} != ${n}x${n}`);
  }
  fs.mkdirSync(path.dirname(basePath), { recursive: true });
  fs.writeFileSync(basePath + '.raw', Buffer.from(values.buffer,
    values.byteOffset, values.byteLength));
  fs.writeFileSync(basePath + '.hdr',
    `n ${n}\nslice_id ${sliceId}\nupdate_index ${updateIndex}\n` +
    'dtype float32\norder row-major\n');
  writePgm(basePath + '.pgm', values, n, n);
}

export function writePgm(
    file: string, values: Float32Array, height: number, width: number): void {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const span = hi > lo ? hi - lo : 1.0;
  const bytes = Buffer.alloc(values.length);
  for (let i = 0; i < values.length; i++) {
    bytes[i] = Math.round(((values[i] - lo) / span) * 255);
  }
  const head = Buffer.from(`P5\n${width} ${height}\n255\n`, 'ascii');
  fs.writeFileSync(file, Buffer.concat([head, bytes]));
}

const TRUTH_PATTERN = /^s(\d{4})_truth\.hdr$/;

/** Slice ids present in a run directory, from its ground-truth sidecars. */
export function listSlices(runDir: string): number[] {
  const truthDir = path.join(runDir, 'truth');
  if (!fs.existsSync(truthDir)) return [];
  const ids: number[] = [];
  for (const name of fs.readdirSync(truthDir)) {
    const match = TRUTH_PATTERN.exec(name);
    if (match) ids.push(parseInt(match[1], 10));
  }
  return ids.sort((x, y) => x - y);
}

export function truthPath(runDir: string, sliceId: number): string {
  return path.join(runDir, 'truth',
    `s${String(sliceId).padStart(4, '0')}_truth`);
}

export function snapshotPath(
    runDir: string, sliceId: number, updateIndex: number,
    kind: 'conv' | 'enh' = 'conv'): string {
  return path.join(runDir, 'snapshots',
    `s${String(sliceId).padStart(4, '0')}` +
    `_u${String(updateIndex).padStart(4, '0')}_${kind}`);
}
