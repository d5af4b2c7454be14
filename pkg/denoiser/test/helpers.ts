import fs from 'node:fs';
import path from 'node:path';
import { snapshotPath, truthPath, writeSliceImage } from '../src/formats.js';

/** Deterministic PRNG (mulberry32). */
export function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Roughly normal noise from averaged uniforms. */
export function noise(rng: () => number): number {
  return (rng() + rng() + rng() + rng() - 2) * Math.sqrt(3);
}

/** A smooth blob image: something a denoiser can plausibly learn. */
export function blobImage(n: number, cx: number, cy: number,
                          radius: number): Float32Array {
  const out = new Float32Array(n * n);
  for (let y = 0; y < n; y++) {
    for (let x = 0; x < n; x++) {
      const d2 = (x - cx) ** 2 + (y - cy) ** 2;
      out[y * n + x] = Math.exp(-d2 / (2 * radius * radius));
    }
  }
  return out;
}

export interface FixtureOptions {
  slices: number;
  n: number;
  updates: number[];
  noiseAmp: number;
  seed: number;
}

/**
 * Write a synthetic run directory in the reconstruction pipeline's
 * artifact layout: per-slice ground truth plus noisy snapshots.
 */
export function makeRunDir(root: string, options: FixtureOptions): string {
  const { slices, n, updates, noiseAmp, seed } = options;
  fs.mkdirSync(root, { recursive: true });
  const rng = makeRng(seed);
  for (let sid = 0; sid < slices; sid++) {
    const clean = blobImage(
      n, n * (0.3 + 0.4 * rng()), n * (0.3 + 0.4 * rng()),
      n * (0.12 + 0.1 * rng()));
    writeSliceImage(truthPath(root, sid), clean, n, sid, 0);
    for (const update of updates) {
      const noisy = new Float32Array(n * n);
      for (let i = 0; i < noisy.length; i++) {
        noisy[i] = clean[i] + noiseAmp * noise(rng);
      }
      writeSliceImage(snapshotPath(root, sid, update), noisy, n, sid, update);
    }
  }
  return root;
}

export interface CsvTable {
  header: string[];
  rows: string[][];
}

export function readCsv(file: string): CsvTable {
  const lines = fs.readFileSync(file, 'utf8').trim().split('\n');
  const header = lines[0].split(',');
  return { header, rows: lines.slice(1).map((line) => line.split(',')) };
}

export function column(table: CsvTable, name: string): string[] {
  const idx = table.header.indexOf(name);
  if (idx < 0) throw new Error(`no column ${name} in ${table.header}`);
  return table.rows.map((row) => row[idx]);
}

export function tmpDir(base: string): string {
  return fs.mkdtempSync(path.join(base, 'denoiser-test-'));
}
