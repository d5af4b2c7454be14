import fs from 'node:fs';
import os from 'node:os';
import path from 'node:path';
import { afterEach, describe, expect, it } from 'vitest';
import {
  listSlices, readSliceImage, snapshotPath, truthPath, writeSliceImage,
} from '../src/formats.js';
import { makeRunDir, tmpDir } from './helpers.js';

const cleanups: string[] = [];
afterEach(() => {
  while (cleanups.length) {
    fs.rmSync(cleanups.pop()!, { recursive: true, force: true });
  }
});

function scratch(): string {
  const dir = tmpDir(os.tmpdir());
  cleanups.push(dir);
  return dir;
}

describe('slice image files', () => {
  it('round-trips values and sidecar metadata', () => {
    const dir = scratch();
    const values = Float32Array.from(
      { length: 16 * 16 }, (_, i) => Math.sin(i * 0.37) * 3 - 1);
    writeSliceImage(path.join(dir, 'img'), values, 16, 7, 12);

    const back = readSliceImage(path.join(dir, 'img'));
    expect(back.n).toBe(16);
    expect(back.meta['slice_id']).toBe(7);
    expect(back.meta['update_index']).toBe(12);
    expect(back.meta['dtype']).toBe('float32');
    expect(back.meta['order']).toBe('row-major');
    expect(Array.from(back.values)).toEqual(Array.from(values));
  });

  it('writes an 8-bit preview with the expected header', () => {
    const dir = scratch();
    writeSliceImage(path.join(dir, 'img'),
      Float32Array.from([0, 1, 2, 3]), 2, 0, 1);
    const pgm = fs.readFileSync(path.join(dir, 'img.pgm'));
    expect(pgm.subarray(0, 11).toString('ascii')).toBe('P5\n2 2\n255\n');
    expect(Array.from(pgm.subarray(11))).toEqual([0, 85, 170, 255]);
  });

  it('rejects truncated raw data', () => {
    const dir = scratch();
    writeSliceImage(path.join(dir, 'img'),
      new Float32Array(4 * 4), 4, 0, 1);
    fs.writeFileSync(path.join(dir, 'img.raw'), Buffer.alloc(10));
    expect(() => readSliceImage(path.join(dir, 'img'))).toThrow(/10 bytes/);
  });
});

describe('run directory discovery', () => {
  it('lists slice ids from ground-truth sidecars', () => {
    const dir = scratch();
    makeRunDir(dir, { slices: 5, n: 16, updates: [2], noiseAmp: 0.1,
                      seed: 3 });
    expect(listSlices(dir)).toEqual([0, 1, 2, 3, 4]);
    expect(listSlices(path.join(dir, 'nope'))).toEqual([]);
  });

  it('builds the pipeline snapshot and truth naming scheme', () => {
    expect(truthPath('/runs/x', 3)).toBe('/runs/x/truth/s0003_truth');
    expect(snapshotPath('/runs/x', 3, 12)).toBe(
      '/runs/x/snapshots/s0003_u0012_conv');
    expect(snapshotPath('/runs/x', 0, 1, 'enh')).toBe(
      '/runs/x/snapshots/s0000_u0001_enh');
  });
});
