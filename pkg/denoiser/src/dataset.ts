/**
 * Training pairs from reconstruction run artifacts.
 *
 * A pair couples a streaming snapshot at a chosen update (the noisy input)
 * with the run's ground-truth image for the same slice (the clean target).
 * Both are min-max scaled into [0, 1] using the noisy image's range — the
 * same frame a serving client uses — and the scale parameters are kept for
 * inversion. The train/test split is deterministic: slices are ranked by a
 * hash of their identity and the top `holdout` fraction becomes the test
 * set, so repeated builds of the same directories agree exactly.
 */

import { listSlices, readSliceImage, snapshotPath, truthPath } from './formats.js';

export class DatasetError extends Error {}

export interface TrainingPair {
  runDir: string;
  sliceId: number;
  updateIndex: number;
  n: number;
  noisy: Float32Array;
  clean: Float32Array;
  scaleMin: number;
  scaleMax: number;
}

export interface Dataset {
  train: TrainingPair[];
  test: TrainingPair[];
  trainSlices: string[];
  testSlices: string[];
}

export interface DatasetOptions {
  updates?: number[];
  holdout?: number;
}

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash;
}

function scalePair(
    noisy: Float32Array, clean: Float32Array): {
      noisy: Float32Array; clean: Float32Array; lo: number; hi: number } {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of noisy) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const span = hi > lo ? hi - lo : 1.0;
  const scaledNoisy = new Float32Array(noisy.length);
  const scaledClean = new Float32Array(clean.length);
  for (let i = 0; i < noisy.length; i++) {
    scaledNoisy[i] = (noisy[i] - lo) / span;
    scaledClean[i] = Math.min(1, Math.max(0, (clean[i] - lo) / span));
  }
  return { noisy: scaledNoisy, clean: scaledClean, lo, hi };
}

/**
 * Build train/test pairs from one or more run directories.
 * `holdout` is the fraction of slices reserved for the test set.
 */
export function buildDataset(
    runDirs: string[], options: DatasetOptions = {}): Dataset {
  const updates = options.updates ?? [5];
  const holdout = options.holdout ?? 0.25;
  if (runDirs.length === 0) {
    throw new DatasetError('no run directories given');
  }
  if (!(holdout >= 0 && holdout < 1)) {
    throw new DatasetError(`holdout must be in [0, 1), got ${holdout}`);
  }
  if (updates.length === 0) {
    throw new DatasetError('no update indices selected');
  }

  const slices: { key: string; runDir: string; sliceId: number }[] = [];
  for (const runDir of runDirs) {
    const ids = listSlices(runDir);
    if (ids.length === 0) {
      throw new DatasetError(`no ground-truth images under ${runDir}`);
    }
    for (const sliceId of ids) {
      slices.push({ key: `${runDir}#${sliceId}`, runDir, sliceId });
    }
  }

  const ranked = [...slices].sort((a, b) =>
    fnv1a(a.key) - fnv1a(b.key) || a.key.localeCompare(b.key));
  const testCount = Math.floor(holdout * ranked.length);
  const testKeys = new Set(ranked.slice(0, testCount).map((s) => s.key));

  const train: TrainingPair[] = [];
  const test: TrainingPair[] = [];
  for (const { key, runDir, sliceId } of slices) {
    const truth = readSliceImage(truthPath(runDir, sliceId));
    for (const updateIndex of updates) {
      let snapshot;
      try {
        snapshot = readSliceImage(snapshotPath(runDir, sliceId, updateIndex));
      } catch (err) {
        throw new DatasetError(
          `missing snapshot for slice ${sliceId} update ${updateIndex} ` +
          `under ${runDir}: ${(err as Error).message}`);
      }
      if (snapshot.n !== truth.n) {
        throw new DatasetError(
          `snapshot ${snapshot.n}x${snapshot.n} does not match ` +
          `truth ${truth.n}x${truth.n} for slice ${sliceId}`);
      }
      const scaled = scalePair(snapshot.values, truth.values);
      (testKeys.has(key) ? test : train).push({
        runDir, sliceId, updateIndex, n: snapshot.n,
        noisy: scaled.noisy, clean: scaled.clean,
        scaleMin: scaled.lo, scaleMax: scaled.hi,
      });
    }
  }
  return {
    train, test,
    trainSlices: slices.filter((s) => !testKeys.has(s.key)).map((s) => s.key),
    testSlices: slices.filter((s) => testKeys.has(s.key)).map((s) => s.key),
  };
}
