/**
 * Training loop: Adam on pixel mean-squared error.
 *
 * The model starts as an exact identity (zero-initialized residual head),
 * so the initial test MSE equals the noisy-vs-clean MSE and every
 * improvement is learned denoising. Training is deterministic for a fixed
 * seed: seeded weight init, seeded shuffling, and CPU math.
 */

import fs from 'node:fs';
import path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { TrainingPair } from './dataset.js';
import { buildDenoiser, saveCheckpoint } from './model.js';

export class TrainingError extends Error {
  constructor(message: string, public lastGoodCheckpoint: string | null) {
    super(message);
  }
}

export interface TrainConfig {
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
  baseWidth: number;
  minPairs: number;
}

export const DEFAULT_TRAIN: TrainConfig = {
  epochs: 30,
  batchSize: 4,
  learningRate: 1e-3,
  seed: 0,
  baseWidth: 24,
  minPairs: 16,
};

export interface EpochRecord {
  epoch: number;
  trainMse: number;
  testMse: number;
  seconds: number;
}

export interface TrainResult {
  checkpointDir: string;
  lossCurve: EpochRecord[];
  initialTestMse: number;
  finalTestMse: number;
  tile: number;
  parameters: number;
}

/** Deterministic PRNG (mulberry32) for shuffling batches. */
function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function shuffled(count: number, rng: () => number): number[] {
  const order = Array.from({ length: count }, (_, i) => i);
  for (let i = count - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  return order;
}

function toTensor(pairs: TrainingPair[], indices: number[], tile: number,
                  field: 'noisy' | 'clean'): tf.Tensor4D {
  const data = new Float32Array(indices.length * tile * tile);
  indices.forEach((idx, row) => {
    data.set(pairs[idx][field], row * tile * tile);
  });
  return tf.tensor4d(data, [indices.length, tile, tile, 1]);
}

function meanSquaredError(
    model: tf.LayersModel, pairs: TrainingPair[], tile: number,
    batchSize: number): number {
  if (pairs.length === 0) return NaN;
  let total = 0;
  for (let start = 0; start < pairs.length; start += batchSize) {
    const indices = pairs.slice(start, start + batchSize)
      .map((_, i) => start + i);
    total += tf.tidy(() => {
      const x = toTensor(pairs, indices, tile, 'noisy');
      const y = toTensor(pairs, indices, tile, 'clean');
      const out = model.predict(x) as tf.Tensor;
      return out.sub(y).square().mean().dataSync()[0] * indices.length;
    });
  }
  return total / pairs.length;
}

export async function trainModel(
    trainPairs: TrainingPair[], testPairs: TrainingPair[],
    outDir: string, config: Partial<TrainConfig> = {}): Promise<TrainResult> {
  const cfg = { ...DEFAULT_TRAIN, ...config };
  if (trainPairs.length < cfg.minPairs) {
    throw new TrainingError(
      `need at least ${cfg.minPairs} training pairs, got ${trainPairs.length}`,
      null);
  }
  const tile = trainPairs[0].n;
  for (const pair of [...trainPairs, ...testPairs]) {
    if (pair.n !== tile) {
      throw new TrainingError(
        `pair sizes differ (${pair.n} vs ${tile}); train on uniform tiles`,
        null);
    }
  }

  const model = buildDenoiser({ tile, baseWidth: cfg.baseWidth,
                                seed: cfg.seed });
  const optimizer = tf.train.adam(cfg.learningRate);
  const rng = makeRng(cfg.seed * 2654435761 + 1);
  const checkpointDir = path.join(outDir, 'checkpoint');
  fs.mkdirSync(outDir, { recursive: true });

  const evalPairs = testPairs.length > 0 ? testPairs : trainPairs;
  const initialTestMse = meanSquaredError(model, evalPairs, tile,
                                          cfg.batchSize);
  const lossCurve: EpochRecord[] = [];
  let lastGood: string | null = null;

  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    const t0 = Date.now();
    const order = shuffled(trainPairs.length, rng);
    let epochLoss = 0;
    let seen = 0;
    for (let start = 0; start < order.length; start += cfg.batchSize) {
      const indices = order.slice(start, start + cfg.batchSize);
      const loss = tf.tidy(() => {
        const x = toTensor(trainPairs, indices, tile, 'noisy');
        const y = toTensor(trainPairs, indices, tile, 'clean');
        const value = optimizer.minimize(() => {
          const out = model.apply(x, { training: true }) as tf.Tensor;
          return out.sub(y).square().mean() as tf.Scalar;
        }, true);
        return value!.dataSync()[0];
      });
      epochLoss += loss * indices.length;
      seen += indices.length;
    }
    const trainMse = epochLoss / seen;
    const testMse = meanSquaredError(model, evalPairs, tile, cfg.batchSize);
    const seconds = (Date.now() - t0) / 1000;
    if (!Number.isFinite(trainMse) || !Number.isFinite(testMse)) {
      optimizer.dispose();
      throw new TrainingError(
        `training diverged at epoch ${epoch} ` +
        `(train ${trainMse}, test ${testMse})`, lastGood);
    }
    lossCurve.push({ epoch, trainMse, testMse, seconds });
    await saveCheckpoint(model, checkpointDir, {
      tile, baseWidth: cfg.baseWidth, seed: cfg.seed, epochsTrained: epoch,
    });
    lastGood = checkpointDir;
    fs.writeFileSync(path.join(outDir, 'loss_curve.json'),
      JSON.stringify(lossCurve, null, 2));
    console.log(
      `epoch ${epoch}/${cfg.epochs}: train mse ${trainMse.toExponential(3)}` +
      `, test mse ${testMse.toExponential(3)}, ${seconds.toFixed(1)}s`);
  }

  optimizer.dispose();
  const finalTestMse = lossCurve[lossCurve.length - 1].testMse;
  const result: TrainResult = {
    checkpointDir, lossCurve, initialTestMse, finalTestMse, tile,
    parameters: model.countParams(),
  };
  model.dispose();
  return result;
}
