/**
 * Compact encoder-decoder denoising network.
 *
 * Three downsampling levels with skip connections and a zero-initialized
 * residual head: the network predicts a correction that is added to its
 * input, so a freshly built model is an exact identity. Roughly 1M
 * parameters at the default width; width and tile size are configurable
 * so tests can run tiny instances.
 */

import fs from 'node:fs';
import path from 'node:path';
import * as tf from '@tensorflow/tfjs';

export interface ModelConfig {
  tile: number;
  baseWidth: number;
  seed: number;
}

export const DEFAULT_TILE = 128;
export const DEFAULT_BASE_WIDTH = 24;

export function buildDenoiser(config: Partial<ModelConfig> = {}): tf.LayersModel {
  const tile = config.tile ?? DEFAULT_TILE;
  const base = config.baseWidth ?? DEFAULT_BASE_WIDTH;
  const seed = config.seed ?? 0;
  if (tile % 8 !== 0) {
    throw new Error(`tile size must be a multiple of 8, got ${tile}`);
  }

  let layerSeed = seed;
  const conv = (filters: number) => tf.layers.conv2d({
    filters, kernelSize: 3, padding: 'same', activation: 'relu',
    kernelInitializer: tf.initializers.glorotUniform({ seed: ++layerSeed }),
  });
  const pool = () => tf.layers.maxPooling2d({ poolSize: 2 });
  const up = () => tf.layers.upSampling2d({ size: [2, 2] });

  const input = tf.input({ shape: [tile, tile, 1] });
  const e1 = conv(base).apply(conv(base).apply(input)) as tf.SymbolicTensor;
  const e2 = conv(2 * base).apply(conv(2 * base).apply(
    pool().apply(e1))) as tf.SymbolicTensor;
  const e3 = conv(4 * base).apply(conv(4 * base).apply(
    pool().apply(e2))) as tf.SymbolicTensor;
  const bottom = conv(8 * base).apply(conv(8 * base).apply(
    pool().apply(e3))) as tf.SymbolicTensor;

  const d3 = conv(4 * base).apply(conv(4 * base).apply(
    tf.layers.concatenate().apply(
      [up().apply(bottom) as tf.SymbolicTensor, e3]))) as tf.SymbolicTensor;
  const d2 = conv(2 * base).apply(conv(2 * base).apply(
    tf.layers.concatenate().apply(
      [up().apply(d3) as tf.SymbolicTensor, e2]))) as tf.SymbolicTensor;
  const d1 = conv(base).apply(conv(base).apply(
    tf.layers.concatenate().apply(
      [up().apply(d2) as tf.SymbolicTensor, e1]))) as tf.SymbolicTensor;

  const delta = tf.layers.conv2d({
    filters: 1, kernelSize: 3, padding: 'same', activation: 'linear',
    kernelInitializer: 'zeros', biasInitializer: 'zeros',
  }).apply(d1) as tf.SymbolicTensor;
  const output = tf.layers.add().apply([input, delta]) as tf.SymbolicTensor;

  return tf.model({ inputs: input, outputs: output, name: 'denoiser' });
}

export function modelTile(model: tf.LayersModel): number {
  const shape = model.inputs[0].shape;
  return shape[1] as number;
}

export interface CheckpointMeta {
  tile: number;
  baseWidth: number;
  seed: number;
  epochsTrained: number;
}

export async function saveCheckpoint(
    model: tf.LayersModel, dir: string, meta: CheckpointMeta): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(tf.io.withSaveHandler(async (artifacts) => {
    const weights = Buffer.from(
      tf.io.CompositeArrayBuffer.join(artifacts.weightData));
    fs.writeFileSync(path.join(dir, 'weights.bin'), weights);
    fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify({
      modelTopology: artifacts.modelTopology,
      weightSpecs: artifacts.weightSpecs,
    }));
    return {
      modelArtifactsInfo: {
        dateSaved: new Date(), modelTopologyType: 'JSON' as const,
      },
    };
  }));
  fs.writeFileSync(path.join(dir, 'meta.json'), JSON.stringify(meta, null, 2));
}

export async function loadCheckpoint(
    dir: string): Promise<{ model: tf.LayersModel; meta: CheckpointMeta }> {
  const manifest = JSON.parse(
    fs.readFileSync(path.join(dir, 'model.json'), 'utf8'));
  const weights = fs.readFileSync(path.join(dir, 'weights.bin'));
  const model = await tf.loadLayersModel(tf.io.fromMemory({
    modelTopology: manifest.modelTopology,
    weightSpecs: manifest.weightSpecs,
    weightData: weights.buffer.slice(
      weights.byteOffset, weights.byteOffset + weights.byteLength),
  }));
  const meta = JSON.parse(
    fs.readFileSync(path.join(dir, 'meta.json'), 'utf8')) as CheckpointMeta;
  return { model, meta };
}
