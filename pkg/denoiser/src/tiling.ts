/**
 * Inference over arbitrary image sizes by reflective-pad tiling.
 *
 * Images are padded (mirror without repeating the edge sample) up to a
 * multiple of the model's tile size, processed tile by tile in one batch,
 * stitched back, and cropped to the original shape.
 */

import * as tf from '@tensorflow/tfjs';
import { modelTile } from './model.js';

/** Mirror index into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ... */
export function reflectIndex(i: number, n: number): number {
  if (n === 1) return 0;
  const period = 2 * n - 2;
  let k = i % period;
  if (k < 0) k += period;
  return k < n ? k : period - k;
}

export function reflectPad(
    src: Float32Array, height: number, width: number,
    padHeight: number, padWidth: number): Float32Array {
  const out = new Float32Array(padHeight * padWidth);
  for (let y = 0; y < padHeight; y++) {
    const sy = reflectIndex(y, height);
    for (let x = 0; x < padWidth; x++) {
      out[y * padWidth + x] = src[sy * width + reflectIndex(x, width)];
    }
  }
  return out;
}

export interface EnhanceOptions {
  /** Clamp the output into [0, 1] (the trained-model contract). */
  clamp?: boolean;
}

/**
 * Run the model over one `height x width` image, tiling as needed.
 * The result has the same shape as the input.
 */
export async function enhanceImage(
    model: tf.LayersModel, pixels: Float32Array,
    height: number, width: number,
    options: EnhanceOptions = {}): Promise<Float32Array> {
  const tile = modelTile(model);
  const tilesY = Math.ceil(height / tile);
  const tilesX = Math.ceil(width / tile);
  const padH = tilesY * tile;
  const padW = tilesX * tile;
  const padded = (padH === height && padW === width)
    ? pixels
    : reflectPad(pixels, height, width, padH, padW);

  const count = tilesY * tilesX;
  const batch = new Float32Array(count * tile * tile);
  for (let ty = 0; ty < tilesY; ty++) {
    for (let tx = 0; tx < tilesX; tx++) {
      const dst = (ty * tilesX + tx) * tile * tile;
      for (let y = 0; y < tile; y++) {
        const srcRow = (ty * tile + y) * padW + tx * tile;
        batch.set(padded.subarray(srcRow, srcRow + tile), dst + y * tile);
      }
    }
  }

  const result = tf.tidy(() => {
    let out = model.predict(
      tf.tensor4d(batch, [count, tile, tile, 1])) as tf.Tensor;
    if (options.clamp ?? true) {
      out = out.clipByValue(0, 1);
    }
    return out;
  });
  const flat = new Float32Array(await result.data());
  result.dispose();

  const stitched = new Float32Array(height * width);
  for (let ty = 0; ty < tilesY; ty++) {
    for (let tx = 0; tx < tilesX; tx++) {
      const src = (ty * tilesX + tx) * tile * tile;
      const maxY = Math.min(tile, height - ty * tile);
      const maxX = Math.min(tile, width - tx * tile);
      for (let y = 0; y < maxY; y++) {
        stitched.set(
          flat.subarray(src + y * tile, src + y * tile + maxX),
          (ty * tile + y) * width + tx * tile);
      }
    }
  }
  return stitched;
}
