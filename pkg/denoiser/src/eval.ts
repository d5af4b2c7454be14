/**
 * Offline evaluation: compare held-out snapshots before and after
 * enhancement, scored by SSIM against the ground truth in the same
 * scaled frame the model was trained in.
 */

import * as tf from '@tensorflow/tfjs';
import { Dataset } from './dataset.js';
import { ssim } from './ssim.js';
import { enhanceImage } from './tiling.js';

export interface PairScore {
  runDir: string;
  sliceId: number;
  updateIndex: number;
  ssimNoisy: number;
  ssimEnhanced: number;
}

export interface Evaluation {
  scores: PairScore[];
  meanNoisy: number;
  meanEnhanced: number;
  improvedFraction: number;
}

export async function evaluatePairs(
    model: tf.LayersModel, dataset: Dataset): Promise<Evaluation> {
  const pairs = dataset.test.length > 0 ? dataset.test : dataset.train;
  const scores: PairScore[] = [];
  for (const pair of pairs) {
    const enhanced = await enhanceImage(
      model, pair.noisy, pair.n, pair.n, { clamp: true });
    scores.push({
      runDir: pair.runDir,
      sliceId: pair.sliceId,
      updateIndex: pair.updateIndex,
      ssimNoisy: ssim(pair.noisy, pair.clean, pair.n, pair.n),
      ssimEnhanced: ssim(enhanced, pair.clean, pair.n, pair.n),
    });
  }
  const meanNoisy =
    scores.reduce((acc, s) => acc + s.ssimNoisy, 0) / scores.length;
  const meanEnhanced =
    scores.reduce((acc, s) => acc + s.ssimEnhanced, 0) / scores.length;
  const improvedFraction =
    scores.filter((s) => s.ssimEnhanced > s.ssimNoisy).length / scores.length;
  return { scores, meanNoisy, meanEnhanced, improvedFraction };
}
