/**
 * Structural similarity with the conventional 11x11 Gaussian window
 * (sigma 1.5, k1=0.01, k2=0.03), averaged over fully valid window
 * positions. Matches the reconstruction pipeline's scoring so offline
 * evaluations are comparable with its metrics CSV.
 */

const KERNEL_SIZE = 11;
const SIGMA = 1.5;
const K1 = 0.01;
const K2 = 0.03;

function gaussianKernel1d(): Float64Array {
  const half = (KERNEL_SIZE - 1) / 2;
  const g = new Float64Array(KERNEL_SIZE);
  let sum = 0;
  for (let i = 0; i < KERNEL_SIZE; i++) {
    g[i] = Math.exp(-((i - half) ** 2) / (2 * SIGMA * SIGMA));
    sum += g[i];
  }
  for (let i = 0; i < KERNEL_SIZE; i++) g[i] /= sum;
  return g;
}

/** Separable valid-mode convolution with the normalized Gaussian. */
function blurValid(
    src: Float64Array, height: number, width: number): Float64Array {
  const g = gaussianKernel1d();
  const outW = width - KERNEL_SIZE + 1;
  const outH = height - KERNEL_SIZE + 1;
  const rows = new Float64Array(height * outW);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < outW; x++) {
      let acc = 0;
      for (let k = 0; k < KERNEL_SIZE; k++) {
        acc += g[k] * src[y * width + x + k];
      }
      rows[y * outW + x] = acc;
    }
  }
  const out = new Float64Array(outH * outW);
  for (let y = 0; y < outH; y++) {
    for (let x = 0; x < outW; x++) {
      let acc = 0;
      for (let k = 0; k < KERNEL_SIZE; k++) {
        acc += g[k] * rows[(y + k) * outW + x];
      }
      out[y * outW + x] = acc;
    }
  }
  return out;
}

/**
 * Mean SSIM of `a` against the reference `b` (both `height x width`,
 * row-major). `dataRange` defaults to the reference's min-max span.
 */
export function ssim(
    a: ArrayLike<number>, b: ArrayLike<number>,
    height: number, width: number, dataRange?: number): number {
  if (a.length !== height * width || b.length !== height * width) {
    throw new Error(`images must both be ${height}x${width}`);
  }
  if (Math.min(height, width) < KERNEL_SIZE) {
    throw new Error(`images must have sides >= ${KERNEL_SIZE}`);
  }
  const n = height * width;
  const fa = new Float64Array(n);
  const fb = new Float64Array(n);
  const faa = new Float64Array(n);
  const fbb = new Float64Array(n);
  const fab = new Float64Array(n);
  let bMin = Infinity;
  let bMax = -Infinity;
  for (let i = 0; i < n; i++) {
    const x = a[i];
    const y = b[i];
    fa[i] = x;
    fb[i] = y;
    faa[i] = x * x;
    fbb[i] = y * y;
    fab[i] = x * y;
    if (y < bMin) bMin = y;
    if (y > bMax) bMax = y;
  }
  const range = dataRange ?? bMax - bMin;
  if (!(range > 0)) {
    throw new Error(`data range must be positive, got ${range}`);
  }
  const c1 = (K1 * range) ** 2;
  const c2 = (K2 * range) ** 2;

  const muA = blurValid(fa, height, width);
  const muB = blurValid(fb, height, width);
  const eAA = blurValid(faa, height, width);
  const eBB = blurValid(fbb, height, width);
  const eAB = blurValid(fab, height, width);

  let total = 0;
  for (let i = 0; i < muA.length; i++) {
    const varA = eAA[i] - muA[i] * muA[i];
    const varB = eBB[i] - muB[i] * muB[i];
    const cov = eAB[i] - muA[i] * muB[i];
    total += ((2 * muA[i] * muB[i] + c1) * (2 * cov + c2))
      / ((muA[i] * muA[i] + muB[i] * muB[i] + c1) * (varA + varB + c2));
  }
  return total / muA.length;
}
