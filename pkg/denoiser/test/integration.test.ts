import { spawn, spawnSync } from 'node:child_process';
import fs from 'node:fs';
import net from 'node:net';
import os from 'node:os';
import path from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { Dataset, buildDataset } from '../src/dataset.js';
import { evaluatePairs } from '../src/eval.js';
import { loadCheckpoint } from '../src/model.js';
import {
  DenoiseResponse, RESPONSE_HEADER_SIZE, decodeResponse, encodeRequest,
} from '../src/protocol.js';
import { startServer } from '../src/server.js';
import { trainModel } from '../src/train.js';
import { column, makeRng, readCsv, tmpDir } from './helpers.js';

const scratch = tmpDir(os.tmpdir());
const trainRun = path.join(scratch, 'train-run');
let dataset: Dataset;
let checkpointDir: string;

afterAll(() => fs.rmSync(scratch, { recursive: true, force: true }));

function reconstruct(args: string[]): void {
  const result = spawnSync('python3', ['-m', 'streamtomo.cli', ...args], {
    encoding: 'utf8', timeout: 110_000,
  });
  if (result.status !== 0) {
    throw new Error(`reconstruction exited ${result.status}:\n` +
                    `${result.stderr}\n${result.stdout}`);
  }
}

/**
 * Like `reconstruct`, but non-blocking: the reconstruction talks to an
 * in-process denoiser server, so the event loop must stay free to serve
 * requests while the child runs.
 */
function reconstructLive(args: string[]): Promise<void> {
  return new Promise((resolve, reject) => {
    const child = spawn('python3', ['-m', 'streamtomo.cli', ...args],
                        { stdio: ['ignore', 'pipe', 'pipe'] });
    let stdout = '';
    let stderr = '';
    child.stdout.on('data', (chunk) => { stdout += String(chunk); });
    child.stderr.on('data', (chunk) => { stderr += String(chunk); });
    const timer = setTimeout(() => {
      child.kill('SIGKILL');
      reject(new Error('reconstruction timed out'));
    }, 110_000);
    child.once('exit', (code) => {
      clearTimeout(timer);
      if (code === 0) resolve();
      else reject(new Error(
        `reconstruction exited ${code}:\n${stderr}\n${stdout}`));
    });
  });
}

function liveRunArgs(out: string, endpoint: string): string[] {
  return [
    'run', '--phantom', 'spheres', '--size', '32', '--detector-rows', '2',
    '--rotations', '10', '--per-rotation', '16', '--window', '32',
    '--iterations', '1', '--noise-i0', '1e4', '--seed', '13',
    '--snapshot-every', '0', '--ground-truth-iters', '60',
    '--denoiser', 'external', '--denoiser-endpoint', endpoint,
    '--out', out,
  ];
}

// 8 slices x (10 rotations x 16 views) with W=32 gives 5 updates per slice
beforeAll(() => {
  reconstruct([
    'run', '--phantom', 'spheres', '--size', '32', '--detector-rows', '8',
    '--rotations', '10', '--per-rotation', '16', '--window', '32',
    '--iterations', '1', '--noise-i0', '1e4', '--seed', '11',
    '--snapshot-every', '1', '--ground-truth-iters', '60',
    '--out', trainRun,
  ]);
});

describe('against the reconstruction pipeline', () => {
  it('loads run artifacts as scaled training pairs', () => {
    dataset = buildDataset([trainRun], { updates: [3, 4, 5], holdout: 0.25 });
    expect(dataset.trainSlices.length).toBe(6);
    expect(dataset.testSlices.length).toBe(2);
    expect(dataset.train.length).toBe(18);
    expect(dataset.test.length).toBe(6);
    for (const pair of [...dataset.train, ...dataset.test]) {
      expect(pair.n).toBe(32);
      let lo = Infinity;
      let hi = -Infinity;
      for (const v of pair.noisy) {
        lo = Math.min(lo, v);
        hi = Math.max(hi, v);
      }
      expect(lo).toBe(0);
      expect(hi).toBe(1);
    }
  });

  it('training on run artifacts reduces held-out error', async () => {
    const result = await trainModel(
      dataset.train, dataset.test, path.join(scratch, 'fit'), {
        epochs: 12, batchSize: 4, learningRate: 2e-3, seed: 0, baseWidth: 4,
      });
    expect(result.tile).toBe(32);
    expect(result.finalTestMse).toBeLessThan(result.initialTestMse);
    checkpointDir = result.checkpointDir;
  }, 300_000);

  it('the learned model improves SSIM on held-out slices', async () => {
    const { model } = await loadCheckpoint(checkpointDir);
    const evaluation = await evaluatePairs(model, dataset);
    model.dispose();
    console.log(`held-out ssim: noisy ${evaluation.meanNoisy.toFixed(4)} -> ` +
                `enhanced ${evaluation.meanEnhanced.toFixed(4)} ` +
                `(improved ${(evaluation.improvedFraction * 100).toFixed(0)}%)`);
    expect(evaluation.meanEnhanced).toBeGreaterThan(evaluation.meanNoisy);
    // every held-out pair improves at these seeds; 0.8 is the contract floor
    expect(evaluation.improvedFraction).toBeGreaterThanOrEqual(0.8);
  }, 300_000);

  it('a served checkpoint enhances a live reconstruction', async () => {
    const { model } = await loadCheckpoint(checkpointDir);
    const server = await startServer({ model, log: () => undefined });
    const out = path.join(scratch, 'live-model');
    try {
      await reconstructLive(liveRunArgs(out, `127.0.0.1:${server.port}`));
    } finally {
      await server.close();
      model.dispose();
    }
    const table = readCsv(path.join(out, 'metrics.csv'));
    const enh = column(table, 'ssim_enh');
    expect(enh.length).toBe(10); // 2 slices x 5 updates
    for (const value of enh) {
      expect(Number.isFinite(parseFloat(value))).toBe(true);
    }
    const summary = JSON.parse(
      fs.readFileSync(path.join(out, 'summary.json'), 'utf8'));
    expect(Object.keys(summary.final_ssim_enh)).toEqual(['0', '1']);
    expect(server.requestsServed()).toBe(10);

    // data-reduction crossover: enhancement should reach the full-data
    // conventional quality before all projections have arrived
    const slices = column(table, 'slice_id').map(Number);
    const updates = column(table, 'update_index').map(Number);
    const conv = column(table, 'ssim_conv').map(parseFloat);
    const enhanced = enh.map(parseFloat);
    for (const slice of [0, 1]) {
      const at = (update: number, series: number[]) => series[
        table.rows.findIndex(
          (_, i) => slices[i] === slice && updates[i] === update)];
      const fullConv = at(5, conv);
      let crossover = Infinity;
      for (let update = 1; update <= 5; update++) {
        if (at(update, enhanced) >= fullConv) {
          crossover = update;
          break;
        }
      }
      console.log(`slice ${slice}: enhanced matches full-data conventional ` +
                  `(${fullConv.toFixed(4)}) from update ${crossover}/5 ` +
                  `(${crossover * 20}% of the data)`);
      expect(crossover).toBeLessThan(5);
    }
  }, 300_000);

  it('an identity server reproduces the conventional scores', async () => {
    const server = await startServer({ model: null, log: () => undefined });
    const out = path.join(scratch, 'live-identity');
    try {
      await reconstructLive(liveRunArgs(out, `127.0.0.1:${server.port}`));
    } finally {
      await server.close();
    }
    const table = readCsv(path.join(out, 'metrics.csv'));
    const conv = column(table, 'ssim_conv').map(parseFloat);
    const enh = column(table, 'ssim_enh').map(parseFloat);
    expect(conv.length).toBe(10);
    for (let i = 0; i < conv.length; i++) {
      expect(Math.abs(conv[i] - enh[i])).toBeLessThanOrEqual(1e-4);
    }
  }, 300_000);

  it('adds at most 10% to the steady refresh period when attached', async () => {
    // more iterations per window so fixed per-request costs are small
    // against the refresh period, which is the regime the bound is about
    const args = (out: string, extra: string[]) => [
      'run', '--phantom', 'spheres', '--size', '32', '--detector-rows', '2',
      '--rotations', '10', '--per-rotation', '16', '--window', '32',
      '--iterations', '10', '--noise-i0', '1e4', '--seed', '13',
      '--snapshot-every', '0', '--ground-truth-iters', '60',
      ...extra, '--out', out,
    ];
    const steadyRefresh = (out: string): number => {
      const table = readCsv(path.join(out, 'metrics.csv'));
      const updates = column(table, 'update_index').map(Number);
      const refresh = column(table, 'refresh_s').map(parseFloat);
      const steady = refresh.filter((_, i) => updates[i] >= 2);
      expect(steady.length).toBe(8);
      return steady.reduce((acc, v) => acc + v, 0) / steady.length;
    };

    const detachedOut = path.join(scratch, 'overhead-detached');
    reconstruct(args(detachedOut, []));

    const server = await startServer({ model: null, log: () => undefined });
    const attachedOut = path.join(scratch, 'overhead-attached');
    try {
      await reconstructLive(args(attachedOut, [
        '--denoiser', 'external',
        '--denoiser-endpoint', `127.0.0.1:${server.port}`,
      ]));
    } finally {
      await server.close();
    }
    expect(server.requestsServed()).toBe(10);

    const detached = steadyRefresh(detachedOut);
    const attached = steadyRefresh(attachedOut);
    console.log(`steady refresh: detached ${(detached * 1000).toFixed(1)}ms, ` +
                `attached ${(attached * 1000).toFixed(1)}ms ` +
                `(x${(attached / detached).toFixed(3)})`);
    expect(attached / detached).toBeLessThanOrEqual(1.10);
  }, 300_000);
});

describe('command line', () => {
  it('trains and evaluates from run directories', () => {
    const out = path.join(scratch, 'cli-fit');
    const trained = spawnSync('node', [
      'dist/cli.js', 'train', '--data', trainRun, '--updates', '3,4,5',
      '--holdout', '0.25', '--epochs', '1', '--base-width', '4',
      '--seed', '1', '--out', out,
    ], { encoding: 'utf8', timeout: 240_000 });
    expect(trained.status).toBe(0);
    expect(trained.stdout).toMatch(/pairs: 18 train \/ 6 test/);
    expect(trained.stdout).toMatch(/checkpoint: /);

    const evaluated = spawnSync('node', [
      'dist/cli.js', 'eval', '--data', trainRun, '--updates', '3,4,5',
      '--holdout', '0.25', '--checkpoint', path.join(out, 'checkpoint'),
    ], { encoding: 'utf8', timeout: 240_000 });
    expect(evaluated.status).toBe(0);
    expect(evaluated.stdout).toMatch(/mean: noisy 0\.\d+, enhanced 0\.\d+/);
  }, 300_000);

  it('serves identity mode from the command line', async () => {
    const child = spawn('node',
      ['dist/cli.js', 'serve', '--identity', '--listen', '127.0.0.1:0'],
      { stdio: ['ignore', 'pipe', 'pipe'] });
    try {
      const port = await new Promise<number>((resolve, reject) => {
        const timer = setTimeout(
          () => reject(new Error('server did not announce its port')), 20_000);
        let seen = '';
        child.stdout.on('data', (chunk) => {
          seen += String(chunk);
          const match = /listening on 127\.0\.0\.1:(\d+)/.exec(seen);
          if (match) {
            clearTimeout(timer);
            resolve(parseInt(match[1], 10));
          }
        });
        child.once('exit', (code) => {
          clearTimeout(timer);
          reject(new Error(`server exited early with code ${code}`));
        });
      });

      const socket = await new Promise<net.Socket>((resolve, reject) => {
        const s = net.connect({ host: '127.0.0.1', port }, () => resolve(s));
        s.once('error', reject);
      });
      const chunks: Buffer[] = [];
      const done = new Promise<DenoiseResponse>((resolve) => {
        socket.on('data', (chunk) => {
          chunks.push(chunk);
          const all = Buffer.concat(chunks);
          if (all.length >= RESPONSE_HEADER_SIZE + 16 * 16 * 4) {
            resolve(decodeResponse(all));
          }
        });
      });
      const rng = makeRng(17);
      const pixels = Float32Array.from({ length: 16 * 16 }, () => rng());
      socket.write(encodeRequest(42n, pixels, 16, 16, 0, 1));
      const response = await done;
      socket.destroy();
      expect(response.requestId).toBe(42n);
      expect(response.status).toBe(0);
      expect(Array.from(response.pixels!)).toEqual(Array.from(pixels));
    } finally {
      child.kill('SIGTERM');
      await new Promise((resolve) => child.once('exit', resolve));
    }
  });
});
