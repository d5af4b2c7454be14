/**
 * Command-line entry points.
 *
 *   train  --data <run-dir>[,<run-dir>...] [--updates 5] [--holdout 0.25]
 *          [--epochs 30] [--batch 4] [--lr 1e-3] [--seed 0]
 *          [--base-width 24] --out <dir>
 *   serve  --listen host:port (--checkpoint <dir> | --identity)
 *   eval   --data <run-dir>[,...] --checkpoint <dir> [--updates 5]
 *          [--holdout 0.25]
 */

import { parseArgs } from 'node:util';
import { buildDataset } from './dataset.js';
import { evaluatePairs } from './eval.js';
import { loadCheckpoint } from './model.js';
import { startServer } from './server.js';
import { trainModel } from './train.js';

function splitList(raw: string): string[] {
  return raw.split(',').map((part) => part.trim()).filter(Boolean);
}

function intList(raw: string): number[] {
  return splitList(raw).map((part) => {
    const value = parseInt(part, 10);
    if (!Number.isInteger(value)) throw new Error(`not an integer: ${part}`);
    return value;
  });
}

function parseEndpoint(raw: string): { host: string; port: number } {
  const colon = raw.lastIndexOf(':');
  const host = raw.slice(0, colon);
  const port = parseInt(raw.slice(colon + 1), 10);
  if (colon < 1 || !Number.isInteger(port)) {
    throw new Error(`endpoint must be host:port, got ${JSON.stringify(raw)}`);
  }
  return { host, port };
}

async function cmdTrain(argv: string[]): Promise<void> {
  const { values } = parseArgs({
    args: argv,
    options: {
      data: { type: 'string' },
      updates: { type: 'string', default: '5' },
      holdout: { type: 'string', default: '0.25' },
      epochs: { type: 'string', default: '30' },
      batch: { type: 'string', default: '4' },
      lr: { type: 'string', default: '1e-3' },
      seed: { type: 'string', default: '0' },
      'base-width': { type: 'string', default: '24' },
      out: { type: 'string' },
    },
  });
  if (!values.data || !values.out) {
    throw new Error('train requires --data and --out');
  }
  const dataset = buildDataset(splitList(values.data), {
    updates: intList(values.updates!),
    holdout: parseFloat(values.holdout!),
  });
  console.log(`pairs: ${dataset.train.length} train / ` +
              `${dataset.test.length} test ` +
              `(${dataset.trainSlices.length}/${dataset.testSlices.length} ` +
              'slices)');
  const result = await trainModel(dataset.train, dataset.test, values.out, {
    epochs: parseInt(values.epochs!, 10),
    batchSize: parseInt(values.batch!, 10),
    learningRate: parseFloat(values.lr!),
    seed: parseInt(values.seed!, 10),
    baseWidth: parseInt(values['base-width']!, 10),
  });
  console.log(`done: ${result.parameters} parameters, test mse ` +
              `${result.initialTestMse.toExponential(3)} -> ` +
              `${result.finalTestMse.toExponential(3)}`);
  console.log(`checkpoint: ${result.checkpointDir}`);
}

async function cmdServe(argv: string[]): Promise<void> {
  const { values } = parseArgs({
    args: argv,
    options: {
      listen: { type: 'string', default: '127.0.0.1:9100' },
      checkpoint: { type: 'string' },
      identity: { type: 'boolean', default: false },
    },
  });
  if (!values.identity && !values.checkpoint) {
    throw new Error('serve requires --checkpoint or --identity');
  }
  const model = values.identity
    ? null
    : (await loadCheckpoint(values.checkpoint!)).model;
  const { host, port } = parseEndpoint(values.listen!);
  const running = await startServer({ host, port, model });
  console.log(`denoiser ${values.identity ? '(identity mode) ' : ''}` +
              `listening on ${host}:${running.port}`);
  await new Promise(() => undefined); // run until killed
}

async function cmdEval(argv: string[]): Promise<void> {
  const { values } = parseArgs({
    args: argv,
    options: {
      data: { type: 'string' },
      checkpoint: { type: 'string' },
      updates: { type: 'string', default: '5' },
      holdout: { type: 'string', default: '0.25' },
    },
  });
  if (!values.data || !values.checkpoint) {
    throw new Error('eval requires --data and --checkpoint');
  }
  const dataset = buildDataset(splitList(values.data), {
    updates: intList(values.updates!),
    holdout: parseFloat(values.holdout!),
  });
  const { model } = await loadCheckpoint(values.checkpoint!);
  const result = await evaluatePairs(model, dataset);
  console.log('slice update  ssim_noisy  ssim_enhanced');
  for (const s of result.scores) {
    console.log(`${String(s.sliceId).padStart(5)} ` +
                `${String(s.updateIndex).padStart(6)}  ` +
                `${s.ssimNoisy.toFixed(4).padStart(10)}  ` +
                `${s.ssimEnhanced.toFixed(4).padStart(13)}`);
  }
  console.log(`mean: noisy ${result.meanNoisy.toFixed(4)}, enhanced ` +
              `${result.meanEnhanced.toFixed(4)}; improved on ` +
              `${(result.improvedFraction * 100).toFixed(0)}% of pairs`);
}

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === 'train') await cmdTrain(rest);
    else if (command === 'serve') await cmdServe(rest);
    else if (command === 'eval') await cmdEval(rest);
    else {
      console.error('usage: cli.js <train|serve|eval> [options]');
      process.exitCode = 2;
    }
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    process.exitCode = 2;
  }
}

void main();
