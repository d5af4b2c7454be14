/**
 * TCP inference server for the denoiser wire protocol.
 *
 * Each connection is handled sequentially (one request in flight per
 * connection; multiple connections are independent). Malformed requests
 * get a nonzero-status response and the connection stays open. In
 * identity mode the server echoes payloads verbatim, which is the
 * protocol-compatibility baseline; with a model it runs tiled inference
 * and clamps outputs into [0, 1].
 */

import net from 'node:net';
import * as tf from '@tensorflow/tfjs';
import {
  ProtocolError, REQUEST_HEADER_SIZE, decodeRequestHeader, encodeResponse,
} from './protocol.js';
import { enhanceImage } from './tiling.js';

export const STATUS_BAD_REQUEST = 2;
export const STATUS_INTERNAL = 3;

export interface ServerOptions {
  host?: string;
  port?: number;
  model?: tf.LayersModel | null;
  log?: (line: string) => void;
}

export interface RunningServer {
  port: number;
  requestsServed: () => number;
  close: () => Promise<void>;
}

export function startServer(options: ServerOptions = {}): Promise<RunningServer> {
  const host = options.host ?? '127.0.0.1';
  const model = options.model ?? null;
  const log = options.log ?? ((line: string) => console.log(line));
  let served = 0;

  const server = net.createServer((socket) => {
    let pending = Buffer.alloc(0);
    let processing = false;
    socket.on('error', () => socket.destroy());

    const pump = async (): Promise<void> => {
      if (processing) return;
      processing = true;
      try {
        while (pending.length >= REQUEST_HEADER_SIZE) {
          let head;
          try {
            head = decodeRequestHeader(pending);
          } catch (err) {
            if (!(err instanceof ProtocolError)) throw err;
            log(`bad request: ${err.message}`);
            socket.write(encodeResponse(0, null, 0, 0, STATUS_BAD_REQUEST));
            pending = pending.subarray(REQUEST_HEADER_SIZE);
            continue;
          }
          const payloadBytes = head.height * head.width * 4;
          if (pending.length < REQUEST_HEADER_SIZE + payloadBytes) {
            break; // wait for the rest of the payload
          }
          const body = pending.subarray(
            REQUEST_HEADER_SIZE, REQUEST_HEADER_SIZE + payloadBytes);
          const pixels = new Float32Array(body.buffer.slice(
            body.byteOffset, body.byteOffset + body.length));
          pending = pending.subarray(REQUEST_HEADER_SIZE + payloadBytes);

          const t0 = Date.now();
          try {
            const out = model === null
              ? pixels
              : await enhanceImage(model, pixels, head.height, head.width,
                                   { clamp: true });
            socket.write(encodeResponse(
              head.requestId, out, head.height, head.width, 0));
            served += 1;
            log(`request ${head.requestId}: ` +
                `${head.height}x${head.width} in ${Date.now() - t0}ms`);
          } catch (err) {
            log(`request ${head.requestId} failed: ${(err as Error).message}`);
            socket.write(encodeResponse(
              head.requestId, null, 0, 0, STATUS_INTERNAL));
          }
        }
      } finally {
        processing = false;
      }
    };

    // Data arriving while an inference runs lands in `pending`; the loop
    // inside the running pump re-checks it after every await, and later
    // chunks call pump again once `processing` clears, so no request can
    // be stranded.
    socket.on('data', (chunk) => {
      pending = Buffer.concat([pending, chunk]);
      pump().catch((err) => {
        log(`connection failed: ${(err as Error).message}`);
        socket.destroy();
      });
    });
  });

  return new Promise((resolve, reject) => {
    server.once('error', reject);
    server.listen(options.port ?? 0, host, () => {
      const address = server.address() as net.AddressInfo;
      resolve({
        port: address.port,
        requestsServed: () => served,
        close: () => new Promise((done) => server.close(() => done())),
      });
    });
  });
}
