import { describe, expect, it } from 'vitest';
import {
  ProtocolError, REQUEST_HEADER_SIZE, RESPONSE_HEADER_SIZE,
  decodeRequest, decodeResponse, encodeRequest, encodeResponse,
} from '../src/protocol.js';
import { makeRng } from './helpers.js';

function samplePixels(count: number, seed: number): Float32Array {
  const rng = makeRng(seed);
  return Float32Array.from({ length: count }, () => rng() * 4 - 1);
}

describe('request records', () => {
  it('round-trips exactly', () => {
    const pixels = samplePixels(6 * 8, 1);
    const wire = encodeRequest(123456789n, pixels, 6, 8, -0.5, 2.25);
    expect(wire.length).toBe(REQUEST_HEADER_SIZE + 6 * 8 * 4);

    const back = decodeRequest(wire);
    expect(back.requestId).toBe(123456789n);
    expect(back.height).toBe(6);
    expect(back.width).toBe(8);
    expect(back.scaleMin).toBeCloseTo(-0.5, 6);
    expect(back.scaleMax).toBeCloseTo(2.25, 6);
    expect(Buffer.from(back.pixels.buffer).equals(
      Buffer.from(pixels.buffer))).toBe(true);
  });

  it('rejects bad magic, version, shape, and payload length', () => {
    const wire = encodeRequest(1n, samplePixels(4, 2), 2, 2, 0, 1);
    const badMagic = Buffer.from(wire);
    badMagic.write('XXRQ', 0, 'ascii');
    expect(() => decodeRequest(badMagic)).toThrow(ProtocolError);

    const badVersion = Buffer.from(wire);
    badVersion.writeUInt16LE(9, 4);
    expect(() => decodeRequest(badVersion)).toThrow(/version/);

    const zeroDim = Buffer.from(wire);
    zeroDim.writeUInt32LE(0, 14);
    expect(() => decodeRequest(zeroDim)).toThrow(/shape/);

    expect(() => decodeRequest(wire.subarray(0, wire.length - 4)))
      .toThrow(/payload/);
    expect(() => decodeRequest(wire.subarray(0, 10))).toThrow(/header/);
  });
});

describe('response records', () => {
  it('round-trips success payloads exactly', () => {
    const pixels = samplePixels(5 * 5, 3);
    const wire = encodeResponse(42n, pixels, 5, 5, 0);
    const back = decodeResponse(wire);
    expect(back.requestId).toBe(42n);
    expect(back.status).toBe(0);
    expect(back.height).toBe(5);
    expect(Buffer.from(back.pixels!.buffer).equals(
      Buffer.from(pixels.buffer))).toBe(true);
  });

  it('encodes error statuses without payload', () => {
    const wire = encodeResponse(7n, null, 0, 0, 3);
    expect(wire.length).toBe(RESPONSE_HEADER_SIZE);
    const back = decodeResponse(wire);
    expect(back.status).toBe(3);
    expect(back.pixels).toBeNull();
  });

  it('rejects malformed response records', () => {
    const wire = encodeResponse(1n, samplePixels(4, 4), 2, 2, 0);
    const badMagic = Buffer.from(wire);
    badMagic.write('DNRX', 0, 'ascii');
    expect(() => decodeResponse(badMagic)).toThrow(ProtocolError);
    expect(() => decodeResponse(wire.subarray(0, wire.length - 1)))
      .toThrow(/payload/);
  });
});

describe('single-byte fuzz', () => {
  it('always decodes or raises the typed error', () => {
    const rng = makeRng(99);
    const request = encodeRequest(5n, samplePixels(9, 5), 3, 3, 0, 1);
    const response = encodeResponse(5n, samplePixels(9, 6), 3, 3, 0);
    let typed = 0;
    for (let trial = 0; trial < 300; trial++) {
      const source = trial % 2 === 0 ? request : response;
      const blob = Buffer.from(source);
      const pos = Math.floor(rng() * blob.length);
      blob[pos] ^= 1 + Math.floor(rng() * 255);
      try {
        if (trial % 2 === 0) decodeRequest(blob);
        else decodeResponse(blob);
      } catch (err) {
        expect(err).toBeInstanceOf(ProtocolError);
        typed += 1;
      }
    }
    expect(typed).toBeGreaterThan(0);
  });
});
