/**
 * Denoiser wire protocol (little-endian, framed over TCP):
 *
 *   request:  magic "DNRQ", version u16 = 1, request_id u64,
 *             height u32, width u32, scale_min f32, scale_max f32,
 *             payload height x width float32 row-major
 *   response: magic "DNRS", version u16 = 1, request_id u64 (echoed),
 *             status u8 (0 = ok), height u32, width u32,
 *             payload height x width float32 (empty unless status = 0)
 */

export const REQUEST_MAGIC = 'DNRQ';
export const RESPONSE_MAGIC = 'DNRS';
export const PROTOCOL_VERSION = 1;
export const REQUEST_HEADER_SIZE = 30;
export const RESPONSE_HEADER_SIZE = 23;
export const MAX_IMAGE_PIXELS = 1 << 26;

export class ProtocolError extends Error {}

export interface DenoiseRequest {
  requestId: bigint;
  height: number;
  width: number;
  scaleMin: number;
  scaleMax: number;
  pixels: Float32Array;
}

export interface DenoiseResponse {
  requestId: bigint;
  status: number;
  height: number;
  width: number;
  pixels: Float32Array | null;
}

export function encodeRequest(
    requestId: bigint | number, pixels: Float32Array,
    height: number, width: number,
    scaleMin: number, scaleMax: number): Buffer {
  if (pixels.length !== height * width) {
    throw new ProtocolError(
      `pixel count ${pixels.length} != ${height}x${width}`);
  }
  const buf = Buffer.alloc(REQUEST_HEADER_SIZE + pixels.length * 4);
  buf.write(REQUEST_MAGIC, 0, 'ascii');
  buf.writeUInt16LE(PROTOCOL_VERSION, 4);
  buf.writeBigUInt64LE(BigInt(requestId), 6);
  buf.writeUInt32LE(height, 14);
  buf.writeUInt32LE(width, 18);
  buf.writeFloatLE(scaleMin, 22);
  buf.writeFloatLE(scaleMax, 26);
  Buffer.from(pixels.buffer, pixels.byteOffset, pixels.byteLength)
    .copy(buf, REQUEST_HEADER_SIZE);
  return buf;
}

/** Parse and validate a request header; the payload follows separately. */
export function decodeRequestHeader(buf: Buffer): Omit<DenoiseRequest, 'pixels'> {
  if (buf.length < REQUEST_HEADER_SIZE) {
    throw new ProtocolError(
      `request header is ${buf.length} bytes, need ${REQUEST_HEADER_SIZE}`);
  }
  const magic = buf.toString('ascii', 0, 4);
  if (magic !== REQUEST_MAGIC) {
    throw new ProtocolError(`bad request magic ${JSON.stringify(magic)}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported request version ${version}`);
  }
  const requestId = buf.readBigUInt64LE(6);
  const height = buf.readUInt32LE(14);
  const width = buf.readUInt32LE(18);
  if (height === 0 || width === 0 || height * width > MAX_IMAGE_PIXELS) {
    throw new ProtocolError(`unreasonable image shape ${height}x${width}`);
  }
  return {
    requestId, height, width,
    scaleMin: buf.readFloatLE(22),
    scaleMax: buf.readFloatLE(26),
  };
}

export function decodeRequest(buf: Buffer): DenoiseRequest {
  const head = decodeRequestHeader(buf);
  const expected = head.height * head.width * 4;
  const body = buf.subarray(REQUEST_HEADER_SIZE);
  if (body.length !== expected) {
    throw new ProtocolError(
      `request payload is ${body.length} bytes, expected ${expected}`);
  }
  return { ...head, pixels: toFloat32(body) };
}

export function encodeResponse(
    requestId: bigint | number, pixels: Float32Array | null,
    height: number, width: number, status = 0): Buffer {
  const payload = status === 0 && pixels !== null
    ? Buffer.from(pixels.buffer, pixels.byteOffset, pixels.byteLength)
    : Buffer.alloc(0);
  const buf = Buffer.alloc(RESPONSE_HEADER_SIZE + payload.length);
  buf.write(RESPONSE_MAGIC, 0, 'ascii');
  buf.writeUInt16LE(PROTOCOL_VERSION, 4);
  buf.writeBigUInt64LE(BigInt(requestId), 6);
  buf.writeUInt8(status, 14);
  buf.writeUInt32LE(status === 0 ? height : 0, 15);
  buf.writeUInt32LE(status === 0 ? width : 0, 19);
  payload.copy(buf, RESPONSE_HEADER_SIZE);
  return buf;
}

export function decodeResponse(buf: Buffer): DenoiseResponse {
  if (buf.length < RESPONSE_HEADER_SIZE) {
    throw new ProtocolError(
      `response header is ${buf.length} bytes, need ${RESPONSE_HEADER_SIZE}`);
  }
  const magic = buf.toString('ascii', 0, 4);
  if (magic !== RESPONSE_MAGIC) {
    throw new ProtocolError(`bad response magic ${JSON.stringify(magic)}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported response version ${version}`);
  }
  const requestId = buf.readBigUInt64LE(6);
  const status = buf.readUInt8(14);
  const height = buf.readUInt32LE(15);
  const width = buf.readUInt32LE(19);
  const body = buf.subarray(RESPONSE_HEADER_SIZE);
  if (status !== 0) {
    return { requestId, status, height, width, pixels: null };
  }
  if (height === 0 || width === 0 || height * width > MAX_IMAGE_PIXELS) {
    throw new ProtocolError(`unreasonable image shape ${height}x${width}`);
  }
  const expected = height * width * 4;
  if (body.length !== expected) {
    throw new ProtocolError(
      `response payload is ${body.length} bytes, expected ${expected}`);
  }
  return { requestId, status, height, width, pixels: toFloat32(body) };
}

function toFloat32(bytes: Buffer): Float32Array {
  return new Float32Array(
    bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.length));
}
