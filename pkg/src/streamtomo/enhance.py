"""Post-reconstruction enhancement: builtin baselines, a client for an
external denoiser service, and the pipelined stage that overlaps enhancement
with the next window's reconstruction.

Enhancement is a view on the reconstruction output: it never feeds back into
the SIRT state. The external denoiser speaks a little-endian framed protocol:

    request:  magic "DNRQ", version u16 = 1, request_id u64,
              height u32, width u32, scale_min f32, scale_max f32,
              payload h x w float32 row-major
    response: magic "DNRS", version u16 = 1, request_id u64 (echoed),
              status u8 (0 = ok), height u32, width u32,
              payload h x w float32 (empty unless status = 0)
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .distributor import parse_endpoint, read_exact
from .engine import UpdateEvent

log = logging.getLogger(__name__)

DENOISE_REQUEST_MAGIC = b"DNRQ"
DENOISE_RESPONSE_MAGIC = b"DNRS"
DENOISE_VERSION = 1
_REQ_HEADER = struct.Struct("<4sHQIIff")
_RESP_HEADER = struct.Struct("<4sHQBII")
REQUEST_HEADER_SIZE = _REQ_HEADER.size  # 30 bytes
RESPONSE_HEADER_SIZE = _RESP_HEADER.size  # 23 bytes
MAX_IMAGE_PIXELS = 1 << 26


class EnhancementError(RuntimeError):
    """External enhancement failed (connection, timeout, or bad response)."""


class DenoiseProtocolError(EnhancementError):
    """Malformed denoiser request or response record."""


@dataclass(frozen=True)
class DenoiserBinding:
    """Configuration of the enhancement stage.

    ``mode`` is one of ``identity``, ``gaussian`` (with ``sigma`` in
    pixels), or ``external`` (with ``endpoint`` as ``host:port``).  In
    ``unit_range`` input scaling the image is min-max scaled to [0, 1]
    before dispatch and the response mapped back.
    """

    mode: str = "identity"
    sigma: float = 1.5
    endpoint: str | None = None
    timeout: float = 10.0
    input_scale: str = "unit_range"

    def __post_init__(self):
        if self.mode not in ("identity", "gaussian", "external"):
            raise ValueError(f"unknown enhancement mode {self.mode!r}")
        if self.mode == "gaussian" and self.sigma <= 0.0:
            raise ValueError("gaussian mode needs sigma > 0")
        if self.mode == "external" and not self.endpoint:
            raise ValueError("external mode needs an endpoint")
        if self.input_scale not in ("unit_range", "raw"):
            raise ValueError(f"unknown input_scale {self.input_scale!r}")


def encode_denoise_request(request_id: int, image: np.ndarray,
                           scale_min: float, scale_max: float) -> bytes:
    image = np.ascontiguousarray(image, dtype="<f4")
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    header = _REQ_HEADER.pack(DENOISE_REQUEST_MAGIC, DENOISE_VERSION, request_id,
                              image.shape[0], image.shape[1],
                              scale_min, scale_max)
    return header + image.tobytes()


def decode_denoise_request(data: bytes):
    """Returns (request_id, image, scale_min, scale_max)."""
    if len(data) < REQUEST_HEADER_SIZE:
        raise DenoiseProtocolError(
            f"request record of {len(data)} bytes is shorter than the header")
    magic, version, request_id, height, width, scale_min, scale_max = \
        _REQ_HEADER.unpack(data[:REQUEST_HEADER_SIZE])
    if magic != DENOISE_REQUEST_MAGIC:
        raise DenoiseProtocolError(f"bad request magic {magic!r}")
    if version != DENOISE_VERSION:
        raise DenoiseProtocolError(f"unsupported request version {version}")
    if height == 0 or width == 0 or height * width > MAX_IMAGE_PIXELS:
        raise DenoiseProtocolError(f"unreasonable image shape {height}x{width}")
    body = data[REQUEST_HEADER_SIZE:]
    expected = height * width * 4
    if len(body) != expected:
        raise DenoiseProtocolError(
            f"request payload is {len(body)} bytes, expected {expected}")
    image = np.frombuffer(body, dtype="<f4").reshape(height, width).copy()
    return request_id, image, scale_min, scale_max


def encode_denoise_response(request_id: int, image: np.ndarray | None,
                            status: int = 0) -> bytes:
    if status == 0:
        image = np.ascontiguousarray(image, dtype="<f4")
        header = _RESP_HEADER.pack(DENOISE_RESPONSE_MAGIC, DENOISE_VERSION,
                                   request_id, 0, image.shape[0], image.shape[1])
        return header + image.tobytes()
    return _RESP_HEADER.pack(DENOISE_RESPONSE_MAGIC, DENOISE_VERSION,
                             request_id, status, 0, 0)


def decode_denoise_response(data: bytes):
    """Returns (request_id, status, image-or-None)."""
    if len(data) < RESPONSE_HEADER_SIZE:
        raise DenoiseProtocolError(
            f"response record of {len(data)} bytes is shorter than the header")
    magic, version, request_id, status, height, width = \
        _RESP_HEADER.unpack(data[:RESPONSE_HEADER_SIZE])
    if magic != DENOISE_RESPONSE_MAGIC:
        raise DenoiseProtocolError(f"bad response magic {magic!r}")
    if version != DENOISE_VERSION:
        raise DenoiseProtocolError(f"unsupported response version {version}")
    body = data[RESPONSE_HEADER_SIZE:]
    if status != 0:
        return request_id, status, None
    if height == 0 or width == 0 or height * width > MAX_IMAGE_PIXELS:
        raise DenoiseProtocolError(f"unreasonable image shape {height}x{width}")
    expected = height * width * 4
    if len(body) != expected:
        raise DenoiseProtocolError(
            f"response payload is {len(body)} bytes, expected {expected}")
    image = np.frombuffer(body, dtype="<f4").reshape(height, width).copy()
    return request_id, status, image


class DenoiseClient:
    """Blocking client for the denoiser protocol, one request in flight.

    The connection is opened lazily and re-opened after any failure, so a
    denoiser restart does not poison the pipeline.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.address = parse_endpoint(endpoint)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._request_id = 0

    def _connection(self) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection(self.address,
                                                  timeout=self.timeout)
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def request(self, image: np.ndarray, scale_min: float = 0.0,
                scale_max: float = 0.0) -> np.ndarray:
        self._request_id += 1
        request_id = self._request_id
        try:
            sock = self._connection()
            sock.sendall(encode_denoise_request(request_id, image,
                                                scale_min, scale_max))
            header = read_exact(sock, RESPONSE_HEADER_SIZE)
            if len(header) < RESPONSE_HEADER_SIZE:
                raise DenoiseProtocolError("denoiser closed mid-response")
            _, _, _, status, height, width = _RESP_HEADER.unpack(header)
            body = b""
            if status == 0:
                body = read_exact(sock, height * width * 4)
            rid, status, result = decode_denoise_response(header + body)
        except (OSError, DenoiseProtocolError) as exc:
            self.close()
            if isinstance(exc, EnhancementError):
                raise
            raise EnhancementError(
                f"denoiser at {self.address[0]}:{self.address[1]} failed: {exc}"
            ) from exc
        if status != 0:
            raise EnhancementError(f"denoiser returned status {status}")
        if rid != request_id:
            self.close()
            raise EnhancementError(
                f"response id {rid} does not match request id {request_id}")
        if result.shape != image.shape:
            raise EnhancementError(
                f"denoiser returned shape {result.shape}, expected {image.shape}")
        return result


def enhance(image: np.ndarray, binding: DenoiserBinding,
            client: DenoiseClient | None = None) -> np.ndarray:
    """Apply the configured enhancement to one slice image."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValueError("image must be finite")
    if binding.mode == "identity":
        return image.copy()
    if binding.mode == "gaussian":
        return gaussian_filter(image, sigma=binding.sigma, mode="nearest",
                               truncate=3.0)
    owns_client = client is None
    if owns_client:
        client = DenoiseClient(binding.endpoint, binding.timeout)
    try:
        if binding.input_scale == "unit_range":
            lo = float(image.min())
            hi = float(image.max())
            span = hi - lo if hi > lo else 1.0
            scaled = (image - lo) / span
            result = client.request(scaled, scale_min=lo, scale_max=hi)
            return result.astype(np.float64) * span + lo
        result = client.request(image)
        return result.astype(np.float64)
    finally:
        if owns_client:
            client.close()


@dataclass
class EnhancedSlice:
    """Pipeline output unit: the conventional image, its enhancement (or
    None when enhancement failed or is detached), and the failure message."""

    event: UpdateEvent
    image: np.ndarray
    enhanced: np.ndarray | None = None
    error: str | None = None
    enhance_elapsed: float = 0.0


class PipelineStage:
    """Queue-to-queue enhancement stage running in its own thread.

    Items are emitted in input order, so per-slice ordering is preserved; a
    failed enhancement passes the item through unenhanced with the error
    recorded.  Closing the input (a ``None`` sentinel) drains the stage and
    forwards the sentinel.
    """

    def __init__(self, binding: DenoiserBinding,
                 in_queue: "queue.Queue", out_queue: "queue.Queue"):
        self.binding = binding
        self.in_queue = in_queue
        self.out_queue = out_queue
        self._client = (DenoiseClient(binding.endpoint, binding.timeout)
                        if binding.mode == "external" else None)
        self._thread = threading.Thread(target=self._run,
                                        name="enhance-stage", daemon=True)

    def start(self) -> "PipelineStage":
        self._thread.start()
        return self

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)

    def _run(self) -> None:
        while True:
            item = self.in_queue.get()
            if item is None:
                break
            event, image = item
            started = time.perf_counter()
            try:
                enhanced = enhance(image, self.binding, client=self._client)
                error = None
            except Exception as exc:  # degrade to pass-through, never stall
                enhanced = None
                error = str(exc)
                log.warning("enhancement failed for slice %d update %d: %s",
                            event.slice_id, event.update_index, exc)
            self.out_queue.put(EnhancedSlice(
                event=event, image=image, enhanced=enhanced, error=error,
                enhance_elapsed=time.perf_counter() - started))
        if self._client is not None:
            self._client.close()
        self.out_queue.put(None)
