"""Frame ingest, row partitioning across workers, and the frame wire format.

The wire format is little-endian and self-delimiting:

    magic "STRF" (4s), version u16 = 1, header_len u16,
    seq u64, rotation_index u32, angle f64,
    row_start u32, row_count u32, columns u32,
    timestamp_ns u64, payload_len u64,
    payload = row_count x columns float32, row-major.

The distributor never touches payload numerics: routing slices rows and the
codec round-trips bit-exactly.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import ProjectionFrame

FRAME_MAGIC = b"STRF"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sHHQIdIIIQQ")
FRAME_HEADER_SIZE = _HEADER.size  # 56 bytes
MAX_PAYLOAD_BYTES = 1 << 30


class FrameProtocolError(Exception):
    """Malformed frame header or inconsistent record."""


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split ``host:port`` into a connectable address tuple."""
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class FrameTruncatedError(FrameProtocolError):
    """Record ended before the announced payload length."""


@dataclass(frozen=True)
class RowPartition:
    worker_id: int
    row_start: int
    row_count: int

    @property
    def row_end(self) -> int:
        return self.row_start + self.row_count

    def slice_ids(self) -> range:
        return range(self.row_start, self.row_end)


def partition_rows(detector_rows: int, workers: int) -> list[RowPartition]:
    """Split detector rows into contiguous, near-equal blocks, one per worker.

    Sizes differ by at most one; the first ``detector_rows % workers``
    workers take the extra row.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if detector_rows < workers:
        raise ValueError(
            f"cannot split {detector_rows} rows across {workers} workers")
    base, extra = divmod(detector_rows, workers)
    partitions = []
    start = 0
    for w in range(workers):
        count = base + (1 if w < extra else 0)
        partitions.append(RowPartition(worker_id=w, row_start=start, row_count=count))
        start += count
    return partitions


def route_frame(frame: ProjectionFrame,
                partitions: list[RowPartition]) -> list[tuple[int, ProjectionFrame]]:
    """Split a full-detector frame into one sub-frame per partition.

    Metadata (seq, angle, rotation) is preserved and concatenating the
    sub-frame payloads in worker order reproduces the input bit-exactly.
    """
    total = sum(p.row_count for p in partitions)
    if frame.row_start != 0 or frame.row_count != total:
        raise FrameProtocolError(
            f"frame rows [{frame.row_start}, {frame.row_start + frame.row_count}) "
            f"do not cover the full detector [0, {total})")
    out = []
    for p in partitions:
        sub = ProjectionFrame(
            seq=frame.seq, rotation_index=frame.rotation_index, angle=frame.angle,
            row_start=p.row_start, row_count=p.row_count, columns=frame.columns,
            payload=frame.payload[p.row_start:p.row_end].copy(),
            timestamp_ns=frame.timestamp_ns)
        out.append((p.worker_id, sub))
    return out


def encode_frame(frame: ProjectionFrame) -> bytes:
    """Serialize a frame to one length-delimited wire record."""
    payload = np.ascontiguousarray(frame.payload, dtype="<f4").tobytes()
    header = _HEADER.pack(
        FRAME_MAGIC, FRAME_VERSION, FRAME_HEADER_SIZE,
        frame.seq, frame.rotation_index, frame.angle,
        frame.row_start, frame.row_count, frame.columns,
        frame.timestamp_ns, len(payload))
    return header + payload


def decode_frame(data: bytes, stream_offset: int = 0) -> ProjectionFrame:
    """Parse one wire record; raises typed errors on any malformation."""
    if len(data) < FRAME_HEADER_SIZE:
        raise FrameTruncatedError(
            f"record of {len(data)} bytes is shorter than the "
            f"{FRAME_HEADER_SIZE}-byte header (stream offset {stream_offset})")
    (magic, version, header_len, seq, rotation_index, angle,
     row_start, row_count, columns, timestamp_ns, payload_len) = \
        _HEADER.unpack(data[:FRAME_HEADER_SIZE])
    if magic != FRAME_MAGIC:
        raise FrameProtocolError(
            f"bad magic {magic!r} at stream offset {stream_offset}")
    if version != FRAME_VERSION:
        raise FrameProtocolError(
            f"unsupported version {version} at stream offset {stream_offset}")
    if header_len != FRAME_HEADER_SIZE:
        raise FrameProtocolError(
            f"bad header length {header_len} at stream offset {stream_offset}")
    expected = row_count * columns * 4
    if payload_len != expected or payload_len > MAX_PAYLOAD_BYTES:
        raise FrameProtocolError(
            f"payload length {payload_len} does not match "
            f"{row_count}x{columns} float32 (stream offset {stream_offset})")
    body = data[FRAME_HEADER_SIZE:]
    if len(body) < payload_len:
        raise FrameTruncatedError(
            f"payload truncated: {len(body)} of {payload_len} bytes "
            f"(stream offset {stream_offset})")
    if len(body) > payload_len:
        raise FrameProtocolError(
            f"{len(body) - payload_len} trailing bytes after payload "
            f"(stream offset {stream_offset})")
    payload = np.frombuffer(body, dtype="<f4").reshape(row_count, columns).copy()
    try:
        return ProjectionFrame(
            seq=seq, rotation_index=rotation_index, angle=angle,
            row_start=row_start, row_count=row_count, columns=columns,
            payload=payload, timestamp_ns=timestamp_ns)
    except ValueError as exc:
        raise FrameProtocolError(
            f"inconsistent frame fields (stream offset {stream_offset}): {exc}") from exc


def read_exact(sock: socket.socket, count: int) -> bytes:
    """Read exactly ``count`` bytes; returns fewer only at end of stream."""
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class FrameStreamWriter:
    """Writes length-delimited frame records to a stream socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, frame: ProjectionFrame) -> None:
        self._sock.sendall(encode_frame(frame))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._sock.close()


class FrameStreamReader:
    """Reads frame records from a stream socket, tracking byte offsets so
    protocol errors can name the position in the stream."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._offset = 0

    @property
    def offset(self) -> int:
        return self._offset

    def recv_frame(self) -> ProjectionFrame | None:
        """Next frame, or None at a clean end of stream."""
        header = read_exact(self._sock, FRAME_HEADER_SIZE)
        if not header:
            return None
        if len(header) < FRAME_HEADER_SIZE:
            raise FrameTruncatedError(
                f"stream ended inside a header at offset {self._offset}")
        payload_len = _HEADER.unpack(header)[-1]
        if payload_len > MAX_PAYLOAD_BYTES:
            raise FrameProtocolError(
                f"payload length {payload_len} exceeds limit "
                f"(stream offset {self._offset})")
        body = read_exact(self._sock, payload_len)
        if len(body) < payload_len:
            raise FrameTruncatedError(
                f"stream ended inside a payload at offset "
                f"{self._offset + FRAME_HEADER_SIZE}")
        frame = decode_frame(header + body, stream_offset=self._offset)
        self._offset += FRAME_HEADER_SIZE + payload_len
        return frame

    def close(self) -> None:
        self._sock.close()


class FrameRouter:
    """Single-writer fan-out from the ingest stream to per-worker queues.

    Queues are bounded; when a worker falls behind, ``dispatch`` blocks
    rather than dropping frames.
    """

    def __init__(self, partitions: list[RowPartition], queue_size: int = 64):
        self.partitions = partitions
        self.queues = [queue.Queue(maxsize=queue_size) for _ in partitions]

    def dispatch(self, frame: ProjectionFrame) -> None:
        for worker_id, sub in route_frame(frame, self.partitions):
            self.queues[worker_id].put(sub)

    # stream_emit sink interface
    def send(self, frame: ProjectionFrame) -> None:
        self.dispatch(frame)

    def close(self) -> None:
        for q in self.queues:
            q.put(None)
