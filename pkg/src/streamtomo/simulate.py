"""Detector stand-in: scan simulation with photon noise and paced emission."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .geometry import AcquisitionGeometry, ProjectionFrame
from .projector import beer_normalize, forward_project


@dataclass(frozen=True)
class NoiseModel:
    """Photon-counting noise: per-bin Poisson counts at ``incident_counts``
    illumination, converted back to attenuation by Beer's-law inversion."""

    incident_counts: float = 1e5
    enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.enabled and self.incident_counts <= 0.0:
            raise ValueError("incident_counts must be positive when noise is enabled")


def simulate_scan(phantom: np.ndarray, geometry: AcquisitionGeometry,
                  noise: NoiseModel,
                  schedule: list[tuple[int, float]]) -> list[ProjectionFrame]:
    """Forward-project a phantom along the schedule and emit full frames.

    ``phantom`` is either one ``(N, N)`` slice reused for every detector row
    or a ``(detector_rows, N, N)`` stack with one slice per row.  With noise
    enabled each bin draws an independent Poisson count; frames are produced
    in schedule order with consecutive ``seq`` numbers.
    """
    if not schedule:
        raise ValueError("schedule must not be empty")
    phantom = np.asarray(phantom, dtype=np.float64)
    rows = geometry.detector_rows
    columns = geometry.detector_columns
    angles = np.array([a for _, a in schedule], dtype=np.float64)

    if phantom.ndim == 2:
        clean = forward_project(phantom, angles, columns, geometry.pixel_size)
        per_row = [clean] * rows
    elif phantom.ndim == 3:
        if phantom.shape[0] != rows:
            raise ValueError(
                f"phantom stack has {phantom.shape[0]} slices, expected {rows}")
        per_row = [forward_project(phantom[r], angles, columns, geometry.pixel_size)
                   for r in range(rows)]
    else:
        raise ValueError("phantom must be 2-D or 3-D")

    rng = np.random.default_rng(noise.seed) if noise.enabled else None
    frames = []
    for seq, (rotation, angle) in enumerate(schedule):
        payload = np.stack([per_row[r][seq] for r in range(rows)])
        if rng is not None:
            expected = noise.incident_counts * np.exp(-payload)
            counts = rng.poisson(expected)
            payload = beer_normalize(counts, noise.incident_counts, 0.0)
        frames.append(ProjectionFrame(
            seq=seq, rotation_index=rotation, angle=float(angle),
            row_start=0, row_count=rows, columns=columns,
            payload=payload.astype(np.float32)))
    return frames


@dataclass
class EmissionReport:
    frames_sent: int
    elapsed: float


class EmissionError(RuntimeError):
    """Sink became unreachable mid-stream; carries progress at failure."""

    def __init__(self, message: str, frames_sent: int, last_seq: int | None):
        super().__init__(message)
        self.frames_sent = frames_sent
        self.last_seq = last_seq


def stream_emit(frames, rate: float | None, sink) -> EmissionReport:
    """Send frames to ``sink.send`` in seq order, paced to ``rate``
    projections per second (``None`` or 0 means unthrottled).

    Frames are stamped with nanoseconds since emission start.  A sink
    failure raises :class:`EmissionError` naming the last delivered seq.
    """
    if rate is not None and rate < 0.0:
        raise ValueError("rate must be positive or None for unthrottled")
    throttle = rate if rate else None
    start = time.perf_counter()
    last_seq = None
    sent = 0
    for k, frame in enumerate(frames):
        if throttle is not None:
            target = start + k / throttle
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        stamped = replace(frame, timestamp_ns=int(
            (time.perf_counter() - start) * 1e9))
        try:
            sink.send(stamped)
        except (OSError, ValueError) as exc:
            raise EmissionError(
                f"sink unreachable after {sent} frames "
                f"(last delivered seq: {last_seq}): {exc}",
                frames_sent=sent, last_seq=last_seq) from exc
        sent += 1
        last_seq = stamped.seq
    return EmissionReport(frames_sent=sent, elapsed=time.perf_counter() - start)
