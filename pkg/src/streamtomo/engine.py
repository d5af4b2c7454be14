"""Streaming reconstruction runtime: per-slice windows, trigger-on-W
semantics, and warm-started SIRT with lane-partitioned iterations.

Each worker owns a contiguous block of detector rows (slices) exclusively.
Within one reconstruction trigger the window's angles are partitioned across
``lanes`` and each lane computes a partial correction against the same
iteration-start estimate; partials are reduced in ascending lane order, so
results for a fixed lane count are bit-deterministic and lane counts only
differ through summation order.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from threading import Lock

import numpy as np

from .distributor import RowPartition
from .geometry import ProjectionFrame, SinogramWindow, Tomogram
from .projector import (ScaleCache, SirtConfig, apply_constraints,
                        partial_correction)


class NotReadyError(RuntimeError):
    """Snapshot requested before the first completed update."""


class RoutingError(ValueError):
    """Sub-frame rows fall outside the worker's partition."""


@dataclass
class UpdateEvent:
    """One completed reconstruction trigger for one slice."""

    slice_id: int
    update_index: int
    trigger_seq: int
    recon_elapsed: float
    projections_consumed: int
    partial: bool = False


@dataclass
class _SliceState:
    window: SinogramWindow
    tomogram: Tomogram


class ReconWorker:
    """Owns the windows and tomograms for one row partition.

    ``push`` and ``flush`` must be called from a single consumer thread;
    ``snapshot`` may be called concurrently from any thread and always
    returns the image of the most recent completed update.
    """

    def __init__(self, partition: RowPartition, image_size: int, columns: int,
                 window_size: int, sirt_cfg: SirtConfig, lanes: int = 1,
                 pixel_size: float = 1.0, warm_start: bool = True,
                 scale_cache: ScaleCache | None = None):
        if window_size < 1:
            raise ValueError("window_size must be >= 1")
        if lanes < 1:
            raise ValueError("lanes must be >= 1")
        self.partition = partition
        self.image_size = image_size
        self.columns = columns
        self.window_size = window_size
        self.cfg = sirt_cfg
        self.lanes = lanes
        self.pixel_size = pixel_size
        self.warm_start = warm_start
        self._scales = scale_cache if scale_cache is not None else ScaleCache()
        self._slices = {
            sid: _SliceState(
                window=SinogramWindow(slice_id=sid, capacity=window_size,
                                      columns=columns),
                tomogram=Tomogram.zeros(sid, image_size))
            for sid in partition.slice_ids()
        }
        self._published: dict[int, tuple[int, Tomogram]] = {}
        self._publish_lock = Lock()
        self._event_counts = {sid: 0 for sid in partition.slice_ids()}
        self._last_seq: int | None = None
        self._executor = ThreadPoolExecutor(max_workers=lanes) if lanes > 1 else None

    @property
    def slice_ids(self) -> list[int]:
        return sorted(self._slices)

    def push(self, sub_frame: ProjectionFrame) -> list[UpdateEvent]:
        """Buffer one sub-frame; returns the update events it triggered."""
        start = sub_frame.row_start
        end = start + sub_frame.row_count
        if start < self.partition.row_start or end > self.partition.row_end:
            raise RoutingError(
                f"rows [{start}, {end}) outside partition "
                f"[{self.partition.row_start}, {self.partition.row_end})")
        self._last_seq = sub_frame.seq
        events = []
        for local, sid in enumerate(range(start, end)):
            state = self._slices[sid]
            state.window.append(sub_frame.angle, sub_frame.payload[local])
            if state.window.is_full:
                events.append(self._reconstruct(sid, sub_frame.seq, partial=False))
        return events

    def flush(self) -> list[UpdateEvent]:
        """Force a final reconstruction of any partially filled windows."""
        events = []
        for sid in self.slice_ids:
            if len(self._slices[sid].window) > 0:
                seq = self._last_seq if self._last_seq is not None else -1
                events.append(self._reconstruct(sid, seq, partial=True))
        return events

    def snapshot(self, slice_id: int) -> Tomogram:
        """Immutable copy of the most recent completed update for a slice."""
        with self._publish_lock:
            published = self._published.get(slice_id)
            if published is None:
                raise NotReadyError(
                    f"slice {slice_id} has no completed update yet")
            return published[1].copy()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)

    def _correction(self, values: np.ndarray, rows: np.ndarray,
                    angles: np.ndarray, row_scale: np.ndarray) -> np.ndarray:
        """Full-window correction, reduced over lane partials in lane order."""
        lanes = min(self.lanes, len(angles))
        if lanes <= 1:
            return partial_correction(values, rows, angles, row_scale,
                                      self.pixel_size)
        chunks = np.array_split(np.arange(len(angles)), lanes)
        futures = [
            self._executor.submit(partial_correction, values, rows[c],
                                  angles[c], row_scale[c], self.pixel_size)
            for c in chunks]
        total = futures[0].result()
        for future in futures[1:]:
            total = total + future.result()
        return total

    def _reconstruct(self, slice_id: int, trigger_seq: int,
                     partial: bool) -> UpdateEvent:
        start_time = time.perf_counter()
        state = self._slices[slice_id]
        window = state.window
        angles = window.angles()
        rows = window.rows_matrix()
        consumed = len(window)
        if self.cfg.iterations > 0 and consumed > 0:
            scales = self._scales.get(angles, self.image_size, self.columns,
                                      self.pixel_size)
            if self.warm_start:
                values = state.tomogram.values.copy()
            else:
                values = np.zeros_like(state.tomogram.values)
            for _ in range(self.cfg.iterations):
                corr = self._correction(values, rows, angles, scales.row_scale)
                values += self.cfg.relaxation * scales.col_scale * corr
                apply_constraints(values, state.tomogram.support_mask, self.cfg)
            state.tomogram.values = values
            state.tomogram.update_count += 1
        window.clear()
        self._event_counts[slice_id] += 1
        event = UpdateEvent(
            slice_id=slice_id,
            update_index=self._event_counts[slice_id],
            trigger_seq=trigger_seq,
            recon_elapsed=time.perf_counter() - start_time,
            projections_consumed=consumed,
            partial=partial)
        with self._publish_lock:
            self._published[slice_id] = (event.update_index,
                                         state.tomogram.copy())
        return event
