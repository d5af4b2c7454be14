"""Acquisition geometry, angle scheduling, and the shared data model.

Everything here is a plain value: schedulers are pure functions and the
container types carry no behaviour beyond validation, so instances are safe
to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Detector and scan configuration for one tomography run.

    ``detector_columns`` rays span the reconstructed image width, so the
    detector does not need to match ``image_size``.  The total number of
    projections in a scan is ``rotations * projections_per_rotation``.
    """

    detector_columns: int
    detector_rows: int
    rotations: int
    projections_per_rotation: int
    image_size: int
    angle_range: float = math.pi
    pixel_size: float = 1.0

    def __post_init__(self):
        for name in ("detector_columns", "detector_rows", "rotations",
                     "projections_per_rotation", "image_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 < self.angle_range <= TWO_PI:
            raise ValueError(f"angle_range must be in (0, 2*pi], got {self.angle_range}")
        if self.pixel_size <= 0.0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def total_projections(self) -> int:
        return self.rotations * self.projections_per_rotation


@dataclass(eq=False)
class ProjectionFrame:
    """One measured projection, or a row-partition of one.

    ``payload`` is a ``(row_count, columns)`` float32 array of attenuation
    values.  ``seq`` is the global emission order and strictly increases
    within a stream.
    """

    seq: int
    rotation_index: int
    angle: float
    row_start: int
    row_count: int
    columns: int
    payload: np.ndarray
    timestamp_ns: int = 0

    def __post_init__(self):
        if self.seq < 0 or self.rotation_index < 0:
            raise ValueError("seq and rotation_index must be non-negative")
        if self.row_start < 0 or self.row_count < 1 or self.columns < 1:
            raise ValueError("invalid row range or column count")
        self.payload = np.ascontiguousarray(self.payload, dtype=np.float32)
        if self.payload.shape != (self.row_count, self.columns):
            raise ValueError(
                f"payload shape {self.payload.shape} does not match "
                f"(row_count, columns)=({self.row_count}, {self.columns})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProjectionFrame):
            return NotImplemented
        return (self.seq == other.seq
                and self.rotation_index == other.rotation_index
                and self.angle == other.angle
                and self.row_start == other.row_start
                and self.row_count == other.row_count
                and self.columns == other.columns
                and self.timestamp_ns == other.timestamp_ns
                and np.array_equal(self.payload, other.payload))


class WindowFullError(RuntimeError):
    """Raised when appending to an already-full sinogram window."""


@dataclass
class SinogramWindow:
    """Buffer of the most recent projection rows for one slice.

    Holds at most ``capacity`` (angle, row) entries; reconstruction is
    triggered only when exactly ``capacity`` entries are present.
    """

    slice_id: int
    capacity: int
    columns: int
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("window capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def append(self, angle: float, row: np.ndarray) -> None:
        if self.is_full:
            raise WindowFullError(
                f"window for slice {self.slice_id} already holds {self.capacity} entries")
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.columns,):
            raise ValueError(f"row length {row.shape} != ({self.columns},)")
        self.entries.append((float(angle), row))

    def clear(self) -> None:
        self.entries = []

    def angles(self) -> np.ndarray:
        return np.array([a for a, _ in self.entries], dtype=np.float64)

    def rows_matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.columns), dtype=np.float64)
        return np.stack([r for _, r in self.entries])


@dataclass
class Tomogram:
    """An N x N reconstructed slice estimate plus its warm-start state.

    ``values`` outside ``support_mask`` are exactly zero after every update;
    ``update_count`` counts completed reconstruction triggers.
    """

    slice_id: int
    values: np.ndarray
    update_count: int = 0
    support_mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("tomogram values must be a square 2-D array")
        if self.support_mask is None:
            self.support_mask = make_support_mask(self.values.shape[0])
        if self.support_mask.shape != self.values.shape:
            raise ValueError("support mask shape must match values")

    @classmethod
    def zeros(cls, slice_id: int, size: int) -> "Tomogram":
        return cls(slice_id=slice_id, values=np.zeros((size, size)))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "Tomogram":
        return Tomogram(slice_id=self.slice_id, values=self.values.copy(),
                        update_count=self.update_count,
                        support_mask=self.support_mask)


def fixed_angle_schedule(start: float, offset: float, count: int,
                         angle_range: float = math.pi) -> np.ndarray:
    """Angles advancing from ``start`` by a fixed ``offset``, modulo the range.

    Returns ``count`` angles ``(start + k*offset) mod angle_range`` in
    emission order.
    """
    if offset <= 0.0:
        raise ValueError(f"offset must be positive, got {offset}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0.0 < angle_range <= TWO_PI:
        raise ValueError(f"angle_range must be in (0, 2*pi], got {angle_range}")
    k = np.arange(count, dtype=np.float64)
    return np.mod(start + k * offset, angle_range)


def interleaved_schedule(rotations: int, per_rotation: int,
                         angle_range: float = math.pi) -> list[tuple[int, float]]:
    """Rotation-major interleaved angles covering ``[0, angle_range)``.

    Rotation ``r`` sweeps ``per_rotation`` angles with step
    ``angle_range / per_rotation``, offset by
    ``r * angle_range / (per_rotation * rotations)``; each rotation alone
    covers the full range coarsely and the union over all rotations is a
    uniform grid of ``rotations * per_rotation`` angles.
    """
    if rotations < 1 or per_rotation < 1:
        raise ValueError("rotations and per_rotation must be >= 1")
    if not 0.0 < angle_range <= TWO_PI:
        raise ValueError(f"angle_range must be in (0, 2*pi], got {angle_range}")
    coarse = angle_range / per_rotation
    fine = angle_range / (per_rotation * rotations)
    out = []
    for r in range(rotations):
        for k in range(per_rotation):
            out.append((r, math.fmod(k * coarse + r * fine, angle_range)))
    return out


def make_schedule(geometry: AcquisitionGeometry, kind: str) -> list[tuple[int, float]]:
    """Emission schedule for a whole scan as (rotation_index, angle) pairs."""
    if kind == "interleaved":
        return interleaved_schedule(geometry.rotations,
                                    geometry.projections_per_rotation,
                                    geometry.angle_range)
    if kind == "fixed":
        total = geometry.total_projections
        angles = fixed_angle_schedule(0.0, geometry.angle_range / total, total,
                                      geometry.angle_range)
        per = geometry.projections_per_rotation
        return [(k // per, float(a)) for k, a in enumerate(angles)]
    raise ValueError(f"unknown schedule kind {kind!r}")


def make_support_mask(size: int) -> np.ndarray:
    """Boolean inscribed-circle mask: true where the pixel centre lies within
    radius ``size/2`` of the image centre ``((size-1)/2, (size-1)/2)``."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    c = (size - 1) / 2.0
    i = np.arange(size, dtype=np.float64)
    di2 = (i - c) ** 2
    return di2[:, None] + di2[None, :] <= (size / 2.0) ** 2
