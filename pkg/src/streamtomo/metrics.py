"""Image-quality measurement and throughput accounting.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5, k1=0.01, k2=0.03)
averaged over all fully valid window positions.  The ground-truth reference
is an offline 100-iteration SIRT over the complete projection set, computed
with the same projector discretization as the streaming path.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .engine import UpdateEvent
from .geometry import Tomogram
from .projector import (SirtConfig, apply_constraints, compute_scales,
                        partial_correction)

SSIM_KERNEL_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_kernel(size: int = SSIM_KERNEL_SIZE,
                     sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float | None = None) -> float:
    """Mean structural similarity between ``a`` and a reference ``b``.

    ``data_range`` defaults to ``max(b) - min(b)``; passing it explicitly
    makes the measure symmetric in its arguments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_KERNEL_SIZE:
        raise ValueError(
            f"images must be 2-D with sides >= {SSIM_KERNEL_SIZE}")
    if data_range is None:
        data_range = float(b.max() - b.min())
    if data_range <= 0.0:
        raise ValueError(f"data_range must be positive, got {data_range}")

    kernel = _gaussian_kernel()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_a = convolve2d(a, kernel, mode="valid")
    mu_b = convolve2d(b, kernel, mode="valid")
    e_aa = convolve2d(a * a, kernel, mode="valid")
    e_bb = convolve2d(b * b, kernel, mode="valid")
    e_ab = convolve2d(a * b, kernel, mode="valid")
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    ssim_map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)))
    return float(ssim_map.mean())


def make_ground_truth(sinogram: np.ndarray, angles, size: int,
                      iterations: int = 100, relaxation: float = 1.0,
                      pixel_size: float = 1.0) -> np.ndarray:
    """Offline SIRT reference over the complete projection set, zero-start."""
    sinogram = np.asarray(sinogram, dtype=np.float64)
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    cfg = SirtConfig(iterations=iterations, relaxation=relaxation)
    scales = compute_scales(angles, size, sinogram.shape[1], pixel_size)
    reference = Tomogram.zeros(0, size)
    values = reference.values
    for _ in range(iterations):
        corr = partial_correction(values, sinogram, angles, scales.row_scale,
                                  pixel_size)
        values += relaxation * scales.col_scale * corr
        apply_constraints(values, reference.support_mask, cfg)
    return values


@dataclass
class QualityRecord:
    slice_id: int
    update_index: int
    seconds_since_start: float
    projections_consumed: int
    ssim_conventional: float | None
    ssim_enhanced: float | None = None


@dataclass
class ThroughputRecord:
    slice_id: int
    update_index: int
    refresh_seconds: float
    sustained_rate: float


CSV_FIELDS = ("slice_id", "update_index", "t_seconds", "projections",
              "ssim_conv", "ssim_enh", "refresh_s", "sustained_pps")


class MetricsCollector:
    """Single consumer of update events: computes per-update SSIM against
    the ground truth and appends one CSV row per event.

    Refresh time is the wall-clock gap between consecutive updates of the
    same slice; the sustained rate is cumulative projections consumed by the
    slice divided by elapsed time.  Rows are flushed as written so a partial
    CSV stays valid after a fault.
    """

    def __init__(self, ground_truth: dict[int, np.ndarray],
                 csv_path: str | Path | None = None, clock=time.perf_counter):
        self.ground_truth = ground_truth
        self.clock = clock
        self.start_time = clock()
        self.quality_records: list[QualityRecord] = []
        self.throughput_records: list[ThroughputRecord] = []
        self._last_update_time: dict[int, float] = {}
        self._projections: dict[int, int] = {}
        self._csv_file = None
        self._csv = None
        if csv_path is not None:
            self._csv_file = open(csv_path, "w", newline="")
            self._csv = csv.writer(self._csv_file)
            self._csv.writerow(CSV_FIELDS)
            self._csv_file.flush()

    def record(self, event: UpdateEvent, conventional: np.ndarray,
               enhanced: np.ndarray | None = None
               ) -> tuple[QualityRecord, ThroughputRecord]:
        truth = self.ground_truth.get(event.slice_id)
        now = self.clock()
        elapsed = now - self.start_time
        previous = self._last_update_time.get(event.slice_id, self.start_time)
        refresh = now - previous
        self._last_update_time[event.slice_id] = now
        total = self._projections.get(event.slice_id, 0) \
            + event.projections_consumed
        self._projections[event.slice_id] = total
        sustained = total / elapsed if elapsed > 0 else 0.0

        ssim_conv = ssim(conventional, truth) if truth is not None else None
        ssim_enh = (ssim(enhanced, truth)
                    if enhanced is not None and truth is not None else None)
        quality = QualityRecord(
            slice_id=event.slice_id, update_index=event.update_index,
            seconds_since_start=elapsed,
            projections_consumed=event.projections_consumed,
            ssim_conventional=ssim_conv, ssim_enhanced=ssim_enh)
        throughput = ThroughputRecord(
            slice_id=event.slice_id, update_index=event.update_index,
            refresh_seconds=refresh, sustained_rate=sustained)
        self.quality_records.append(quality)
        self.throughput_records.append(throughput)
        if self._csv is not None:
            self._csv.writerow([
                event.slice_id, event.update_index, f"{elapsed:.6f}",
                total, "" if ssim_conv is None else f"{ssim_conv:.6f}",
                "" if ssim_enh is None else f"{ssim_enh:.6f}",
                f"{refresh:.6f}", f"{sustained:.6f}"])
            self._csv_file.flush()
        return quality, throughput

    def slice_curve(self, slice_id: int) -> list[QualityRecord]:
        return [q for q in self.quality_records if q.slice_id == slice_id]

    def close(self) -> None:
        if self._csv_file is not None:
            self._csv_file.close()
            self._csv_file = None
            self._csv = None


def read_quality_csv(path: str | Path) -> list[dict]:
    """Parse a metrics CSV back into typed row dictionaries."""
    rows = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            rows.append({
                "slice_id": int(row["slice_id"]),
                "update_index": int(row["update_index"]),
                "t_seconds": float(row["t_seconds"]),
                "projections": int(row["projections"]),
                "ssim_conv": float(row["ssim_conv"]) if row["ssim_conv"]
                else None,
                "ssim_enh": float(row["ssim_enh"]) if row["ssim_enh"] else None,
                "refresh_s": float(row["refresh_s"]),
                "sustained_pps": float(row["sustained_pps"]),
            })
    return rows


def save_slice_image(base_path: str | Path, values: np.ndarray,
                     slice_id: int, update_index: int) -> None:
    """Write ``<base>.raw`` (float32), ``<base>.hdr`` (text sidecar), and an
    8-bit min-max scaled ``<base>.pgm`` preview."""
    base = Path(base_path)
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("slice image must be square 2-D")
    data = np.ascontiguousarray(values, dtype="<f4")
    base.with_suffix(".raw").write_bytes(data.tobytes())
    base.with_suffix(".hdr").write_text(
        f"n {values.shape[0]}\n"
        f"slice_id {slice_id}\n"
        f"update_index {update_index}\n"
        f"dtype float32\n"
        f"order row-major\n")
    write_pgm(base.with_suffix(".pgm"), values)


def load_slice_image(base_path: str | Path) -> tuple[np.ndarray, dict]:
    """Read back a raw slice image and its sidecar metadata."""
    base = Path(base_path)
    meta: dict = {}
    for line in base.with_suffix(".hdr").read_text().splitlines():
        key, _, value = line.partition(" ")
        meta[key] = int(value) if value.lstrip("-").isdigit() else value
    size = meta["n"]
    data = np.frombuffer(base.with_suffix(".raw").read_bytes(), dtype="<f4")
    return data.reshape(size, size).copy(), meta


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((values - lo) / span * 255.0).astype(np.uint8)
    height, width = values.shape
    with open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(scaled.tobytes())
