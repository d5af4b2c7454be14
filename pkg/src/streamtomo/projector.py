"""Parallel-beam projection operators and the SIRT update kernel.

The forward model traverses each ray with unit-length steps and bilinear
interpolation; the backprojector scatters the same sampling weights, so the
pair is an exact adjoint by construction.  All operators are matrix-free and
deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .geometry import SinogramWindow, Tomogram


@dataclass(frozen=True)
class SirtConfig:
    """Parameters of one reconstruction trigger.

    ``iterations`` is the number of SIRT passes per trigger; ``relaxation``
    must lie in (0, 2) for convergence.
    """

    iterations: int = 10
    relaxation: float = 1.0
    apply_support: bool = True
    nonneg_clamp: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError(
                f"relaxation must be in (0, 2), got {self.relaxation}")


@dataclass
class OperatorScales:
    """SIRT normalization diagonals for one angle set.

    ``row_scale`` holds reciprocal row sums of the forward operator (one per
    ray, zero where the row sum vanishes); ``col_scale`` the reciprocal
    column sums (one per pixel).  ``angle_set_key`` identifies the exact
    angle sequence and grid the scales were computed for.
    """

    row_scale: np.ndarray
    col_scale: np.ndarray
    angle_set_key: str


def beer_normalize(intensity, flat, dark=0.0):
    """Convert measured counts to attenuation via Beer's-law inversion.

    Returns ``-ln(max(intensity - dark, 1) / (flat - dark))``; the one-count
    clamp keeps zero-photon bins finite.  Works elementwise on arrays.
    """
    flat = np.asarray(flat, dtype=np.float64)
    dark = np.asarray(dark, dtype=np.float64)
    if np.any(flat <= dark):
        raise ValueError("flat field must exceed dark field")
    counts = np.maximum(np.asarray(intensity, dtype=np.float64) - dark, 1.0)
    result = -np.log(counts / (flat - dark))
    if result.ndim == 0:
        return float(result)
    return result


def _ray_steps(size: int) -> np.ndarray:
    """Unit-length sample offsets covering the image diagonal, centred."""
    n_steps = int(math.ceil(size * math.sqrt(2.0))) + 1
    return np.arange(n_steps, dtype=np.float64) - (n_steps - 1) / 2.0


def _angle_table(angle: float, size: int, columns: int):
    """Flattened pixel indices and bilinear weights for all rays at one angle.

    Both arrays have shape ``(4, columns, n_steps)``; out-of-image neighbours
    get weight zero and index zero.
    """
    c = (size - 1) / 2.0
    spacing = size / columns
    s = (np.arange(columns, dtype=np.float64) - (columns - 1) / 2.0) * spacing
    t = _ray_steps(size)
    cos_a = math.cos(angle)
    sin_a = math.sin(angle)
    # detector axis (cos, sin); ray direction (-sin, cos), x = column axis
    x = c + s[:, None] * cos_a - t[None, :] * sin_a
    y = c + s[:, None] * sin_a + t[None, :] * cos_a
    j0 = np.floor(x).astype(np.int64)
    i0 = np.floor(y).astype(np.int64)
    fx = x - j0
    fy = y - i0
    ii = np.stack((i0, i0, i0 + 1, i0 + 1))
    jj = np.stack((j0, j0 + 1, j0, j0 + 1))
    ww = np.stack(((1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx,
                   fy * (1.0 - fx), fy * fx))
    valid = (ii >= 0) & (ii < size) & (jj >= 0) & (jj < size)
    ww[~valid] = 0.0
    pix = np.where(valid, ii * size + jj, 0)
    return pix, ww


def forward_project(image: np.ndarray, angles, columns: int,
                    pixel_size: float = 1.0) -> np.ndarray:
    """Line integrals of ``image`` along parallel rays at each angle.

    Rays are uniformly spaced across the image width with ``columns`` bins;
    the result has shape ``(len(angles), columns)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError("image must be a square 2-D array")
    if not np.all(np.isfinite(image)):
        raise ValueError("image must be finite-valued")
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    if angles.size == 0:
        raise ValueError("angle list must not be empty")
    if columns < 1:
        raise ValueError("columns must be >= 1")
    size = image.shape[0]
    flat = image.ravel()
    sino = np.empty((angles.size, columns), dtype=np.float64)
    for a, angle in enumerate(angles):
        pix, ww = _angle_table(float(angle), size, columns)
        sino[a] = np.einsum("kcs,kcs->c", flat[pix], ww) * pixel_size
    return sino


def back_project(sinogram: np.ndarray, angles, size: int,
                 pixel_size: float = 1.0) -> np.ndarray:
    """Adjoint of :func:`forward_project` (transpose of the same weights)."""
    sinogram = np.asarray(sinogram, dtype=np.float64)
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    if angles.size == 0:
        raise ValueError("angle list must not be empty")
    if sinogram.ndim != 2 or sinogram.shape[0] != angles.size:
        raise ValueError(
            f"sinogram shape {sinogram.shape} does not match {angles.size} angles")
    if size < 1:
        raise ValueError("size must be >= 1")
    columns = sinogram.shape[1]
    out = np.zeros(size * size, dtype=np.float64)
    for a, angle in enumerate(angles):
        pix, ww = _angle_table(float(angle), size, columns)
        contrib = ww * sinogram[a][None, :, None]
        out += np.bincount(pix.ravel(), weights=contrib.ravel(),
                           minlength=size * size)
    return out.reshape(size, size) * pixel_size


def angle_set_key(angles, size: int, columns: int, pixel_size: float = 1.0) -> str:
    """Canonical hash of an ordered angle sequence plus operator grid."""
    angles = np.ascontiguousarray(np.atleast_1d(angles), dtype=np.float64)
    h = hashlib.sha256()
    h.update(np.array([size, columns], dtype=np.int64).tobytes())
    h.update(np.float64(pixel_size).tobytes())
    h.update(angles.tobytes())
    return h.hexdigest()


_SCALE_EPS = 1e-12


def _zero_guarded_reciprocal(sums: np.ndarray) -> np.ndarray:
    out = np.zeros_like(sums)
    nonzero = sums > _SCALE_EPS
    out[nonzero] = 1.0 / sums[nonzero]
    return out


def compute_scales(angles, size: int, columns: int,
                   pixel_size: float = 1.0) -> OperatorScales:
    """Reciprocal row/column sums of the forward operator, zero-guarded."""
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    if angles.size == 0:
        raise ValueError("angle list must not be empty")
    row_sums = forward_project(np.ones((size, size)), angles, columns, pixel_size)
    col_sums = back_project(np.ones((angles.size, columns)), angles, size, pixel_size)
    return OperatorScales(row_scale=_zero_guarded_reciprocal(row_sums),
                          col_scale=_zero_guarded_reciprocal(col_sums),
                          angle_set_key=angle_set_key(angles, size, columns, pixel_size))


class ScaleCache:
    """Small LRU cache of operator scales keyed by exact angle sequence."""

    def __init__(self, maxsize: int = 32):
        self.maxsize = maxsize
        self._cache: OrderedDict[str, OperatorScales] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, angles, size: int, columns: int,
            pixel_size: float = 1.0) -> OperatorScales:
        key = angle_set_key(angles, size, columns, pixel_size)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        scales = compute_scales(angles, size, columns, pixel_size)
        with self._lock:
            self._cache[key] = scales
            while len(self._cache) > self.maxsize:
                self._cache.popitem(last=False)
        return scales


def partial_correction(x: np.ndarray, rows: np.ndarray, angles: np.ndarray,
                       row_scale: np.ndarray, pixel_size: float = 1.0) -> np.ndarray:
    """Backprojected weighted residual ``A_s^T (R_s * (y_s - A_s x))`` over an
    angle subset; the additive building block of one SIRT pass."""
    residual = rows - forward_project(x, angles, rows.shape[1], pixel_size)
    return back_project(row_scale * residual, angles, x.shape[0], pixel_size)


def apply_constraints(x: np.ndarray, support_mask: np.ndarray,
                      cfg: SirtConfig) -> None:
    """In-place support masking and non-negativity clamp."""
    if cfg.apply_support:
        x[~support_mask] = 0.0
    if cfg.nonneg_clamp:
        np.maximum(x, 0.0, out=x)


def sirt_update(x: Tomogram, window: SinogramWindow, cfg: SirtConfig,
                scales: OperatorScales, pixel_size: float = 1.0) -> Tomogram:
    """Run ``cfg.iterations`` SIRT passes of the window data against ``x``.

    Each pass computes ``x <- x + relaxation * C * A^T(R * (y - A x))`` and
    then applies the support mask and the optional non-negativity clamp.
    Returns a new tomogram; ``update_count`` increments once per trigger
    (``iterations == 0`` leaves the input untouched).
    """
    angles = window.angles()
    rows = window.rows_matrix()
    key = angle_set_key(angles, x.size, window.columns, pixel_size)
    if key != scales.angle_set_key:
        raise ValueError("operator scales do not match the window's angle set")
    if cfg.iterations == 0:
        return x.copy()
    values = x.values.copy()
    for _ in range(cfg.iterations):
        corr = partial_correction(values, rows, angles, scales.row_scale, pixel_size)
        values += cfg.relaxation * scales.col_scale * corr
        apply_constraints(values, x.support_mask, cfg)
    return Tomogram(slice_id=x.slice_id, values=values,
                    update_count=x.update_count + 1,
                    support_mask=x.support_mask)
