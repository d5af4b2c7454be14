"""Synthetic test objects: Shepp-Logan head, glass-sphere and porous analogs.

Generation is pure in (kind, size, seed, feature_count): the same spec always
yields a bit-identical array with values in [0, 1], zero outside the
inscribed circle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import make_support_mask

# Ten-ellipse head phantom, contrast-enhanced variant.
# Columns: additive value, half-axes (a, b), centre (x0, y0), rotation (deg).
SHEPP_LOGAN_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]

PHANTOM_KINDS = ("shepp_logan", "spheres", "porous")


@dataclass(frozen=True)
class PhantomSpec:
    kind: str
    size: int
    seed: int = 0
    feature_count: int = 12

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(
                f"unknown phantom kind {self.kind!r}; expected one of {PHANTOM_KINDS}")
        if self.size < 1:
            raise ValueError(f"size must be >= 1, got {self.size}")
        if self.feature_count < 1:
            raise ValueError(f"feature_count must be >= 1, got {self.feature_count}")


def _unit_grid(size: int):
    """Pixel-centre coordinates on [-1, 1] x [-1, 1], y axis pointing up."""
    half = size / 2.0
    c = (size - 1) / 2.0
    j = np.arange(size, dtype=np.float64)
    x = (j - c) / half
    y = (c - np.arange(size, dtype=np.float64)) / half
    return np.meshgrid(x, y)


def shepp_logan(size: int) -> np.ndarray:
    """Ten-ellipse head phantom with additive intensities in [0, 1]."""
    xx, yy = _unit_grid(size)
    image = np.zeros((size, size), dtype=np.float64)
    for value, a, b, x0, y0, phi_deg in SHEPP_LOGAN_ELLIPSES:
        phi = np.deg2rad(phi_deg)
        dx = xx - x0
        dy = yy - y0
        u = dx * np.cos(phi) + dy * np.sin(phi)
        v = -dx * np.sin(phi) + dy * np.cos(phi)
        image[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += value
    return image


def _random_spheres(size: int, rng: np.random.Generator,
                    feature_count: int) -> np.ndarray:
    """Non-overlapping discs of random radii and densities on zero background."""
    half = size / 2.0
    c = (size - 1) / 2.0
    i = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(i, i, indexing="ij")
    image = np.zeros((size, size), dtype=np.float64)
    placed = []  # (ci, cj, radius)
    for _ in range(feature_count):
        for _attempt in range(200):
            radius = rng.uniform(0.04, 0.14) * half
            limit = half - radius - 1.0
            if limit <= 0:
                continue
            ci = c + rng.uniform(-limit, limit)
            cj = c + rng.uniform(-limit, limit)
            if (ci - c) ** 2 + (cj - c) ** 2 > limit ** 2:
                continue
            if any(np.hypot(ci - pi, cj - pj) < radius + pr + 1.0
                   for pi, pj, pr in placed):
                continue
            value = rng.uniform(0.4, 1.0)
            image[(yy - ci) ** 2 + (xx - cj) ** 2 <= radius ** 2] = value
            placed.append((ci, cj, radius))
            break
    return image


def _porous_disc(size: int, rng: np.random.Generator,
                 feature_count: int) -> np.ndarray:
    """A filled disc with small irregular zero-valued pores punched out."""
    half = size / 2.0
    c = (size - 1) / 2.0
    i = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(i, i, indexing="ij")
    body_radius = 0.88 * half
    image = np.where((yy - c) ** 2 + (xx - c) ** 2 <= body_radius ** 2, 0.8, 0.0)
    for _ in range(feature_count):
        a = rng.uniform(0.015, 0.06) * size
        b = a * rng.uniform(0.5, 1.0)
        phi = rng.uniform(0.0, np.pi)
        limit = body_radius - max(a, b) - 1.0
        rho = limit * np.sqrt(rng.uniform(0.0, 1.0))
        theta = rng.uniform(0.0, 2.0 * np.pi)
        ci = c + rho * np.sin(theta)
        cj = c + rho * np.cos(theta)
        du = (xx - cj) * np.cos(phi) + (yy - ci) * np.sin(phi)
        dv = -(xx - cj) * np.sin(phi) + (yy - ci) * np.cos(phi)
        image[(du / a) ** 2 + (dv / b) ** 2 <= 1.0] = 0.0
    return image


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Generate the phantom image described by ``spec``."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "shepp_logan":
        image = shepp_logan(spec.size)
    elif spec.kind == "spheres":
        image = _random_spheres(spec.size, rng, spec.feature_count)
    else:
        image = _porous_disc(spec.size, rng, spec.feature_count)
    image[~make_support_mask(spec.size)] = 0.0
    return np.clip(image, 0.0, 1.0)


def make_phantom_stack(spec: PhantomSpec, count: int) -> np.ndarray:
    """A stack of ``count`` phantoms with per-slice perturbed seeds."""
    if count < 1:
        raise ValueError("count must be >= 1")
    slices = []
    for k in range(count):
        per_slice = PhantomSpec(kind=spec.kind, size=spec.size,
                                seed=spec.seed + k,
                                feature_count=spec.feature_count)
        slices.append(make_phantom(per_slice))
    return np.stack(slices)
