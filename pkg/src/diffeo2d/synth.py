"""Synthetic ground-truth generators: phantoms and guaranteed-diffeomorphic
random deformations with known logarithms.

Random deformations are built as exp(v) of a smooth tangent field v, so every
generated subject carries an exact logarithm and an invertible deformation.
Fields are tapered to zero near the border to keep sampling in-bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError, ShapeError
from .fields import (
    DisplacementField,
    Grid,
    LabelImage,
    ScalarImage,
    warp_image,
    warp_labels,
)
from .lie import LogField, exp_field

PHANTOM_KINDS = ("ring_with_bump", "four_label_phantom", "gaussian_blobs")


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of a deterministic test image.

    ``ring_radius`` defaults to a quarter of the smaller grid dimension.
    Angles are radians; lengths are pixels.
    """

    kind: str
    grid: Grid
    seed: int = 0
    ring_radius: float | None = None
    ring_thickness: float = 2.5
    bump_angle: float = 0.0
    bump_amplitude: float = 0.0
    bump_width: float = 0.5
    blob_count: int = 3
    blob_sigma: float = 5.0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise DomainError(f"unknown phantom kind {self.kind!r}")
        half = min(self.grid.height, self.grid.width) / 2.0
        if self.radius + abs(self.bump_amplitude) + self.ring_thickness > half - 4.0:
            raise DomainError(
                "phantom geometry does not fit the grid with a 4 px margin"
            )

    @property
    def radius(self) -> float:
        if self.ring_radius is not None:
            return self.ring_radius
        return min(self.grid.height, self.grid.width) / 4.0

    @property
    def center(self) -> tuple[float, float]:
        return ((self.grid.height - 1) / 2.0, (self.grid.width - 1) / 2.0)


@dataclass(frozen=True)
class RandomFieldSpec:
    """Seeded smooth random tangent field; amplitude is the max vector norm."""

    grid: Grid
    seed: int
    smoothing_sigma: float = 4.0
    amplitude: float = 3.0
    exp_depth: int = 6

    def __post_init__(self):
        if not (self.smoothing_sigma > 0):
            raise DomainError("smoothing_sigma must be > 0")
        if self.amplitude < 0:
            raise DomainError("amplitude must be >= 0")
        if self.amplitude > min(self.grid.height, self.grid.width) / 8.0:
            raise DomainError(
                "amplitude exceeds min(grid)/8; the diffeomorphism guarantee "
                "requires small deformations"
            )


def phantom_intensity(spec: PhantomSpec, points: np.ndarray) -> np.ndarray:
    """Continuous intensity of a phantom evaluated at (..., 2) coordinates.

    This is the analytic function the discrete image samples; useful for
    resampling/symmetry checks that must not inherit interpolation error.
    """
    p = np.asarray(points, dtype=np.float64)
    cr, cc = spec.center
    dr = p[..., 0] - cr
    dc = p[..., 1] - cc
    if spec.kind == "ring_with_bump":
        r = np.hypot(dr, dc)
        theta = np.arctan2(dc, dr)
        ang = np.angle(np.exp(1j * (theta - spec.bump_angle)))
        radius = spec.radius + spec.bump_amplitude * np.exp(
            -((ang / spec.bump_width) ** 2)
        )
        return np.exp(-(((r - radius) / spec.ring_thickness) ** 2))
    if spec.kind == "four_label_phantom":
        r = np.hypot(dr, dc)
        shells = _four_label_radii(spec)
        levels = np.array([1.0, 0.45, 0.8, 0.25])
        out = np.zeros_like(r)
        prev = 0.0
        for radius, level in zip(shells, levels):
            out = np.where((r >= prev) & (r < radius), level, out)
            prev = radius
        return out
    if spec.kind == "gaussian_blobs":
        rng = np.random.default_rng(spec.seed)
        centers, sigmas = _blob_geometry(spec, rng)
        out = np.zeros_like(dr)
        for (br, bc), s in zip(centers, sigmas):
            out = out + np.exp(
                -((p[..., 0] - br) ** 2 + (p[..., 1] - bc) ** 2) / (2 * s * s)
            )
        return np.clip(out, 0.0, 1.0)
    raise DomainError(f"unknown phantom kind {spec.kind!r}")


def _four_label_radii(spec: PhantomSpec):
    r = spec.radius
    return (0.35 * r, 0.6 * r, 0.8 * r, r)


def _blob_geometry(spec: PhantomSpec, rng):
    h, w = spec.grid.height, spec.grid.width
    margin = 4.0 + 2 * spec.blob_sigma
    centers = np.column_stack(
        [
            rng.uniform(margin, h - 1 - margin, spec.blob_count),
            rng.uniform(margin, w - 1 - margin, spec.blob_count),
        ]
    )
    sigmas = rng.uniform(0.7 * spec.blob_sigma, 1.3 * spec.blob_sigma, spec.blob_count)
    return centers, sigmas


def make_phantom(spec: PhantomSpec) -> tuple[ScalarImage, LabelImage]:
    """Deterministic image in [0, 1] plus a consistent label partition."""
    grid = spec.grid
    coords = np.stack(
        np.meshgrid(
            np.arange(grid.height, dtype=np.float64),
            np.arange(grid.width, dtype=np.float64),
            indexing="ij",
        ),
        axis=-1,
    )
    cr, cc = spec.center
    dr = coords[..., 0] - cr
    dc = coords[..., 1] - cc
    r = np.hypot(dr, dc)
    if spec.kind == "ring_with_bump":
        intensity = phantom_intensity(spec, coords)
        labels = np.zeros(grid.shape, dtype=np.int64)
        on_ring = intensity >= 0.5
        labels[on_ring] = 1
        if spec.bump_amplitude > 0:
            theta = np.arctan2(dc, dr)
            ang = np.angle(np.exp(1j * (theta - spec.bump_angle)))
            labels[on_ring & (np.abs(ang) <= spec.bump_width)] = 2
        return ScalarImage(grid, intensity), LabelImage(grid, labels)
    if spec.kind == "four_label_phantom":
        raw = phantom_intensity(spec, coords)
        # Slight blur gives SSD registration usable gradients at boundaries.
        intensity = gaussian_filter(raw, 1.0, mode="nearest")
        labels = np.zeros(grid.shape, dtype=np.int64)
        shells = _four_label_radii(spec)
        prev = 0.0
        for idx, radius in enumerate(shells, start=1):
            labels[(r >= prev) & (r < radius)] = 5 - idx
            prev = radius
        return ScalarImage(grid, np.clip(intensity, 0.0, 1.0)), LabelImage(grid, labels)
    if spec.kind == "gaussian_blobs":
        intensity = phantom_intensity(spec, coords)
        labels = (intensity >= 0.5).astype(np.int64)
        return ScalarImage(grid, intensity), LabelImage(grid, labels)
    raise DomainError(f"unknown phantom kind {spec.kind!r}")


def random_log_field(spec: RandomFieldSpec) -> LogField:
    """Seeded smooth tangent field, border-tapered, scaled to max norm
    ``amplitude``."""
    grid = spec.grid
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((grid.height, grid.width, 2))
    smooth = np.stack(
        [
            gaussian_filter(noise[..., 0], spec.smoothing_sigma, mode="nearest"),
            gaussian_filter(noise[..., 1], spec.smoothing_sigma, mode="nearest"),
        ],
        axis=-1,
    )
    smooth *= _border_taper(grid)[..., None]
    max_norm = float(np.max(np.hypot(smooth[..., 0], smooth[..., 1])))
    if spec.amplitude == 0.0 or max_norm == 0.0:
        return LogField(grid, np.zeros_like(smooth))
    return LogField(grid, smooth * (spec.amplitude / max_norm))


def _border_taper(grid: Grid) -> np.ndarray:
    """Window that is 0 within 2 px of the border and eases up to 1."""
    i = np.arange(grid.height, dtype=np.float64)
    j = np.arange(grid.width, dtype=np.float64)
    di = np.minimum(i, grid.height - 1 - i)
    dj = np.minimum(j, grid.width - 1 - j)
    d = np.minimum(di[:, None], dj[None, :])
    t = np.clip((d - 2.0) / 4.0, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(math.pi * t)


class Subject(NamedTuple):
    """A warped phantom together with its ground-truth deformation and log."""

    image: ScalarImage
    labels: LabelImage
    field: DisplacementField
    log: LogField


def make_subject(
    phantom: tuple[ScalarImage, LabelImage], v: LogField, n_levels: int = 6
) -> Subject:
    """Warp a phantom by exp(v); returns warped data plus the exact ground truth."""
    image, labels = phantom
    if image.grid != v.grid or labels.grid != v.grid:
        raise ShapeError("phantom and log field grids must match")
    phi = exp_field(v, n_levels)
    return Subject(warp_image(image, phi), warp_labels(labels, phi), phi, v)
