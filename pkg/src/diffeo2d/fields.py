"""Grid-based images and displacement fields: sampling, composition, warping,
and Jacobian analysis.

Conventions (normative for the whole package):

* Arrays are indexed ``[row, col]``; vector components are ordered
  ``(row-displacement, col-displacement)``.
* A deformation maps ``x -> x + u(x)`` with ``u`` in pixels.
* Sampling outside ``[0, H-1] x [0, W-1]`` clamps the coordinate to the
  boundary before interpolating (zero-gradient extension).
* RMS distances average over pixels *and* components before the square root.
* All field arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class Grid:
    """Pixel grid with unit spacing."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise DomainError(
                f"grid must be at least 2x2, got {self.height}x{self.width}"
            )

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def n_pixels(self):
        return self.height * self.width


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise ShapeError(f"grid mismatch: {a.grid} vs {b.grid}")


@dataclass
class ScalarImage:
    """Real-valued image on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ShapeError(
                f"image shape {self.values.shape} != grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DomainError("image contains non-finite values")


@dataclass
class LabelImage:
    """Integer label map; label 0 is background."""

    grid: Grid
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DomainError("labels must be an integer array")
        self.labels = self.labels.astype(np.int64)
        if self.labels.shape != self.grid.shape:
            raise ShapeError(
                f"label shape {self.labels.shape} != grid {self.grid.shape}"
            )
        if np.any(self.labels < 0):
            raise DomainError("labels must be non-negative")

    def label_set(self):
        return sorted(int(v) for v in np.unique(self.labels))


@dataclass
class DisplacementField:
    """Displacement field u of shape (H, W, 2); deformation is x + u(x)."""

    grid: Grid
    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.shape != (self.grid.height, self.grid.width, 2):
            raise ShapeError(
                f"field shape {self.u.shape} != {(self.grid.height, self.grid.width, 2)}"
            )
        if not np.all(np.isfinite(self.u)):
            raise DomainError("displacement field contains non-finite values")


def identity_field(grid: Grid) -> DisplacementField:
    """Zero displacement: the group identity."""
    return DisplacementField(grid, np.zeros((grid.height, grid.width, 2)))


def grid_coords(grid: Grid) -> np.ndarray:
    """(H, W, 2) array of pixel coordinates."""
    r, c = np.meshgrid(
        np.arange(grid.height, dtype=np.float64),
        np.arange(grid.width, dtype=np.float64),
        indexing="ij",
    )
    return np.stack([r, c], axis=-1)


def _bilinear_weights(points, height, width):
    """Clamp points and return corner indices plus fractional offsets.

    Returns (i0, j0, fr, fc) where the 4 corners are (i0, j0) .. (i0+1, j0+1)
    and fr, fc are the fractional weights toward the +1 corners.
    """
    pr = np.clip(points[..., 0], 0.0, height - 1.0)
    pc = np.clip(points[..., 1], 0.0, width - 1.0)
    i0 = np.minimum(np.floor(pr), height - 2).astype(np.intp)
    j0 = np.minimum(np.floor(pc), width - 2).astype(np.intp)
    fr = pr - i0
    fc = pc - j0
    return i0, j0, fr, fc


def sample_values(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear sample of a (H, W) or (H, W, C) array at (..., 2) points.

    Coordinates are clamped to the domain before interpolation; sampling at
    integer grid coordinates reproduces node values exactly.
    """
    if not np.all(np.isfinite(points)):
        raise DomainError("sample points must be finite")
    h, w = values.shape[:2]
    i0, j0, fr, fc = _bilinear_weights(points, h, w)
    if values.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    v00 = values[i0, j0]
    v01 = values[i0, j0 + 1]
    v10 = values[i0 + 1, j0]
    v11 = values[i0 + 1, j0 + 1]
    top = v00 + fc * (v01 - v00)
    bot = v10 + fc * (v11 - v10)
    return top + fr * (bot - top)


def sample_values_grad(values: np.ndarray, points: np.ndarray):
    """Bilinear sample plus its exact derivative w.r.t. the point coordinates.

    Returns (value, d/d_row, d/d_col). The derivative is zero where the
    coordinate is clamped outside the domain.
    """
    if not np.all(np.isfinite(points)):
        raise DomainError("sample points must be finite")
    h, w = values.shape[:2]
    i0, j0, fr, fc = _bilinear_weights(points, h, w)
    inside_r = (points[..., 0] > 0.0) & (points[..., 0] < h - 1.0)
    inside_c = (points[..., 1] > 0.0) & (points[..., 1] < w - 1.0)
    if values.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
        inside_r = inside_r[..., None]
        inside_c = inside_c[..., None]
    v00 = values[i0, j0]
    v01 = values[i0, j0 + 1]
    v10 = values[i0 + 1, j0]
    v11 = values[i0 + 1, j0 + 1]
    top = v00 + fc * (v01 - v00)
    bot = v10 + fc * (v11 - v10)
    val = top + fr * (bot - top)
    d_row = np.where(inside_r, bot - top, 0.0)
    left = v00 + fr * (v10 - v00)
    right = v01 + fr * (v11 - v01)
    d_col = np.where(inside_c, right - left, 0.0)
    return val, d_row, d_col


def splat_values(points: np.ndarray, values: np.ndarray, shape) -> np.ndarray:
    """Adjoint of :func:`sample_values`: scatter values at points onto nodes.

    ``points`` is (..., 2), ``values`` is points.shape[:-1] (+ channels);
    returns an array of ``shape`` (+ channels) with bilinearly-weighted sums.
    """
    h, w = shape[:2]
    i0, j0, fr, fc = _bilinear_weights(points, h, w)
    channels = values.shape[len(points.shape) - 1:]
    out = np.zeros((h, w) + channels)
    if channels:
        fr = fr[..., None]
        fc = fc[..., None]
    w00 = (1 - fr) * (1 - fc)
    w01 = (1 - fr) * fc
    w10 = fr * (1 - fc)
    w11 = fr * fc
    np.add.at(out, (i0, j0), w00 * values)
    np.add.at(out, (i0, j0 + 1), w01 * values)
    np.add.at(out, (i0 + 1, j0), w10 * values)
    np.add.at(out, (i0 + 1, j0 + 1), w11 * values)
    return out


def sample_field(field: DisplacementField, point) -> tuple[float, float]:
    """Bilinear interpolation of the displacement at a single point."""
    p = np.asarray(point, dtype=np.float64)
    if p.shape != (2,):
        raise ShapeError("point must be a pair of coordinates")
    v = sample_values(field.u, p)
    return (float(v[0]), float(v[1]))


def compose(outer: DisplacementField, inner: DisplacementField) -> DisplacementField:
    """Composition r(x) = outer(inner(x)).

    In displacements: u_r(x) = u_inner(x) + u_outer sampled at x + u_inner(x).
    """
    _check_same_grid(outer, inner)
    x = grid_coords(inner.grid)
    sampled = sample_values(outer.u, x + inner.u)
    return DisplacementField(inner.grid, inner.u + sampled)


def self_compose_m(field: DisplacementField, m: int) -> DisplacementField:
    """Compose a field with itself m times (m=1 returns the input).

    Powers of two use repeated squaring; other m fold sequentially.
    """
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    if m == 1:
        return field
    if m & (m - 1) == 0:
        result = field
        while m > 1:
            result = compose(result, result)
            m //= 2
        return result
    result = field
    for _ in range(m - 1):
        result = compose(field, result)
    return result


def warp_image(image: ScalarImage, field: DisplacementField) -> ScalarImage:
    """Backward warp: out(x) = image sampled at x + u(x)."""
    _check_same_grid(image, field)
    if not np.any(field.u):
        return ScalarImage(image.grid, image.values.copy())
    x = grid_coords(field.grid)
    return ScalarImage(image.grid, sample_values(image.values, x + field.u))


def warp_labels(labels: LabelImage, field: DisplacementField) -> LabelImage:
    """Nearest-neighbor warp of a label map."""
    _check_same_grid(labels, field)
    x = grid_coords(field.grid)
    p = x + field.u
    i = np.clip(np.round(p[..., 0]), 0, field.grid.height - 1).astype(np.intp)
    j = np.clip(np.round(p[..., 1]), 0, field.grid.width - 1).astype(np.intp)
    return LabelImage(labels.grid, labels.labels[i, j])


def jacobian_determinant(field: DisplacementField) -> ScalarImage:
    """Per-pixel det(I + grad u): central differences inside, one-sided at borders."""
    ur = field.u[..., 0]
    uc = field.u[..., 1]
    dur_dr = np.gradient(ur, axis=0)
    dur_dc = np.gradient(ur, axis=1)
    duc_dr = np.gradient(uc, axis=0)
    duc_dc = np.gradient(uc, axis=1)
    det = (1.0 + dur_dr) * (1.0 + duc_dc) - dur_dc * duc_dr
    return ScalarImage(field.grid, det)


def neg_jacobian_fraction(field: DisplacementField) -> float:
    """Percent of pixels with det(I + grad u) <= 0 (a folding measure)."""
    det = jacobian_determinant(field).values
    return 100.0 * float(np.count_nonzero(det <= 0.0)) / det.size


def field_rms_diff(a: DisplacementField, b: DisplacementField) -> float:
    """RMS of component-wise differences, averaged over pixels and components."""
    _check_same_grid(a, b)
    d = a.u - b.u
    return float(np.sqrt(np.mean(d * d)))


def field_rms(a: DisplacementField) -> float:
    """RMS displacement magnitude of a field (distance from the identity)."""
    return float(np.sqrt(np.mean(a.u * a.u)))
