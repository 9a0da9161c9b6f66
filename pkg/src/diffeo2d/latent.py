"""Linearized latent space over log-fields: basis fitting, encode/decode,
root decoding, and PCA modes of variation.

The log space is linear, so orthogonal projection plus the exp/log maps give
a fully classical encoder/decoder: codes negate exactly where deformations
invert (up to the log-negation error).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RankError, ShapeError
from .fields import DisplacementField, Grid
from .lie import LogField, exp_field


@dataclass
class LogEuclideanBasis:
    """Mean plus orthonormal principal directions over a log-field population.

    ``components`` has shape (d, H, W, 2) with rows orthonormal under the
    flattened dot product; ``singular_values`` are per-sample standard
    deviations, descending. ``total_variance`` is the full (untruncated)
    variance, kept so explained-variance ratios stay meaningful after
    truncation.
    """

    grid: Grid
    mean: LogField
    components: np.ndarray
    singular_values: np.ndarray
    symmetrized: bool
    total_variance: float

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=np.float64)
        self.singular_values = np.asarray(self.singular_values, dtype=np.float64)
        if self.components.ndim != 4 or self.components.shape[1:] != (
            self.grid.height,
            self.grid.width,
            2,
        ):
            raise ShapeError("components must have shape (d, H, W, 2)")
        if self.singular_values.shape != (self.components.shape[0],):
            raise ShapeError("one singular value per component required")
        if np.any(np.diff(self.singular_values) > 0):
            raise DomainError("singular values must be descending")

    @property
    def dim(self) -> int:
        return self.components.shape[0]


def _flatten(v: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(v).reshape(-1)


def fit_basis(
    logfields: list[LogField], dim: int, symmetrize: bool = True
) -> LogEuclideanBasis:
    """PCA basis of a log-field population.

    With ``symmetrize`` (default) the sample set is augmented with the
    negation of every field, forcing the mean to zero exactly. Component
    signs are fixed by making each component's largest-magnitude entry
    positive, so fitting is reproducible.
    """
    if len(logfields) < 2:
        raise DomainError("need at least 2 log fields to fit a basis")
    grid = logfields[0].grid
    for lf in logfields:
        if lf.grid != grid:
            raise ShapeError("all log fields must share one grid")
    if dim < 1:
        raise DomainError("latent dimension must be >= 1")

    rows = [_flatten(lf.v) for lf in logfields]
    if symmetrize:
        rows = rows + [-r for r in rows]
        mean_flat = np.zeros_like(rows[0])
    else:
        mean_flat = np.mean(rows, axis=0)
    x = np.asarray(rows) - mean_flat
    n = x.shape[0]
    if dim > n:
        raise DomainError(f"dimension {dim} exceeds sample count {n}")

    _, s, vt = np.linalg.svd(x, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(x.shape) * np.finfo(np.float64).eps
    rank = int(np.count_nonzero(s > tol))
    if rank < dim:
        raise RankError(
            f"samples span rank {rank}, cannot fit {dim} components", rank=rank
        )

    comps = vt[:dim].copy()
    for k in range(dim):
        j = int(np.argmax(np.abs(comps[k])))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    shape = (grid.height, grid.width, 2)
    return LogEuclideanBasis(
        grid=grid,
        mean=LogField(grid, mean_flat.reshape(shape)),
        components=comps.reshape((dim,) + shape),
        singular_values=s[:dim] / np.sqrt(n),
        symmetrized=symmetrize,
        total_variance=float(np.sum(s * s) / n),
    )


def encode(basis: LogEuclideanBasis, v: LogField) -> np.ndarray:
    """Latent code: projections of v - mean onto the components."""
    if v.grid != basis.grid:
        raise ShapeError("log field grid does not match basis grid")
    centered = _flatten(v.v - basis.mean.v)
    return basis.components.reshape(basis.dim, -1) @ centered


def decode(basis: LogEuclideanBasis, z: np.ndarray) -> LogField:
    """Linear reconstruction: mean + sum_k z_k * component_k."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (basis.dim,):
        raise ShapeError(f"code length {z.shape} != basis dimension {basis.dim}")
    flat = basis.components.reshape(basis.dim, -1)
    v = basis.mean.v + (z @ flat).reshape(basis.mean.v.shape)
    return LogField(basis.grid, v)


def decode_root(
    basis: LogEuclideanBasis, z: np.ndarray, m: int, exp_depth: int = 6
) -> DisplacementField:
    """Decode the m-th root deformation exp(decode(z)/m) for m a power of two."""
    if m < 1 or (m & (m - 1)) != 0:
        raise DomainError(f"m must be a positive power of two, got {m}")
    v = decode(basis, z)
    return exp_field(LogField(basis.grid, v.v / m), exp_depth)


def pca_mode_field(
    basis: LogEuclideanBasis, k: int, c: float, exp_depth: int = 6
) -> DisplacementField:
    """Deformation at c standard deviations along mode k (1-based)."""
    if not (1 <= k <= basis.dim):
        raise DomainError(f"mode index {k} out of range 1..{basis.dim}")
    v = basis.mean.v + c * basis.singular_values[k - 1] * basis.components[k - 1]
    return exp_field(LogField(basis.grid, v), exp_depth)


def explained_variance(basis: LogEuclideanBasis) -> list[float]:
    """Variance fraction per retained mode; sums to <= 1."""
    if basis.total_variance <= 0:
        return [0.0] * basis.dim
    sv2 = basis.singular_values**2
    return [float(val / basis.total_variance) for val in sv2]
