"""Evaluation functionals: root-chain diagnostics, latent consistency, Dice,
and the weighted secondary loss.

All chain losses score a single pair of fields; summation over a population
of pairs is the caller's business.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .fields import DisplacementField, LabelImage, compose, field_rms_diff, self_compose_m
from .lie import RootChain


@dataclass(frozen=True)
class LossWeights:
    """Weights for the secondary (consistency) loss; all must be >= 0."""

    alpha_rec: float = 1.0
    alpha_inv: float = 1.0
    alpha_linv: float = 1.0

    def __post_init__(self):
        if self.alpha_rec < 0 or self.alpha_inv < 0 or self.alpha_linv < 0:
            raise DomainError("weights must be non-negative")


def rec_loss(
    chain_ab: RootChain,
    phi_ab: DisplacementField,
    chain_ba: RootChain,
    phi_ba: DisplacementField,
) -> float:
    """Reconstruction residual of both chains against their source fields.

    Per level n: squared RMS (pixel- and component-averaged, the
    field_rms_diff convention) of self-composing root n back up 2^(n+1)
    times versus the original field; summed over levels and both directions.
    """
    total = 0.0
    for chain, phi in ((chain_ab, phi_ab), (chain_ba, phi_ba)):
        for n, root in enumerate(chain.roots):
            if root.grid != phi.grid:
                raise ShapeError("chain grid does not match field grid")
            rms = field_rms_diff(self_compose_m(root, 2 ** (n + 1)), phi)
            total += rms * rms
    return total


def _mean_sq_displacement(field: DisplacementField) -> float:
    return float(np.mean(np.sum(field.u * field.u, axis=-1)))


def inv_loss(chain_ab: RootChain, chain_ba: RootChain) -> float:
    """Per-level inverse consistency: mean-square displacement (components
    summed) of composing corresponding roots, summed over levels."""
    if chain_ab.depth != chain_ba.depth:
        raise ShapeError(
            f"chain depths differ: {chain_ab.depth} vs {chain_ba.depth}"
        )
    total = 0.0
    for ra, rb in zip(chain_ab.roots, chain_ba.roots):
        total += _mean_sq_displacement(compose(ra, rb))
    return total


def latent_inv_loss(z_ab: np.ndarray, z_ba: np.ndarray) -> float:
    """(1 + cos(theta))/2 + ||z_ab + z_ba||^2.

    Conventions: both codes zero scores the perfect case (cos := -1);
    exactly one zero code has no meaningful angle and uses cos := 0.
    """
    z_ab = np.asarray(z_ab, dtype=np.float64)
    z_ba = np.asarray(z_ba, dtype=np.float64)
    if z_ab.shape != z_ba.shape or z_ab.ndim != 1:
        raise ShapeError("codes must be 1-D vectors of equal length")
    na = np.linalg.norm(z_ab)
    nb = np.linalg.norm(z_ba)
    if na == 0.0 and nb == 0.0:
        cos = -1.0
    elif na == 0.0 or nb == 0.0:
        cos = 0.0
    else:
        cos = float(np.dot(z_ab, z_ba) / (na * nb))
    s = z_ab + z_ba
    return (1.0 + cos) / 2.0 + float(np.dot(s, s))


def secondary_loss(weights: LossWeights, rec: float, inv: float, linv: float) -> float:
    """Weighted sum of the three consistency components."""
    return weights.alpha_rec * rec + weights.alpha_inv * inv + weights.alpha_linv * linv


def dice(a: LabelImage, b: LabelImage, label: int) -> float:
    """Dice overlap 2|X n Y| / (|X| + |Y|) for one label; both-empty is 1.0."""
    if a.grid != b.grid:
        raise ShapeError("label images must share a grid")
    x = a.labels == label
    y = b.labels == label
    denom = int(x.sum()) + int(y.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(x & y)) / denom


def dice_report(warped: LabelImage, target: LabelImage):
    """Per-label Dice over the union of nonzero labels, plus the unweighted mean.

    Returns (per_label, mean) where per_label maps label -> score.
    """
    if warped.grid != target.grid:
        raise ShapeError("label images must share a grid")
    labels = sorted((set(warped.label_set()) | set(target.label_set())) - {0})
    per_label = {lab: dice(warped, target, lab) for lab in labels}
    mean = float(np.mean(list(per_label.values()))) if per_label else 1.0
    return per_label, mean
