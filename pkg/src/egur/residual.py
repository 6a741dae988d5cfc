"""Principal-subspace residual evidence.

Fits the in-distribution subspace on known training features, measures each
sample's distance to that subspace, and normalizes the distance into a residual
risk in [0, 1] using percentile anchors of the training residuals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from ._util import clamp01, nearest_rank_percentile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdSubspace:
    """Mean vector plus an orthonormal basis (rows) of the retained subspace."""

    mean: np.ndarray
    basis: np.ndarray
    retained_variance: float

    @property
    def subspace_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class ResidualNormalizer:
    """Low/high residual anchors; degenerate_zero marks the all-zero-residual case."""

    lo: float
    hi: float
    degenerate_zero: bool = False


def fit_subspace(
    features: np.ndarray, variance_target: float = 0.90, fixed_dim: int | None = None
) -> IdSubspace:
    """Principal subspace of mean-centered features.

    The dimension is the smallest one reaching variance_target, capped at the
    data rank and at d-1; fixed_dim overrides the variance rule. Eigenvectors
    come from the covariance or the Gram matrix, whichever is smaller, with a
    deterministic sign convention (largest-magnitude coordinate positive).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise SpecError("need at least 2 samples to fit a subspace")
    n, d = x.shape
    if d < 2:
        raise SpecError("feature dimension must be at least 2")
    if not 0.0 < variance_target <= 1.0:
        raise SpecError("variance target must lie in (0, 1]")
    mean = x.mean(axis=0)
    z = x - mean

    if d <= n:
        cov = (z.T @ z) / n
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals, kind="stable")[::-1]
        eigvals = eigvals[order]
        components = eigvecs[:, order].T
    else:
        gram = (z @ z.T) / n
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals, kind="stable")[::-1]
        eigvals = eigvals[order]
        u = eigvecs[:, order]
        components = np.zeros((n, d))
        for i in range(n):
            v = z.T @ u[:, i]
            norm = np.linalg.norm(v)
            if norm > 0:
                components[i] = v / norm

    eigvals = np.maximum(eigvals, 0.0)
    total = eigvals.sum()
    tol = eigvals[0] * max(n, d) * np.finfo(np.float64).eps if eigvals.size else 0.0
    rank = max(int((eigvals > tol).sum()), 1)

    if fixed_dim is not None:
        if fixed_dim < 1:
            raise SpecError("fixed subspace dimension must be at least 1")
        dim = max(1, min(fixed_dim, d - 1, rank))
    else:
        if total > 0:
            fractions = np.cumsum(eigvals) / total
            dim = int(np.searchsorted(fractions, variance_target - 1e-12) + 1)
        else:
            dim = 1
        dim = min(dim, rank, d - 1)
        dim = max(dim, 1)

    basis = components[:dim].copy()
    for i in range(dim):
        j = int(np.argmax(np.abs(basis[i])))
        if basis[i, j] < 0:
            basis[i] = -basis[i]
    retained = float(eigvals[:dim].sum() / total) if total > 0 else 1.0
    return IdSubspace(mean=mean, basis=basis, retained_variance=retained)


def residual_norm(x: np.ndarray, subspace: IdSubspace) -> float | np.ndarray:
    """Euclidean distance from the centered feature(s) to the subspace."""
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    single = np.ndim(x) == 1
    if arr.shape[1] != subspace.dim:
        raise SpecError(
            f"feature dimension {arr.shape[1]} does not match subspace dimension {subspace.dim}"
        )
    z = arr - subspace.mean
    proj = (z @ subspace.basis.T) @ subspace.basis
    rho = np.linalg.norm(z - proj, axis=1)
    return float(rho[0]) if single else rho


def fit_normalizer(
    residuals: np.ndarray, percentiles: tuple[float, float] = (5.0, 95.0)
) -> ResidualNormalizer:
    """Nearest-rank percentile anchors of the training residual norms.

    Degenerate inputs: all-zero residuals map every risk to 0 (with a logged
    warning); equal anchors are widened by the smallest positive spread among
    the residual values, or by the anchor itself when all values coincide.
    """
    rho = np.asarray(residuals, dtype=np.float64)
    if rho.size < 20:
        raise SpecError("need at least 20 residuals to fit the normalizer")
    if (rho < 0).any() or not np.isfinite(rho).all():
        raise SpecError("residuals must be finite and non-negative")
    p_lo, p_hi = percentiles
    if not 0.0 <= p_lo < p_hi <= 100.0:
        raise SpecError("percentiles must satisfy 0 <= lo < hi <= 100")
    lo = nearest_rank_percentile(rho, p_lo)
    hi = nearest_rank_percentile(rho, p_hi)
    if lo == hi:
        if hi == 0.0:
            log.warning("all training residuals are zero; residual risk is constant 0")
            return ResidualNormalizer(lo=0.0, hi=0.0, degenerate_zero=True)
        unique = np.unique(rho)
        gaps = np.diff(unique)
        spread = float(gaps.min()) if gaps.size else float(lo)
        log.warning("residual anchors coincide at %g; widening by %g", lo, spread)
        hi = lo + spread
    return ResidualNormalizer(lo=float(lo), hi=float(hi))


def residual_risk(
    x: np.ndarray, subspace: IdSubspace, normalizer: ResidualNormalizer
) -> float | np.ndarray:
    """Normalized residual risk in [0, 1]."""
    rho = residual_norm(x, subspace)
    return risk_from_norm(rho, normalizer)


def risk_from_norm(rho, normalizer: ResidualNormalizer):
    """Map residual norms through the anchor normalization."""
    if normalizer.degenerate_zero:
        return 0.0 if np.ndim(rho) == 0 else np.zeros(np.shape(rho))
    out = clamp01((np.asarray(rho, dtype=np.float64) - normalizer.lo) / (normalizer.hi - normalizer.lo))
    return float(out) if np.ndim(rho) == 0 else out


__all__ = [
    "IdSubspace",
    "ResidualNormalizer",
    "fit_subspace",
    "residual_norm",
    "fit_normalizer",
    "residual_risk",
    "risk_from_norm",
]
