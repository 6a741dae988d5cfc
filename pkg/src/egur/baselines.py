"""Scalar knownness scores for comparison harnesses.

Every score is oriented so that higher means more known; sign normalization
happens here so the metrics layer can treat all methods uniformly. Scores for
methods whose formulas live outside this codebase enter through the external
CSV import instead of being reimplemented.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from ._util import pairwise_distances
from .errors import FormatError, SpecError
from .localevidence import ClassIndex
from .residual import IdSubspace, ResidualNormalizer, residual_norm, risk_from_norm

LOGIT_KINDS = ("msp", "energy", "maxlogit", "softmax_entropy")
DISTANCE_KINDS = ("knn", "prototype", "diag_mahalanobis")

VARIANCE_FLOOR = 1e-6


def logit_scores(logits: np.ndarray, kind: str, temperature: float = 1.0) -> np.ndarray:
    """Scores from closed-set logits: msp, energy, maxlogit, or softmax_entropy."""
    if kind not in LOGIT_KINDS:
        raise SpecError(f"unknown logit score kind: {kind}")
    if temperature <= 0:
        raise SpecError("temperature must be positive")
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if z.shape[1] < 2:
        raise SpecError("need at least 2 classes")
    if not np.isfinite(z).all():
        raise FormatError("non-finite logits")
    if kind == "msp":
        return softmax(z / temperature, axis=1).max(axis=1)
    if kind == "energy":
        return temperature * logsumexp(z / temperature, axis=1)
    if kind == "maxlogit":
        return z.max(axis=1)
    p = softmax(z / temperature, axis=1)
    entropy = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=1)
    return -entropy


def distance_scores(
    features: np.ndarray,
    index: ClassIndex,
    kind: str,
    k: int | None = None,
    train_variances: np.ndarray | None = None,
) -> np.ndarray:
    """Negated distance scores: pooled kNN, nearest prototype, diagonal Mahalanobis."""
    if kind not in DISTANCE_KINDS:
        raise SpecError(f"unknown distance score kind: {kind}")
    q = np.atleast_2d(index.transform(features))
    if kind == "knn":
        depth = index.k if k is None else k
        if depth < 1 or depth > index.features.shape[0]:
            raise SpecError("knn depth out of range")
        dmat = np.sort(pairwise_distances(q, index.features), axis=1)
        return -dmat[:, depth - 1]
    if kind == "prototype":
        return -pairwise_distances(q, index.prototypes).min(axis=1)
    variances = class_variances(index) if train_variances is None else train_variances
    scores = np.full(q.shape[0], np.inf)
    for c in range(index.class_count):
        diff = q - index.prototypes[c]
        d2 = np.sum(diff * diff / (variances[c] + VARIANCE_FLOOR), axis=1)
        scores = np.minimum(scores, d2)
    return -scores


def class_variances(index: ClassIndex) -> np.ndarray:
    """Per-class diagonal variances; classes of one sample use the pooled variance."""
    k, d = index.class_count, index.features.shape[1]
    centered_sq = np.empty_like(index.features)
    for c, members in enumerate(index.class_members):
        centered = index.features[members] - index.prototypes[c]
        centered_sq[members] = centered * centered
    pooled = centered_sq.mean(axis=0)
    out = np.empty((k, d))
    for c, members in enumerate(index.class_members):
        out[c] = centered_sq[members].mean(axis=0) if members.size >= 2 else pooled
    return out


def residual_only_score(
    features: np.ndarray,
    index: ClassIndex,
    subspace: IdSubspace,
    normalizer: ResidualNormalizer,
) -> np.ndarray:
    """Negated residual risk; thresholding this score is fusion with alpha = 0."""
    rho = residual_norm(index.transform(features), subspace)
    return -np.asarray(risk_from_norm(rho, normalizer))


def naive_fusion_score(
    msp: np.ndarray,
    r_res: np.ndarray,
    beta: float,
    calib_msp: np.ndarray,
) -> np.ndarray:
    """Affine blend of min-max-normalized confidence and residual knownness.

    The MSP normalization anchors are the known-calibration min and max; the
    map is affine without clipping so both beta endpoints preserve rankings.
    """
    if not 0.0 <= beta <= 1.0:
        raise SpecError("beta must lie in [0, 1]")
    cal = np.asarray(calib_msp, dtype=np.float64)
    lo, hi = float(cal.min()), float(cal.max())
    if hi == lo:
        hi = lo + 1.0
    msp_norm = (np.asarray(msp, dtype=np.float64) - lo) / (hi - lo)
    knownness = 1.0 - np.asarray(r_res, dtype=np.float64)
    return beta * msp_norm + (1.0 - beta) * knownness


def load_external_scores(path) -> dict[str, dict[str, float]]:
    """Read a (sample_id, method, score) CSV into {method: {sample_id: score}}."""
    out: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["sample_id", "method", "score"]:
            raise FormatError("external score CSV must start with header sample_id,method,score")
        for lineno, row in enumerate(reader, start=2):
            if len(row) < 3:
                raise FormatError(f"line {lineno}: expected 3 columns")
            sample_id, method, raw = row[0], row[1], row[2]
            try:
                score = float(raw)
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad score {raw!r}") from exc
            if not np.isfinite(score):
                raise FormatError(f"line {lineno}: non-finite score")
            out.setdefault(method, {})[sample_id] = score
    return out


def external_scores_for(
    table: dict[str, dict[str, float]], method: str, ids
) -> np.ndarray:
    """Scores for the given sample ids; every id must be present for the method."""
    if method not in table:
        raise FormatError(f"external score required for method {method!r}")
    per_id = table[method]
    missing = [sid for sid in ids if sid not in per_id]
    if missing:
        raise FormatError(
            f"external scores for {method!r} missing {len(missing)} sample ids "
            f"(first: {missing[0]!r})"
        )
    return np.array([per_id[sid] for sid in ids])


__all__ = [
    "LOGIT_KINDS",
    "DISTANCE_KINDS",
    "VARIANCE_FLOOR",
    "logit_scores",
    "distance_scores",
    "class_variances",
    "residual_only_score",
    "naive_fusion_score",
    "load_external_scores",
    "external_scores_for",
]
