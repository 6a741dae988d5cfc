"""Small numeric helpers shared by several modules."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np


def clamp01(value):
    """Clamp a scalar or array into [0, 1]; ±inf map to the endpoints."""
    return np.minimum(np.maximum(value, 0.0), 1.0)


def l2_normalize(features: np.ndarray) -> np.ndarray:
    """Scale rows (or a single vector) to unit L2 norm. Zero rows are left unchanged."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        norm = np.linalg.norm(arr)
        return arr if norm == 0.0 else arr / norm
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return arr / safe


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix via the direct formula sqrt(sum((a-b)^2)).

    Chosen over dot-product expansions so exhaustive-scan oracle tests can
    reproduce every distance bit for bit.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def nearest_rank_quantile(values, q: float) -> float:
    """Nearest-rank q-quantile: the ceil(q*n)-th smallest value, q in [0, 1]."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    n = arr.size
    if n == 0:
        raise ValueError("quantile of empty sequence")
    rank = min(max(int(math.ceil(q * n)), 1), n)
    return float(arr[rank - 1])


def nearest_rank_percentile(values, p: float) -> float:
    """Nearest-rank percentile with p in [0, 100]."""
    return nearest_rank_quantile(values, p / 100.0)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, compact separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
