"""Optional linear probe trained on extracted known-train features.

Softmax regression by full-batch gradient descent, deterministic for a fixed
seed, used only to stamp closed-set logits into the exported packs.
"""

from __future__ import annotations

import numpy as np

from .errors import ExtractError


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    class_count: int,
    epochs: int = 200,
    step_size: float = 0.5,
    l2: float = 1e-3,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Weights (K, d) and bias (K,) of a cross-entropy + L2 linear classifier."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if class_count < 2:
        raise ExtractError("probe needs at least 2 known classes")
    rng = np.random.default_rng(seed)
    w = 0.01 * rng.standard_normal((class_count, x.shape[1]))
    b = np.zeros(class_count)
    for _ in range(epochs):
        p = _softmax(x @ w.T + b)
        g = p
        g[np.arange(n), y] -= 1.0
        g /= n
        w -= step_size * (g.T @ x + l2 * w)
        b -= step_size * g.sum(axis=0)
    return w, b


def probe_logits(features: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) @ w.T + b


__all__ = ["train_probe", "probe_logits"]
