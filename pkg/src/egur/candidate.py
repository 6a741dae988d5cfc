"""Closed-set candidate generation: linear probe training, softmax confidence, fallbacks.

The candidate for a sample is the argmax class of its logits; confidence is the
softmax maximum. Logits come from a feature pack when the extractor shipped
them, otherwise from a linear probe trained here.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax as _softmax

from .errors import DegenerateDataError, FormatError, SpecError
from ._util import canonical_json

PROBE_MAGIC = b"EGLP"
PROBE_VERSION = 1


@dataclass(frozen=True)
class ProbeHyper:
    """Full-batch gradient-descent hyperparameters for the linear probe."""

    epochs: int = 300
    step_size: float = 0.5
    l2: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class LinearProbe:
    """Multinomial logistic-regression weights plus training metadata."""

    weights: np.ndarray
    bias: np.ndarray
    epochs: int
    step_size: float
    l2: float
    final_loss: float
    loss_curve: np.ndarray

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if feats.shape[1] != self.dim:
            raise SpecError(
                f"feature dimension {feats.shape[1]} does not match probe dimension {self.dim}"
            )
        return feats @ self.weights.T + self.bias


@dataclass(frozen=True)
class CandidateOutput:
    """Candidate class, its confidence, and the full softmax row."""

    candidate: int
    confidence: float
    probabilities: np.ndarray


def probe_objective(w: np.ndarray, b: np.ndarray, features: np.ndarray, labels: np.ndarray,
                    l2: float):
    """Cross-entropy + L2 objective with its analytic gradient: (loss, grad_w, grad_b)."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        p = _softmax(x @ w.T + b, axis=1)
        nll = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300)))
        loss = nll + 0.5 * l2 * np.sum(w * w)
        g = p.copy()
        g[np.arange(n), y] -= 1.0
        g /= n
        return loss, g.T @ x + l2 * w, g.sum(axis=0)


def train_linear_probe(
    features: np.ndarray, labels: np.ndarray, hyper: ProbeHyper = ProbeHyper()
) -> LinearProbe:
    """Fit softmax regression by full-batch gradient descent on cross-entropy + L2.

    Deterministic given hyper.seed. The recorded loss curve has one entry per
    epoch evaluated before that epoch's update, plus the final loss.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    if classes.size < 2:
        raise SpecError("single-class input: probe needs at least 2 classes")
    k = int(y.max()) + 1

    rng = np.random.default_rng(hyper.seed)
    w = 0.01 * rng.standard_normal((k, x.shape[1]))
    b = np.zeros(k)

    losses = []
    for _ in range(hyper.epochs):
        loss, grad_w, grad_b = probe_objective(w, b, x, y, hyper.l2)
        if not np.isfinite(loss):
            raise DegenerateDataError("non-finite loss: step size too large")
        losses.append(loss)
        w -= hyper.step_size * grad_w
        b -= hyper.step_size * grad_b
    final_loss, _, _ = probe_objective(w, b, x, y, hyper.l2)
    if not np.isfinite(final_loss):
        raise DegenerateDataError("non-finite loss: step size too large")
    losses.append(final_loss)

    return LinearProbe(
        weights=w,
        bias=b,
        epochs=hyper.epochs,
        step_size=hyper.step_size,
        l2=hyper.l2,
        final_loss=float(final_loss),
        loss_curve=np.array(losses),
    )


def candidate_outputs(logits: np.ndarray, temperature: float = 1.0) -> list[CandidateOutput]:
    """Softmax rows at the given temperature; argmax ties break to the lowest class id."""
    if temperature <= 0:
        raise SpecError("temperature must be positive")
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.isfinite(z).all():
        raise FormatError("non-finite logit")
    probs = _softmax(z / temperature, axis=1)
    outputs = []
    for row_z, row_p in zip(z, probs):
        cand = int(np.argmax(row_z))
        outputs.append(
            CandidateOutput(candidate=cand, confidence=float(row_p[cand]), probabilities=row_p)
        )
    return outputs


def predict_candidates(
    probe: LinearProbe, features: np.ndarray, temperature: float = 1.0
) -> list[CandidateOutput]:
    """Candidates from probe logits."""
    return candidate_outputs(probe.logits(features), temperature)


def prototype_softmax_fallback(
    prototypes: np.ndarray, features: np.ndarray, temperature: float = 1.0
) -> list[CandidateOutput]:
    """Candidates from negative prototype distances when no probe or logits exist."""
    protos = np.asarray(prototypes, dtype=np.float64)
    if protos.ndim != 2 or protos.shape[0] < 2:
        raise SpecError("need one prototype per known class, at least 2 classes")
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[1] != protos.shape[1]:
        raise SpecError("feature dimension does not match prototypes")
    diff = feats[:, None, :] - protos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    return candidate_outputs(-dist / temperature, temperature=1.0)


def save_probe(probe: LinearProbe, path) -> None:
    """Probe file: magic, version, JSON header length + header, f32 weights then bias."""
    header = canonical_json(
        {
            "class_count": probe.class_count,
            "dim": probe.dim,
            "epochs": probe.epochs,
            "step_size": probe.step_size,
            "l2": probe.l2,
            "final_loss": probe.final_loss,
        }
    ).encode("utf-8")
    buf = bytearray()
    buf += PROBE_MAGIC
    buf += struct.pack("<I", PROBE_VERSION)
    buf += struct.pack("<Q", len(header))
    buf += header
    buf += np.ascontiguousarray(probe.weights, dtype="<f4").tobytes()
    buf += np.ascontiguousarray(probe.bias, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_probe(path) -> LinearProbe:
    data = Path(path).read_bytes()
    if data[:4] != PROBE_MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack("<I", data[4:8])
    if version != PROBE_VERSION:
        raise FormatError(f"version mismatch: got {version}, expected {PROBE_VERSION}")
    (header_len,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"bad probe header: {exc}") from exc
    k, d = int(header["class_count"]), int(header["dim"])
    offset = 16 + header_len
    expected = offset + 4 * k * d + 4 * k
    if len(data) != expected:
        raise FormatError("size mismatch: probe payload length")
    weights = np.frombuffer(data[offset:offset + 4 * k * d], dtype="<f4").reshape(k, d)
    bias = np.frombuffer(data[offset + 4 * k * d:], dtype="<f4")
    return LinearProbe(
        weights=weights.astype(np.float64),
        bias=bias.astype(np.float64),
        epochs=int(header["epochs"]),
        step_size=float(header["step_size"]),
        l2=float(header["l2"]),
        final_loss=float(header["final_loss"]),
        loss_curve=np.array([float(header["final_loss"])]),
    )


__all__ = [
    "ProbeHyper",
    "LinearProbe",
    "CandidateOutput",
    "probe_objective",
    "train_linear_probe",
    "candidate_outputs",
    "predict_candidates",
    "prototype_softmax_fallback",
    "save_probe",
    "load_probe",
]
