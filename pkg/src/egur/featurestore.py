"""Feature-pack binary format, dataset manifests, and the synthetic benchmark generator.

A feature pack stores a dense float32 feature matrix with labels, sample ids,
and (optionally) closed-set classifier logits. Label -1 marks unknown samples.
On-disk layout (little-endian):

    magic "EGFP" | version u32 | n u64 | d u64 | K u32 | flags u32
    features n*d f32 | labels n i32 | [logits n*K f32 if flags bit0]
    id block: u32 count, then per id a u32 byte length + UTF-8 payload
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, SpecError
from ._util import sha256_file

PACK_MAGIC = b"EGFP"
PACK_VERSION = 1
_FLAG_LOGITS = 1

REQUIRED_ROLES = ("known_train", "known_calib", "known_test", "unknown_test")
KNOWN_ROLES = ("known_train", "known_calib", "known_test")
UNKNOWN_ROLES = ("unknown_test", "far_ood")


@dataclass(frozen=True)
class FeaturePack:
    """Immutable container for one split's features, labels, ids, optional logits."""

    features: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    logits: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float32))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int32))
        object.__setattr__(self, "ids", tuple(self.ids))
        if self.logits is not None:
            object.__setattr__(self, "logits", np.asarray(self.logits, dtype=np.float32))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        """Raise FormatError on any invariant violation."""
        if self.features.ndim != 2:
            raise FormatError("features must be a 2-D matrix")
        n, d = self.features.shape
        if n < 1:
            raise FormatError("pack must contain at least one sample")
        if d < 2:
            raise FormatError("feature dimension must be at least 2")
        if not np.isfinite(self.features).all():
            raise FormatError("non-finite feature")
        if self.labels.shape != (n,):
            raise FormatError("labels length does not match sample count")
        if (self.labels < -1).any():
            raise FormatError("labels must be -1 or non-negative class ids")
        if len(self.ids) != n:
            raise FormatError("id count does not match sample count")
        if self.logits is not None:
            if self.logits.ndim != 2 or self.logits.shape[0] != n:
                raise FormatError("logits shape does not match sample count")
            k = self.logits.shape[1]
            if k < 2:
                raise FormatError("logits must have at least 2 classes")
            if not np.isfinite(self.logits).all():
                raise FormatError("non-finite logit")
            if (self.labels >= k).any():
                raise FormatError("label exceeds logit class count")


def save_pack(pack: FeaturePack, path) -> None:
    """Write a validated pack to disk; output bytes depend only on the pack contents."""
    pack.validate()
    n, d = pack.features.shape
    k = 0 if pack.logits is None else pack.logits.shape[1]
    flags = _FLAG_LOGITS if pack.logits is not None else 0
    buf = bytearray()
    buf += PACK_MAGIC
    buf += struct.pack("<I", PACK_VERSION)
    buf += struct.pack("<QQ", n, d)
    buf += struct.pack("<II", k, flags)
    buf += np.ascontiguousarray(pack.features, dtype="<f4").tobytes()
    buf += np.ascontiguousarray(pack.labels, dtype="<i4").tobytes()
    if pack.logits is not None:
        buf += np.ascontiguousarray(pack.logits, dtype="<f4").tobytes()
    buf += struct.pack("<I", n)
    for sid in pack.ids:
        raw = sid.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
    Path(path).write_bytes(bytes(buf))


def load_pack(path) -> FeaturePack:
    """Read and validate a pack written by save_pack."""
    data = Path(path).read_bytes()
    cur = _Cursor(data)
    if cur.take(4) != PACK_MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack("<I", cur.take(4))
    if version != PACK_VERSION:
        raise FormatError(f"version mismatch: got {version}, expected {PACK_VERSION}")
    n, d = struct.unpack("<QQ", cur.take(16))
    k, flags = struct.unpack("<II", cur.take(8))
    if flags & ~_FLAG_LOGITS:
        raise FormatError(f"unsupported flags: {flags:#x}")
    features = np.frombuffer(cur.take(n * d * 4), dtype="<f4").reshape(n, d).copy()
    labels = np.frombuffer(cur.take(n * 4), dtype="<i4").copy()
    logits = None
    if flags & _FLAG_LOGITS:
        logits = np.frombuffer(cur.take(n * k * 4), dtype="<f4").reshape(n, k).copy()
    (id_count,) = struct.unpack("<I", cur.take(4))
    if id_count != n:
        raise FormatError("id count does not match sample count")
    ids = []
    for _ in range(id_count):
        (length,) = struct.unpack("<I", cur.take(4))
        try:
            ids.append(cur.take(length).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"bad id encoding: {exc}") from exc
    if cur.remaining() != 0:
        raise FormatError("size mismatch: trailing bytes after payload")
    pack = FeaturePack(features=features, labels=labels, ids=tuple(ids), logits=logits)
    pack.validate()
    return pack


class _Cursor:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, count: int) -> bytes:
        end = self._pos + count
        if end > len(self._data):
            raise FormatError("truncated payload")
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def remaining(self) -> int:
        return len(self._data) - self._pos


@dataclass
class DatasetManifest:
    """Names the split packs, their roles, and integrity checksums."""

    known_class_count: int
    splits: dict[str, str]
    checksums: dict[str, str]
    encoder: str = "unknown"
    seed: int = 0

    def to_json(self) -> str:
        payload = {
            "known_class_count": self.known_class_count,
            "splits": dict(sorted(self.splits.items())),
            "checksums": dict(sorted(self.checksums.items())),
            "encoder": self.encoder,
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(manifest.to_json() + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    for key in ("known_class_count", "splits", "checksums"):
        if key not in payload:
            raise FormatError(f"manifest missing key {key!r}")
    return DatasetManifest(
        known_class_count=int(payload["known_class_count"]),
        splits=dict(payload["splits"]),
        checksums=dict(payload["checksums"]),
        encoder=str(payload.get("encoder", "unknown")),
        seed=int(payload.get("seed", 0)),
    )


def validate_manifest(manifest: DatasetManifest, base_dir) -> list[str]:
    """Check role coverage, file integrity, label hygiene, and split disjointness.

    Returns a list of human-readable diagnostics; empty means the manifest and
    every referenced pack satisfy their contracts.
    """
    base = Path(base_dir)
    diagnostics: list[str] = []
    for role in REQUIRED_ROLES:
        if role not in manifest.splits:
            diagnostics.append(f"missing required split role: {role}")
    if manifest.known_class_count < 2:
        diagnostics.append("known_class_count must be at least 2")

    packs: dict[str, FeaturePack] = {}
    for role, rel in sorted(manifest.splits.items()):
        path = base / rel
        if not path.exists():
            diagnostics.append(f"missing file for role {role}: {rel}")
            continue
        recorded = manifest.checksums.get(rel)
        if recorded is None:
            diagnostics.append(f"missing checksum entry for {rel}")
        elif sha256_file(path) != recorded:
            diagnostics.append(f"checksum mismatch: {rel}")
        try:
            packs[role] = load_pack(path)
        except FormatError as exc:
            diagnostics.append(f"invalid pack for role {role}: {exc}")

    k = manifest.known_class_count
    for role, pack in packs.items():
        if role in KNOWN_ROLES:
            if (pack.labels < 0).any():
                diagnostics.append(f"known split contains unknown label: {role}")
            if (pack.labels >= k).any():
                diagnostics.append(f"known split contains out-of-range label: {role}")
        elif role in UNKNOWN_ROLES:
            if (pack.labels != -1).any():
                diagnostics.append(f"unknown split contains known label: {role}")
        if pack.logits is not None and pack.logits.shape[1] != k:
            diagnostics.append(
                f"logit class count {pack.logits.shape[1]} does not match manifest K={k}: {role}"
            )

    seen: dict[str, str] = {}
    for role, pack in sorted(packs.items()):
        for sid in pack.ids:
            if sid in seen:
                diagnostics.append(f"duplicate sample id across splits: {sid!r} in {seen[sid]} and {role}")
            else:
                seen[sid] = role
    return diagnostics


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the deterministic synthetic near-known-unknown benchmark.

    Known classes are Gaussian clusters around near-orthonormal prototype
    directions. Each known class anchors one unknown cluster displaced by
    `offset_magnitude`, with `in_subspace_fraction` of the squared offset lying
    inside the span of the prototypes and the rest orthogonal to it. Far-OOD
    samples are wide isotropic noise.
    """

    classes: int = 5
    dim: int = 16
    train_per_class: int = 40
    calib_per_class: int = 20
    test_per_class: int = 30
    unknown_per_class: int = 30
    sigma: float = 0.08
    offset_magnitude: float = 0.35
    in_subspace_fraction: float = 0.5
    far_count: int = 100
    far_scale: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2:
            raise SpecError("K < 2")
        if self.dim < 2:
            raise SpecError("d < 2")
        if self.sigma <= 0:
            raise SpecError("sigma must be positive")
        if self.offset_magnitude < 0:
            raise SpecError("offset magnitude must be non-negative")
        if not 0.0 <= self.in_subspace_fraction <= 1.0:
            raise SpecError("in-subspace fraction must lie in [0, 1]")
        for name in ("train_per_class", "calib_per_class", "test_per_class", "unknown_per_class"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be at least 1")
        if self.far_count < 0:
            raise SpecError("far_count must be non-negative")

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(payload) - known
        if extra:
            raise SpecError(f"unknown synthetic spec fields: {sorted(extra)}")
        return cls(**payload)


def generate_synthetic(spec: SyntheticSpec) -> dict[str, FeaturePack]:
    """Generate all split packs for the spec. Pure function of the spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k, d = spec.classes, spec.dim

    prototypes = _prototype_directions(rng, k, d)

    def cluster(center: np.ndarray, count: int) -> np.ndarray:
        return center[None, :] + spec.sigma * rng.standard_normal((count, d))

    packs: dict[str, FeaturePack] = {}
    for role, per_class in (
        ("known_train", spec.train_per_class),
        ("known_calib", spec.calib_per_class),
        ("known_test", spec.test_per_class),
    ):
        feats, labels, ids = [], [], []
        for c in range(k):
            feats.append(cluster(prototypes[c], per_class))
            labels.extend([c] * per_class)
            ids.extend(f"{role}-c{c:02d}-{i:04d}" for i in range(per_class))
        packs[role] = FeaturePack(np.vstack(feats), np.array(labels), tuple(ids))

    feats, ids = [], []
    for c in range(k):
        center = prototypes[c] + spec.offset_magnitude * _offset_direction(
            rng, prototypes, c, spec.in_subspace_fraction
        )
        feats.append(cluster(center, spec.unknown_per_class))
        ids.extend(f"unknown-c{c:02d}-{i:04d}" for i in range(spec.unknown_per_class))
    packs["unknown_test"] = FeaturePack(
        np.vstack(feats), np.full(k * spec.unknown_per_class, -1), tuple(ids)
    )

    if spec.far_count > 0:
        far = spec.far_scale * rng.standard_normal((spec.far_count, d))
        packs["far_ood"] = FeaturePack(
            far, np.full(spec.far_count, -1), tuple(f"far-{i:04d}" for i in range(spec.far_count))
        )
    return packs


def _prototype_directions(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    """Unit prototype directions; orthonormal via QR whenever k <= d."""
    if k <= d:
        raw = rng.standard_normal((d, k))
        q, r = np.linalg.qr(raw)
        q = q * np.sign(np.diag(r))[None, :]
        return q.T.copy()
    raw = rng.standard_normal((k, d))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _offset_direction(
    rng: np.random.Generator, prototypes: np.ndarray, anchor: int, in_fraction: float
) -> np.ndarray:
    """Unit offset with `in_fraction` of its squared norm inside span(prototypes).

    The in-span component is drawn orthogonal to the anchor direction so the
    offset survives L2 normalization instead of collapsing radially.
    """
    k, d = prototypes.shape
    w = rng.standard_normal(k)
    v_in = w @ prototypes
    v_in -= (v_in @ prototypes[anchor]) * prototypes[anchor]
    norm = np.linalg.norm(v_in)
    if norm > 0:
        v_in /= norm

    g = rng.standard_normal(d)
    g -= prototypes.T @ (prototypes @ g)
    norm = np.linalg.norm(g)
    v_out = g / norm if norm > 0 else np.zeros(d)

    return math.sqrt(in_fraction) * v_in + math.sqrt(1.0 - in_fraction) * v_out


def write_dataset(
    packs: dict[str, FeaturePack],
    known_class_count: int,
    out_dir,
    encoder: str = "synthetic",
    seed: int = 0,
) -> tuple[DatasetManifest, Path]:
    """Save packs plus a manifest (with checksums) under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits, checksums = {}, {}
    for role, pack in sorted(packs.items()):
        rel = f"{role}.egfp"
        save_pack(pack, out / rel)
        splits[role] = rel
        checksums[rel] = sha256_file(out / rel)
    manifest = DatasetManifest(
        known_class_count=known_class_count,
        splits=splits,
        checksums=checksums,
        encoder=encoder,
        seed=seed,
    )
    manifest_path = out / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest, manifest_path


def carve_calibration_split(
    train: FeaturePack, fraction: float = 0.2, seed: int = 0
) -> tuple[FeaturePack, FeaturePack]:
    """Split a known-train pack into (train, calib), stratified per class.

    Used when a manifest provides no known_calib role. Each class contributes
    ceil(fraction * class size) samples to the calibration side, chosen by a
    seeded permutation, so repeated carves with one seed are identical.
    """
    rng = np.random.default_rng(seed)
    calib_mask = np.zeros(train.n, dtype=bool)
    for c in np.unique(train.labels):
        idx = np.flatnonzero(train.labels == c)
        take = max(1, int(math.ceil(fraction * idx.size)))
        if take >= idx.size:
            raise SpecError(f"class {c} too small to carve a calibration split")
        chosen = rng.permutation(idx)[:take]
        calib_mask[chosen] = True

    def subset(mask: np.ndarray) -> FeaturePack:
        return FeaturePack(
            features=train.features[mask],
            labels=train.labels[mask],
            ids=tuple(np.array(train.ids, dtype=object)[mask]),
            logits=None if train.logits is None else train.logits[mask],
        )

    return subset(~calib_mask), subset(calib_mask)


__all__ = [
    "FeaturePack",
    "DatasetManifest",
    "SyntheticSpec",
    "save_pack",
    "load_pack",
    "save_manifest",
    "load_manifest",
    "validate_manifest",
    "generate_synthetic",
    "write_dataset",
    "carve_calibration_split",
    "REQUIRED_ROLES",
]
