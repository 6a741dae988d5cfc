"""Writers for the engine's feature-pack binary format and dataset manifest.

Layout (little-endian), kept bit-exact with the consuming engine:

    magic "EGFP" | version u32 | n u64 | d u64 | K u32 | flags u32
    features n*d f32 | labels n i32 | [logits n*K f32 if flags bit0]
    id block: u32 count, then per id a u32 byte length + UTF-8 payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ExtractError

PACK_MAGIC = b"EGFP"
PACK_VERSION = 1
_FLAG_LOGITS = 1


def pack_bytes(
    features: np.ndarray,
    labels: np.ndarray,
    ids: tuple[str, ...],
    logits: np.ndarray | None = None,
) -> bytes:
    feats = np.ascontiguousarray(features, dtype="<f4")
    labs = np.ascontiguousarray(labels, dtype="<i4")
    n, d = feats.shape
    if labs.shape != (n,) or len(ids) != n:
        raise ExtractError("pack arrays do not align")
    k = 0 if logits is None else logits.shape[1]
    flags = _FLAG_LOGITS if logits is not None else 0
    buf = bytearray()
    buf += PACK_MAGIC
    buf += struct.pack("<I", PACK_VERSION)
    buf += struct.pack("<QQ", n, d)
    buf += struct.pack("<II", k, flags)
    buf += feats.tobytes()
    buf += labs.tobytes()
    if logits is not None:
        buf += np.ascontiguousarray(logits, dtype="<f4").tobytes()
    buf += struct.pack("<I", n)
    for sid in ids:
        raw = sid.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
    return bytes(buf)


def write_manifest(
    out_dir,
    known_class_count: int,
    split_files: dict[str, str],
    encoder: str,
    seed: int = 0,
) -> Path:
    """Manifest JSON naming each split pack with its sha256 checksum."""
    out = Path(out_dir)
    checksums = {
        rel: hashlib.sha256((out / rel).read_bytes()).hexdigest()
        for rel in split_files.values()
    }
    payload = {
        "known_class_count": known_class_count,
        "splits": dict(sorted(split_files.items())),
        "checksums": dict(sorted(checksums.items())),
        "encoder": encoder,
        "seed": seed,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


__all__ = ["PACK_MAGIC", "PACK_VERSION", "pack_bytes", "write_manifest"]
