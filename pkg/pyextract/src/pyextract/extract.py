"""Labeled image folders to engine-ready feature packs plus a manifest.

Known split roots contain one subfolder per class; unknown split roots may
have any layout. Sample ids are role-qualified posix relative paths, which
keeps ids unique across splits and stable as a join key for external scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import resolve_encoder
from .errors import ExtractError
from .packio import pack_bytes, write_manifest
from .probe import probe_logits, train_probe

log = logging.getLogger(__name__)

KNOWN_ROLES = ("known_train", "known_calib", "known_test")
UNKNOWN_ROLES = ("unknown_test", "far_ood")
ROLES = KNOWN_ROLES + UNKNOWN_ROLES

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclass(frozen=True)
class ExtractJob:
    """One export run: split image roots, encoder tag, batching, output."""

    roots: dict[str, Path]
    out_dir: Path
    encoder: str = "gray-8"
    batch_size: int = 32
    device: str = "cpu"
    with_probe: bool = False
    probe_seed: int = 0

    def validate(self) -> None:
        if not self.roots:
            raise ExtractError("no split roots given")
        bad = sorted(set(self.roots) - set(ROLES))
        if bad:
            raise ExtractError(f"unknown split roles: {bad}; valid roles: {list(ROLES)}")
        if not any(role in KNOWN_ROLES for role in self.roots):
            raise ExtractError("at least one known split root is required")
        if self.with_probe and "known_train" not in self.roots:
            raise ExtractError("probe training requires a known_train root")
        if self.batch_size < 1:
            raise ExtractError("batch size must be at least 1")
        for role, root in self.roots.items():
            if not Path(root).is_dir():
                raise ExtractError(f"split root is not a directory: {role}={root}")


@dataclass(frozen=True)
class ExtractResult:
    """Where the export landed and what it contains."""

    manifest_path: Path
    split_files: dict[str, str]
    counts: dict[str, int]
    skipped: dict[str, tuple[str, ...]]
    class_names: tuple[str, ...]
    encoder_dim: int = field(default=0)


def _discover(root: Path, role: str) -> list[tuple[str, Path]]:
    """(sample id, path) pairs in lexicographic id order."""
    entries = []
    for path in root.rglob("*"):
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
            rel = path.relative_to(root).as_posix()
            entries.append((f"{role}/{rel}", path))
    entries.sort(key=lambda pair: pair[0])
    return entries


def _class_folder(root: Path, path: Path, role: str) -> str:
    rel = path.relative_to(root)
    if len(rel.parts) < 2:
        raise ExtractError(
            f"image outside a class folder in known split {role}: {rel.as_posix()}"
        )
    return rel.parts[0]


def _encode_split(role, entries, encoder, batch_size):
    """Encode readable images in batches; returns (ids, features, skipped ids)."""
    kept_ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    for start in range(0, len(entries), batch_size):
        batch = entries[start:start + batch_size]
        images = []
        batch_ids = []
        for sid, path in batch:
            try:
                with Image.open(path) as handle:
                    handle.load()
                    images.append(handle.copy())
                batch_ids.append(sid)
            except (UnidentifiedImageError, OSError) as exc:
                skipped.append(sid)
                log.warning("skipping unreadable image %s: %s", sid, exc)
        if images:
            rows.append(encoder.encode(images))
            kept_ids.extend(batch_ids)
    if not kept_ids:
        raise ExtractError(f"empty split after decoding: {role}")
    return kept_ids, np.vstack(rows), tuple(skipped)


def extract(job: ExtractJob) -> ExtractResult:
    """Run the export; one pack per split root plus manifest.json in out_dir."""
    job.validate()
    encoder = resolve_encoder(job.encoder)
    roots = {role: Path(root) for role, root in job.roots.items()}

    discovered = {role: _discover(root, role) for role, root in roots.items()}
    class_names = sorted(
        {
            _class_folder(roots[role], path, role)
            for role in roots
            if role in KNOWN_ROLES
            for _, path in discovered[role]
        }
    )
    if len(class_names) < 2:
        raise ExtractError(f"need at least 2 known classes, found {len(class_names)}")
    class_to_id = {name: i for i, name in enumerate(class_names)}

    splits = {}
    skipped = {}
    for role, entries in discovered.items():
        ids, features, dropped = _encode_split(role, entries, encoder, job.batch_size)
        if role in KNOWN_ROLES:
            by_id = dict(entries)
            labels = np.array(
                [class_to_id[_class_folder(roots[role], by_id[sid], role)] for sid in ids],
                dtype=np.int32,
            )
        else:
            labels = np.full(len(ids), -1, dtype=np.int32)
        splits[role] = {"ids": tuple(ids), "features": features, "labels": labels}
        skipped[role] = dropped

    logits = {role: None for role in splits}
    if job.with_probe:
        train = splits["known_train"]
        w, b = train_probe(
            train["features"], train["labels"], len(class_names), seed=job.probe_seed
        )
        logits = {
            role: probe_logits(split["features"], w, b).astype(np.float32)
            for role, split in splits.items()
        }

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_files = {}
    for role, split in sorted(splits.items()):
        rel = f"{role}.egfp"
        payload = pack_bytes(split["features"], split["labels"], split["ids"], logits[role])
        (out / rel).write_bytes(payload)
        split_files[role] = rel

    manifest_path = write_manifest(
        out, len(class_names), split_files, encoder=job.encoder, seed=job.probe_seed
    )
    return ExtractResult(
        manifest_path=manifest_path,
        split_files=split_files,
        counts={role: len(split["ids"]) for role, split in splits.items()},
        skipped=skipped,
        class_names=tuple(class_names),
        encoder_dim=encoder.dim,
    )


__all__ = [
    "KNOWN_ROLES",
    "UNKNOWN_ROLES",
    "ROLES",
    "IMAGE_SUFFIXES",
    "ExtractJob",
    "ExtractResult",
    "extract",
]
