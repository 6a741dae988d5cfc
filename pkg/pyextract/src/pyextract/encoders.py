"""Deterministic image encoders resolved from free-text tags.

Two parametric families cover desk-scale use without any model download:
"gray-<side>" flattens a grayscale resize, "rgb-<side>" a color resize. Any
heavier pretrained encoder can slot in behind the same two-method surface.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ExtractError

_TAG_PATTERN = re.compile(r"^(gray|rgb)-(\d{1,2})$")
_MIN_SIDE = 2
_MAX_SIDE = 64


@dataclass(frozen=True)
class ResizeEncoder:
    """Fixed-size resize followed by flattening to [0, 1] floats."""

    tag: str
    mode: str
    side: int

    @property
    def dim(self) -> int:
        channels = 1 if self.mode == "L" else 3
        return channels * self.side * self.side

    def encode(self, images: list[Image.Image]) -> np.ndarray:
        rows = np.empty((len(images), self.dim), dtype=np.float32)
        for i, image in enumerate(images):
            resized = image.convert(self.mode).resize(
                (self.side, self.side), Image.Resampling.BILINEAR
            )
            rows[i] = np.asarray(resized, dtype=np.float32).reshape(-1) / 255.0
        return rows


def resolve_encoder(tag: str) -> ResizeEncoder:
    """Encoder instance for a tag; raises ExtractError on unsupported tags."""
    match = _TAG_PATTERN.match(tag)
    if match is None:
        raise ExtractError(
            f"unknown encoder tag {tag!r}; supported: gray-<side>, rgb-<side> "
            f"with side in [{_MIN_SIDE}, {_MAX_SIDE}]"
        )
    family, raw_side = match.groups()
    side = int(raw_side)
    if not _MIN_SIDE <= side <= _MAX_SIDE:
        raise ExtractError(
            f"encoder side {side} out of range [{_MIN_SIDE}, {_MAX_SIDE}]"
        )
    return ResizeEncoder(tag=tag, mode="L" if family == "gray" else "RGB", side=side)


__all__ = ["ResizeEncoder", "resolve_encoder"]
