"""Deterministic image-folder feature exporter for the acceptance engine's formats."""

from .errors import ExtractError
from .encoders import ResizeEncoder, resolve_encoder
from .packio import PACK_MAGIC, PACK_VERSION, pack_bytes, write_manifest
from .probe import probe_logits, train_probe
from .extract import (
    IMAGE_SUFFIXES,
    KNOWN_ROLES,
    ROLES,
    UNKNOWN_ROLES,
    ExtractJob,
    ExtractResult,
    extract,
)

__version__ = "0.1.0"
