"""Run configuration: every pipeline hyperparameter with its documented default.

A config round-trips losslessly through its JSON file form; command-line flags
override file values field by field.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import SpecError


def default_seed() -> int:
    """Seed default: the EGUR_SEED environment variable when set, else 0."""
    raw = os.environ.get("EGUR_SEED", "")
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise SpecError(f"EGUR_SEED must be an integer, got {raw!r}") from exc


@dataclass
class RunConfig:
    manifest: str = ""
    out_dir: str = "runs"
    k: int = 5
    m: int = 10
    tau_con: float = 1.5
    tau_pur: float = 0.5
    tau_mar: float = 0.05
    tau_conf: float = 0.5
    checks: tuple[str, ...] = ("sup", "con", "pur", "mar")
    q_sup: float = 0.95
    global_support: bool = False
    normalize: bool = True
    variance_target: float = 0.90
    subspace_dim: int | None = None
    residual_percentiles: tuple[float, float] = (5.0, 95.0)
    kappa: float = 0.2
    t_hc: float = 0.90
    hc_thresholds: tuple[float, ...] = (0.80, 0.85, 0.90, 0.95, 0.99)
    alpha_override: float | None = None
    beta: float = 0.5
    temperature: float = 1.0
    probe_epochs: int = 300
    probe_step_size: float = 0.5
    probe_l2: float = 1e-3
    bootstrap_repeats: int = 1000
    bootstrap_resample: int = 50
    calib_fraction: float = 0.2
    seed: int = 0

    _TUPLE_FIELDS = ("checks", "residual_percentiles", "hc_thresholds")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for name in self._TUPLE_FIELDS:
            out[name] = list(out[name])
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(payload) - known
        if extra:
            raise SpecError(f"unknown config fields: {sorted(extra)}")
        data = dict(payload)
        for name in cls._TUPLE_FIELDS:
            if name in data:
                data[name] = tuple(data[name])
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def validate(self) -> None:
        if not 0.0 <= self.kappa < 1.0:
            raise SpecError("kappa must lie in [0, 1)")
        if not 0.0 <= self.t_hc <= 1.0:
            raise SpecError("t_hc must lie in [0, 1]")
        if self.alpha_override is not None and not 0.0 <= self.alpha_override <= 1.0:
            raise SpecError("alpha override must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise SpecError("beta must lie in [0, 1]")
        if self.temperature <= 0:
            raise SpecError("temperature must be positive")
        if not 0.0 < self.calib_fraction < 1.0:
            raise SpecError("calib fraction must lie in (0, 1)")


__all__ = ["RunConfig", "default_seed"]
