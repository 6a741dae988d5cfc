"""Risk fusion, evidence-weight selection, threshold calibration, and decisions.

The fused risk is a convex combination r = alpha * r_local + (1 - alpha) * r_res.
The evidence weight alpha comes from known-sample statistics alone: a coefficient
of variation comparison picks the residual-dominant endpoint outright, otherwise
a known-accuracy grid search picks alpha_KA and the final alpha steps one grid
point toward residual.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .candidate import (
    LinearProbe,
    ProbeHyper,
    candidate_outputs,
    predict_candidates,
    train_linear_probe,
)
from .config import RunConfig
from .errors import DegenerateDataError, FormatError, SpecError
from .featurestore import (
    DatasetManifest,
    FeaturePack,
    carve_calibration_split,
    load_pack,
    validate_manifest,
)
from .localevidence import (
    ClassIndex,
    EvidenceThresholds,
    calibrate_support_thresholds,
    fit_class_index,
    local_risks,
)
from .residual import (
    IdSubspace,
    ResidualNormalizer,
    fit_normalizer,
    fit_subspace,
    residual_norm,
    risk_from_norm,
)
from ._util import canonical_json

log = logging.getLogger(__name__)

ALPHA_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)

STATE_ACCEPTED = "accepted-known"
STATE_UNSUPPORTED = "unsupported-known-like"
STATE_OOD = "ood-unknown"

MODEL_MAGIC = b"EGMB"
MODEL_VERSION = 1


def fuse_risk(r_local, r_res, alpha: float):
    """Convex combination of the two risks; all inputs must lie in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise SpecError("alpha must lie in [0, 1]")
    rl = np.asarray(r_local, dtype=np.float64)
    rr = np.asarray(r_res, dtype=np.float64)
    if (rl < 0).any() or (rl > 1).any() or (rr < 0).any() or (rr > 1).any():
        raise SpecError("risks must lie in [0, 1]")
    fused = alpha * rl + (1.0 - alpha) * rr
    return float(fused) if fused.ndim == 0 else fused


@dataclass(frozen=True)
class OperatingPoint:
    """Calibrated acceptance threshold for a target known rejection rate."""

    target: float
    tau: float
    achieved: float
    warning: str | None = None


def calibrate_threshold(risks, kappa: float) -> OperatingPoint:
    """Threshold whose achieved known rejection rate is closest to kappa.

    Candidate thresholds are the observed risk values (nearest-rank quantile
    semantics); ties between an over- and an under-rejecting choice resolve
    toward under-rejection. A gap larger than 1/n is reported as a warning.
    """
    r = np.asarray(risks, dtype=np.float64)
    if r.size < 10:
        raise SpecError("need at least 10 calibration risks")
    if not 0.0 <= kappa < 1.0:
        raise SpecError("kappa must lie in [0, 1)")
    candidates = np.unique(r)
    below = np.nextafter(candidates[0], -np.inf)
    if below >= 0.0:
        candidates = np.concatenate([[below], candidates])
    achieved = (r[None, :] > candidates[:, None]).mean(axis=1)
    gaps = np.abs(achieved - kappa)
    best_gap = gaps.min()
    tied = np.flatnonzero(gaps == best_gap)
    pick = tied[np.argmin(achieved[tied])]
    warning = None
    if best_gap > 1.0 / r.size:
        warning = (
            f"target rejection rate {kappa:.4f} unreachable; closest achievable "
            f"is {achieved[pick]:.4f}"
        )
        log.warning(warning)
    return OperatingPoint(
        target=float(kappa),
        tau=float(candidates[pick]),
        achieved=float(achieved[pick]),
        warning=warning,
    )


@dataclass(frozen=True)
class EvidenceWeightSelection:
    """Record of the alpha selection: statistics, branch, and the chosen weight."""

    grid: tuple[float, ...]
    cv_local: float
    cv_res: float
    branch: str
    alpha_ka: float | None
    alpha: float


def _coefficient_of_variation(values: np.ndarray, name: str) -> float:
    mean = float(values.mean())
    if mean <= 0.0:
        raise DegenerateDataError(f"degenerate risk distribution: {name} has zero mean")
    return float(values.std() / mean)


def resolve_alpha(cv_local: float, cv_res: float, alpha_ka: float | None = None):
    """The selection rule on precomputed statistics: (branch, alpha).

    cv_res < cv_local picks the residual-dominant endpoint; otherwise the final
    alpha is one grid step below alpha_KA, floored at the grid minimum.
    """
    if cv_res < cv_local:
        return "residual-endpoint", ALPHA_GRID[0]
    if alpha_ka is None:
        raise SpecError("known-accuracy branch requires alpha_ka")
    try:
        i = ALPHA_GRID.index(alpha_ka)
    except ValueError as exc:
        raise SpecError(f"alpha_ka {alpha_ka} is not on the grid {ALPHA_GRID}") from exc
    return "known-acc", ALPHA_GRID[max(i - 1, 0)]


def select_alpha(r_local, r_res, correct, kappa: float) -> EvidenceWeightSelection:
    """Select the evidence weight from known calibration samples only."""
    rl = np.asarray(r_local, dtype=np.float64)
    rr = np.asarray(r_res, dtype=np.float64)
    ok = np.asarray(correct, dtype=bool)
    cv_local = _coefficient_of_variation(rl, "local risk")
    cv_res = _coefficient_of_variation(rr, "residual risk")
    if cv_res < cv_local:
        branch, alpha = resolve_alpha(cv_local, cv_res)
        return EvidenceWeightSelection(ALPHA_GRID, cv_local, cv_res, branch, None, alpha)
    best_acc = -1.0
    best_i = 0
    for i, a in enumerate(ALPHA_GRID):
        fused = fuse_risk(rl, rr, a)
        point = calibrate_threshold(fused, kappa)
        acc = float(np.mean(ok & (fused <= point.tau)))
        if acc >= best_acc:
            best_acc, best_i = acc, i
    alpha_ka = ALPHA_GRID[best_i]
    branch, alpha = resolve_alpha(cv_local, cv_res, alpha_ka)
    return EvidenceWeightSelection(ALPHA_GRID, cv_local, cv_res, branch, alpha_ka, alpha)


@dataclass(frozen=True)
class Decision:
    """Per-sample outcome: risks plus one of the three states."""

    candidate: int
    confidence: float
    r_local: float
    r_res: float
    r_fused: float
    state: str


def decide(
    candidate: int,
    confidence: float,
    r_local: float,
    r_res: float,
    alpha: float,
    tau: float,
    t_hc: float = 0.90,
) -> Decision:
    """Accept when the fused risk is at or below tau; split rejections by confidence."""
    fused = fuse_risk(r_local, r_res, alpha)
    if fused <= tau:
        state = STATE_ACCEPTED
    elif confidence >= t_hc:
        state = STATE_UNSUPPORTED
    else:
        state = STATE_OOD
    return Decision(
        candidate=int(candidate),
        confidence=float(confidence),
        r_local=float(r_local),
        r_res=float(r_res),
        r_fused=float(fused),
        state=state,
    )


@dataclass
class FittedModel:
    """Every fitted component plus the records needed to reproduce decisions."""

    config: RunConfig
    index: ClassIndex
    thresholds: EvidenceThresholds
    subspace: IdSubspace
    normalizer: ResidualNormalizer
    probe: LinearProbe | None
    logits_source: str
    selection: EvidenceWeightSelection
    operating_point: OperatingPoint
    manifest_checksums: dict[str, str]


def _candidate_arrays(model_probe, logits_source, temperature, index, pack: FeaturePack):
    if logits_source == "pack":
        if pack.logits is None:
            raise FormatError("pack has no logits but the model uses pack logits")
        outputs = candidate_outputs(pack.logits, temperature)
    else:
        outputs = predict_candidates(model_probe, index.transform(pack.features), temperature)
    cand = np.array([o.candidate for o in outputs], dtype=np.int64)
    conf = np.array([o.confidence for o in outputs])
    return cand, conf


def fit_pipeline(manifest: DatasetManifest, base_dir, config: RunConfig) -> FittedModel:
    """Fit every component in order: index, thresholds, subspace, normalizer,
    candidate source, evidence weight, acceptance threshold."""
    config.validate()
    diagnostics = validate_manifest(manifest, base_dir)
    if diagnostics:
        raise FormatError("manifest validation failed: " + "; ".join(diagnostics))
    base = Path(base_dir)
    train = load_pack(base / manifest.splits["known_train"])
    if "known_calib" in manifest.splits:
        calib = load_pack(base / manifest.splits["known_calib"])
    else:
        train, calib = carve_calibration_split(train, config.calib_fraction, config.seed)
        log.info("carved %d calibration samples from known_train", calib.n)

    index = fit_class_index(
        train.features, train.labels, k=config.k, m=config.m, normalize=config.normalize
    )
    tau_sup = calibrate_support_thresholds(index, config.q_sup, config.global_support)
    thresholds = EvidenceThresholds(
        tau_sup=tau_sup,
        tau_con=config.tau_con,
        tau_pur=config.tau_pur,
        tau_mar=config.tau_mar,
        tau_conf=config.tau_conf,
        active=tuple(config.checks),
    )
    thresholds.validate()

    subspace = fit_subspace(index.features, config.variance_target, config.subspace_dim)
    train_rho = residual_norm(index.features, subspace)
    normalizer = fit_normalizer(train_rho, tuple(config.residual_percentiles))

    if train.logits is not None and calib.logits is not None:
        probe, logits_source = None, "pack"
    else:
        hyper = ProbeHyper(
            epochs=config.probe_epochs,
            step_size=config.probe_step_size,
            l2=config.probe_l2,
            seed=config.seed,
        )
        probe = train_linear_probe(index.features, train.labels, hyper)
        logits_source = "probe"

    cand, conf = _candidate_arrays(probe, logits_source, config.temperature, index, calib)
    r_local = local_risks(calib.features, cand, index, thresholds)
    r_res = risk_from_norm(residual_norm(index.transform(calib.features), subspace), normalizer)
    correct = cand == calib.labels.astype(np.int64)

    if config.alpha_override is not None:
        cv_local = _coefficient_of_variation(r_local, "local risk")
        cv_res = _coefficient_of_variation(r_res, "residual risk")
        selection = EvidenceWeightSelection(
            ALPHA_GRID, cv_local, cv_res, "override", None, config.alpha_override
        )
    else:
        selection = select_alpha(r_local, r_res, correct, config.kappa)

    fused = fuse_risk(r_local, r_res, selection.alpha)
    operating_point = calibrate_threshold(fused, config.kappa)

    return FittedModel(
        config=config,
        index=index,
        thresholds=thresholds,
        subspace=subspace,
        normalizer=normalizer,
        probe=probe,
        logits_source=logits_source,
        selection=selection,
        operating_point=operating_point,
        manifest_checksums=dict(manifest.checksums),
    )


def evaluate_pack(model: FittedModel, pack: FeaturePack) -> dict:
    """Risks, candidates, acceptance flags, and states for one pack."""
    cand, conf = _candidate_arrays(
        model.probe, model.logits_source, model.config.temperature, model.index, pack
    )
    r_local = local_risks(pack.features, cand, model.index, model.thresholds)
    rho = residual_norm(model.index.transform(pack.features), model.subspace)
    r_res = np.asarray(risk_from_norm(rho, model.normalizer))
    fused = fuse_risk(r_local, r_res, model.selection.alpha)
    accepted = fused <= model.operating_point.tau
    states = np.where(
        accepted,
        STATE_ACCEPTED,
        np.where(conf >= model.config.t_hc, STATE_UNSUPPORTED, STATE_OOD),
    )
    return {
        "candidate": cand,
        "confidence": conf,
        "r_local": r_local,
        "r_res": r_res,
        "r_fused": fused,
        "accepted": accepted,
        "state": states,
    }


_SECTION_ORDER = (
    "index_features",
    "index_labels",
    "prototypes",
    "tau_sup",
    "subspace_mean",
    "subspace_basis",
    "probe_weights",
    "probe_bias",
)


def save_model(model: FittedModel, path) -> None:
    """Single-file bundle: JSON header plus framed float64/int64 sections."""
    sections: dict[str, np.ndarray] = {
        "index_features": np.asarray(model.index.features, dtype=np.float64),
        "index_labels": np.asarray(model.index.labels, dtype=np.int64),
        "prototypes": np.asarray(model.index.prototypes, dtype=np.float64),
        "tau_sup": np.asarray(model.thresholds.tau_sup, dtype=np.float64),
        "subspace_mean": np.asarray(model.subspace.mean, dtype=np.float64),
        "subspace_basis": np.asarray(model.subspace.basis, dtype=np.float64),
    }
    if model.probe is not None:
        sections["probe_weights"] = np.asarray(model.probe.weights, dtype=np.float64)
        sections["probe_bias"] = np.asarray(model.probe.bias, dtype=np.float64)

    table = []
    payload = bytearray()
    for name in _SECTION_ORDER:
        if name not in sections:
            continue
        arr = np.ascontiguousarray(sections[name])
        table.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        payload += arr.tobytes()

    header = {
        "config": model.config.to_dict(),
        "logits_source": model.logits_source,
        "thresholds": {
            "tau_con": model.thresholds.tau_con,
            "tau_pur": model.thresholds.tau_pur,
            "tau_mar": model.thresholds.tau_mar,
            "tau_conf": model.thresholds.tau_conf,
            "active": list(model.thresholds.active),
        },
        "normalizer": {
            "lo": model.normalizer.lo,
            "hi": model.normalizer.hi,
            "degenerate_zero": model.normalizer.degenerate_zero,
        },
        "subspace": {"retained_variance": model.subspace.retained_variance},
        "selection": {
            "grid": list(model.selection.grid),
            "cv_local": model.selection.cv_local,
            "cv_res": model.selection.cv_res,
            "branch": model.selection.branch,
            "alpha_ka": model.selection.alpha_ka,
            "alpha": model.selection.alpha,
        },
        "operating_point": {
            "target": model.operating_point.target,
            "tau": model.operating_point.tau,
            "achieved": model.operating_point.achieved,
            "warning": model.operating_point.warning,
        },
        "probe": None
        if model.probe is None
        else {
            "epochs": model.probe.epochs,
            "step_size": model.probe.step_size,
            "l2": model.probe.l2,
            "final_loss": model.probe.final_loss,
        },
        "manifest_checksums": dict(model.manifest_checksums),
        "sections": table,
    }
    header_bytes = canonical_json(header).encode("utf-8")
    buf = bytearray()
    buf += MODEL_MAGIC
    buf += struct.pack("<I", MODEL_VERSION)
    buf += struct.pack("<Q", len(header_bytes))
    buf += header_bytes
    buf += payload
    Path(path).write_bytes(bytes(buf))


def load_model(path) -> FittedModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack("<I", data[4:8])
    if version != MODEL_VERSION:
        raise FormatError(f"version mismatch: got {version}, expected {MODEL_VERSION}")
    (header_len,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"bad bundle header: {exc}") from exc

    offset = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["sections"]:
        shape = tuple(entry["shape"])
        dtype = np.dtype(entry["dtype"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError("truncated payload")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise FormatError("size mismatch: trailing bytes after payload")

    config = RunConfig.from_dict(header["config"])
    labels = arrays["index_labels"]
    members = tuple(
        np.flatnonzero(labels == c) for c in range(int(labels.max()) + 1)
    )
    index = ClassIndex(
        features=arrays["index_features"],
        labels=labels,
        class_members=members,
        prototypes=arrays["prototypes"],
        k=config.k,
        m=config.m,
        normalize=config.normalize,
    )
    th = header["thresholds"]
    thresholds = EvidenceThresholds(
        tau_sup=arrays["tau_sup"],
        tau_con=th["tau_con"],
        tau_pur=th["tau_pur"],
        tau_mar=th["tau_mar"],
        tau_conf=th["tau_conf"],
        active=tuple(th["active"]),
    )
    subspace = IdSubspace(
        mean=arrays["subspace_mean"],
        basis=arrays["subspace_basis"],
        retained_variance=header["subspace"]["retained_variance"],
    )
    nz = header["normalizer"]
    normalizer = ResidualNormalizer(lo=nz["lo"], hi=nz["hi"], degenerate_zero=nz["degenerate_zero"])
    probe = None
    if header["probe"] is not None:
        meta = header["probe"]
        probe = LinearProbe(
            weights=arrays["probe_weights"],
            bias=arrays["probe_bias"],
            epochs=int(meta["epochs"]),
            step_size=float(meta["step_size"]),
            l2=float(meta["l2"]),
            final_loss=float(meta["final_loss"]),
            loss_curve=np.array([float(meta["final_loss"])]),
        )
    sel = header["selection"]
    selection = EvidenceWeightSelection(
        grid=tuple(sel["grid"]),
        cv_local=sel["cv_local"],
        cv_res=sel["cv_res"],
        branch=sel["branch"],
        alpha_ka=sel["alpha_ka"],
        alpha=sel["alpha"],
    )
    op = header["operating_point"]
    operating_point = OperatingPoint(
        target=op["target"], tau=op["tau"], achieved=op["achieved"], warning=op["warning"]
    )
    return FittedModel(
        config=config,
        index=index,
        thresholds=thresholds,
        subspace=subspace,
        normalizer=normalizer,
        probe=probe,
        logits_source=header["logits_source"],
        selection=selection,
        operating_point=operating_point,
        manifest_checksums=dict(header["manifest_checksums"]),
    )


__all__ = [
    "ALPHA_GRID",
    "STATE_ACCEPTED",
    "STATE_UNSUPPORTED",
    "STATE_OOD",
    "fuse_risk",
    "OperatingPoint",
    "calibrate_threshold",
    "EvidenceWeightSelection",
    "resolve_alpha",
    "select_alpha",
    "Decision",
    "decide",
    "FittedModel",
    "fit_pipeline",
    "evaluate_pack",
    "save_model",
    "load_model",
]
