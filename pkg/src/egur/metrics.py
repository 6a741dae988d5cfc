"""Evaluation metrics, matched-rejection re-thresholding, bootstrap, and sweeps.

Conventions: acceptance flags are booleans, confidences live in [0, 1], scalar
scores are oriented higher = known. The high-confidence false-acceptance rate
is undefined (None, rendered "n/a") when no unknown sample reaches the
confidence threshold; it is never silently zero.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import SpecError
from .fusion import calibrate_threshold

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalInputs:
    """Per-split arrays needed by every metric."""

    known_correct: np.ndarray
    known_accepted: np.ndarray
    unknown_accepted: np.ndarray
    unknown_confidence: np.ndarray
    unknown_class_ids: tuple[str, ...] | None = None
    far_accepted: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "known_correct", np.asarray(self.known_correct, dtype=bool))
        object.__setattr__(self, "known_accepted", np.asarray(self.known_accepted, dtype=bool))
        object.__setattr__(self, "unknown_accepted", np.asarray(self.unknown_accepted, dtype=bool))
        object.__setattr__(
            self, "unknown_confidence", np.asarray(self.unknown_confidence, dtype=np.float64)
        )
        if self.far_accepted is not None:
            object.__setattr__(self, "far_accepted", np.asarray(self.far_accepted, dtype=bool))


def core_rates(inputs: EvalInputs) -> dict[str, float]:
    """known_acc, krr, and fkar from acceptance flags and correctness."""
    if inputs.known_correct.size == 0 or inputs.unknown_accepted.size == 0:
        raise SpecError("empty split")
    known_acc = float(np.mean(inputs.known_correct & inputs.known_accepted))
    krr = float(np.mean(~inputs.known_accepted))
    fkar = float(np.mean(inputs.unknown_accepted))
    return {"known_acc": known_acc, "krr": krr, "fkar": fkar}


def hc_fkar_at(inputs: EvalInputs, t: float) -> float | None:
    """Accepted fraction of unknowns with confidence >= t; None when none reach t."""
    return _hc_rate(inputs.unknown_confidence, inputs.unknown_accepted, t)


def _hc_rate(confidence: np.ndarray, accepted: np.ndarray, t: float) -> float | None:
    if not 0.0 <= t <= 1.0:
        raise SpecError("t must lie in [0, 1]")
    high = confidence >= t
    denom = int(high.sum())
    if denom == 0:
        return None
    return float((high & accepted).sum() / denom)


def auroc(known_scores, unknown_scores) -> float:
    """Probability a random known outscores a random unknown; ties count one half."""
    k = np.asarray(known_scores, dtype=np.float64)
    u = np.asarray(unknown_scores, dtype=np.float64)
    if k.size == 0 or u.size == 0:
        raise SpecError("empty score set")
    ranks = rankdata(np.concatenate([k, u]))
    rank_sum = ranks[: k.size].sum()
    return float((rank_sum - k.size * (k.size + 1) / 2.0) / (k.size * u.size))


def fpr_at_tpr(known_scores, unknown_scores, tpr: float = 0.95) -> float:
    """Unknown fraction at or above the loosest threshold keeping tpr of knowns."""
    k = np.asarray(known_scores, dtype=np.float64)
    u = np.asarray(unknown_scores, dtype=np.float64)
    if k.size == 0 or u.size == 0:
        raise SpecError("empty score set")
    if not 0.0 < tpr <= 1.0:
        raise SpecError("tpr must lie in (0, 1]")
    count = int(np.ceil(tpr * k.size))
    threshold = np.sort(k)[::-1][count - 1]
    return float(np.mean(u >= threshold))


@dataclass(frozen=True)
class MatchedThreshold:
    """Score threshold matched to a target known rejection rate."""

    target: float
    threshold: float
    achieved: float
    warning: str | None = None


def matched_krr_threshold(known_scores, kappa: float) -> MatchedThreshold:
    """Threshold on a higher-is-known score whose rejection rate is closest to kappa.

    Accepting means score >= threshold. Candidate thresholds are the observed
    scores plus one value just above the maximum; ties resolve toward
    under-rejection.
    """
    s = np.asarray(known_scores, dtype=np.float64)
    if s.size == 0:
        raise SpecError("empty score set")
    if not 0.0 <= kappa < 1.0:
        raise SpecError("kappa must lie in [0, 1)")
    candidates = np.unique(s)
    candidates = np.concatenate([candidates, [np.nextafter(candidates[-1], np.inf)]])
    achieved = (s[None, :] < candidates[:, None]).mean(axis=1)
    gaps = np.abs(achieved - kappa)
    best_gap = gaps.min()
    tied = np.flatnonzero(gaps == best_gap)
    pick = tied[np.argmin(achieved[tied])]
    warning = None
    if best_gap > 1.0 / s.size:
        warning = (
            f"target rejection rate {kappa:.4f} unreachable; closest achievable "
            f"is {achieved[pick]:.4f}"
        )
        log.warning(warning)
    return MatchedThreshold(
        target=float(kappa),
        threshold=float(candidates[pick]),
        achieved=float(achieved[pick]),
        warning=warning,
    )


@dataclass(frozen=True)
class BootstrapResult:
    """Mean and population std of FKAR and HC-FKAR over resampled unknown sets."""

    repeats: int
    resample_size: int
    fkar_mean: float
    fkar_std: float
    hc_fkar_mean: float | None
    hc_fkar_std: float | None
    hc_undefined_repeats: int


def bootstrap_stratified(
    unknown_confidence,
    unknown_accepted,
    class_ids,
    resample_size: int,
    repeats: int,
    seed: int,
    t_hc: float = 0.90,
) -> BootstrapResult:
    """Class-stratified bootstrap over unknown records with fixed acceptance flags.

    Each repeat draws resample_size records with replacement from every class
    (classes in sorted id order; repeat r uses default_rng(seed + r)) and
    recomputes FKAR and HC-FKAR on the resampled set. Repeats where HC-FKAR is
    undefined are excluded from its mean/std and counted.
    """
    conf = np.asarray(unknown_confidence, dtype=np.float64)
    acc = np.asarray(unknown_accepted, dtype=bool)
    ids = list(class_ids)
    if len(ids) != conf.size or conf.size != acc.size:
        raise SpecError("bootstrap inputs do not align")
    if repeats < 1 or resample_size < 1:
        raise SpecError("repeats and resample size must be at least 1")
    classes = sorted(set(ids))
    pools = [np.flatnonzero(np.array(ids, dtype=object) == c) for c in classes]
    for c, pool in zip(classes, pools):
        if pool.size == 0:
            raise SpecError(f"class with zero records: {c}")

    fkars = np.empty(repeats)
    hcs: list[float] = []
    undefined = 0
    for r in range(repeats):
        rng = np.random.default_rng(seed + r)
        chosen = [pool[rng.integers(0, pool.size, size=resample_size)] for pool in pools]
        sel = np.concatenate(chosen)
        fkars[r] = acc[sel].mean()
        hc = _hc_rate(conf[sel], acc[sel], t_hc)
        if hc is None:
            undefined += 1
        else:
            hcs.append(hc)

    hc_arr = np.array(hcs)
    return BootstrapResult(
        repeats=repeats,
        resample_size=resample_size,
        fkar_mean=float(fkars.mean()),
        fkar_std=float(fkars.std()),
        hc_fkar_mean=float(hc_arr.mean()) if hc_arr.size else None,
        hc_fkar_std=float(hc_arr.std()) if hc_arr.size else None,
        hc_undefined_repeats=undefined,
    )


@dataclass(frozen=True)
class SweepRow:
    """One calibrated operating point in a sweep table."""

    target: float
    achieved_krr: float
    known_acc: float
    fkar: float
    hc_fkar: float | None
    warning: str | None = None


def sweep_risk(
    calib_risks,
    known_risks,
    known_correct,
    unknown_risks,
    unknown_confidence,
    targets,
    t_hc: float = 0.90,
) -> list[SweepRow]:
    """Operating-point rows for a risk (accept when risk <= threshold)."""
    calib = np.asarray(calib_risks, dtype=np.float64)
    kr = np.asarray(known_risks, dtype=np.float64)
    ok = np.asarray(known_correct, dtype=bool)
    ur = np.asarray(unknown_risks, dtype=np.float64)
    uq = np.asarray(unknown_confidence, dtype=np.float64)
    rows = []
    for target in targets:
        point = calibrate_threshold(calib, float(target))
        ka = kr <= point.tau
        ua = ur <= point.tau
        rows.append(
            SweepRow(
                target=float(target),
                achieved_krr=float(np.mean(~ka)),
                known_acc=float(np.mean(ok & ka)),
                fkar=float(np.mean(ua)),
                hc_fkar=_hc_rate(uq, ua, t_hc),
                warning=point.warning,
            )
        )
    return rows


def sweep_score(
    calib_scores,
    known_scores,
    known_correct,
    unknown_scores,
    unknown_confidence,
    targets,
    t_hc: float = 0.90,
) -> list[SweepRow]:
    """Operating-point rows for a scalar score (accept when score >= threshold)."""
    calib = np.asarray(calib_scores, dtype=np.float64)
    ks = np.asarray(known_scores, dtype=np.float64)
    ok = np.asarray(known_correct, dtype=bool)
    us = np.asarray(unknown_scores, dtype=np.float64)
    uq = np.asarray(unknown_confidence, dtype=np.float64)
    rows = []
    for target in targets:
        matched = matched_krr_threshold(calib, float(target))
        ka = ks >= matched.threshold
        ua = us >= matched.threshold
        rows.append(
            SweepRow(
                target=float(target),
                achieved_krr=float(np.mean(~ka)),
                known_acc=float(np.mean(ok & ka)),
                fkar=float(np.mean(ua)),
                hc_fkar=_hc_rate(uq, ua, t_hc),
                warning=matched.warning,
            )
        )
    return rows


def render_cell(value) -> str:
    """CSV cell rendering: floats round-trip via repr, None renders as n/a."""
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([render_cell(v) for v in row])


def write_report_json(path, report: dict) -> None:
    Path(path).write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


__all__ = [
    "EvalInputs",
    "core_rates",
    "hc_fkar_at",
    "auroc",
    "fpr_at_tpr",
    "MatchedThreshold",
    "matched_krr_threshold",
    "BootstrapResult",
    "bootstrap_stratified",
    "SweepRow",
    "sweep_risk",
    "sweep_score",
    "render_cell",
    "write_csv",
    "write_report_json",
]
