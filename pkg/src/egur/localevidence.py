"""Local evidence checks for candidate-class acceptance.

Four necessary conditions (support, contrast, purity, prototype margin) plus an
optional conflict check. Each raw measurement maps to a strength in [0, 1] and
the local risk is one minus the weakest active strength, so a single severe
evidence failure is enough to reject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, SpecError
from ._util import clamp01, l2_normalize, nearest_rank_quantile, pairwise_distances

CHECKS = ("sup", "con", "pur", "mar", "conf")
DEFAULT_ACTIVE = ("sup", "con", "pur", "mar")


@dataclass(frozen=True)
class ClassIndex:
    """Exact-search index over known training features in the working space.

    Features are stored L2-normalized when normalize is set; prototypes are
    per-class means computed after normalization.
    """

    features: np.ndarray
    labels: np.ndarray
    class_members: tuple[np.ndarray, ...]
    prototypes: np.ndarray
    k: int
    m: int
    normalize: bool

    @property
    def class_count(self) -> int:
        return len(self.class_members)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Map query features into the index's working space."""
        arr = np.asarray(x, dtype=np.float64)
        return l2_normalize(arr) if self.normalize else arr

    def support_depth(self, c: int) -> int:
        """Effective kNN depth for class c (k, capped at the class size)."""
        return min(self.k, self.class_members[c].size)


def fit_class_index(
    features: np.ndarray, labels: np.ndarray, k: int = 5, m: int = 10, normalize: bool = True
) -> ClassIndex:
    """Build the per-class index; classes must cover 0..K-1 with no gaps."""
    if k < 1 or m < 1:
        raise SpecError("k and m must be at least 1")
    feats = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64)
    if feats.ndim != 2 or feats.shape[0] != labs.shape[0]:
        raise SpecError("features and labels do not align")
    if labs.min(initial=0) < 0:
        raise SpecError("index labels must be non-negative")
    class_count = int(labs.max()) + 1 if labs.size else 0
    if class_count < 1:
        raise DegenerateDataError("empty class 0")
    stored = l2_normalize(feats) if normalize else feats.copy()
    members = []
    for c in range(class_count):
        idx = np.flatnonzero(labs == c)
        if idx.size == 0:
            raise DegenerateDataError(f"empty class {c}")
        members.append(idx)
    prototypes = np.vstack([stored[idx].mean(axis=0) for idx in members])
    return ClassIndex(
        features=stored,
        labels=labs,
        class_members=tuple(members),
        prototypes=prototypes,
        k=k,
        m=m,
        normalize=normalize,
    )


@dataclass(frozen=True)
class EvidenceThresholds:
    """Per-class support thresholds plus the scalar check thresholds and active mask."""

    tau_sup: np.ndarray
    tau_con: float = 1.5
    tau_pur: float = 0.5
    tau_mar: float = 0.05
    tau_conf: float = 0.5
    active: tuple[str, ...] = DEFAULT_ACTIVE

    def validate(self) -> None:
        if len(self.active) == 0:
            raise SpecError("active check mask is empty")
        unknown = set(self.active) - set(CHECKS)
        if unknown:
            raise SpecError(f"unknown checks in mask: {sorted(unknown)}")
        if (np.asarray(self.tau_sup) <= 0).any():
            raise SpecError("every tau_sup must be positive")
        if self.tau_con <= 1.0:
            raise SpecError("tau_con must exceed 1")
        if not 0.0 <= self.tau_pur < 1.0:
            raise SpecError("tau_pur must lie in [0, 1)")
        if not 0.0 <= self.tau_mar < 1.0:
            raise SpecError("tau_mar must lie in [0, 1)")
        if not 0.0 < self.tau_conf <= 1.0:
            raise SpecError("tau_conf must lie in (0, 1]")


@dataclass(frozen=True)
class EvidenceVector:
    """Raw measurements, per-check strengths, and the local risk for one sample."""

    candidate: int
    d_sup: float
    r_con: float
    p_loc: float
    m_proto: float
    l_conf: float | None
    support_depth: int
    strengths: dict[str, float]
    r_local: float


def _loo_kth_distances(index: ClassIndex, c: int) -> np.ndarray:
    """Leave-one-out k-th neighbor distance for every member of class c.

    Depth falls back to (class size - 1) when the class is too small for k.
    Classes of size 1 contribute nothing.
    """
    pts = index.features[index.class_members[c]]
    s = pts.shape[0]
    if s < 2:
        return np.empty(0)
    depth = min(index.k, s - 1)
    dmat = pairwise_distances(pts, pts)
    np.fill_diagonal(dmat, np.inf)
    dmat.sort(axis=1)
    return dmat[:, depth - 1]


def calibrate_support_thresholds(
    index: ClassIndex, q_sup: float = 0.95, global_pool: bool = False
) -> np.ndarray:
    """Per-class support thresholds from leave-one-out k-th-neighbor distances.

    tau_sup(c) is the q_sup nearest-rank quantile of class c's LOO distances.
    Classes too small for leave-one-out at depth k use the pooled quantile, as
    do all classes under global_pool. A zero threshold is replaced by the
    smallest positive pooled distance.
    """
    if not 0.0 < q_sup <= 1.0:
        raise SpecError("q_sup must lie in (0, 1]")
    per_class = [_loo_kth_distances(index, c) for c in range(index.class_count)]
    pooled = np.concatenate([d for d in per_class if d.size]) if any(
        d.size for d in per_class
    ) else np.empty(0)
    if pooled.size == 0:
        raise DegenerateDataError("no class supports leave-one-out distances")
    pooled_tau = nearest_rank_quantile(pooled, q_sup)

    taus = np.empty(index.class_count)
    for c, dists in enumerate(per_class):
        own = dists.size >= 1 and index.class_members[c].size - 1 >= index.k
        if global_pool or not own:
            taus[c] = pooled_tau
        else:
            taus[c] = nearest_rank_quantile(dists, q_sup)

    if (taus == 0).any():
        positive = pooled[pooled > 0]
        if positive.size == 0:
            raise DegenerateDataError("all leave-one-out distances are zero")
        taus[taus == 0] = positive.min()
    return taus


def _measure_batch(
    queries: np.ndarray, candidates: np.ndarray, index: ClassIndex, conflict: bool
) -> dict[str, np.ndarray]:
    """All raw evidence measurements for transformed queries against the index."""
    q = np.atleast_2d(queries)
    cand = np.asarray(candidates, dtype=np.int64)
    n = q.shape[0]
    kk = index.class_count
    if kk < 2:
        raise SpecError("evidence checks need at least 2 known classes")
    if (cand < 0).any() or (cand >= kk).any():
        raise SpecError("candidate class out of range")
    rows = np.arange(n)

    dmat = pairwise_distances(q, index.features)
    dsup_all = np.empty((n, kk))
    for c, members in enumerate(index.class_members):
        depth = min(index.k, members.size)
        sub = np.sort(dmat[:, members], axis=1)
        dsup_all[:, c] = sub[:, depth - 1]
    d_sup = dsup_all[rows, cand]

    masked = dsup_all.copy()
    masked[rows, cand] = np.inf
    competitor = masked.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_con = d_sup / competitor
    r_con = np.where(competitor == 0.0, np.inf, r_con)

    if index.m > index.features.shape[0]:
        raise SpecError("m exceeds the number of indexed samples")
    order = np.argsort(dmat, axis=1, kind="stable")[:, : index.m]
    neighbor_labels = index.labels[order]
    p_loc = (neighbor_labels == cand[:, None]).mean(axis=1)

    pmat = pairwise_distances(q, index.prototypes)
    d_proto = pmat[rows, cand]
    pmask = pmat.copy()
    pmask[rows, cand] = np.inf
    comp = pmask.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        m_proto = (comp - d_proto) / comp
    m_proto = np.where(comp == 0.0, -np.inf, m_proto)

    out = {
        "d_sup": d_sup,
        "r_con": r_con,
        "p_loc": p_loc,
        "m_proto": m_proto,
        "support_depth": np.array([min(index.k, index.class_members[c].size) for c in cand]),
    }
    if conflict:
        aux_proto = np.argmin(pmat, axis=1)
        counts = np.stack(
            [np.bincount(neighbor_labels[i], minlength=kk) for i in range(n)]
        )
        aux_major = np.argmax(counts, axis=1)
        out["l_conf"] = 0.5 * (aux_proto != cand) + 0.5 * (aux_major != cand)
    return out


def support_distance(x: np.ndarray, c: int, index: ClassIndex) -> float:
    """Distance from x to its k-th nearest neighbor within class c."""
    q = index.transform(x)
    return float(_measure_batch(q[None, :], [c], index, conflict=False)["d_sup"][0])


def contrast_ratio(x: np.ndarray, c: int, index: ClassIndex) -> float:
    """Candidate support distance over the best competitor support distance."""
    q = index.transform(x)
    return float(_measure_batch(q[None, :], [c], index, conflict=False)["r_con"][0])


def local_purity(x: np.ndarray, c: int, index: ClassIndex) -> float:
    """Fraction of the m pooled nearest known neighbors labeled c."""
    q = index.transform(x)
    return float(_measure_batch(q[None, :], [c], index, conflict=False)["p_loc"][0])


def prototype_margin(x: np.ndarray, c: int, index: ClassIndex) -> float:
    """Relative prototype margin against the nearest competing prototype."""
    q = index.transform(x)
    return float(_measure_batch(q[None, :], [c], index, conflict=False)["m_proto"][0])


def conflict_level(x: np.ndarray, c: int, index: ClassIndex) -> float:
    """Fraction of two auxiliary predictors that disagree with c; in {0, 0.5, 1}."""
    q = index.transform(x)
    return float(_measure_batch(q[None, :], [c], index, conflict=True)["l_conf"][0])


def evidence_strengths(
    measurements: dict[str, np.ndarray],
    candidates: np.ndarray,
    thresholds: EvidenceThresholds,
) -> dict[str, np.ndarray]:
    """Map raw measurements to strengths in [0, 1] for every active check."""
    thresholds.validate()
    cand = np.asarray(candidates, dtype=np.int64)
    tau_sup = np.asarray(thresholds.tau_sup, dtype=np.float64)[cand]
    strengths: dict[str, np.ndarray] = {}
    if "sup" in thresholds.active:
        strengths["sup"] = clamp01(1.0 - measurements["d_sup"] / tau_sup)
    if "con" in thresholds.active:
        strengths["con"] = clamp01(
            (thresholds.tau_con - measurements["r_con"]) / thresholds.tau_con
        )
    if "pur" in thresholds.active:
        strengths["pur"] = clamp01(
            (measurements["p_loc"] - thresholds.tau_pur) / (1.0 - thresholds.tau_pur)
        )
    if "mar" in thresholds.active:
        strengths["mar"] = clamp01(measurements["m_proto"] - thresholds.tau_mar)
    if "conf" in thresholds.active:
        strengths["conf"] = clamp01(
            (thresholds.tau_conf - measurements["l_conf"]) / thresholds.tau_conf
        )
    return strengths


def local_risk(strengths) -> float:
    """One minus the weakest active strength."""
    values = list(strengths.values()) if hasattr(strengths, "values") else list(strengths)
    if not values:
        raise SpecError("empty strength set")
    return float(1.0 - min(values))


def evidence_batch(
    features: np.ndarray, candidates, index: ClassIndex, thresholds: EvidenceThresholds
) -> list[EvidenceVector]:
    """Full evidence vectors for a batch of raw feature rows."""
    q = np.atleast_2d(index.transform(features))
    cand = np.asarray(candidates, dtype=np.int64)
    conflict = "conf" in thresholds.active
    meas = _measure_batch(q, cand, index, conflict=conflict)
    strengths = evidence_strengths(meas, cand, thresholds)
    stacked = np.vstack([strengths[name] for name in thresholds.active])
    r_local = 1.0 - stacked.min(axis=0)
    vectors = []
    for i in range(q.shape[0]):
        vectors.append(
            EvidenceVector(
                candidate=int(cand[i]),
                d_sup=float(meas["d_sup"][i]),
                r_con=float(meas["r_con"][i]),
                p_loc=float(meas["p_loc"][i]),
                m_proto=float(meas["m_proto"][i]),
                l_conf=float(meas["l_conf"][i]) if conflict else None,
                support_depth=int(meas["support_depth"][i]),
                strengths={name: float(strengths[name][i]) for name in thresholds.active},
                r_local=float(r_local[i]),
            )
        )
    return vectors


def local_risks(
    features: np.ndarray, candidates, index: ClassIndex, thresholds: EvidenceThresholds
) -> np.ndarray:
    """Vector of local risks for a batch of raw feature rows."""
    q = np.atleast_2d(index.transform(features))
    cand = np.asarray(candidates, dtype=np.int64)
    meas = _measure_batch(q, cand, index, conflict="conf" in thresholds.active)
    strengths = evidence_strengths(meas, cand, thresholds)
    stacked = np.vstack([strengths[name] for name in thresholds.active])
    return 1.0 - stacked.min(axis=0)


__all__ = [
    "CHECKS",
    "DEFAULT_ACTIVE",
    "ClassIndex",
    "EvidenceThresholds",
    "EvidenceVector",
    "fit_class_index",
    "calibrate_support_thresholds",
    "support_distance",
    "contrast_ratio",
    "local_purity",
    "prototype_margin",
    "conflict_level",
    "evidence_strengths",
    "local_risk",
    "evidence_batch",
    "local_risks",
]
