"""Evidence-guided open-set acceptance on precomputed feature embeddings.

A candidate prediction is accepted as known only when local evidence around the
sample and a global residual check both support it; rejected samples are split
into an unsupported-known-like state and an ood-unknown state.
"""

from .errors import DegenerateDataError, EgurError, FormatError, SpecError
from .featurestore import (
    DatasetManifest,
    FeaturePack,
    SyntheticSpec,
    carve_calibration_split,
    generate_synthetic,
    load_manifest,
    load_pack,
    save_manifest,
    save_pack,
    validate_manifest,
    write_dataset,
)
from .candidate import (
    CandidateOutput,
    LinearProbe,
    ProbeHyper,
    candidate_outputs,
    predict_candidates,
    prototype_softmax_fallback,
    train_linear_probe,
)
from .localevidence import (
    ClassIndex,
    EvidenceThresholds,
    EvidenceVector,
    calibrate_support_thresholds,
    conflict_level,
    contrast_ratio,
    evidence_batch,
    evidence_strengths,
    fit_class_index,
    local_purity,
    local_risk,
    local_risks,
    prototype_margin,
    support_distance,
)
from .residual import (
    IdSubspace,
    ResidualNormalizer,
    fit_normalizer,
    fit_subspace,
    residual_norm,
    residual_risk,
    risk_from_norm,
)
from .fusion import (
    ALPHA_GRID,
    STATE_ACCEPTED,
    STATE_OOD,
    STATE_UNSUPPORTED,
    Decision,
    EvidenceWeightSelection,
    FittedModel,
    OperatingPoint,
    calibrate_threshold,
    decide,
    evaluate_pack,
    fit_pipeline,
    fuse_risk,
    load_model,
    resolve_alpha,
    save_model,
    select_alpha,
)
from .baselines import (
    class_variances,
    distance_scores,
    external_scores_for,
    load_external_scores,
    logit_scores,
    naive_fusion_score,
    residual_only_score,
)
from .metrics import (
    BootstrapResult,
    EvalInputs,
    MatchedThreshold,
    auroc,
    bootstrap_stratified,
    core_rates,
    fpr_at_tpr,
    hc_fkar_at,
    matched_krr_threshold,
    sweep_risk,
    sweep_score,
)
from .config import RunConfig

__version__ = "0.1.0"
