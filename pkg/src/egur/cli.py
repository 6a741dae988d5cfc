"""Command-line interface: synth, fit, eval, sweep, bootstrap, import-scores.

Exit codes: 0 success, 1 usage error, 2 data error. The effective configuration
is echoed into the output directory on every run that takes one.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, metrics
from .candidate import candidate_outputs
from .config import RunConfig, default_seed
from .errors import EgurError, FormatError, SpecError
from .featurestore import (
    SyntheticSpec,
    carve_calibration_split,
    generate_synthetic,
    load_manifest,
    load_pack,
    write_dataset,
)
from .fusion import evaluate_pack, fit_pipeline, load_model, save_model
from .residual import residual_norm, risk_from_norm

BUILT_IN_METHODS = (
    "egur",
    "msp",
    "energy",
    "maxlogit",
    "softmax_entropy",
    "knn",
    "prototype",
    "diag_mahalanobis",
    "residual_only",
    "naive_fusion",
)
DEFAULT_METHODS = "egur,msp,energy,maxlogit,residual_only"
DEFAULT_SWEEP_TARGETS = "0.05,0.1,0.15,0.2,0.25,0.3,0.4,0.5,0.6"


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _comma_floats(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}") from exc


def _comma_names(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--manifest", help="dataset manifest path")
    parser.add_argument("--out-dir", help="output directory")
    parser.add_argument("--k", type=int, help="support kNN depth")
    parser.add_argument("--m", type=int, help="purity neighborhood size")
    parser.add_argument("--tau-con", type=float, dest="tau_con")
    parser.add_argument("--tau-pur", type=float, dest="tau_pur")
    parser.add_argument("--tau-mar", type=float, dest="tau_mar")
    parser.add_argument("--tau-conf", type=float, dest="tau_conf")
    parser.add_argument("--checks", type=_comma_names, help="active checks, e.g. sup,con,pur,mar")
    parser.add_argument("--q-sup", type=float, dest="q_sup")
    parser.add_argument(
        "--global-support", action=argparse.BooleanOptionalAction, default=None,
        dest="global_support", help="one pooled support threshold for all classes",
    )
    parser.add_argument(
        "--normalize", action=argparse.BooleanOptionalAction, default=None,
        help="L2-normalize features (default on)",
    )
    parser.add_argument("--variance-target", type=float, dest="variance_target")
    parser.add_argument("--subspace-dim", type=int, dest="subspace_dim")
    parser.add_argument(
        "--residual-percentiles", type=_comma_floats, dest="residual_percentiles",
        help="low,high percentile anchors",
    )
    parser.add_argument("--kappa", type=float, help="target known rejection rate")
    parser.add_argument("--t-hc", type=float, dest="t_hc")
    parser.add_argument("--hc-thresholds", type=_comma_floats, dest="hc_thresholds")
    parser.add_argument("--alpha", type=float, dest="alpha_override", help="fixed evidence weight")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--probe-epochs", type=int, dest="probe_epochs")
    parser.add_argument("--probe-step-size", type=float, dest="probe_step_size")
    parser.add_argument("--probe-l2", type=float, dest="probe_l2")
    parser.add_argument("--repeats", type=int, dest="bootstrap_repeats")
    parser.add_argument("--resample", type=int, dest="bootstrap_resample")
    parser.add_argument("--calib-fraction", type=float, dest="calib_fraction")
    parser.add_argument("--seed", type=int)


def _effective_config(args) -> RunConfig:
    payload = {}
    if args.config:
        try:
            payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"config file is not valid JSON: {exc}") from exc
    config = RunConfig.from_dict(payload)
    overrides = {}
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            overrides[field.name] = value
    if args.seed is None and "seed" not in payload:
        overrides["seed"] = default_seed()
    config = dataclasses.replace(config, **overrides)
    config.validate()
    return config


def _overlaid_config(args, base: RunConfig) -> RunConfig:
    """Bundle config overlaid with config-file values, then with flags.

    Analysis commands expose only fields that still act after fitting; the
    fitted state itself (index, thresholds, subspace, weights) is immutable.
    """
    merged = base.to_dict()
    if getattr(args, "config", None):
        try:
            payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(payload) - set(merged)
        if unknown:
            raise SpecError(f"unknown config fields: {sorted(unknown)}")
        merged.update(payload)
    config = RunConfig.from_dict(merged)
    overrides = {}
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            overrides[field.name] = value
    config = dataclasses.replace(config, **overrides)
    config.validate()
    return config


def _require(parser, value, name):
    if not value:
        parser.error(f"{name} is required")
    return value


def _add_analysis_flags(parser):
    """Flags shared by the post-fit commands: only fields that act after fitting."""
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--manifest", help="dataset manifest (default: from the bundle config)")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--t-hc", type=float, dest="t_hc")
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--calib-fraction", type=float, dest="calib_fraction")


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    return out


def _load_splits(manifest, base, config):
    """Packs by role; carves known_calib from known_train when absent."""
    train = load_pack(base / manifest.splits["known_train"])
    if "known_calib" in manifest.splits:
        calib = load_pack(base / manifest.splits["known_calib"])
    else:
        train, calib = carve_calibration_split(train, config.calib_fraction, config.seed)
    splits = {"known_train": train, "known_calib": calib}
    for role in ("known_test", "unknown_test", "far_ood"):
        if role in manifest.splits:
            splits[role] = load_pack(base / manifest.splits[role])
    return splits


def _logits_for(model, pack):
    if model.logits_source == "pack":
        if pack.logits is None:
            raise FormatError("pack has no logits but the model uses pack logits")
        return np.asarray(pack.logits, dtype=np.float64)
    return model.probe.logits(model.index.transform(pack.features))


def _confidences(model, pack):
    outputs = candidate_outputs(_logits_for(model, pack), model.config.temperature)
    return np.array([o.confidence for o in outputs])


def _scalar_scores(method: str, model, pack, calib_msp=None):
    """Higher-is-known score vector for one built-in scalar method on one pack."""
    config = model.config
    if method in baselines.LOGIT_KINDS:
        return baselines.logit_scores(_logits_for(model, pack), method, config.temperature)
    if method in baselines.DISTANCE_KINDS:
        return baselines.distance_scores(pack.features, model.index, method)
    if method == "residual_only":
        return baselines.residual_only_score(
            pack.features, model.index, model.subspace, model.normalizer
        )
    if method == "naive_fusion":
        msp = baselines.logit_scores(_logits_for(model, pack), "msp", config.temperature)
        rho = residual_norm(model.index.transform(pack.features), model.subspace)
        r_res = np.asarray(risk_from_norm(rho, model.normalizer))
        return baselines.naive_fusion_score(msp, r_res, config.beta, calib_msp)
    raise SpecError(f"not a scalar method: {method}")


def cmd_synth(args) -> int:
    payload = {}
    if args.spec:
        try:
            payload = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec file is not valid JSON: {exc}") from exc
    spec = SyntheticSpec.from_dict(payload)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    spec.validate()
    packs = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(
        json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    manifest, manifest_path = write_dataset(
        packs, spec.classes, out, encoder="synthetic", seed=spec.seed
    )
    print(f"wrote {manifest_path} with {len(manifest.splits)} splits")
    return 0


def cmd_fit(args) -> int:
    config = _effective_config(args)
    if not config.manifest:
        raise SpecError("manifest is required (flag --manifest or config field)")
    manifest_path = Path(config.manifest)
    manifest = load_manifest(manifest_path)
    out = _out_dir(config)
    model = fit_pipeline(manifest, manifest_path.parent, config)
    bundle = out / "model.egmb"
    save_model(model, bundle)
    sel, op = model.selection, model.operating_point
    print(f"selection branch: {sel.branch}")
    print(f"alpha: {sel.alpha}")
    alpha_ka = "n/a" if sel.alpha_ka is None else sel.alpha_ka
    print(f"cv_local: {sel.cv_local:.6f} cv_res: {sel.cv_res:.6f} alpha_ka: {alpha_ka}")
    print(f"tau_a: {op.tau:.6f} target_krr: {op.target:.6f} achieved_krr: {op.achieved:.6f}")
    if op.warning:
        print(f"warning: {op.warning}")
    print(f"wrote {bundle}")
    return 0


def _eval_rows(model, splits, methods, external, kappa, calibrate_on, label):
    """Method rows thresholded to a target rejection rate.

    calibrate_on selects which known split provides the thresholding scores:
    "calib" for the default workpoint, "test" for matched-rejection rows.
    """
    config = model.config
    known, unknown = splits["known_test"], splits["unknown_test"]
    far = splits.get("far_ood")
    unknown_conf = _confidences(model, unknown)
    known_eval = evaluate_pack(model, known)
    unknown_eval = evaluate_pack(model, unknown)
    far_eval = evaluate_pack(model, far) if far is not None else None
    correct = known_eval["candidate"] == known.labels.astype(np.int64)

    calib_msp = baselines.logit_scores(
        _logits_for(model, splits["known_calib"]), "msp", config.temperature
    )

    rows = []
    for method in methods:
        if method == "egur":
            if calibrate_on == "calib":
                ka = known_eval["accepted"]
                ua = unknown_eval["accepted"]
                fa = far_eval["accepted"] if far_eval is not None else None
                target = model.operating_point.target
                k_scores = -known_eval["r_fused"]
                u_scores = -unknown_eval["r_fused"]
            else:
                k_scores = -known_eval["r_fused"]
                u_scores = -unknown_eval["r_fused"]
                matched = metrics.matched_krr_threshold(k_scores, kappa)
                ka = k_scores >= matched.threshold
                ua = u_scores >= matched.threshold
                fa = (
                    -far_eval["r_fused"] >= matched.threshold
                    if far_eval is not None
                    else None
                )
                target = kappa
        elif method in BUILT_IN_METHODS:
            cal_pack = splits["known_calib"] if calibrate_on == "calib" else known
            cal_scores = _scalar_scores(method, model, cal_pack, calib_msp)
            k_scores = (
                cal_scores
                if calibrate_on == "test"
                else _scalar_scores(method, model, known, calib_msp)
            )
            target = config.kappa if calibrate_on == "calib" else kappa
            matched = metrics.matched_krr_threshold(cal_scores, target)
            u_scores = _scalar_scores(method, model, unknown, calib_msp)
            ka = k_scores >= matched.threshold
            ua = u_scores >= matched.threshold
            fa = (
                _scalar_scores(method, model, far, calib_msp) >= matched.threshold
                if far is not None
                else None
            )
        else:
            if calibrate_on == "calib":
                continue
            k_scores = baselines.external_scores_for(external, method, known.ids)
            u_scores = baselines.external_scores_for(external, method, unknown.ids)
            matched = metrics.matched_krr_threshold(k_scores, kappa)
            ka = k_scores >= matched.threshold
            ua = u_scores >= matched.threshold
            fa = None
            if far is not None:
                far_scores = baselines.external_scores_for(external, method, far.ids)
                fa = far_scores >= matched.threshold
            target = kappa

        inputs = metrics.EvalInputs(
            known_correct=correct,
            known_accepted=ka,
            unknown_accepted=ua,
            unknown_confidence=unknown_conf,
            far_accepted=fa,
        )
        rates = metrics.core_rates(inputs)
        row = {
            "method": method,
            "table": label,
            "target_krr": target,
            "achieved_krr": rates["krr"],
            "known_acc": rates["known_acc"],
            "fkar": rates["fkar"],
            "auroc": metrics.auroc(k_scores, u_scores),
            "fpr95": metrics.fpr_at_tpr(k_scores, u_scores),
            "far_ood_fkar": float(np.mean(fa)) if fa is not None else None,
        }
        for t in config.hc_thresholds:
            row[f"hc_fkar@{t:g}"] = metrics.hc_fkar_at(inputs, t)
        rows.append(row)
    return rows


def _write_method_table(path, rows, hc_thresholds):
    header = [
        "method",
        "target_krr",
        "achieved_krr",
        "known_acc",
        "fkar",
    ]
    header += [f"hc_fkar@{t:g}" for t in hc_thresholds]
    header += ["auroc", "fpr95", "far_ood_fkar"]
    table = [[row.get(col) for col in header] for row in rows]
    metrics.write_csv(path, header, table)


def cmd_eval(args) -> int:
    model = load_model(Path(args.model))
    config = _overlaid_config(args, model.config)
    model = dataclasses.replace(model, config=config)
    if not config.manifest:
        raise SpecError("manifest is required")
    manifest_path = Path(config.manifest)
    manifest = load_manifest(manifest_path)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")

    splits = _load_splits(manifest, manifest_path.parent, config)
    if "known_test" not in splits or "unknown_test" not in splits:
        raise FormatError("evaluation needs known_test and unknown_test splits")
    methods = list(args.methods)
    external = {}
    if args.external_scores:
        external = baselines.load_external_scores(args.external_scores)
    for method in methods:
        if method not in BUILT_IN_METHODS and method not in external:
            raise FormatError(f"external score required for method {method!r}")

    known_eval = evaluate_pack(model, splits["known_test"])
    egur_test_krr = float(np.mean(~known_eval["accepted"]))

    default_rows = _eval_rows(
        model, splits, methods, external, config.kappa, "calib", "default_workpoint"
    )
    matched_rows = _eval_rows(
        model, splits, methods, external, egur_test_krr, "test", "matched_krr"
    )

    _write_method_table(out / "default_workpoint.csv", default_rows, config.hc_thresholds)
    _write_method_table(out / "matched_krr.csv", matched_rows, config.hc_thresholds)
    report = {
        "egur": {
            "branch": model.selection.branch,
            "alpha": model.selection.alpha,
            "cv_local": model.selection.cv_local,
            "cv_res": model.selection.cv_res,
            "alpha_ka": model.selection.alpha_ka,
            "tau_a": model.operating_point.tau,
            "target_krr": model.operating_point.target,
            "calib_achieved_krr": model.operating_point.achieved,
            "test_krr": egur_test_krr,
        },
        "default_workpoint": default_rows,
        "matched_krr": matched_rows,
    }
    metrics.write_report_json(out / "report.json", report)

    for row in matched_rows:
        hc = metrics.render_cell(row.get(f"hc_fkar@{config.t_hc:g}"))
        far = metrics.render_cell(row.get("far_ood_fkar"))
        print(
            f"[matched] {row['method']}: krr={row['achieved_krr']:.4f} "
            f"known_acc={row['known_acc']:.4f} fkar={row['fkar']:.4f} "
            f"hc_fkar@{config.t_hc:g}={hc} far_ood_fkar={far}"
        )
    print(f"wrote {out / 'default_workpoint.csv'}")
    print(f"wrote {out / 'matched_krr.csv'}")
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_sweep(args) -> int:
    model = load_model(Path(args.model))
    config = _overlaid_config(args, model.config)
    model = dataclasses.replace(model, config=config)
    if not config.manifest:
        raise SpecError("manifest is required")
    manifest_path = Path(config.manifest)
    manifest = load_manifest(manifest_path)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    splits = _load_splits(manifest, manifest_path.parent, config)
    targets = sorted(args.targets)

    known, unknown, calib = splits["known_test"], splits["unknown_test"], splits["known_calib"]
    known_eval = evaluate_pack(model, known)
    unknown_eval = evaluate_pack(model, unknown)
    calib_eval = evaluate_pack(model, calib)
    correct = known_eval["candidate"] == known.labels.astype(np.int64)
    unknown_conf = _confidences(model, unknown)
    calib_msp = baselines.logit_scores(_logits_for(model, calib), "msp", config.temperature)

    header = ["target", "achieved_krr", "known_acc", "fkar", f"hc_fkar@{config.t_hc:g}", "warning"]
    written = []
    for method in args.methods:
        if method == "egur":
            rows = metrics.sweep_risk(
                calib_eval["r_fused"],
                known_eval["r_fused"],
                correct,
                unknown_eval["r_fused"],
                unknown_conf,
                targets,
                config.t_hc,
            )
        elif method in BUILT_IN_METHODS:
            rows = metrics.sweep_score(
                _scalar_scores(method, model, calib, calib_msp),
                _scalar_scores(method, model, known, calib_msp),
                correct,
                _scalar_scores(method, model, unknown, calib_msp),
                unknown_conf,
                targets,
                config.t_hc,
            )
        else:
            raise FormatError(f"external score required for method {method!r}")
        path = out / f"sweep_{method}.csv"
        metrics.write_csv(
            path,
            header,
            [
                [r.target, r.achieved_krr, r.known_acc, r.fkar, r.hc_fkar, r.warning or ""]
                for r in rows
            ],
        )
        written.append(path)
        print(f"wrote {path}")
    return 0


def cmd_bootstrap(args) -> int:
    model = load_model(Path(args.model))
    config = _overlaid_config(args, model.config)
    model = dataclasses.replace(model, config=config)
    if not config.manifest:
        raise SpecError("manifest is required")
    manifest_path = Path(config.manifest)
    manifest = load_manifest(manifest_path)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    splits = _load_splits(manifest, manifest_path.parent, config)
    unknown = splits["unknown_test"]

    unknown_eval = evaluate_pack(model, unknown)
    unknown_conf = _confidences(model, unknown)
    class_ids = [sid.rsplit("-", 1)[0] for sid in unknown.ids]
    result = metrics.bootstrap_stratified(
        unknown_conf,
        unknown_eval["accepted"],
        class_ids,
        resample_size=config.bootstrap_resample,
        repeats=config.bootstrap_repeats,
        seed=config.seed,
        t_hc=config.t_hc,
    )
    path = out / "bootstrap.csv"
    metrics.write_csv(
        path,
        ["metric", "mean", "std", "repeats", "resample_size", "undefined_repeats"],
        [
            ["fkar", result.fkar_mean, result.fkar_std, result.repeats, result.resample_size, 0],
            [
                f"hc_fkar@{config.t_hc:g}",
                result.hc_fkar_mean,
                result.hc_fkar_std,
                result.repeats,
                result.resample_size,
                result.hc_undefined_repeats,
            ],
        ],
    )
    print(
        f"fkar: {result.fkar_mean:.4f} +/- {result.fkar_std:.4f} "
        f"({result.repeats} repeats, {result.resample_size} per class)"
    )
    hc_mean = metrics.render_cell(result.hc_fkar_mean)
    hc_std = metrics.render_cell(result.hc_fkar_std)
    print(
        f"hc_fkar@{config.t_hc:g}: {hc_mean} +/- {hc_std} "
        f"({result.hc_undefined_repeats} undefined repeats)"
    )
    print(f"wrote {path}")
    return 0


def cmd_import_scores(args) -> int:
    table = baselines.load_external_scores(args.scores)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / "external_scores.csv"
    dest.write_bytes(Path(args.scores).read_bytes())
    counts = {method: len(ids) for method, ids in sorted(table.items())}
    for method, count in counts.items():
        print(f"{method}: {count} scores")
    print(f"wrote {dest}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="egur", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p_synth.add_argument("--spec", help="synthetic spec JSON (defaults when omitted)")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--seed", type=int, help="override the spec seed")
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser("fit", help="fit the acceptance pipeline")
    _add_config_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_eval = sub.add_parser("eval", help="evaluate methods against a fitted model")
    p_eval.add_argument("--model", required=True, help="model bundle path")
    _add_analysis_flags(p_eval)
    p_eval.add_argument("--kappa", type=float, help="default-workpoint rejection target")
    p_eval.add_argument("--hc-thresholds", type=_comma_floats, dest="hc_thresholds")
    p_eval.add_argument("--beta", type=float)
    p_eval.add_argument(
        "--methods", type=_comma_names, default=_comma_names(DEFAULT_METHODS),
        help=f"comma-separated method tags (default {DEFAULT_METHODS})",
    )
    p_eval.add_argument("--external-scores", help="CSV of (sample_id, method, score)")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="operating-point sweep tables")
    p_sweep.add_argument("--model", required=True)
    _add_analysis_flags(p_sweep)
    p_sweep.add_argument("--beta", type=float)
    p_sweep.add_argument(
        "--targets", type=_comma_floats, default=_comma_floats(DEFAULT_SWEEP_TARGETS)
    )
    p_sweep.add_argument(
        "--methods", type=_comma_names, default=("egur", "residual_only")
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_boot = sub.add_parser("bootstrap", help="class-stratified bootstrap on unknowns")
    p_boot.add_argument("--model", required=True)
    _add_analysis_flags(p_boot)
    p_boot.add_argument("--repeats", type=int, dest="bootstrap_repeats")
    p_boot.add_argument("--resample", type=int, dest="bootstrap_resample")
    p_boot.set_defaults(func=cmd_bootstrap)

    p_imp = sub.add_parser("import-scores", help="validate and stage external method scores")
    p_imp.add_argument("--scores", required=True, help="CSV of (sample_id, method, score)")
    p_imp.add_argument("--out-dir", required=True)
    p_imp.set_defaults(func=cmd_import_scores)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EgurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
