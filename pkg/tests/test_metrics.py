"""Core rates, ranking metrics, matched thresholds, bootstrap, sweeps, rendering."""

import json

import numpy as np
import pytest

from egur import (
    EvalInputs,
    SpecError,
    auroc,
    bootstrap_stratified,
    core_rates,
    fpr_at_tpr,
    hc_fkar_at,
    matched_krr_threshold,
    sweep_risk,
    sweep_score,
)
from egur.metrics import render_cell, write_csv, write_report_json


def make_inputs(known_correct, known_accepted, unknown_accepted, unknown_confidence):
    return EvalInputs(
        known_correct=np.array(known_correct, dtype=bool),
        known_accepted=np.array(known_accepted, dtype=bool),
        unknown_accepted=np.array(unknown_accepted, dtype=bool),
        unknown_confidence=np.array(unknown_confidence, dtype=float),
    )


def test_core_rates_manual():
    inputs = make_inputs(
        [True, True, False, False],
        [True, False, True, False],
        [True, False, False, False, False],
        [0.5] * 5,
    )
    rates = core_rates(inputs)
    assert rates["known_acc"] == pytest.approx(0.25)
    assert rates["krr"] == pytest.approx(0.5)
    assert rates["fkar"] == pytest.approx(0.2)


def test_core_rates_empty_split():
    with pytest.raises(SpecError, match="empty split"):
        core_rates(make_inputs([], [], [True], [0.5]))
    with pytest.raises(SpecError, match="empty split"):
        core_rates(make_inputs([True], [True], [], []))


def test_hc_fkar_basic_and_undefined():
    inputs = make_inputs(
        [True], [True], [True, False, True], [0.95, 0.85, 0.99]
    )
    assert hc_fkar_at(inputs, 0.90) == pytest.approx(1.0)
    assert hc_fkar_at(inputs, 0.96) == pytest.approx(1.0)
    assert hc_fkar_at(inputs, 0.995) is None
    with pytest.raises(SpecError):
        hc_fkar_at(inputs, 1.5)


def test_hc_fkar_at_zero_equals_fkar_property():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        inputs = make_inputs(
            [True], [True], rng.random(n) < 0.5, rng.random(n)
        )
        assert hc_fkar_at(inputs, 0.0) == core_rates(inputs)["fkar"]


def auroc_pairwise_oracle(k, u):
    wins = 0.0
    for a in k:
        for b in u:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(k) * len(u))


def test_auroc_endpoints_and_ties():
    assert auroc([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert auroc([0.0, 1.0], [2.0, 3.0]) == 0.0
    assert auroc([1.0] * 5, [1.0] * 7) == 0.5


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(21)
    for _ in range(30):
        k = rng.integers(0, 10, rng.integers(2, 30)).astype(float)
        u = rng.integers(0, 10, rng.integers(2, 30)).astype(float)
        assert auroc(k, u) == pytest.approx(auroc_pairwise_oracle(k, u), abs=1e-12)
    with pytest.raises(SpecError):
        auroc([], [1.0])


def fpr_enumeration_oracle(k, u, tpr):
    k = np.asarray(k, dtype=float)
    best = None
    for t in np.unique(k):
        if np.mean(k >= t) >= tpr:
            best = t if best is None else max(best, t)
    return float(np.mean(np.asarray(u) >= best))


def test_fpr_at_tpr_manual_and_oracle():
    k = np.arange(1, 21, dtype=float)
    u = np.array([0.5, 1.5, 2.5, 10.5])
    assert fpr_at_tpr(k, u, 0.95) == pytest.approx(fpr_enumeration_oracle(k, u, 0.95))
    rng = np.random.default_rng(22)
    for _ in range(30):
        k = rng.integers(0, 15, rng.integers(5, 50)).astype(float)
        u = rng.integers(0, 15, rng.integers(5, 50)).astype(float)
        assert fpr_at_tpr(k, u, 0.95) == pytest.approx(
            fpr_enumeration_oracle(k, u, 0.95), abs=0
        )
    assert fpr_at_tpr([1.0, 2.0, 3.0], [0.0, 2.5], 1.0) == pytest.approx(0.5)
    with pytest.raises(SpecError, match="tpr"):
        fpr_at_tpr([1.0], [1.0], 0.0)


def test_matched_krr_threshold_enumeration():
    matched = matched_krr_threshold([1.0, 2.0, 3.0, 4.0, 5.0], 0.4)
    assert matched.threshold == pytest.approx(3.0)
    assert matched.achieved == pytest.approx(0.4)
    assert matched.warning is None
    zero = matched_krr_threshold([1.0, 2.0, 3.0], 0.0)
    assert zero.threshold == pytest.approx(1.0)
    assert zero.achieved == 0.0


def test_matched_krr_threshold_tie_and_warning():
    matched = matched_krr_threshold(np.full(10, 2.0), 0.5)
    assert matched.achieved == 0.0
    assert matched.threshold == pytest.approx(2.0)
    assert matched.warning is not None and "unreachable" in matched.warning


def brute_matched(scores, kappa):
    s = np.asarray(scores, dtype=float)
    cands = sorted(set(s)) + [float(np.nextafter(max(s), np.inf))]
    best = None
    for t in cands:
        ach = float(np.mean(s < t))
        key = (abs(ach - kappa), ach)
        if best is None or key < best[:2]:
            best = (key[0], key[1], t)
    return best[2], best[1]


def test_matched_krr_threshold_matches_brute_oracle():
    rng = np.random.default_rng(23)
    for _ in range(40):
        scores = rng.normal(size=rng.integers(5, 80))
        kappa = float(rng.uniform(0.0, 0.95))
        matched = matched_krr_threshold(scores, kappa)
        t, ach = brute_matched(scores, kappa)
        assert matched.threshold == pytest.approx(t, abs=0)
        assert matched.achieved == pytest.approx(ach, abs=0)
    with pytest.raises(SpecError):
        matched_krr_threshold([1.0], 1.0)


def test_bootstrap_deterministic_and_counts():
    rng = np.random.default_rng(24)
    n = 60
    conf = rng.random(n)
    acc = rng.random(n) < 0.4
    ids = ["u%d" % (i % 3) for i in range(n)]
    a = bootstrap_stratified(conf, acc, ids, resample_size=20, repeats=50, seed=5)
    b = bootstrap_stratified(conf, acc, ids, resample_size=20, repeats=50, seed=5)
    assert a == b
    c = bootstrap_stratified(conf, acc, ids, resample_size=20, repeats=50, seed=6)
    assert c != a
    assert a.repeats == 50 and a.resample_size == 20
    assert 0.0 <= a.fkar_mean <= 1.0


def test_bootstrap_stratification_balances_classes():
    conf = np.full(40, 0.95)
    acc = np.array([True] * 20 + [False] * 20)
    ids = ["a"] * 20 + ["b"] * 20
    res = bootstrap_stratified(conf, acc, ids, resample_size=30, repeats=25, seed=1)
    assert res.fkar_mean == pytest.approx(0.5)
    assert res.fkar_std == 0.0
    assert res.hc_fkar_mean == pytest.approx(0.5)
    assert res.hc_undefined_repeats == 0


def test_bootstrap_hc_undefined_repeats():
    conf = np.full(30, 0.5)
    acc = np.ones(30, dtype=bool)
    res = bootstrap_stratified(conf, acc, ["x"] * 30, 10, 15, seed=2)
    assert res.hc_fkar_mean is None and res.hc_fkar_std is None
    assert res.hc_undefined_repeats == 15
    assert res.fkar_mean == 1.0


def test_bootstrap_validation():
    with pytest.raises(SpecError, match="align"):
        bootstrap_stratified([0.5, 0.5], [True], ["a", "a"], 5, 5, seed=0)
    with pytest.raises(SpecError, match="at least 1"):
        bootstrap_stratified([0.5], [True], ["a"], 0, 5, seed=0)


def test_bootstrap_mean_tracks_point_estimate():
    rng = np.random.default_rng(25)
    n = 200
    conf = rng.random(n)
    acc = rng.random(n) < 0.3
    ids = ["u%d" % (i % 5) for i in range(n)]
    res = bootstrap_stratified(conf, acc, ids, resample_size=50, repeats=400, seed=9)
    assert abs(res.fkar_mean - acc.mean()) < 0.03


@pytest.fixture()
def sweep_data():
    rng = np.random.default_rng(26)
    calib = rng.random(80)
    known = rng.random(120)
    correct = rng.random(120) < 0.8
    unknown = rng.uniform(0.3, 1.0, 90)
    uconf = rng.random(90)
    return calib, known, correct, unknown, uconf


def test_sweep_risk_monotone(sweep_data):
    calib, known, correct, unknown, uconf = sweep_data
    targets = [0.05, 0.1, 0.2, 0.4, 0.6]
    rows = sweep_risk(calib, known, correct, unknown, uconf, targets)
    assert [r.target for r in rows] == targets
    krrs = [r.achieved_krr for r in rows]
    fkars = [r.fkar for r in rows]
    assert krrs == sorted(krrs)
    assert fkars == sorted(fkars, reverse=True)
    for row in rows:
        assert 0.0 <= row.known_acc <= 1.0


def test_sweep_score_monotone(sweep_data):
    calib, known, correct, unknown, uconf = sweep_data
    targets = [0.05, 0.1, 0.2, 0.4, 0.6]
    rows = sweep_score(calib, known, correct, unknown, uconf, targets)
    krrs = [r.achieved_krr for r in rows]
    fkars = [r.fkar for r in rows]
    assert krrs == sorted(krrs)
    assert fkars == sorted(fkars, reverse=True)


def test_sweep_risk_and_score_agree_on_negated_risk(sweep_data):
    """Thresholding a risk and thresholding its negation pick identical points."""
    calib, known, correct, unknown, uconf = sweep_data
    targets = [0.1, 0.3, 0.5]
    via_risk = sweep_risk(calib, known, correct, unknown, uconf, targets)
    via_score = sweep_score(-calib, -known, correct, -unknown, uconf, targets)
    for a, b in zip(via_risk, via_score):
        assert a.achieved_krr == b.achieved_krr
        assert a.known_acc == b.known_acc
        assert a.fkar == b.fkar
        assert a.hc_fkar == b.hc_fkar


def test_sweep_hc_fkar_none_with_low_confidence(sweep_data):
    calib, known, correct, unknown, _ = sweep_data
    rows = sweep_risk(calib, known, correct, unknown, np.full(90, 0.1), [0.2])
    assert rows[0].hc_fkar is None


def test_render_cell_and_csv(tmp_path):
    assert render_cell(None) == "n/a"
    assert render_cell(7) == "7"
    for v in (0.1, 1 / 3, 0.9999999999999999):
        assert float(render_cell(v)) == v
    path = tmp_path / "table.csv"
    write_csv(path, ["a", "b"], [[0.5, None], [1, "x"]])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == "0.5,n/a"
    assert lines[2] == "1,x"


def test_write_report_json_round_trip(tmp_path):
    path = tmp_path / "report.json"
    report = {"b": 1, "a": {"z": [1.5, None]}}
    write_report_json(path, report)
    text = path.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == report
    assert text.index('"a"') < text.index('"b"')
