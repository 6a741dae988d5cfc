"""Linear probe and candidate/confidence tests."""

import math

import numpy as np
import pytest

from egur.candidate import (
    LinearProbe,
    ProbeHyper,
    candidate_outputs,
    load_probe,
    predict_candidates,
    probe_objective,
    prototype_softmax_fallback,
    save_probe,
    train_linear_probe,
)
from egur.errors import DegenerateDataError, FormatError, SpecError


def separable_data(n_per_class=20, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_per_class, 2)) * 0.3 + np.array([3.0, 0.0])
    b = rng.standard_normal((n_per_class, 2)) * 0.3 + np.array([-3.0, 0.0])
    features = np.vstack([a, b])
    labels = np.array([0] * n_per_class + [1] * n_per_class)
    return features, labels


def test_probe_reaches_perfect_accuracy_on_separable_data():
    features, labels = separable_data()
    probe = train_linear_probe(features, labels)
    outputs = predict_candidates(probe, features)
    predictions = np.array([o.candidate for o in outputs])
    assert np.mean(predictions == labels) == 1.0


def test_probe_weights_shrink_as_l2_grows():
    features, labels = separable_data(seed=1)
    norms = []
    for l2 in (0.01, 0.1, 1.0):
        probe = train_linear_probe(features, labels, ProbeHyper(l2=l2, seed=0))
        norms.append(np.linalg.norm(probe.weights))
    assert norms[0] > norms[1] > norms[2]


def test_probe_gradient_matches_central_finite_differences():
    """Analytic gradient against a central-difference oracle at 10 seeded points."""
    rng = np.random.default_rng(42)
    features = rng.standard_normal((12, 4))
    labels = rng.integers(0, 3, size=12)
    labels[:3] = [0, 1, 2]
    eps = 1e-6
    for point in range(10):
        prng = np.random.default_rng(100 + point)
        w = prng.standard_normal((3, 4))
        b = prng.standard_normal(3)
        loss, grad_w, grad_b = probe_objective(w, b, features, labels, l2=0.05)
        assert np.isfinite(loss)

        def loss_at(w_, b_):
            return probe_objective(w_, b_, features, labels, l2=0.05)[0]

        max_rel = 0.0
        for i in range(3):
            for j in range(4):
                wp, wm = w.copy(), w.copy()
                wp[i, j] += eps
                wm[i, j] -= eps
                numeric = (loss_at(wp, b) - loss_at(wm, b)) / (2 * eps)
                denom = max(abs(numeric), 1e-8)
                max_rel = max(max_rel, abs(grad_w[i, j] - numeric) / denom)
        for i in range(3):
            bp, bm = b.copy(), b.copy()
            bp[i] += eps
            bm[i] -= eps
            numeric = (loss_at(w, bp) - loss_at(w, bm)) / (2 * eps)
            denom = max(abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(grad_b[i] - numeric) / denom)
        assert max_rel < 1e-4


def test_probe_loss_non_increasing_at_default_step():
    features, labels = separable_data(seed=2)
    probe = train_linear_probe(features, labels, ProbeHyper(seed=3))
    diffs = np.diff(probe.loss_curve)
    assert (diffs <= 1e-12).all()
    assert probe.final_loss == probe.loss_curve[-1]


def test_probe_rejects_single_class():
    with pytest.raises(SpecError, match="single-class"):
        train_linear_probe(np.ones((4, 2)), np.zeros(4, dtype=int))


def test_probe_divergent_step_raises():
    features, labels = separable_data(seed=4)
    with pytest.raises(DegenerateDataError, match="non-finite loss"):
        train_linear_probe(features * 1e4, labels, ProbeHyper(step_size=1e8, epochs=50))


def test_probe_training_deterministic():
    features, labels = separable_data(seed=5)
    p1 = train_linear_probe(features, labels, ProbeHyper(seed=9))
    p2 = train_linear_probe(features, labels, ProbeHyper(seed=9))
    assert np.array_equal(p1.weights, p2.weights)
    assert np.array_equal(p1.bias, p2.bias)


def test_equal_logits_split_confidence():
    (out,) = candidate_outputs([[0.0, 0.0]])
    assert out.candidate == 0
    assert out.confidence == 0.5
    np.testing.assert_allclose(out.probabilities, [0.5, 0.5])


def test_large_gap_logits_confidence():
    (out,) = candidate_outputs([[10.0, 0.0]])
    assert out.candidate == 0
    assert out.confidence == pytest.approx(1.0 / (1.0 + math.exp(-10.0)), abs=1e-12)
    assert out.confidence == pytest.approx(0.99995, abs=5e-5)


def test_logit_shift_leaves_output_unchanged():
    logits = np.array([[1.0, -2.0, 0.5], [0.0, 0.0, 3.0]])
    base = candidate_outputs(logits)
    shifted = candidate_outputs(logits + 7.0)
    for a, b in zip(base, shifted):
        assert a.candidate == b.candidate
        np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-12)
        assert a.confidence == pytest.approx(b.confidence, abs=1e-12)


def test_candidate_invariant_under_temperature_and_shift():
    """Argmax class never moves for any positive temperature or additive shift."""
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((200, 5)) * 3
    base = [o.candidate for o in candidate_outputs(logits)]
    for temperature in (0.1, 1.0, 7.5):
        for shift in (-20.0, 0.0, 13.0):
            moved = [o.candidate for o in candidate_outputs(logits + shift, temperature)]
            assert moved == base


def test_confidence_bounds():
    rng = np.random.default_rng(10)
    outputs = candidate_outputs(rng.standard_normal((500, 4)))
    for out in outputs:
        assert 1.0 / 4.0 <= out.confidence <= 1.0
        assert out.probabilities.sum() == pytest.approx(1.0, abs=1e-6)
        assert out.probabilities.max() == out.probabilities[out.candidate]


def test_candidate_rejects_non_finite_logits():
    with pytest.raises(FormatError, match="non-finite"):
        candidate_outputs([[np.nan, 0.0]])


def test_prototype_fallback_exact_prototype():
    prototypes = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [7.0, 7.0]])
    (out,) = prototype_softmax_fallback(prototypes, prototypes[3], temperature=1e-3)
    assert out.candidate == 3
    assert out.confidence > 0.999


def test_prototype_fallback_equidistant_uniform():
    prototypes = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    (out,) = prototype_softmax_fallback(prototypes, np.zeros(2))
    np.testing.assert_allclose(out.probabilities, np.full(4, 0.25), atol=1e-12)


def test_prototype_fallback_agrees_with_probe_on_separated_data():
    rng = np.random.default_rng(21)
    centers = np.array([[4.0, 0.0, 0.0], [-4.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
    features = np.vstack([rng.standard_normal((30, 3)) * 0.3 + c for c in centers])
    labels = np.repeat([0, 1, 2], 30)
    probe = train_linear_probe(features, labels)
    prototypes = np.vstack([features[labels == c].mean(axis=0) for c in range(3)])
    probe_cands = [o.candidate for o in predict_candidates(probe, features)]
    proto_cands = [o.candidate for o in prototype_softmax_fallback(prototypes, features)]
    agreement = np.mean(np.array(probe_cands) == np.array(proto_cands))
    assert agreement > 0.95


def test_probe_round_trips_through_file(tmp_path):
    features, labels = separable_data(seed=6)
    probe = train_linear_probe(features, labels)
    path = tmp_path / "probe.eglp"
    save_probe(probe, path)
    loaded = load_probe(path)
    np.testing.assert_allclose(loaded.weights, probe.weights, atol=1e-6)
    np.testing.assert_allclose(loaded.bias, probe.bias, atol=1e-6)
    assert loaded.epochs == probe.epochs
    a = [o.candidate for o in predict_candidates(probe, features)]
    b = [o.candidate for o in predict_candidates(loaded, features)]
    assert a == b


def test_probe_logits_dimension_mismatch():
    probe = LinearProbe(
        weights=np.ones((2, 3)), bias=np.zeros(2), epochs=1, step_size=0.1, l2=0.0,
        final_loss=0.0, loss_curve=np.zeros(1),
    )
    with pytest.raises(SpecError, match="dimension"):
        probe.logits(np.ones((4, 5)))
