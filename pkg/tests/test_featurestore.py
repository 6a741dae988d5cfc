"""Feature-pack format, manifest validation, and synthetic generator tests."""

import numpy as np
import pytest
from scipy import stats

from egur.errors import FormatError, SpecError
from egur.featurestore import (
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
from egur.residual import fit_subspace, residual_norm
from egur._util import sha256_file


def small_pack(with_logits=False):
    features = np.arange(12, dtype=np.float32).reshape(3, 4)
    labels = np.array([0, 1, -1], dtype=np.int32)
    ids = ("a", "bb", "ccc")
    logits = np.array([[1.0, 0.0], [0.0, 2.0], [0.5, 0.5]], dtype=np.float32) if with_logits else None
    return FeaturePack(features=features, labels=labels, ids=ids, logits=logits)


def test_pack_file_size_matches_format(tmp_path):
    path = tmp_path / "p.egfp"
    save_pack(small_pack(), path)
    header = 4 + 4 + 8 + 8 + 4 + 4
    id_block = 4 + sum(4 + len(s) for s in ("a", "bb", "ccc"))
    assert path.stat().st_size == header + 3 * 4 * 4 + 3 * 4 + id_block


def test_pack_round_trip_exact(tmp_path):
    pack = small_pack(with_logits=True)
    path = tmp_path / "p.egfp"
    save_pack(pack, path)
    loaded = load_pack(path)
    assert np.array_equal(loaded.features, pack.features)
    assert np.array_equal(loaded.labels, pack.labels)
    assert np.array_equal(loaded.logits, pack.logits)
    assert loaded.ids == pack.ids


def test_save_rejects_nan_feature(tmp_path):
    features = np.ones((2, 3), dtype=np.float32)
    features[1, 2] = np.nan
    pack = FeaturePack(features, np.array([0, 1]), ("x", "y"))
    with pytest.raises(FormatError, match="non-finite feature"):
        save_pack(pack, tmp_path / "bad.egfp")


def test_two_saves_byte_identical(tmp_path):
    pack = small_pack(with_logits=True)
    save_pack(pack, tmp_path / "a.egfp")
    save_pack(pack, tmp_path / "b.egfp")
    assert sha256_file(tmp_path / "a.egfp") == sha256_file(tmp_path / "b.egfp")


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "p.egfp"
    save_pack(small_pack(), path)
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="bad magic"):
        load_pack(path)


def test_load_rejects_version_mismatch(tmp_path):
    path = tmp_path / "p.egfp"
    save_pack(small_pack(), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version mismatch"):
        load_pack(path)


def test_load_rejects_truncation(tmp_path):
    path = tmp_path / "p.egfp"
    save_pack(small_pack(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-1])
    with pytest.raises(FormatError, match="truncated payload"):
        load_pack(path)


def test_load_rejects_trailing_bytes(tmp_path):
    path = tmp_path / "p.egfp"
    save_pack(small_pack(), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="size mismatch"):
        load_pack(path)


def test_pack_validate_rejects_bad_shapes():
    with pytest.raises(FormatError):
        FeaturePack(np.ones((2, 1), dtype=np.float32), np.array([0, 1]), ("a", "b")).validate()
    with pytest.raises(FormatError):
        FeaturePack(np.ones((2, 3), dtype=np.float32), np.array([0]), ("a", "b")).validate()
    with pytest.raises(FormatError):
        FeaturePack(np.ones((2, 3), dtype=np.float32), np.array([0, -2]), ("a", "b")).validate()


def synthetic_manifest(tmp_path, spec=None):
    spec = spec or SyntheticSpec(classes=3, dim=8, train_per_class=12, calib_per_class=6,
                                 test_per_class=6, unknown_per_class=6, far_count=10, seed=3)
    packs = generate_synthetic(spec)
    manifest, manifest_path = write_dataset(packs, spec.classes, tmp_path / "data", seed=spec.seed)
    return spec, packs, manifest, manifest_path


def test_valid_manifest_has_no_diagnostics(tmp_path):
    _, _, manifest, manifest_path = synthetic_manifest(tmp_path)
    assert validate_manifest(manifest, manifest_path.parent) == []


def test_manifest_round_trip(tmp_path):
    _, _, manifest, manifest_path = synthetic_manifest(tmp_path)
    loaded = load_manifest(manifest_path)
    assert loaded == manifest


def test_manifest_flags_known_label_in_unknown_split(tmp_path):
    _, packs, manifest, manifest_path = synthetic_manifest(tmp_path)
    bad = FeaturePack(
        packs["unknown_test"].features,
        np.full(packs["unknown_test"].n, 3, dtype=np.int32),
        packs["unknown_test"].ids,
    )
    rel = manifest.splits["unknown_test"]
    save_pack(bad, manifest_path.parent / rel)
    manifest.checksums[rel] = sha256_file(manifest_path.parent / rel)
    diags = validate_manifest(manifest, manifest_path.parent)
    assert any("unknown split contains known label" in d for d in diags)


def test_manifest_flags_checksum_mismatch_naming_file(tmp_path):
    _, _, manifest, manifest_path = synthetic_manifest(tmp_path)
    rel = manifest.splits["known_test"]
    target = manifest_path.parent / rel
    raw = bytearray(target.read_bytes())
    raw[-1] ^= 0xFF
    target.write_bytes(bytes(raw))
    diags = validate_manifest(manifest, manifest_path.parent)
    assert any(d == f"checksum mismatch: {rel}" for d in diags)


def test_manifest_flags_missing_role(tmp_path):
    _, _, manifest, manifest_path = synthetic_manifest(tmp_path)
    del manifest.splits["known_calib"]
    diags = validate_manifest(manifest, manifest_path.parent)
    assert any("missing required split role: known_calib" in d for d in diags)


def test_manifest_flags_duplicate_ids(tmp_path):
    _, packs, manifest, manifest_path = synthetic_manifest(tmp_path)
    clone = FeaturePack(
        packs["known_test"].features, packs["known_test"].labels, packs["known_test"].ids
    )
    rel = manifest.splits["known_calib"]
    save_pack(clone, manifest_path.parent / rel)
    manifest.checksums[rel] = sha256_file(manifest_path.parent / rel)
    diags = validate_manifest(manifest, manifest_path.parent)
    assert any("duplicate sample id" in d for d in diags)


def test_generate_synthetic_deterministic():
    spec = SyntheticSpec(classes=5, dim=16, train_per_class=40, seed=7)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    assert sorted(a) == sorted(b)
    for role in a:
        assert np.array_equal(a[role].features, b[role].features)
        assert np.array_equal(a[role].labels, b[role].labels)
        assert a[role].ids == b[role].ids


def test_write_dataset_checksums_deterministic(tmp_path):
    spec = SyntheticSpec(classes=3, dim=8, seed=11)
    m1, _ = write_dataset(generate_synthetic(spec), spec.classes, tmp_path / "one", seed=11)
    m2, _ = write_dataset(generate_synthetic(spec), spec.classes, tmp_path / "two", seed=11)
    assert m1.checksums == m2.checksums


def test_generate_synthetic_rejects_degenerate_spec():
    with pytest.raises(SpecError, match="K < 2"):
        generate_synthetic(SyntheticSpec(classes=1))
    with pytest.raises(SpecError, match="d < 2"):
        generate_synthetic(SyntheticSpec(dim=1))


def test_zero_offset_unknowns_match_known_distances():
    """Offset 0 makes unknown clusters coincide with known ones in distribution."""
    spec = SyntheticSpec(classes=4, dim=12, train_per_class=50, test_per_class=50,
                         unknown_per_class=50, offset_magnitude=0.0, seed=5)
    packs = generate_synthetic(spec)
    train = packs["known_train"]
    prototypes = np.vstack(
        [train.features[train.labels == c].mean(axis=0) for c in range(spec.classes)]
    )

    def nearest_proto_distance(features):
        diff = features[:, None, :].astype(np.float64) - prototypes[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)

    d_known = nearest_proto_distance(packs["known_test"].features)
    d_unknown = nearest_proto_distance(packs["unknown_test"].features)
    result = stats.ttest_ind(d_known, d_unknown, equal_var=False)
    assert result.pvalue > 0.01


def test_orthogonal_offset_inflates_unknown_residuals():
    """Fully out-of-subspace offsets push unknowns far from the ID subspace."""
    spec = SyntheticSpec(classes=4, dim=16, train_per_class=50, unknown_per_class=40,
                         offset_magnitude=1.0, in_subspace_fraction=0.0, sigma=0.02, seed=9)
    packs = generate_synthetic(spec)
    subspace = fit_subspace(packs["known_train"].features.astype(np.float64), 0.95)
    rho_known = residual_norm(packs["known_test"].features.astype(np.float64), subspace)
    rho_unknown = residual_norm(packs["unknown_test"].features.astype(np.float64), subspace)
    assert rho_unknown.mean() > 3.0 * rho_known.mean()


def test_split_ids_are_disjoint():
    packs = generate_synthetic(SyntheticSpec(seed=2))
    seen = set()
    for role in sorted(packs):
        for sid in packs[role].ids:
            assert sid not in seen
            seen.add(sid)


def test_carve_calibration_split_stratified_and_deterministic():
    packs = generate_synthetic(SyntheticSpec(classes=3, dim=8, train_per_class=20, seed=4))
    train = packs["known_train"]
    rest1, calib1 = carve_calibration_split(train, fraction=0.2, seed=1)
    rest2, calib2 = carve_calibration_split(train, fraction=0.2, seed=1)
    assert calib1.ids == calib2.ids
    assert rest1.n + calib1.n == train.n
    assert set(calib1.ids).isdisjoint(rest1.ids)
    for c in range(3):
        assert np.sum(calib1.labels == c) == 4
    with pytest.raises(SpecError):
        carve_calibration_split(train, fraction=0.99, seed=1)


def test_manifest_missing_file_diagnostic(tmp_path):
    _, _, manifest, manifest_path = synthetic_manifest(tmp_path)
    (manifest_path.parent / manifest.splits["far_ood"]).unlink()
    diags = validate_manifest(manifest, manifest_path.parent)
    assert any("missing file for role far_ood" in d for d in diags)
