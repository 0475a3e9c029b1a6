"""Synthetic shift streams and the .glrf feature-file contract.

The closed-form class Gaussians (mean s*R*mu + translation, covariance
(s*sd)^2 R R^T) give exact oracles for the rotation arithmetic and the
symmetric-KL shift ordering.
"""

import numpy as np
import pytest

from glrcl.errors import InconsistentStream, InvalidSpec, MalformedFeatureFile
from glrcl.streams import (
    FEATURE_MAGIC,
    LabeledFeatureBatch,
    SyntheticShiftSpec,
    domain_class_gaussian,
    feature_file_bytes,
    gaussian_symmetric_kl,
    generate_stream,
    load_stream,
    parse_feature_file,
    rotation_matrix,
    save_stream,
)


def small_spec(**overrides):
    base = dict(
        num_domains=2,
        classes=2,
        dim=4,
        train_per_class=50,
        eval_per_class=20,
        within_sd=1.0,
        seed=123,
    )
    base.update(overrides)
    return SyntheticShiftSpec(**base)


class TestRotation:
    def test_90_degrees_moves_first_pair(self):
        r = rotation_matrix(90.0, 4)
        v = np.zeros(4)
        v[0] = 1.0
        np.testing.assert_allclose(r @ v, [0.0, 1.0, 0.0, 0.0], atol=1e-15)

    def test_identity_at_zero(self):
        np.testing.assert_array_equal(rotation_matrix(0.0, 5), np.eye(5))

    def test_orthogonal(self):
        r = rotation_matrix(37.0, 6)
        np.testing.assert_allclose(r @ r.T, np.eye(6), atol=1e-14)

    def test_odd_dim_last_coordinate_fixed(self):
        r = rotation_matrix(45.0, 5)
        assert r[4, 4] == 1.0
        np.testing.assert_array_equal(r[4, :4], np.zeros(4))


class TestSpecValidation:
    def test_defaults_materialize(self):
        spec = small_spec()
        assert spec.base_means.shape == (2, 4)
        assert spec.rotations_deg == (0.0, 0.0)
        assert spec.translations.shape == (2, 4)
        assert spec.scales == (1.0, 1.0)

    def test_bad_dim(self):
        with pytest.raises(InvalidSpec):
            small_spec(dim=1)

    def test_single_class_rejected(self):
        with pytest.raises(InvalidSpec):
            small_spec(classes=1)

    def test_negative_scale_rejected(self):
        with pytest.raises(InvalidSpec):
            small_spec(scales=[1.0, -2.0])

    def test_rotation_length_mismatch(self):
        with pytest.raises(InvalidSpec):
            small_spec(rotations_deg=[0.0])


class TestGenerateStream:
    def test_identity_transform_matches_base_means(self):
        spec = small_spec(num_domains=1, train_per_class=4000)
        stream = generate_stream(spec)
        task = stream.tasks[0]
        for c in range(2):
            rows = task.train.features[task.train.labels == c]
            np.testing.assert_allclose(rows.mean(axis=0), spec.base_means[c],
                                       atol=3.0 / np.sqrt(4000) * 3)

    def test_rotated_mean_matches_closed_form(self):
        spec = small_spec(rotations_deg=[0.0, 90.0], train_per_class=4000)
        stream = generate_stream(spec)
        task = stream.tasks[1]
        for c in range(2):
            mean, _ = domain_class_gaussian(spec, 1, c)
            rows = task.train.features[task.train.labels == c]
            np.testing.assert_allclose(rows.mean(axis=0), mean, atol=0.15)

    def test_identical_transforms_agree_in_distribution(self):
        spec = small_spec(train_per_class=5000)
        stream = generate_stream(spec)
        sd_of_mean = spec.within_sd / np.sqrt(5000)
        for c in range(2):
            m0 = stream.tasks[0].train.features[stream.tasks[0].train.labels == c]
            m1 = stream.tasks[1].train.features[stream.tasks[1].train.labels == c]
            diff = np.abs(m0.mean(axis=0) - m1.mean(axis=0))
            assert np.all(diff < 3.0 * sd_of_mean * np.sqrt(2.0))

    def test_deterministic(self):
        a = generate_stream(small_spec())
        b = generate_stream(small_spec())
        np.testing.assert_array_equal(a.tasks[0].train.features,
                                      b.tasks[0].train.features)
        np.testing.assert_array_equal(a.tasks[1].eval.labels,
                                      b.tasks[1].eval.labels)

    def test_train_eval_disjoint(self):
        stream = generate_stream(small_spec())
        train_rows = {row.tobytes() for row in stream.tasks[0].train.features}
        eval_rows = {row.tobytes() for row in stream.tasks[0].eval.features}
        assert not train_rows & eval_rows

    def test_balanced_labels(self):
        stream = generate_stream(small_spec(train_per_class=7))
        counts = np.bincount(stream.tasks[0].train.labels, minlength=2)
        np.testing.assert_array_equal(counts, [7, 7])

    def test_scale_and_translation_applied(self):
        spec = small_spec(
            num_domains=2,
            scales=[1.0, 2.0],
            translations=[[0.0] * 4, [5.0, 0.0, 0.0, 0.0]],
            train_per_class=4000,
        )
        stream = generate_stream(spec)
        for c in range(2):
            mean, _ = domain_class_gaussian(spec, 1, c)
            rows = stream.tasks[1].train.features[stream.tasks[1].train.labels == c]
            np.testing.assert_allclose(rows.mean(axis=0), mean, atol=0.3)


class TestShiftOrdering:
    def test_symmetric_kl_zero_for_identical(self):
        assert gaussian_symmetric_kl(np.zeros(2), np.eye(2),
                                     np.zeros(2), np.eye(2)) == pytest.approx(0.0,
                                                                              abs=1e-12)

    def test_larger_rotation_larger_kl(self):
        spec = small_spec(num_domains=4, rotations_deg=[0.0, 30.0, 60.0, 90.0])
        kls = []
        base_mean, base_cov = domain_class_gaussian(spec, 0, 0)
        for t in range(1, 4):
            mean, cov = domain_class_gaussian(spec, t, 0)
            kls.append(gaussian_symmetric_kl(base_mean, base_cov, mean, cov))
        assert kls[0] < kls[1] < kls[2]


class TestFeatureFiles:
    def test_round_trip_bits(self, tmp_path):
        stream = generate_stream(small_spec())
        paths = []
        for t in range(2):
            paths += [str(tmp_path / f"d{t}_train.glrf"),
                      str(tmp_path / f"d{t}_eval.glrf")]
        save_stream(stream, paths)
        again = load_stream(paths)
        assert again.num_classes == stream.num_classes
        for a, b in zip(again.tasks, stream.tasks):
            np.testing.assert_array_equal(a.train.features, b.train.features)
            np.testing.assert_array_equal(a.train.labels, b.train.labels)
            np.testing.assert_array_equal(a.eval.features, b.eval.features)
        # saving the loaded stream reproduces identical bytes
        blob_a = feature_file_bytes(stream.tasks[0].train, 2)
        blob_b = feature_file_bytes(again.tasks[0].train, 2)
        assert blob_a == blob_b

    def test_bad_magic(self):
        blob = feature_file_bytes(
            LabeledFeatureBatch(np.zeros((2, 3)), np.array([0, 1])), 2)
        assert blob[:4] == FEATURE_MAGIC
        with pytest.raises(MalformedFeatureFile):
            parse_feature_file(b"XXXX" + blob[4:])

    def test_truncation(self):
        blob = feature_file_bytes(
            LabeledFeatureBatch(np.zeros((2, 3)), np.array([0, 1])), 2)
        with pytest.raises(MalformedFeatureFile):
            parse_feature_file(blob[:-1])

    def test_label_above_class_count(self):
        with pytest.raises(InvalidSpec):
            feature_file_bytes(
                LabeledFeatureBatch(np.zeros((2, 3)), np.array([0, 5])), 2)

    def test_empty_batch_write_rejected(self):
        with pytest.raises(InvalidSpec):
            feature_file_bytes(
                LabeledFeatureBatch(np.zeros((0, 3)), np.zeros(0, dtype=int)), 2)

    def test_dim_mismatch_across_files(self, tmp_path):
        a = feature_file_bytes(
            LabeledFeatureBatch(np.zeros((2, 8)), np.array([0, 1])), 2)
        b = feature_file_bytes(
            LabeledFeatureBatch(np.zeros((2, 16)), np.array([0, 1])), 2)
        for name, blob in (("a_t.glrf", a), ("a_e.glrf", a),
                           ("b_t.glrf", b), ("b_e.glrf", b)):
            (tmp_path / name).write_bytes(blob)
        with pytest.raises(InconsistentStream):
            load_stream([str(tmp_path / "a_t.glrf"), str(tmp_path / "a_e.glrf"),
                         str(tmp_path / "b_t.glrf"), str(tmp_path / "b_e.glrf")])

    def test_odd_path_count(self, tmp_path):
        with pytest.raises(InconsistentStream):
            load_stream([str(tmp_path / "only_one.glrf")])

    def test_header_fields(self):
        batch = LabeledFeatureBatch(np.ones((5, 7), dtype=np.float32), np.zeros(5, dtype=int))
        blob = feature_file_bytes(batch, 3)
        parsed, num_classes = parse_feature_file(blob)
        assert parsed.n == 5 and parsed.dim == 7 and num_classes == 3
