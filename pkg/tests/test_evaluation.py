import math

import numpy as np
import pytest

from udlalign.datasets import AlignmentPair
from udlalign.evaluation import (
    angle_error,
    correntropy,
    default_kernel_sigma,
    evaluate_reference,
    evaluate_synthetic,
)
from udlalign.geometry import RigidTransform, invert, warp
from udlalign.udl import BiasCalibration

from conftest import OracleEstimator, make_texture


class TestAngleError:
    @pytest.mark.parametrize("pred,gt,expected", [
        (10.0, 10.0, 0.0),
        (359.0, 1.0, 2.0),
        (270.0, 90.0, 180.0),
        (0.0, 360.0, 0.0),
    ])
    def test_examples(self, pred, gt, expected):
        assert angle_error(pred, gt) == expected

    def test_symmetric_and_bounded(self, rng):
        a = rng.uniform(-720.0, 720.0, 1000)
        b = rng.uniform(-720.0, 720.0, 1000)
        err = angle_error(a, b)
        assert np.array_equal(err, angle_error(b, a))
        assert np.all(err >= 0.0) and np.all(err <= 180.0)

    def test_zero_iff_congruent(self, rng):
        assert angle_error(10.0, 370.0) == 0.0
        assert angle_error(10.0, 10.5) > 0.0


class TestCorrentropy:
    def test_identical_images_score_one(self):
        img = make_texture(32, 32, seed=1)
        assert correntropy(img, img, sigma=0.1) == 1.0

    def test_sigma_offset_closed_form(self):
        sigma = 0.37
        a = np.full((64, 64), 0.2)
        b = a + sigma
        assert correntropy(a, b, sigma) == pytest.approx(math.exp(-0.5), abs=1e-9)

    def test_symmetry(self):
        a = make_texture(32, 32, seed=2)
        b = make_texture(32, 32, seed=3)
        assert correntropy(a, b, 0.2) == correntropy(b, a, 0.2)

    def test_decreases_as_noise_doubles(self):
        img = make_texture(64, 64, seed=4)
        rng = np.random.default_rng(5)
        noise = rng.standard_normal(img.shape)
        scores = [correntropy(img, img + scale * noise, 0.25)
                  for scale in (0.05, 0.1, 0.2, 0.4)]
        assert all(s1 > s2 for s1, s2 in zip(scores, scores[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            correntropy(np.zeros((4, 4)), np.zeros((4, 5)), 0.1)

    def test_bad_sigma(self):
        img = make_texture(8, 8, seed=6)
        with pytest.raises(ValueError):
            correntropy(img, img, 0.0)

    def test_default_sigma_is_reference_std(self):
        img = make_texture(32, 32, seed=7)
        assert default_kernel_sigma(img) == pytest.approx(float(img.std()))
        with pytest.raises(ValueError):
            default_kernel_sigma(np.zeros((8, 8)))


def synthetic_dataset(n, seed=10, size=64):
    pairs = []
    rng = np.random.default_rng(seed)
    for i in range(n):
        src = make_texture(size, size, seed=seed * 100 + i)
        gt = RigidTransform(
            float(rng.uniform(0, 360)),
            int(rng.integers(-5, 6)),
            int(rng.integers(-5, 6)),
        )
        pairs.append(AlignmentPair(src, warp(src, gt), gt=gt))
    return pairs


class TestEvaluateSynthetic:
    def test_oracle_model_zero_error(self):
        pairs = synthetic_dataset(12)
        oracle = OracleEstimator(bias=40.0)
        oracle.register_pairs(pairs)
        calib = BiasCalibration(c=40.0, n_pairs=1, spread=0.0)
        report = evaluate_synthetic(oracle, calib, pairs, include_translation=False)
        assert report.sample_count == 12
        assert report.mean_rotation_error == pytest.approx(0.0, abs=1e-9)
        assert report.median_rotation_error == pytest.approx(0.0, abs=1e-9)

    def test_constant_residual_shows_up(self):
        pairs = synthetic_dataset(8)
        oracle = OracleEstimator(bias=0.0)
        oracle.register_pairs(pairs)
        calib = BiasCalibration(c=355.0, n_pairs=1, spread=0.0)  # 5 deg off
        report = evaluate_synthetic(oracle, calib, pairs, include_translation=False)
        assert report.mean_rotation_error == pytest.approx(5.0, abs=1e-9)

    def test_translation_errors_reported(self):
        pairs = synthetic_dataset(6)
        oracle = OracleEstimator()
        oracle.register_pairs(pairs)
        calib = BiasCalibration(c=0.0, n_pairs=1, spread=0.0)
        report = evaluate_synthetic(oracle, calib, pairs, include_translation=True)
        assert report.mean_translation_error is not None
        assert report.mean_translation_error <= 1.5
        assert all("pred_dx" in s for s in report.samples)

    def test_histogram_covers_all_samples(self):
        pairs = synthetic_dataset(9)
        oracle = OracleEstimator(bias=10.0)
        oracle.register_pairs(pairs)
        calib = BiasCalibration(c=0.0, n_pairs=1, spread=0.0)
        report = evaluate_synthetic(oracle, calib, pairs, include_translation=False)
        assert sum(report.error_histogram["counts"]) == 9

    def test_missing_gt_rejected(self):
        pair = AlignmentPair(make_texture(32, 32, seed=1), make_texture(32, 32, seed=2))
        with pytest.raises(ValueError, match="ground truth"):
            evaluate_synthetic(OracleEstimator(), BiasCalibration(0, 1, 0), [pair])

    def test_report_serialization_round_trip(self):
        import json

        pairs = synthetic_dataset(4)
        oracle = OracleEstimator()
        oracle.register_pairs(pairs)
        report = evaluate_synthetic(
            oracle, BiasCalibration(0, 1, 0), pairs, include_translation=False
        )
        payload = json.loads(report.to_json())
        assert payload["sample_count"] == 4
        assert "samples" not in payload
        assert "config_digest" in payload


def reference_stack(n, seed=20, size=64):
    reference = make_texture(size, size, seed=seed)
    images, transforms = [], []
    rng = np.random.default_rng(seed)
    for _ in range(n):
        t = RigidTransform(
            float(rng.uniform(0, 360)),
            int(rng.integers(-5, 6)),
            int(rng.integers(-5, 6)),
        )
        images.append(warp(reference, t))
        transforms.append(t)
    return reference, images, transforms


class TestEvaluateReference:
    def _oracle_for(self, reference, images, transforms, bias=0.0):
        oracle = OracleEstimator(bias=bias)
        for img, t in zip(images, transforms):
            oracle.register(img, reference, invert(t).angle)
        return oracle, BiasCalibration(c=bias, n_pairs=1, spread=0.0)

    def test_all_identical_inputs(self):
        reference = make_texture(64, 64, seed=21)
        images = [reference.copy() for _ in range(4)]
        oracle = OracleEstimator()
        oracle.register(reference, reference, 0.0)
        report, average = evaluate_reference(
            oracle, BiasCalibration(0, 1, 0), images, reference
        )
        assert report.mean_correntropy == pytest.approx(1.0)
        np.testing.assert_allclose(average, reference, atol=1e-6)

    def test_oracle_alignment_sharpens_average(self):
        reference, images, transforms = reference_stack(24)
        oracle, calib = self._oracle_for(reference, images, transforms)
        report, average = evaluate_reference(oracle, calib, images, reference)
        unaligned_avg = np.mean(images, axis=0)
        assert float(average.std()) > float(unaligned_avg.std())
        assert report.mean_correntropy > 0.6

    def test_shuffled_order_same_score(self):
        reference, images, transforms = reference_stack(10)
        oracle, calib = self._oracle_for(reference, images, transforms)
        report_a, avg_a = evaluate_reference(oracle, calib, images, reference)
        perm = list(reversed(range(len(images))))
        report_b, avg_b = evaluate_reference(
            oracle, calib, [images[i] for i in perm], reference
        )
        assert report_a.mean_correntropy == report_b.mean_correntropy
        np.testing.assert_allclose(avg_a, avg_b, atol=1e-6)

    def test_shape_mismatch_rejected(self):
        reference = make_texture(64, 64, seed=22)
        with pytest.raises(ValueError):
            evaluate_reference(
                OracleEstimator(), BiasCalibration(0, 1, 0),
                [make_texture(32, 32, seed=23)], reference,
            )

    def test_empty_stack_rejected(self):
        with pytest.raises(ValueError):
            evaluate_reference(
                OracleEstimator(), BiasCalibration(0, 1, 0), [],
                make_texture(32, 32, seed=24),
            )
