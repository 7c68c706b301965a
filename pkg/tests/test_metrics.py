"""Metric tests against a direct per-pixel counting oracle."""

import numpy as np
import pytest
from _oracles import metrics_by_counting

from handseg.metrics import (
    ConfusionMatrix,
    evaluation_report,
    fw_iu,
    hand_object_mean_iou,
    mean_accuracy,
    mean_iu,
    per_class_iu,
    pixel_accuracy,
)

ALL_METRICS = (pixel_accuracy, mean_accuracy, mean_iu, fw_iu, hand_object_mean_iou)


class TestAccumulate:
    def test_single_class_perfect(self):
        cm = ConfusionMatrix()
        ones = np.ones((2, 5), dtype=np.uint8)
        cm.accumulate(ones, ones)
        assert cm.counts[1, 1] == 10
        assert cm.total == 10

    def test_all_misassigned(self):
        cm = ConfusionMatrix()
        cm.accumulate(np.zeros((3, 3), dtype=np.uint8),
                      np.ones((3, 3), dtype=np.uint8))
        assert cm.counts[1, 0] == 9
        assert cm.counts.sum() == 9

    def test_row_sums_are_gt_counts(self):
        rng = np.random.default_rng(60)
        pred = rng.integers(0, 3, size=(8, 8))
        gt = rng.integers(0, 3, size=(8, 8))
        cm = ConfusionMatrix().accumulate(pred, gt)
        for c in range(3):
            assert cm.counts[c].sum() == np.sum(gt == c)

    def test_order_independent(self):
        rng = np.random.default_rng(61)
        frames = [(rng.integers(0, 3, (6, 6)), rng.integers(0, 3, (6, 6)))
                  for _ in range(5)]
        a, b = ConfusionMatrix(), ConfusionMatrix()
        for p, g in frames:
            a.accumulate(p, g)
        for p, g in reversed(frames):
            b.accumulate(p, g)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ConfusionMatrix().accumulate(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMetricValues:
    def test_perfect_prediction_all_ones(self):
        rng = np.random.default_rng(62)
        gt = rng.integers(0, 3, size=(10, 10))
        while len(np.unique(gt)) < 3:
            gt = rng.integers(0, 3, size=(10, 10))
        cm = ConfusionMatrix().accumulate(gt, gt)
        for metric in ALL_METRICS:
            assert metric(cm) == 1.0

    def test_two_class_swap_case(self):
        # classes 1 and 2, equal sizes, one correct and one fully misassigned
        gt = np.array([[1] * 4 + [2] * 4])
        pred = np.array([[1] * 4 + [1] * 4])
        cm = ConfusionMatrix().accumulate(pred, gt)
        want = metrics_by_counting(pred, gt)
        assert pixel_accuracy(cm) == pytest.approx(0.5)
        assert mean_accuracy(cm) == pytest.approx(0.5)
        assert mean_iu(cm) == pytest.approx(want["mean_iu"])
        assert fw_iu(cm) == pytest.approx(want["fw_iu"])

    def test_random_pairs_match_counting_oracle(self):
        rng = np.random.default_rng(63)
        for _ in range(25):
            pred = rng.integers(0, 3, size=(8, 8))
            gt = rng.integers(0, 3, size=(8, 8))
            cm = ConfusionMatrix().accumulate(pred, gt)
            want = metrics_by_counting(pred, gt)
            assert abs(pixel_accuracy(cm) - want["pixel_accuracy"]) <= 1e-12
            assert abs(mean_accuracy(cm) - want["mean_accuracy"]) <= 1e-12
            assert abs(mean_iu(cm) - want["mean_iu"]) <= 1e-12
            assert abs(fw_iu(cm) - want["fw_iu"]) <= 1e-12
            if want["hand_object_mean_iou"] is not None:
                assert abs(hand_object_mean_iou(cm)
                           - want["hand_object_mean_iou"]) <= 1e-12

    def test_all_in_unit_interval(self):
        rng = np.random.default_rng(64)
        for _ in range(10):
            cm = ConfusionMatrix().accumulate(
                rng.integers(0, 3, (6, 6)), rng.integers(0, 3, (6, 6)))
            for metric in (pixel_accuracy, mean_accuracy, mean_iu, fw_iu):
                assert 0.0 <= metric(cm) <= 1.0

    def test_all_one_iff_diagonal(self):
        cm = ConfusionMatrix()
        cm.counts[0, 0], cm.counts[1, 1], cm.counts[2, 2] = 5, 7, 3
        assert all(metric(cm) == 1.0 for metric in ALL_METRICS)
        cm.counts[0, 1] = 1
        assert any(metric(cm) < 1.0 for metric in ALL_METRICS)

    def test_empty_matrix_rejected(self):
        for metric in ALL_METRICS:
            with pytest.raises(ValueError):
                metric(ConfusionMatrix())


class TestHandObjectMeanIou:
    def test_object_absent_everywhere_excluded(self):
        gt = np.array([[0, 0, 1, 1]])
        cm = ConfusionMatrix().accumulate(gt, gt)
        assert hand_object_mean_iou(cm) == 1.0

    def test_constructed_case(self):
        gt = np.array([[0, 1, 1, 2], [2, 2, 1, 0], [0, 1, 2, 2], [1, 0, 0, 2]])
        pred = np.array([[0, 1, 2, 2], [2, 1, 1, 0], [0, 1, 2, 0], [1, 0, 0, 2]])
        cm = ConfusionMatrix().accumulate(pred, gt)
        iu = per_class_iu(cm)
        # hand: diag 4, row 5, col 5 -> 4/6; object: diag 4, row 6, col 5 -> 4/7
        assert iu[1] == pytest.approx(4 / 6)
        assert iu[2] == pytest.approx(4 / 7)
        assert hand_object_mean_iou(cm) == pytest.approx((4 / 6 + 4 / 7) / 2)

    def test_neither_present_rejected(self):
        gt = np.zeros((3, 3), dtype=np.uint8)
        cm = ConfusionMatrix().accumulate(gt, gt)
        with pytest.raises(ValueError):
            hand_object_mean_iou(cm)


class TestReport:
    def test_percent_formatting(self):
        gt = np.array([[0, 1, 2, 1]])
        cm = ConfusionMatrix().accumulate(gt, gt)
        text = evaluation_report(cm, n_frames=1)
        assert "pixel accuracy:       100.00" in text
        assert "hand/object mean IOU: 100.00" in text
        assert "frames evaluated:     1" in text

    def test_absent_class_shown_as_na(self):
        gt = np.array([[0, 1, 1, 0]])
        cm = ConfusionMatrix().accumulate(gt, gt)
        assert "object=n/a" in evaluation_report(cm, 1)
