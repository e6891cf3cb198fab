import os
import unittest

import numpy as np

from wordseg import evaluation, segpipe


def mask(labels):
    return segpipe.SegmentationMask(labels)


def counting_oracle(pred, gt, classes):
    """Per-pixel counting of intersections and unions."""
    ious = []
    for c in range(classes):
        intersection = union = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            if g == 255:
                continue
            intersection += int(p == c and g == c)
            union += int(p == c or g == c)
        if union:
            ious.append(intersection / union)
    return sum(ious) / len(ious)


class TestConfusionMatrix(unittest.TestCase):
    def setUp(self):
        self.pred = mask([[0, 0], [1, 1]])
        self.gt = mask([[0, 1], [1, 1]])

    def test_hand_counted_example(self):
        matrix = evaluation.ConfusionMatrix(2).accumulate(self.pred, self.gt)
        self.assertEqual([0.5, 2 / 3], matrix.per_class_iou())
        self.assertAlmostEqual(7 / 12, matrix.miou())
        self.assertEqual(0.75, matrix.pixel_accuracy())
        np.testing.assert_array_equal([[1, 0], [1, 2]], matrix.counts)

    def test_rows_are_ground_truth(self):
        matrix = evaluation.ConfusionMatrix(3).accumulate(
            mask([[2]]), mask([[0]])
        )
        self.assertEqual(1, matrix.counts[0, 2])

    def test_ignored_pixels_are_not_counted(self):
        matrix = evaluation.ConfusionMatrix(2).accumulate(
            mask([[0, 1]]), mask([[0, 255]])
        )
        self.assertEqual(1, matrix.total)
        self.assertEqual(1, int(matrix.counts.sum()))

    def test_classes_without_union_are_skipped(self):
        matrix = evaluation.ConfusionMatrix(3).accumulate(self.pred, self.gt)
        self.assertIsNone(matrix.per_class_iou()[2])
        self.assertAlmostEqual(7 / 12, matrix.miou())

    def test_sum_of_matrices_equals_joint_accumulation(self):
        rng = np.random.default_rng(0)
        pairs = [
            (
                mask(rng.integers(0, 4, (5, 5))),
                mask(rng.integers(0, 4, (5, 5))),
            )
            for _ in range(4)
        ]
        joint = evaluation.ConfusionMatrix(4)
        parts = []
        for pred, gt in pairs:
            joint.accumulate(pred, gt)
            parts.append(evaluation.ConfusionMatrix(4).accumulate(pred, gt))
        merged = parts[0] + parts[1] + parts[2] + parts[3]
        np.testing.assert_array_equal(joint.counts, merged.counts)
        self.assertEqual(joint.total, merged.total)
        self.assertEqual(4, merged.images)

    def test_swapping_masks_transposes_matrix(self):
        first = evaluation.ConfusionMatrix(2).accumulate(self.pred, self.gt)
        second = evaluation.ConfusionMatrix(2).accumulate(self.gt, self.pred)
        np.testing.assert_array_equal(first.counts.T, second.counts)
        self.assertEqual(first.per_class_iou(), second.per_class_iou())

    def test_miou_matches_counting_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            pred = rng.integers(0, 4, (8, 8))
            gt = rng.integers(0, 4, (8, 8))
            gt[rng.random((8, 8)) < 0.1] = 255
            matrix = evaluation.ConfusionMatrix(4).accumulate(
                mask(pred), mask(gt)
            )
            self.assertEqual(counting_oracle(pred, gt, 4), matrix.miou())

    def test_shape_mismatch_raises(self):
        with self.assertRaises(ValueError):
            evaluation.ConfusionMatrix(2).accumulate(
                mask([[0]]), mask([[0, 1]])
            )

    def test_ignore_value_in_prediction_raises(self):
        with self.assertRaises(ValueError):
            evaluation.ConfusionMatrix(2).accumulate(
                mask([[255]]), mask([[0]])
            )

    def test_label_out_of_range_raises(self):
        with self.assertRaises(ValueError):
            evaluation.ConfusionMatrix(2).accumulate(
                mask([[0]]), mask([[2]])
            )

    def test_adding_matrices_of_other_size_raises(self):
        with self.assertRaises(ValueError):
            _ = evaluation.ConfusionMatrix(2) + evaluation.ConfusionMatrix(3)

    def test_empty_matrix_has_no_miou(self):
        with self.assertRaises(ValueError):
            evaluation.ConfusionMatrix(2).miou()

    def test_empty_matrix_has_no_pixel_accuracy(self):
        with self.assertRaises(ValueError):
            evaluation.ConfusionMatrix(2).pixel_accuracy()


class TestHiou(unittest.TestCase):
    def setUp(self):
        # IoU: class 0 -> 1, class 1 -> 1/3, class 2 -> 0
        self.matrix = evaluation.ConfusionMatrix(3).accumulate(
            mask([[0, 1, 1, 1]]), mask([[0, 1, 2, 2]])
        )

    def test_harmonic_mean_of_seen_and_unseen(self):
        seen, unseen, harmonic = self.matrix.hiou([1])
        self.assertAlmostEqual(0.5, seen)
        self.assertAlmostEqual(1 / 3, unseen)
        self.assertAlmostEqual(0.4, harmonic)

    def test_unequal_subsets(self):
        seen, unseen, harmonic = self.matrix.hiou([0])
        self.assertAlmostEqual(1 / 6, seen)
        self.assertAlmostEqual(1.0, unseen)
        self.assertAlmostEqual(2 / 7, harmonic)

    def test_zero_subsets_give_zero(self):
        matrix = evaluation.ConfusionMatrix(2).accumulate(
            mask([[1, 0]]), mask([[0, 1]])
        )
        self.assertEqual((0.0, 0.0, 0.0), matrix.hiou([1]))

    def test_empty_split_raises(self):
        with self.assertRaises(ValueError):
            self.matrix.hiou([])
        with self.assertRaises(ValueError):
            self.matrix.hiou([0, 1, 2])

    def test_index_out_of_range_raises(self):
        with self.assertRaises(ValueError):
            self.matrix.hiou([3])


class TestReport(unittest.TestCase):
    def setUp(self):
        self.matrix = evaluation.ConfusionMatrix(3).accumulate(
            mask([[0, 0], [1, 1]]), mask([[0, 1], [1, 1]])
        )

    def test_report_contains_machine_readable_lines(self):
        lines = self.matrix.report(names=["grass", "sky", "cat"]).splitlines()
        self.assertIn("iou.0=0.5", lines)
        self.assertIn("iou.2=nan", lines)
        miou = [line for line in lines if line.startswith("miou=")]
        self.assertAlmostEqual(7 / 12, float(miou[0].split("=")[1]))
        self.assertIn("pixel_accuracy=0.75", lines)
        self.assertNotIn("hiou", "\n".join(lines))

    def test_report_names_classes(self):
        report = self.matrix.report(names=["grass", "sky", "cat"])
        self.assertIn("grass", report)
        self.assertIn("n/a", report)

    def test_report_with_split_contains_hiou(self):
        report = self.matrix.report(unseen=[1])
        self.assertIn("hiou=", report)
        self.assertIn("miou_unseen=", report)

    def test_wrong_number_of_names_raises(self):
        with self.assertRaises(ValueError):
            self.matrix.report(names=["grass"])


class TestReadSplit(unittest.TestCase):
    def setUp(self):
        self.filename = "unseen.txt"

    def tearDown(self):
        if os.path.exists(self.filename):
            os.remove(self.filename)

    def test_indices_are_read(self):
        with open(self.filename, "w", encoding="utf8") as file:
            file.write("# unseen classes\n1, 4\n7 # giraffe\n")
        self.assertEqual([1, 4, 7], evaluation.read_split(self.filename))
