#!/usr/bin/env python3
"""Tests for fundamental-matrix estimation and epipolar scoring in corrkit.epipolar."""

import unittest

import numpy as np

from corrkit.core import MatchSet
from corrkit.epipolar import (FundamentalMatrix, eight_point, estimate_fundamental, fundamental_from_cameras,
                              maa_epipolar, sampson_distance)
from corrkit.errors import ArgumentError, EstimationError, EvaluationError, ValidationError
from corrkit.synthetic import epipolar_correspondences, rectified_rig


class TestFundamentalMatrix(unittest.TestCase):

    def test_ground_truth_from_cameras(self):
        """GT F has rank 2, unit norm and satisfies x2^T F x1 = 0 on exact matches"""
        # Arrange
        cam1, cam2, matches, _ = epipolar_correspondences(np.random.default_rng(0), n=100)

        # Act
        F = fundamental_from_cameras(cam1, cam2)

        # Assert
        self.assertAlmostEqual(np.linalg.norm(F.F), 1.0)
        self.assertLess(np.linalg.svd(F.F, compute_uv=False)[-1], 1e-8)
        self.assertLess(sampson_distance(F, matches.points1(), matches.points2()).max(), 1e-6)

    def test_rectified_rig_lines_are_rows(self):
        """A horizontal baseline keeps epipolar lines on image rows"""
        left, right = rectified_rig()
        F = fundamental_from_cameras(left, right)
        d = sampson_distance(F, np.array([[10.0, 5.0], [3.0, 7.0]]), np.array([[4.0, 5.0], [3.0, 9.0]]))
        self.assertAlmostEqual(d[0], 0.0, places=9)
        self.assertGreater(d[1], 0.5)

    def test_shared_centre_rejected(self):
        left, _ = rectified_rig()
        with self.assertRaises(ArgumentError):
            fundamental_from_cameras(left, left)

    def test_full_rank_rejected(self):
        with self.assertRaises(ValidationError):
            FundamentalMatrix(np.eye(3))

    def test_from_matrix_projects_to_rank_two(self):
        F = FundamentalMatrix.from_matrix(np.random.default_rng(1).normal(size=(3, 3)))
        self.assertLess(np.linalg.svd(F.F, compute_uv=False)[-1], 1e-8)
        self.assertGreater(F.F.flat[np.argmax(np.abs(F.F))], 0.0)


class TestEstimateFundamental(unittest.TestCase):

    def test_noise_free_inliers_fit_exactly(self):
        cam1, cam2, matches, _ = epipolar_correspondences(np.random.default_rng(2), n=200)
        F, mask = estimate_fundamental(matches, seed=0)
        self.assertTrue(mask.all())
        self.assertLess(sampson_distance(F, matches.points1(), matches.points2()).max(), 1e-6)

    def test_outlier_recall(self):
        """With 30% outliers at least 95% of true inliers are kept, for every seed"""
        for seed in range(50):
            with self.subTest(seed=seed):
                # Arrange
                _, _, matches, inliers = epipolar_correspondences(np.random.default_rng(seed), n=200,
                                                                  outlier_ratio=0.3)

                # Act
                _, mask = estimate_fundamental(matches, iters=2000, inlier_tau=1.0, seed=seed)

                # Assert
                self.assertGreaterEqual(mask[inliers].mean(), 0.95)

    def test_deterministic_for_seed(self):
        _, _, matches, _ = epipolar_correspondences(np.random.default_rng(3), n=100, outlier_ratio=0.2)
        a, mask_a = estimate_fundamental(matches, seed=4)
        b, mask_b = estimate_fundamental(matches, seed=4)
        np.testing.assert_array_equal(a.F, b.F)
        np.testing.assert_array_equal(mask_a, mask_b)

    def test_too_few_matches(self):
        _, _, matches, _ = epipolar_correspondences(np.random.default_rng(4), n=7)
        with self.assertRaises(EstimationError):
            estimate_fundamental(matches)

    def test_all_samples_degenerate(self):
        """Collinear points never yield a model"""
        xs = np.arange(12, dtype=np.float64)
        records = np.column_stack([xs, xs, xs + 1.0, xs + 1.0, np.ones(12)])
        with self.assertRaises(EstimationError):
            estimate_fundamental(MatchSet(records), iters=20)

    def test_eight_point_degenerate_returns_none(self):
        pts = np.zeros((8, 2))
        self.assertIsNone(eight_point(pts, pts))


class TestMaa(unittest.TestCase):

    def test_ground_truth_scores_full_marks(self):
        cam1, cam2, matches, _ = epipolar_correspondences(np.random.default_rng(5), n=50)
        report = maa_epipolar(matches, fundamental_from_cameras(cam1, cam2))
        self.assertEqual((report.name, report.value, report.unit), ("maa@10", 100.0, "%"))

    def test_matches_loop_oracle(self):
        """mAA equals the mean over thresholds 1..10 of the fraction below each"""
        rng = np.random.default_rng(6)
        cam1, cam2, matches, _ = epipolar_correspondences(rng, n=60, outlier_ratio=0.5)
        F = fundamental_from_cameras(cam1, cam2)
        d = sampson_distance(F, matches.points1(), matches.points2())
        expected = 100.0 * sum(sum(1 for x in d if x < t) / len(d) for t in range(1, 11)) / 10.0
        self.assertAlmostEqual(maa_epipolar(matches, F).value, expected, delta=1e-9)

    def test_empty_set(self):
        left, right = rectified_rig()
        with self.assertRaises(EvaluationError):
            maa_epipolar(MatchSet(np.zeros((0, 5))), fundamental_from_cameras(left, right))


if __name__ == "__main__":
    unittest.main()
