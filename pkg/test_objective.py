#!/usr/bin/env python3
"""Tests for ground-truth distributions and the InfoNCE objective in corrkit.objective."""

import math
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from corrkit.core import DisplacementField, make_displacement_field
from corrkit.errors import ArgumentError, ValidationError
from corrkit.matching import ProposalSet, ScoreVolume
from corrkit.objective import (DEFAULT_TEMPERATURE, GtFlowDistribution, LossConfig, info_nce_loss,
                               quantize_gt_distribution, total_loss)


def _delta(h, w, n, index=0):
    P = np.zeros((h, w, n))
    P[..., index] = 1.0
    return P


class TestQuantizeGtDistribution(unittest.TestCase):

    def test_two_by_two_patch_worked_example(self):
        """Offsets u {0,0,1,0} and v {0,0,0,1} give a 0.75 / 0.25 product"""
        # Arrange
        flow = DisplacementField([[0.0, 2.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 2.0]])

        # Act
        dist = quantize_gt_distribution(flow, 2)

        # Assert
        self.assertEqual(dist.shape, (1, 1))
        entries = {(fu, fv): p for fu, fv, p in dist.entries(0, 0)}
        self.assertEqual(entries[(0, 0)], 0.5625)
        self.assertEqual(entries[(1, 0)], 0.1875)
        self.assertEqual(entries[(0, 1)], 0.1875)
        self.assertEqual(entries[(1, 1)], 0.0625)

    def test_unanimous_patch_is_delta(self):
        flow = make_displacement_field(8, 8, fill=(8.0, -8.0))
        dist = quantize_gt_distribution(flow, 8)
        self.assertEqual(dist.entries(0, 0), [(1, -1, 1.0)])

    def test_ties_round_toward_negative_infinity(self):
        """At s = 1 a half-pixel target rounds down"""
        up = quantize_gt_distribution(make_displacement_field(1, 1, fill=(0.5, 0.0)), 1)
        down = quantize_gt_distribution(make_displacement_field(1, 1, fill=(-0.5, 0.0)), 1)
        self.assertEqual(up.entries(0, 0), [(0, 0, 1.0)])
        self.assertEqual(down.entries(0, 0), [(-1, 0, 1.0)])

    def test_invalid_patch_is_empty(self):
        valid = np.ones((4, 4), dtype=bool)
        valid[:2, :2] = False
        flow = DisplacementField(np.zeros((4, 4)), np.zeros((4, 4)), valid)
        dist = quantize_gt_distribution(flow, 2)
        np.testing.assert_array_equal(dist.nonempty, [[False, True], [True, True]])
        self.assertEqual(dist.entries(0, 0), [])

    def test_partial_edge_patches(self):
        dist = quantize_gt_distribution(make_displacement_field(5, 3), 2)
        self.assertEqual(dist.shape, (2, 3))
        self.assertTrue(dist.nonempty.all())

    def test_patch_must_be_positive_integer(self):
        flow = make_displacement_field(4, 4)
        for patch in (0, -2, 1.5):
            with self.assertRaises(ArgumentError):
                quantize_gt_distribution(flow, patch)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2, 4, 8]))
    def test_each_pixel_sums_to_one(self, seed, patch):
        rng = np.random.default_rng(seed)
        flow = DisplacementField(rng.normal(scale=10.0, size=(16, 16)), rng.normal(scale=10.0, size=(16, 16)),
                                 rng.random((16, 16)) > 0.3)
        dist = quantize_gt_distribution(flow, patch)
        sums = np.bincount(dist.pix, weights=dist.p, minlength=dist.shape[0] * dist.shape[1])
        np.testing.assert_allclose(sums[dist.nonempty.reshape(-1)], 1.0, atol=1e-9)

    def test_unnormalized_distribution_rejected(self):
        with self.assertRaises(ValidationError):
            GtFlowDistribution((1, 1), 1, [0, 0], [0, 1], [0, 0], [0.5, 0.4])

    def test_to_dense_keeps_offsets_outside_set(self):
        dist = GtFlowDistribution((1, 1), 1, [0, 0], [0, 5], [0, 0], [0.5, 0.5])
        dense, out_mass, out_count = dist.to_dense(ProposalSet.window(1))
        self.assertEqual(dense[0, 0].sum(), 0.5)
        self.assertEqual(dense[0, 0, 4], 0.5)
        self.assertEqual(out_mass[0, 0], 0.5)
        self.assertEqual(out_count[0, 0], 1)


class TestInfoNceLoss(unittest.TestCase):

    def test_uniform_scores_give_log_n(self):
        """Equal scores cost ln N against a delta target"""
        for n in (2, 4, 16):
            with self.subTest(n=n):
                props = ProposalSet.disparity_range(n)
                report = info_nce_loss(ScoreVolume(np.zeros((1, 1, n)), props), _delta(1, 1, n))
                self.assertAlmostEqual(report.loss, math.log(n), delta=1e-12)

    def test_confident_correct_score(self):
        """Score 1 on the target, 0 elsewhere, tau 0.07, N = 4"""
        props = ProposalSet.disparity_range(4)
        scores = np.zeros((1, 1, 4))
        scores[0, 0, 0] = 1.0
        report = info_nce_loss(ScoreVolume(scores, props), _delta(1, 1, 4), LossConfig(0.07))
        expected = math.log1p(3.0 * math.exp(-1.0 / 0.07))
        self.assertAlmostEqual(report.loss, expected, delta=1e-12)
        self.assertAlmostEqual(report.loss, 1.87e-6, delta=0.01e-6)

    def test_gradient_matches_finite_differences(self):
        """Analytic dL/dS agrees with central differences (h = 1e-4)"""
        rng = np.random.default_rng(0)
        h = 1e-4
        for trial in range(1000):
            # Arrange
            n = int(rng.integers(2, 6))
            props = ProposalSet.disparity_range(n)
            S = rng.uniform(-1.0, 1.0, size=(2, 2, n))
            P = rng.random((2, 2, n))
            P /= P.sum(axis=-1, keepdims=True)
            cfg = LossConfig(float(rng.uniform(0.1, 1.0)))

            # Act
            grad = info_nce_loss(ScoreVolume(S, props), P, cfg).grad
            numeric = np.zeros_like(S)
            for idx in np.ndindex(S.shape):
                plus, minus = S.copy(), S.copy()
                plus[idx] += h
                minus[idx] -= h
                numeric[idx] = (info_nce_loss(ScoreVolume(plus, props), P, cfg).loss
                                - info_nce_loss(ScoreVolume(minus, props), P, cfg).loss) / (2 * h)

            # Assert
            rel = np.linalg.norm(grad - numeric) / max(np.linalg.norm(numeric), 1e-12)
            self.assertLess(rel, 1e-5, f"trial {trial}")

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(1)
        props = ProposalSet.window(1)
        P = rng.random((3, 3, 9))
        P /= P.sum(axis=-1, keepdims=True)
        report = info_nce_loss(ScoreVolume(rng.normal(size=(3, 3, 9)), props), P)
        np.testing.assert_allclose(report.grad.sum(axis=-1), 0.0, atol=1e-12)

    def test_shift_invariance_and_non_negativity(self):
        rng = np.random.default_rng(2)
        props = ProposalSet.window(1)
        S = rng.normal(size=(2, 3, 9))
        P = rng.random((2, 3, 9))
        P /= P.sum(axis=-1, keepdims=True)
        a = info_nce_loss(ScoreVolume(S, props), P)
        b = info_nce_loss(ScoreVolume(S + 3.0, props), P)
        self.assertAlmostEqual(a.loss, b.loss, delta=1e-9)
        self.assertGreaterEqual(a.loss, 0.0)

    def test_empty_pixels_skipped(self):
        """Pixels without target mass contribute neither loss nor gradient"""
        # Arrange
        props = ProposalSet.disparity_range(3)
        P = _delta(1, 2, 3)
        P[0, 1] = 0.0
        S = np.zeros((1, 2, 3))

        # Act
        report = info_nce_loss(ScoreVolume(S, props), P)

        # Assert
        self.assertEqual(report.counted, 1)
        self.assertAlmostEqual(report.loss, math.log(3.0))
        np.testing.assert_array_equal(report.grad[0, 1], 0.0)
        self.assertTrue(np.isnan(report.per_pixel[0, 1]))

    def test_out_of_view_target_is_counted(self):
        """A pixel whose whole target lies beyond the proposal set still costs loss"""
        # Arrange
        du = np.zeros((4, 4))
        du[0, 0] = -5.0
        dist = quantize_gt_distribution(DisplacementField(du, np.zeros((4, 4))), 1)
        props = ProposalSet.full_2d(4, 4)
        tau = DEFAULT_TEMPERATURE

        # Act
        report = info_nce_loss(ScoreVolume(np.zeros((4, 4, len(props))), props), dist)

        # Assert
        self.assertEqual(dist.entries(0, 0), [(-5, 0, 1.0)])
        self.assertEqual(report.counted, 16)
        expected = 1.0 / tau + math.log(len(props) + math.exp(-1.0 / tau))
        self.assertAlmostEqual(report.per_pixel[0, 0], expected, delta=1e-9)
        self.assertGreater(report.grad[0, 0].min(), 0.0)

    def test_gradient_with_outside_entries_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-4
        props = ProposalSet.window(1)
        dist = GtFlowDistribution((1, 2), 1, [0, 0, 0, 1, 1], [0, 1, 4, -1, 7], [0, 0, 2, 1, 0],
                                  [0.5, 0.2, 0.3, 0.6, 0.4])
        cfg = LossConfig(0.3)
        S = rng.uniform(-1.0, 1.0, size=(1, 2, 9))
        grad = info_nce_loss(ScoreVolume(S, props), dist, cfg).grad
        numeric = np.zeros_like(S)
        for idx in np.ndindex(S.shape):
            plus, minus = S.copy(), S.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (info_nce_loss(ScoreVolume(plus, props), dist, cfg).loss
                            - info_nce_loss(ScoreVolume(minus, props), dist, cfg).loss) / (2 * h)
        rel = np.linalg.norm(grad - numeric) / np.linalg.norm(numeric)
        self.assertLess(rel, 1e-5)

    def test_all_empty_returns_zero(self):
        props = ProposalSet.disparity_range(2)
        with self.assertLogs("corrkit.objective", level="WARNING"):
            report = info_nce_loss(ScoreVolume(np.zeros((1, 1, 2)), props), np.zeros((1, 1, 2)))
        self.assertEqual((report.loss, report.counted), (0.0, 0))

    def test_non_positive_temperature(self):
        with self.assertRaises(ArgumentError):
            LossConfig(0.0)

    def test_with_quantized_distribution(self):
        """A sparse distribution from flow drives the loss on a matching volume"""
        flow = make_displacement_field(4, 4, fill=(2.0, 0.0))
        dist = quantize_gt_distribution(flow, 2)
        props = ProposalSet.window(1)
        scores = np.zeros((2, 2, 9))
        scores[..., int(props.index_of(1, 0))] = 1.0
        report = info_nce_loss(ScoreVolume(scores, props), dist)
        self.assertEqual(report.counted, 4)
        self.assertLess(report.loss, 1e-4)
        self.assertEqual(total_loss(0.5, report), 0.5 + report.loss)


if __name__ == "__main__":
    unittest.main()
