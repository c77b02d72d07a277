#!/usr/bin/env python3
"""Tests for cycle consistency, match extraction and warping in corrkit.consistency."""

import unittest

import numpy as np

from corrkit.consistency import bilinear_sample, cycle_consistency, extract_matches, warp_by_flow
from corrkit.core import ConfidenceMap, DisplacementField, make_displacement_field
from corrkit.errors import ArgumentError
from corrkit.synthetic import translated_square_scene


class TestBilinearSample(unittest.TestCase):

    def test_integer_and_midpoint(self):
        grid = np.array([[0.0, 1.0], [2.0, 3.0]])
        out, ok = bilinear_sample(grid, np.array([1.0, 0.5]), np.array([1.0, 0.5]))
        np.testing.assert_allclose(out, [3.0, 1.5])
        self.assertTrue(ok.all())

    def test_outside_is_not_ok(self):
        grid = np.zeros((3, 3))
        out, ok = bilinear_sample(grid, np.array([-0.1, 2.0, 2.1]), np.array([0.0, 2.0, 0.0]))
        np.testing.assert_array_equal(ok, [False, True, False])
        self.assertTrue(np.isnan(out[0]))

    def test_invalid_neighbour_with_weight(self):
        """An invalid corner only matters when it carries weight"""
        grid = np.zeros((2, 2))
        valid = np.array([[True, False], [True, True]])
        _, ok = bilinear_sample(grid, np.array([0.0, 0.5]), np.array([0.0, 0.0]), valid=valid)
        np.testing.assert_array_equal(ok, [True, False])


class TestCycleConsistency(unittest.TestCase):

    def test_inverse_translation_pair(self):
        """A constant shift and its inverse agree wherever the target is in view"""
        # Arrange
        fwd = make_displacement_field(20, 16, fill=(3.0, -2.0))
        bwd = make_displacement_field(20, 16, fill=(-3.0, 2.0))

        # Act
        conf = cycle_consistency(fwd, bwd, tau_c=0.5)

        # Assert
        expected = np.zeros((16, 20))
        expected[2:, :17] = 1.0
        np.testing.assert_array_equal(conf.c, expected)

    def test_role_swap_marks_mirrored_pixels(self):
        """Running (bwd, fwd) accepts exactly the landing points of the accepted forward pixels"""
        # Arrange
        fwd = make_displacement_field(20, 16, fill=(3.0, -2.0))
        bwd = make_displacement_field(20, 16, fill=(-3.0, 2.0))

        # Act
        forward = cycle_consistency(fwd, bwd, tau_c=0.5).c
        backward = cycle_consistency(bwd, fwd, tau_c=0.5).c

        # Assert
        mirrored = np.zeros_like(forward)
        mirrored[:-2, 3:] = forward[2:, :-3]
        np.testing.assert_array_equal(backward, mirrored)
        self.assertEqual(backward.sum(), forward.sum())

    def test_occlusion_scene(self):
        """Occluded pixels are rejected and co-visible pixels accepted"""
        for seed in range(5):
            # Arrange
            scene = translated_square_scene(np.random.default_rng(seed), size=64, square=16, shift=(6, 4))

            # Act
            conf = cycle_consistency(scene.fwd, scene.bwd, tau_c=1.0)

            # Assert
            occluded = scene.occluded
            self.assertGreaterEqual((conf.c[occluded] == 0).mean(), 0.99)
            self.assertGreaterEqual((conf.c[~occluded] == 1).mean(), 0.99)

    def test_relative_tolerance_loosens(self):
        fwd = make_displacement_field(8, 8, fill=(2.0, 0.0))
        bwd = make_displacement_field(8, 8, fill=(-1.0, 0.0))
        strict = cycle_consistency(fwd, bwd, tau_c=0.5)
        loose = cycle_consistency(fwd, bwd, tau_c=0.5, relative=0.5)
        self.assertEqual(strict.c.sum(), 0.0)
        self.assertGreater(loose.c.sum(), 0.0)

    def test_invalid_forward_rejected(self):
        fwd = DisplacementField(np.zeros((2, 2)), np.zeros((2, 2)), [[True, False], [True, True]])
        conf = cycle_consistency(fwd, make_displacement_field(2, 2))
        np.testing.assert_array_equal(conf.c, [[1.0, 0.0], [1.0, 1.0]])

    def test_negative_threshold(self):
        field = make_displacement_field(2, 2)
        with self.assertRaises(ArgumentError):
            cycle_consistency(field, field, tau_c=-1.0)


class TestExtractMatches(unittest.TestCase):

    def test_records_on_stride_grid(self):
        flow = make_displacement_field(6, 4, fill=(1.0, 0.0))
        conf = ConfidenceMap(np.ones((4, 6)))
        matches = extract_matches(flow, conf, stride=2)
        self.assertEqual(len(matches), 2 * 3)
        np.testing.assert_array_equal(matches.records[1], [2.0, 0.0, 3.0, 0.0, 1.0])

    def test_unconfident_and_outside_dropped(self):
        flow = make_displacement_field(3, 1, fill=(1.0, 0.0))
        conf = ConfidenceMap([[1.0, 0.0, 1.0]])
        matches = extract_matches(flow, conf)
        np.testing.assert_array_equal(matches.records, [[0.0, 0.0, 1.0, 0.0, 1.0]])

    def test_bad_stride(self):
        flow = make_displacement_field(2, 2)
        with self.assertRaises(ArgumentError):
            extract_matches(flow, ConfidenceMap(np.ones((2, 2))), stride=0)


class TestWarpByFlow(unittest.TestCase):

    def test_warp_reconstructs_reference(self):
        """Backward warping the target by the forward flow restores the reference off the occluded area"""
        scene = translated_square_scene(np.random.default_rng(0))
        warped, ok = warp_by_flow(scene.target, scene.fwd)
        covisible = ok & ~scene.occluded
        np.testing.assert_allclose(warped[covisible], scene.reference[covisible])


if __name__ == "__main__":
    unittest.main()
