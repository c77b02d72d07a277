#!/usr/bin/env python3
"""Tests for the shared correspondence types in corrkit.core."""

import unittest

import numpy as np

from corrkit.core import (INVALID, CameraModel, ConfidenceMap, DepthMap, DisparityMap, DisplacementField,
                          LsmSystem, MatchSet, compose_camera_pair, compose_warps, make_displacement_field,
                          project_pixels)
from corrkit.errors import ValidationError
from corrkit.synthetic import random_camera, rectified_rig


class TestDisplacementField(unittest.TestCase):

    def test_make_displacement_field_constant(self):
        """A constant field is valid everywhere and carries the fill value"""
        # Act
        field = make_displacement_field(4, 3, fill=(1.5, -2.0))

        # Assert
        self.assertEqual(field.shape, (3, 4))
        self.assertTrue(field.valid.all())
        self.assertTrue(np.all(field.du == 1.5))
        self.assertTrue(np.all(field.dv == -2.0))

    def test_make_displacement_field_invalid_fill(self):
        """The INVALID fill yields an all-invalid field"""
        field = make_displacement_field(2, 2, fill=INVALID)
        self.assertFalse(field.valid.any())
        self.assertEqual(field.valid_ratio(), 0.0)

    def test_make_displacement_field_rejects_empty(self):
        with self.assertRaises(ValidationError):
            make_displacement_field(0, 3)

    def test_invalid_pixels_hold_nan(self):
        """Values under the invalid mask are replaced by NaN"""
        # Arrange
        du = np.array([[1.0, 2.0]])
        valid = np.array([[True, False]])

        # Act
        field = DisplacementField(du, du, valid)

        # Assert
        self.assertEqual(field.du[0, 0], 1.0)
        self.assertTrue(np.isnan(field.du[0, 1]))

    def test_non_finite_valid_pixel_rejected(self):
        with self.assertRaises(ValidationError):
            DisplacementField([[np.nan]], [[0.0]])

    def test_arrays_are_read_only(self):
        """Constructed fields own read-only copies of their inputs"""
        du = np.zeros((2, 2))
        field = DisplacementField(du, du)
        du[0, 0] = 7.0
        self.assertEqual(field.du[0, 0], 0.0)
        with self.assertRaises(ValueError):
            field.du[0, 0] = 1.0

    def test_target_coords(self):
        field = make_displacement_field(3, 2, fill=(1.0, 0.5))
        u2, v2 = field.target_coords()
        self.assertEqual(u2[1, 2], 3.0)
        self.assertEqual(v2[1, 2], 1.5)


class TestScalarMaps(unittest.TestCase):

    def test_disparity_rejects_negative(self):
        with self.assertRaises(ValidationError):
            DisparityMap([[-1.0]])

    def test_disparity_negative_allowed_when_invalid(self):
        disp = DisparityMap([[-1.0, 2.0]], [[False, True]])
        self.assertEqual(disp.valid_ratio(), 0.5)

    def test_depth_rejects_zero(self):
        with self.assertRaises(ValidationError):
            DepthMap([[0.0]])

    def test_confidence_range(self):
        with self.assertRaises(ValidationError):
            ConfidenceMap([[1.5]])
        self.assertEqual(ConfidenceMap([[0.0, 1.0]]).shape, (1, 2))


class TestCameraModel(unittest.TestCase):

    def test_from_intrinsics_roundtrip(self):
        cam = CameraModel.from_intrinsics(100.0, 90.0, 31.5, 20.0, skew=0.5)
        self.assertEqual((cam.fx, cam.fy, cam.cx, cam.cy, cam.skew), (100.0, 90.0, 31.5, 20.0, 0.5))
        np.testing.assert_array_equal(cam.center, np.zeros(3))

    def test_rejects_non_rotation(self):
        """A scaled rotation matrix is not accepted"""
        with self.assertRaises(ValidationError):
            CameraModel.from_intrinsics(100.0, 100.0, 0.0, 0.0, R=2.0 * np.eye(3))

    def test_rejects_reflection(self):
        with self.assertRaises(ValidationError):
            CameraModel.from_intrinsics(100.0, 100.0, 0.0, 0.0, R=np.diag([1.0, 1.0, -1.0]))

    def test_rejects_non_positive_focal(self):
        with self.assertRaises(ValidationError):
            CameraModel.from_intrinsics(0.0, 100.0, 0.0, 0.0)

    def test_center_from_extrinsics(self):
        """x_cam = R x_world + T, so the centre is -R^T T"""
        cam = CameraModel.from_intrinsics(1.0, 1.0, 0.0, 0.0, T=[-0.5, 0.0, 0.0])
        np.testing.assert_allclose(cam.center, [0.5, 0.0, 0.0])


class TestPoseWarp(unittest.TestCase):

    def test_rectified_pair_warp(self):
        """f = 100, b = 0.5 gives H = I and B = (-50, 0, 0)"""
        # Arrange
        left, right = rectified_rig(focal=100.0, baseline=0.5)

        # Act
        warp = compose_camera_pair(left, right)

        # Assert
        np.testing.assert_allclose(warp.H, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(warp.B, [-50.0, 0.0, 0.0], atol=1e-12)

    def test_project_rectified_shift(self):
        """A point at Z = 10 shifts by -f b / Z = -5 px"""
        left, right = rectified_rig(focal=100.0, baseline=0.5)
        proj = project_pixels(compose_camera_pair(left, right), 10.0, 5.0, 10.0)
        self.assertAlmostEqual(float(proj.u2), 5.0, places=9)
        self.assertAlmostEqual(float(proj.v2), 5.0, places=9)
        self.assertTrue(bool(proj.in_front))

    def test_compose_warps_matches_direct(self):
        """Chaining 1->2 and 2->3 equals the direct 1->3 warp"""
        # Arrange
        rng = np.random.default_rng(3)
        cams = [random_camera(rng, max_angle_deg=10.0, translation=0.5) for _ in range(3)]

        # Act
        chained = compose_warps(compose_camera_pair(cams[0], cams[1]), compose_camera_pair(cams[1], cams[2]))
        direct = compose_camera_pair(cams[0], cams[2])

        # Assert
        np.testing.assert_allclose(chained.H, direct.H, atol=1e-9)
        np.testing.assert_allclose(chained.B, direct.B, atol=1e-9)

    def test_behind_camera_flagged(self):
        left, right = rectified_rig()
        proj = project_pixels(compose_camera_pair(left, right), 0.0, 0.0, -1.0)
        self.assertFalse(bool(proj.in_front))


class TestLsmSystem(unittest.TestCase):

    def test_solve_consistent_rows(self):
        """Two consistent rows give the exact depth and zero residual"""
        system = LsmSystem(A=np.array([[[2.0, 1.0]]]), b=np.array([[[6.0, 3.0]]]))
        z, ok = system.solve()
        self.assertTrue(ok[0, 0])
        self.assertAlmostEqual(z[0, 0], 3.0)
        self.assertAlmostEqual(system.residual(z)[0, 0], 0.0)

    def test_solve_degenerate(self):
        system = LsmSystem(A=np.zeros((1, 1, 2)), b=np.ones((1, 1, 2)))
        _, ok = system.solve()
        self.assertFalse(ok[0, 0])


class TestMatchSet(unittest.TestCase):

    def test_accessors(self):
        ms = MatchSet([[1.0, 2.0, 3.0, 4.0, 0.5]], ref_shape=(10, 10), tar_shape=(10, 10))
        self.assertEqual(len(ms), 1)
        np.testing.assert_array_equal(ms.points1(), [[1.0, 2.0]])
        np.testing.assert_array_equal(ms.points2(), [[3.0, 4.0]])
        self.assertEqual(ms.confidence[0], 0.5)

    def test_out_of_bounds_rejected(self):
        with self.assertRaises(ValidationError):
            MatchSet([[0.0, 0.0, 12.0, 0.0, 1.0]], ref_shape=(10, 10), tar_shape=(10, 10))

    def test_subset(self):
        ms = MatchSet([[0, 0, 0, 0, 1], [1, 1, 1, 1, 1]])
        self.assertEqual(len(ms.subset([False, True])), 1)


if __name__ == "__main__":
    unittest.main()
