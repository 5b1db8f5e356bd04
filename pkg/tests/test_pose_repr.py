import os
import sys

try:
    sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))
except Exception:
    pass

import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from keypose import KeyposeError, SE3Pose
from keypose._se3 import quat_angle, quat_conjugate, quat_multiply
from keypose.pose_repr import (REPRESENTATION_KINDS, KeypointTriple, PoseDelta, continuity_audit, encode_delta,
                               keypoints_of, matrix_from_six_d, pose_errors, pose_from_keypoints,
                               quaternion_from_payload, rotation_payload, six_d_of, wrap_angle)


def _random_pose(rng):
    return SE3Pose(rng.uniform(-2.0, 2.0, 3), rng.normal(size=4))


def _rotation_gap(a, b):
    return float(quat_angle(quat_multiply(quat_conjugate(a), b)))


class TestKeypoints(unittest.TestCase):
    """Cube keypoints of a pose and their inverse."""

    def setUp(self):
        self.rng = np.random.default_rng(17)

    def test_identity_vertices(self):
        kp = keypoints_of(SE3Pose.identity())
        np.testing.assert_allclose(kp.k0, [0.15, 0.15, 0.15])
        np.testing.assert_allclose(kp.k1, [0.15, -0.15, -0.15])
        np.testing.assert_allclose(kp.k2, [-0.15, 0.15, -0.15])
        self.assertLess(kp.rigidity_deviation(), 1e-12)

    def test_translation_shifts_every_vertex(self):
        t = np.array([0.4, -1.0, 0.25])
        pose = _random_pose(self.rng)
        shifted = SE3Pose(pose.position + t, pose.orientation)
        np.testing.assert_allclose(keypoints_of(shifted).points - keypoints_of(pose).points, np.tile(t, (3, 1)),
                                   atol=1e-12)

    def test_rotation_about_vertical_axis(self):
        theta = 0.7
        rotated = SE3Pose.from_xyz_rpy([0.0, 0.0, 0.0], [0.0, 0.0, theta])
        moved = np.linalg.norm(keypoints_of(rotated).points - keypoints_of(SE3Pose.identity()).points, axis=1)
        r = 0.15 * np.sqrt(2.0)
        np.testing.assert_allclose(moved, 2.0 * r * np.sin(theta / 2.0), atol=1e-12)

    def test_round_trip(self):
        self.assertTrue(pose_from_keypoints(keypoints_of(SE3Pose.identity())).allclose(SE3Pose.identity(), 1e-12))
        for _ in range(1000):
            pose = _random_pose(self.rng)
            back = pose_from_keypoints(keypoints_of(pose))
            np.testing.assert_allclose(back.position, pose.position, atol=1e-9)
            self.assertLess(_rotation_gap(back.orientation, pose.orientation), 1e-9)

    def test_rigidity_violations(self):
        collinear = KeypointTriple(np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.6, 0.0, 0.0]]))
        with self.assertRaises(KeyposeError) as cm:
            pose_from_keypoints(collinear)
        self.assertEqual(cm.exception.error_code, KeyposeError.RIGIDITY)
        self.assertGreater(cm.exception.context["max_deviation"], 1e-6)
        stretched = keypoints_of(SE3Pose.identity()).points.copy()
        stretched[0] += 1e-4
        with self.assertRaises(KeyposeError):
            pose_from_keypoints(KeypointTriple(stretched))


class TestEncodeDelta(unittest.TestCase):
    """Pose differences in each representation."""

    def setUp(self):
        self.rng = np.random.default_rng(23)

    def test_equal_poses_give_zero_payload(self):
        pose = _random_pose(self.rng)
        for kind in REPRESENTATION_KINDS:
            delta = encode_delta(kind, pose, pose)
            if kind == "quaternion":
                np.testing.assert_allclose(delta.payload, [0, 0, 0, 1, 0, 0, 0], atol=1e-12)
            else:
                np.testing.assert_allclose(delta.payload, 0.0, atol=1e-12)

    def test_payload_sizes(self):
        a, b = _random_pose(self.rng), _random_pose(self.rng)
        sizes = {kind: encode_delta(kind, a, b).payload.size for kind in REPRESENTATION_KINDS}
        self.assertEqual(sizes, {"keypoint": 9, "quaternion": 7, "euler": 6, "six_d": 9})

    def test_keypoint_translation(self):
        pose = _random_pose(self.rng)
        t = np.array([0.1, 0.2, -0.3])
        delta = encode_delta("keypoint", pose, SE3Pose(pose.position + t, pose.orientation))
        np.testing.assert_allclose(delta.payload, np.tile(t, 3), atol=1e-12)

    def test_euler_wraps_across_the_yaw_seam(self):
        measured = SE3Pose.from_xyz_rpy([0, 0, 0], [0.0, 0.0, np.pi - 0.05])
        command = SE3Pose.from_xyz_rpy([0, 0, 0], [0.0, 0.0, -np.pi + 0.05])
        payload = encode_delta("euler", measured, command).payload
        self.assertAlmostEqual(payload[3], 0.1, places=9)
        self.assertTrue(np.all(np.abs(payload[3:]) < np.pi))

    def test_quaternion_is_command_times_inverse(self):
        a, b = _random_pose(self.rng), _random_pose(self.rng)
        payload = encode_delta("quaternion", a, b).payload
        np.testing.assert_allclose(payload[:3], b.position - a.position, atol=1e-12)
        self.assertGreaterEqual(payload[3], 0.0)
        recovered = quat_multiply(payload[3:], a.orientation)
        self.assertLess(_rotation_gap(recovered, b.orientation), 1e-9)

    def test_unknown_kinds(self):
        with self.assertRaises(KeyposeError) as cm:
            encode_delta("matrix", SE3Pose.identity(), SE3Pose.identity())
        self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)
        with self.assertRaises(KeyposeError):
            PoseDelta("euler", np.zeros(9))

    def test_zero_keypoint_delta_iff_zero_error(self):
        for _ in range(1000):
            a, b = _random_pose(self.rng), _random_pose(self.rng)
            self.assertGreater(np.linalg.norm(encode_delta("keypoint", a, b).payload), 1e-9)
            self.assertGreater(max(pose_errors(a, b)), 1e-9)
            same = SE3Pose(a.position.copy(), a.orientation.copy())
            self.assertLess(np.linalg.norm(encode_delta("keypoint", a, same).payload), 1e-9)
            self.assertLess(max(pose_errors(a, same)), 1e-9)


class TestPoseErrors(unittest.TestCase):

    def test_examples(self):
        pose = SE3Pose.from_xyz_rpy([0.3, 0.1, 0.5], [0.2, -0.1, 0.4])
        np.testing.assert_allclose(pose_errors(pose, pose), (0.0, 0.0), atol=1e-9)
        moved = SE3Pose(pose.position + np.array([0.0, 0.1, 0.0]), pose.orientation)
        dp, dr = pose_errors(pose, moved)
        self.assertAlmostEqual(dp, 0.1, places=12)
        self.assertAlmostEqual(dr, 0.0, places=9)
        axis = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
        turned = SE3Pose.from_rotation_matrix(pose.position,
                                              pose.rotation @ Rotation.from_rotvec(axis * np.pi / 2).as_matrix())
        dp, dr = pose_errors(pose, turned)
        self.assertAlmostEqual(dp, 0.0, places=12)
        self.assertAlmostEqual(dr, 90.0, places=9)

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            _, dr = pose_errors(_random_pose(rng), _random_pose(rng))
            self.assertTrue(0.0 <= dr <= 180.0)


class TestRotationEncodings(unittest.TestCase):

    def test_six_d_round_trip(self):
        R = Rotation.from_quat(np.random.default_rng(4).normal(size=(500, 4))).as_matrix()
        np.testing.assert_allclose(matrix_from_six_d(six_d_of(R)), R, atol=1e-9)

    def test_payload_round_trip(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            pose = _random_pose(rng)
            for kind in REPRESENTATION_KINDS:
                q = quaternion_from_payload(kind, rotation_payload(kind, pose.rotation))
                self.assertLess(_rotation_gap(q, pose.orientation), 1e-8, kind)

    def test_wrap_angle(self):
        np.testing.assert_allclose(wrap_angle([np.pi, -np.pi, 1.5 * np.pi, 0.25]),
                                   [np.pi, np.pi, -0.5 * np.pi, 0.25], atol=1e-12)


class TestContinuityAudit(unittest.TestCase):
    """Step statistics along SLERP paths."""

    @classmethod
    def setUpClass(cls):
        cls.report = continuity_audit(n_paths=30, seed=0, dt=1e-3)

    def test_shape(self):
        self.assertEqual(self.report.crossing_paths, 3)
        self.assertEqual(self.report.half_turn_paths, 3)
        self.assertEqual(set(self.report.stats), set(REPRESENTATION_KINDS))
        self.assertEqual(len(self.report.rows), (30 + 3) * len(REPRESENTATION_KINDS))

    def test_keypoint_and_six_d_are_lipschitz(self):
        self.assertLessEqual(self.report.stats["keypoint"].lipschitz, 0.5)
        self.assertLessEqual(self.report.stats["six_d"].lipschitz, np.sqrt(2.0) + 1e-6)
        for kind in ("keypoint", "six_d"):
            self.assertEqual(self.report.stats[kind].random_paths_with_jump, 0)
            self.assertEqual(self.report.stats[kind].crossing_paths_with_jump, 0)

    def test_euler_jumps_at_gimbal_lock(self):
        self.assertGreaterEqual(self.report.stats["euler"].crossing_paths_with_jump, 1)

    def test_hemisphere_quaternions_flip_through_a_half_turn(self):
        self.assertGreaterEqual(self.report.quaternion_sign_flips, 1)

    def test_invalid_arguments(self):
        for kwargs in ({"n_paths": 0, "seed": 0}, {"n_paths": 1, "seed": 0, "dt": 1.5}):
            with self.assertRaises(KeyposeError) as cm:
                continuity_audit(**kwargs)
            self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)


if __name__ == '__main__':
    unittest.main()
