import dataclasses
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
from keypose.collision import (collision_pairs, dense_sampling_distance, primitive_segments, segment_distance,
                               self_collision, terrain_clearance)
from keypose.robot_model import link_transforms, load_robot
from keypose.terrain import CoarseHeightMap, build_coarse_map, generate_terrain


def _random_base(rng):
    return SE3Pose.from_rotation_matrix(rng.uniform(-3.0, 3.0, 3), Rotation.from_quat(rng.normal(size=4)).as_matrix())


class TestSegmentDistance(unittest.TestCase):

    def test_known_configurations(self):
        # Crossing perpendicular segments one unit apart
        self.assertAlmostEqual(float(segment_distance([-1, 0, 0], [1, 0, 0], [0, -1, 1], [0, 1, 1])), 1.0)
        # Parallel, overlapping
        self.assertAlmostEqual(float(segment_distance([0, 0, 0], [2, 0, 0], [1, 0.5, 0], [3, 0.5, 0])), 0.5)
        # Collinear, disjoint
        self.assertAlmostEqual(float(segment_distance([0, 0, 0], [1, 0, 0], [3, 0, 0], [4, 0, 0])), 2.0)
        # Point against segment and point against point
        self.assertAlmostEqual(float(segment_distance([0, 2, 0], [0, 2, 0], [-1, 0, 0], [1, 0, 0])), 2.0)
        self.assertAlmostEqual(float(segment_distance([1, 1, 1], [1, 1, 1], [1, 1, 3], [1, 1, 3])), 2.0)

    def test_batched_against_dense_sampling(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-1.0, 1.0, size=(50, 4, 3))
        exact = segment_distance(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
        for k in range(50):
            dense = dense_sampling_distance(*pts[k], samples=400)
            self.assertGreaterEqual(dense, exact[k] - 1e-12)
            self.assertLess(dense - exact[k], 0.01)


class TestSelfCollision(unittest.TestCase):
    """Self-collision reports on the bundled model."""

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()

    def test_default_configuration_is_free(self):
        report = self_collision(self.model, SE3Pose.identity(), self.model.default_config)
        self.assertFalse(report.colliding)
        self.assertEqual(report.pairs, ())

    def test_excluded_pairs_are_skipped(self):
        pairs = collision_pairs(self.model)
        links = {(self.model.collision_primitives[i].link, self.model.collision_primitives[j].link) for i, j in pairs}
        base = self.model.link_index("base")
        thigh = self.model.link_index("LF_THIGH")
        shank = self.model.link_index("LF_SHANK")
        hand = self.model.link_index("ARM_HAND")
        self.assertNotIn((base, thigh), links)
        self.assertNotIn((thigh, shank), links)
        self.assertIn((base, hand), links)

    def test_wrist_on_base_capsule_centre_collides(self):
        q = self.model.default_config
        T = link_transforms(self.model, q)
        wrist = self.model.link_index("ARM_WRIST")
        base = self.model.link_index("base")
        local = np.linalg.inv(T[wrist]) @ np.array([0.0, 0.0, 0.0, 1.0])
        prims = tuple(dataclasses.replace(p, offset=local[:3]) if p.link == wrist else p
                      for p in self.model.collision_primitives)
        moved = dataclasses.replace(self.model, collision_primitives=prims)
        report = self_collision(moved, SE3Pose.identity(), q)
        self.assertTrue(report.colliding)
        depths = {(p.link_a, p.link_b): p.depth for p in report.pairs}
        self.assertAlmostEqual(depths[(base, wrist)], 0.09 + 0.045, places=9)
        for pair in report.pairs:
            self.assertGreater(pair.depth, 0.0)

    def test_agrees_with_point_sampling(self):
        rng = np.random.default_rng(21)
        pairs = collision_pairs(self.model)
        radii = np.array([p.radius for p in self.model.collision_primitives])
        for _ in range(4):
            q = rng.uniform(self.model.lower, self.model.upper)
            T = link_transforms(self.model, q)
            starts, ends = primitive_segments(self.model, T)
            report = self_collision(self.model, SE3Pose.identity(), q)
            reported = {(p.link_a, p.link_b) for p in report.pairs}
            oracle = set()
            for i, j in pairs:
                exact = float(segment_distance(starts[i], ends[i], starts[j], ends[j]))
                dense = dense_sampling_distance(starts[i], ends[i], starts[j], ends[j], samples=300)
                self.assertLess(abs(dense - exact), 2e-3)
                clearance = dense - radii[i] - radii[j]
                if clearance < 0.0:
                    a, b = self.model.collision_primitives[i].link, self.model.collision_primitives[j].link
                    if abs(exact - radii[i] - radii[j]) > 2e-3:
                        oracle.add((min(a, b), max(a, b)))
            self.assertTrue(oracle <= reported)

    def test_invariant_under_rigid_motion(self):
        rng = np.random.default_rng(2)
        q = rng.uniform(self.model.lower, self.model.upper)
        expected = [(p.link_a, p.link_b) for p in self_collision(self.model, SE3Pose.identity(), q).pairs]
        for _ in range(20):
            report = self_collision(self.model, _random_base(rng), q)
            self.assertEqual([(p.link_a, p.link_b) for p in report.pairs], expected)

    def test_inflated_radii_never_remove_collisions(self):
        rng = np.random.default_rng(4)
        inflated = dataclasses.replace(
            self.model,
            collision_primitives=tuple(dataclasses.replace(p, radius=p.radius + 0.01)
                                       for p in self.model.collision_primitives))
        for _ in range(10):
            q = rng.uniform(self.model.lower, self.model.upper)
            before = {(p.link_a, p.link_b) for p in self_collision(self.model, SE3Pose.identity(), q).pairs}
            after = {(p.link_a, p.link_b) for p in self_collision(inflated, SE3Pose.identity(), q).pairs}
            self.assertTrue(before <= after)


class TestTerrainClearance(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.flat = build_coarse_map(generate_terrain("flat", 0.0, 0))

    def _pose(self, x, y, z):
        return SE3Pose(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    def test_margin_boundary_is_inclusive(self):
        self.assertTrue(terrain_clearance(self._pose(0.3, 0.1, 0.081), self.flat, 0.08))
        self.assertTrue(terrain_clearance(self._pose(0.3, 0.1, 0.08), self.flat, 0.08))
        self.assertFalse(terrain_clearance(self._pose(0.3, 0.1, 0.079), self.flat, 0.08))

    def test_step_height(self):
        step = CoarseHeightMap(np.full((5, 5), 0.3))
        self.assertFalse(terrain_clearance(self._pose(0.2, 0.2, 0.35), step))
        self.assertTrue(terrain_clearance(self._pose(0.2, 0.2, 0.38), step))

    def test_out_of_bounds(self):
        with self.assertRaises(KeyposeError) as cm:
            terrain_clearance(self._pose(10.0, 0.0, 1.0), self.flat)
        self.assertEqual(cm.exception.error_code, KeyposeError.OUT_OF_BOUNDS)
        self.assertEqual(cm.exception.context["x"], 10.0)


if __name__ == '__main__':
    unittest.main()
