import os
import sys

try:
    sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))
except Exception:
    pass

import unittest

import numpy as np

from keypose import KeyposeError, SE3Pose
from keypose.command_sampler import CommandSample, EpisodeSchedule
from keypose.reward_engine import (RandomizationConfig, ObservationNoise, RewardWeights, StepState, action_to_targets,
                                   alt_progress_reward, alt_tracking_reward, build_observation,
                                   central_difference_acceleration, feet_contact_reward, foot_contact_forces,
                                   initial_joint_reward, joint_limit_violation, pd_torque_proxy, penalties,
                                   progress_reward, should_terminate, total_reward, tracking_reward)
from keypose.robot_model import N_JOINTS, ee_pose_in_base, foot_positions, load_robot
from keypose.terrain import generate_terrain

POSE = SE3Pose.from_xyz_rpy([0.6, 0.1, 0.7], [0.1, 1.2, -0.3])


def _shifted(pose, dx):
    return SE3Pose(pose.position + np.array([dx, 0.0, 0.0]), pose.orientation)


def _state(model, t=3.0, offset=0.0, best=(0.0, 0.0, 0.0), **kwargs):
    kwargs.setdefault("q", model.default_config)
    kwargs.setdefault("q_init", model.default_config)
    return StepState(t, POSE, _shifted(POSE, offset), np.array(best), **kwargs)


class TestTaskRewards(unittest.TestCase):
    """Tracking, progress, contact and joint rewards."""

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()
        cls.w = RewardWeights()
        cls.schedule = EpisodeSchedule()

    def test_tracking_is_delayed(self):
        for t in (0.0, 1.0, 2.0):
            self.assertEqual(tracking_reward(_state(self.model, t=t), self.w, self.schedule), 0.0)
        self.assertAlmostEqual(tracking_reward(_state(self.model, t=2.02), self.w, self.schedule), 1.5)
        self.assertAlmostEqual(tracking_reward(_state(self.model, t=3.0), self.w, self.schedule), 1.5)
        self.assertAlmostEqual(tracking_reward(_state(self.model, t=4.0), self.w, self.schedule), 1.5)

    def test_time_beyond_the_command_period(self):
        with self.assertRaises(KeyposeError) as cm:
            tracking_reward(_state(self.model, t=4.5), self.w, self.schedule)
        self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)
        with self.assertRaises(KeyposeError):
            alt_tracking_reward("euler", _state(self.model, t=4.5), self.w, self.schedule)
        with self.assertRaises(KeyposeError):
            _state(self.model, t=-0.1)

    def test_tracking_closed_form(self):
        value = tracking_reward(_state(self.model, offset=0.05), self.w, self.schedule)
        self.assertAlmostEqual(value, 1.5 * np.exp(-1.0), places=12)
        self.assertAlmostEqual(value, 0.5518, places=4)
        far = tracking_reward(_state(self.model, offset=10.0), self.w, self.schedule)
        self.assertTrue(0.0 <= far < 1e-12)

    def test_progress_improvement(self):
        state = _state(self.model, offset=0.4, best=(0.5, 0.5, 0.5))
        reward, best = progress_reward(state)
        self.assertAlmostEqual(reward, 0.1, places=12)
        np.testing.assert_allclose(best, [0.4, 0.4, 0.4], atol=1e-12)
        reward, best = progress_reward(_state(self.model, offset=0.4, best=(0.4, 0.4, 0.4)))
        self.assertEqual(reward, 0.0)

    def test_progress_condition_switch(self):
        state = _state(self.model, offset=0.3, best=(0.1, 0.5, 0.5))
        reward, best = progress_reward(state, "all")
        self.assertEqual(reward, 0.0)
        np.testing.assert_array_equal(best, [0.1, 0.5, 0.5])
        reward, best = progress_reward(state, "sum")
        self.assertAlmostEqual(reward, (1.1 - 0.9) / 3.0, places=12)
        with self.assertRaises(KeyposeError) as cm:
            progress_reward(state, "any")
        self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)

    def test_progress_telescopes(self):
        state = _state(self.model, t=0.0, offset=0.6)
        state.reset_command(_shifted(POSE, 0.6))
        np.testing.assert_allclose(state.best_distances, 0.6, atol=1e-12)
        total = 0.0
        previous = state.best_distances.copy()
        rng = np.random.default_rng(0)
        offsets = np.concatenate([np.sort(rng.uniform(0.0, 0.6, 40))[::-1], [0.0]])
        for k, dx in enumerate(offsets):
            state.command_pose = _shifted(POSE, dx)
            state.time_in_command = 0.02 * (k + 1)
            breakdown = total_reward(state, self.model, self.w, self.schedule)
            total += breakdown.raw["progress"]
            self.assertTrue(np.all(state.best_distances <= previous + 1e-15))
            previous = state.best_distances.copy()
        self.assertAlmostEqual(total, 0.6, places=9)

    def test_feet_contact(self):
        cases = {(50, 50, 50, 50): 196.0, (50, 50, 50, 0.5): 0.0, (1, 1, 1, 1): 0.0, (1.5, 2, 2, 2): 3.5}
        for forces, expected in cases.items():
            self.assertAlmostEqual(feet_contact_reward(_state(self.model, foot_forces=forces)), expected)
        with self.assertRaises(KeyposeError) as cm:
            feet_contact_reward(_state(self.model, foot_forces=(50, 50, -1, 50)))
        self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)

    def test_initial_joint(self):
        q_init = self.model.default_config
        self.assertAlmostEqual(initial_joint_reward(_state(self.model), self.w), 12.0)
        q = q_init.copy()
        q[:12] += np.tile([0.05, -0.05], 6)
        self.assertAlmostEqual(initial_joint_reward(_state(self.model, q=q), self.w), 12.0 * np.exp(-1.0))
        q = q_init.copy()
        q[12:] += 1.0
        self.assertAlmostEqual(initial_joint_reward(_state(self.model, q=q), self.w), 12.0)


class TestPenalties(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()
        cls.w = RewardWeights()

    def test_zero_state(self):
        self.assertEqual(penalties(_state(self.model), self.model, self.w), 0.0)

    def test_action_rate(self):
        action = np.zeros(N_JOINTS)
        action[3] = 0.6
        action[7] = 0.8
        state = _state(self.model, action=action, prev_action=np.zeros(N_JOINTS))
        self.assertAlmostEqual(penalties(state, self.model, self.w), -5e-2)

    def test_joint_limit(self):
        action = np.zeros(N_JOINTS)
        j = 14
        action[j] = (self.model.upper[j] + 0.1 - self.model.default_config[j]) / 0.5
        state = _state(self.model, action=action, prev_action=action)
        self.assertAlmostEqual(penalties(state, self.model, self.w), -0.13, places=9)

    def test_joint_limit_slope(self):
        action = np.zeros(N_JOINTS)
        action[2] = (self.model.lower[2] - 0.2 - self.model.default_config[2]) / 0.5
        h = 1e-6
        plus, minus = action.copy(), action.copy()
        plus[2] += h
        minus[2] -= h
        slope = (self.w.w8 * joint_limit_violation(action_to_targets(plus, self.model), self.model)
                 - self.w.w8 * joint_limit_violation(action_to_targets(minus, self.model), self.model)) / (2 * h)
        # Target below the lower limit: raising the action reduces the violation
        self.assertAlmostEqual(slope, -self.w.w8 * 0.5, delta=1e-6)

    def test_torque_and_acceleration(self):
        tau = np.zeros(N_JOINTS)
        tau[0] = 10.0
        qdd = np.zeros(N_JOINTS)
        qdd[5] = 100.0
        state = _state(self.model, tau=tau, qdd=qdd)
        self.assertAlmostEqual(penalties(state, self.model, self.w), -3e-5 * 100.0 - 3e-6 * 1e4)


class TestTotalReward(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()

    def test_composition(self):
        state = _state(self.model, foot_forces=(50, 50, 50, 50))
        breakdown = total_reward(state, self.model, RewardWeights(), EpisodeSchedule())
        self.assertAlmostEqual(breakdown.total, 27.24, places=9)
        self.assertAlmostEqual(breakdown.weighted["tracking"], 19.5)
        self.assertEqual(breakdown.raw["progress"], 0.0)
        row = breakdown.as_row()
        self.assertEqual(row["total"], breakdown.total)
        self.assertEqual(len(row), 2 * 8 + 1)

    def test_total_is_weighted_sum(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            state = _state(self.model, t=float(rng.uniform(0, 4)), offset=float(rng.uniform(0, 0.3)),
                           best=rng.uniform(0, 0.5, 3), foot_forces=rng.uniform(0, 100, 4),
                           q=rng.uniform(self.model.lower, self.model.upper), tau=rng.normal(size=N_JOINTS),
                           qdd=rng.normal(size=N_JOINTS), action=rng.normal(size=N_JOINTS))
            breakdown = total_reward(state, self.model, RewardWeights(), EpisodeSchedule())
            self.assertEqual(breakdown.total, sum(breakdown.weighted.values()))
            self.assertTrue(0.0 <= breakdown.raw["tracking"] <= 1.5)
            self.assertTrue(0.0 < breakdown.raw["initial_joint"] <= 12.0)


class TestAlternateRewards(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()
        cls.w = RewardWeights()
        cls.schedule = EpisodeSchedule()

    def test_alt_tracking(self):
        for kind in ("quaternion", "euler", "six_d"):
            self.assertAlmostEqual(alt_tracking_reward(kind, _state(self.model), self.w, self.schedule), 0.5)
            self.assertAlmostEqual(alt_tracking_reward(kind, _state(self.model, offset=0.15), self.w, self.schedule),
                                   0.5 * np.exp(-1.0))
            self.assertEqual(alt_tracking_reward(kind, _state(self.model, t=1.0), self.w, self.schedule), 0.0)

    def test_alt_progress_needs_both_errors_to_improve(self):
        state = _state(self.model, offset=0.3)
        state.reset_command(_shifted(POSE, 0.3), kind="quaternion")
        state.command_pose = _shifted(POSE, 0.2)
        reward, best = alt_progress_reward("quaternion", state)
        # Orientation error is zero throughout, so it cannot improve
        self.assertEqual(reward, 0.0)
        turned = SE3Pose.from_rotation_matrix(POSE.position + np.array([0.3, 0.0, 0.0]),
                                              POSE.rotation @ SE3Pose.from_xyz_rpy([0, 0, 0], [0.4, 0, 0]).rotation)
        state.reset_command(turned, kind="quaternion")
        state.command_pose = SE3Pose.from_rotation_matrix(
            POSE.position + np.array([0.1, 0.0, 0.0]),
            POSE.rotation @ SE3Pose.from_xyz_rpy([0, 0, 0], [0.1, 0, 0]).rotation)
        reward, best = alt_progress_reward("quaternion", state)
        self.assertAlmostEqual(reward, 0.2 + 0.3, places=9)
        np.testing.assert_allclose(best, [0.1, 0.1], atol=1e-9)


class TestPolicyTransforms(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()

    def _command(self, base, target):
        return CommandSample(target, base.inverse() @ target, 0, SE3Pose.identity())

    def test_observation_layout(self):
        base = SE3Pose.identity()
        q = self.model.default_config
        obs = build_observation(self.model, base, np.zeros(6), q, np.zeros(N_JOINTS),
                                self._command(base, ee_pose_in_base(self.model, q)))
        self.assertEqual(obs.values.shape, (54,))
        np.testing.assert_allclose(obs.gravity, [0.0, 0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(obs.command, 0.0, atol=1e-12)
        np.testing.assert_array_equal(obs.joints, q)

    def test_observation_tilted_base_and_noise(self):
        base = SE3Pose.from_xyz_rpy([1.0, 2.0, 0.5], [0.3, 0.0, 1.0])
        q = self.model.default_config
        target = base @ SE3Pose(ee_pose_in_base(self.model, q).position + np.array([0.0, 0.0, 0.1]),
                                ee_pose_in_base(self.model, q).orientation)
        clean = build_observation(self.model, base, np.zeros(6), q, np.zeros(N_JOINTS), self._command(base, target))
        self.assertAlmostEqual(np.linalg.norm(clean.gravity), 1.0)
        np.testing.assert_allclose(clean.command, np.tile([0.0, 0.0, 0.1], 3), atol=1e-12)
        noise = ObservationNoise(gravity=0.05, joints=0.01)
        with self.assertRaises(KeyposeError):
            build_observation(self.model, base, np.zeros(6), q, np.zeros(N_JOINTS), self._command(base, target), noise)
        noisy = build_observation(self.model, base, np.zeros(6), q, np.zeros(N_JOINTS), self._command(base, target),
                                  noise, np.random.default_rng(0))
        self.assertTrue(np.all(np.abs(noisy.gravity - clean.gravity) <= 0.05))
        self.assertTrue(np.all(np.abs(noisy.joints - clean.joints) <= 0.01))
        np.testing.assert_array_equal(noisy.command, clean.command)

    def test_action_to_targets(self):
        np.testing.assert_array_equal(action_to_targets(np.zeros(N_JOINTS), self.model), self.model.default_config)
        a = np.zeros(N_JOINTS)
        a[0] = 2.0
        expected = self.model.default_config.copy()
        expected[0] += 1.0
        np.testing.assert_allclose(action_to_targets(a, self.model), expected)
        b = np.random.default_rng(3).normal(size=N_JOINTS)
        np.testing.assert_allclose(action_to_targets(a + b, self.model) - action_to_targets(b, self.model), 0.5 * a,
                                   atol=1e-12)
        with self.assertRaises(KeyposeError):
            action_to_targets(np.zeros(12), self.model)

    def test_termination(self):
        self.assertFalse(should_terminate(False, [False] * 4))
        self.assertTrue(should_terminate(True, [False] * 4))
        self.assertTrue(should_terminate(False, [False, True, False, False]))


class TestConfiguration(unittest.TestCase):

    def test_weights(self):
        with self.assertRaises(KeyposeError) as cm:
            RewardWeights(w5=3e-5)
        self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)
        with self.assertRaises(KeyposeError) as cm:
            RewardWeights.from_dict({"w9": 1.0})
        self.assertEqual(cm.exception.error_code, KeyposeError.SCHEMA)
        self.assertEqual(RewardWeights.from_dict({"sigma_t": 0.1}).sigma_t, 0.1)

    def test_randomization_sample(self):
        config = RandomizationConfig()
        sample = config.sample(np.random.default_rng(5), 12.0)
        self.assertTrue(0.0 <= sample.ee_added_mass <= 1.8)
        self.assertAlmostEqual(sample.inertia_scale, 1.0 + sample.ee_added_mass)
        gaps = np.diff((0.0,) + sample.impulse_times)
        self.assertTrue(np.all((gaps >= 3.0) & (gaps <= 4.0)))
        self.assertLess(sample.impulse_times[-1], 12.0)
        self.assertEqual(sample.impulse_forces.shape, (len(sample.impulse_times), 3))
        self.assertTrue(np.all(np.abs(sample.impulse_forces) <= 10.0))
        self.assertTrue(np.all(np.abs(sample.base_push) <= 0.5))
        with self.assertRaises(KeyposeError):
            RandomizationConfig(ee_mass=(1.8, 0.0))
        with self.assertRaises(KeyposeError):
            RandomizationConfig.from_dict({"noise": {"gravity": -1.0}})


class TestHarnessProxies(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.model = load_robot()

    def test_pd_torque(self):
        target = np.zeros(N_JOINTS)
        target[0] = 0.1
        target[12] = 0.1
        qd = np.zeros(N_JOINTS)
        qd[1] = 1.0
        tau = pd_torque_proxy(target, np.zeros(N_JOINTS), qd)
        self.assertAlmostEqual(tau[0], 8.0)
        self.assertAlmostEqual(tau[12], 4.0)
        self.assertAlmostEqual(tau[1], -2.0)

    def test_central_difference(self):
        dt = 0.02
        t = np.array([1.0, 1.02, 1.04])
        q = np.outer(t ** 2, np.ones(N_JOINTS))
        np.testing.assert_allclose(central_difference_acceleration(q[0], q[1], q[2], dt), 2.0, atol=1e-6)

    def test_foot_contact_forces(self):
        terrain = generate_terrain("flat", 0.0, 0, extent=4.0)
        q = self.model.default_config
        feet = foot_positions(self.model, None, q)
        np.testing.assert_allclose(feet[:, 2], feet[0, 2], atol=1e-12)
        standing = SE3Pose(np.array([0.0, 0.0, -feet[0, 2]]), np.array([1.0, 0.0, 0.0, 0.0]))
        forces = foot_contact_forces(self.model, terrain, standing, q)
        np.testing.assert_allclose(forces, self.model.total_mass * 9.81 / 4.0)
        lifted = SE3Pose(standing.position + np.array([0.0, 0.0, 0.05]), standing.orientation)
        np.testing.assert_array_equal(foot_contact_forces(self.model, terrain, lifted, q), 0.0)


if __name__ == '__main__':
    unittest.main()
