# Task rewards, penalties, observation/action transforms and the kinematic-harness proxies.

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ._exceptions import KeyposeError
from ._se3 import SE3Pose, quat_angle, quat_conjugate, quat_multiply
from .command_sampler import CommandSample, EpisodeSchedule
from .pose_repr import KeypointTriple, encode_delta, keypoints_of, quaternion_from_payload, rotation_payload
from .robot_model import N_JOINTS, N_LEG_JOINTS, RobotModel, ee_pose_in_base, foot_positions

logger = logging.getLogger(__name__)

ACTION_SCALE = 0.5
GRAVITY = 9.81
CONTACT_THRESHOLD = 1.0
CONTACT_TOLERANCE = 0.01
OBSERVATION_SIZE = 54
PROGRESS_CONDITIONS = ("all", "sum")
TERM_NAMES = ("tracking", "progress", "feet_contact", "initial_joint",
              "torque", "joint_acc", "action_rate", "joint_limit")
_GATE_EPS = 1e-9


def _reject_unknown(cls, data: dict, what: str):
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise KeyposeError(f"Unknown {what} key '{key}'", KeyposeError.SCHEMA, {"field": key})


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise KeyposeError(f"Cannot read {what}: {e}", KeyposeError.IO, {"path": str(path)})
    except json.JSONDecodeError as e:
        raise KeyposeError(f"{what} is not valid JSON: {e}", KeyposeError.SCHEMA, {"path": str(path)})


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 13.0
    w2: float = 80.0
    w3: float = 0.015
    w4: float = 0.4
    w5: float = -3e-5
    w6: float = -3e-6
    w7: float = -5e-2
    w8: float = -1.3
    sigma_t: float = 0.05
    sigma_q: float = 0.05
    sigma_t_alt: float = 0.15

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            if not getattr(self, name) > 0.0:
                raise KeyposeError(f"Task weight {name} must be positive", KeyposeError.VALIDATION,
                                   {name: getattr(self, name)})
        for name in ("w5", "w6", "w7", "w8"):
            if not getattr(self, name) < 0.0:
                raise KeyposeError(f"Penalty weight {name} must be negative", KeyposeError.VALIDATION,
                                   {name: getattr(self, name)})
        for name in ("sigma_t", "sigma_q", "sigma_t_alt"):
            if not getattr(self, name) > 0.0:
                raise KeyposeError(f"{name} must be positive", KeyposeError.VALIDATION, {name: getattr(self, name)})

    @classmethod
    def from_dict(cls, data: dict) -> "RewardWeights":
        _reject_unknown(cls, data, "reward weight")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path: str | Path) -> "RewardWeights":
        return cls.from_dict(_read_json(path, "reward configuration"))

    def term_weights(self) -> dict:
        return dict(zip(TERM_NAMES, (self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7, self.w8)))


@dataclass(frozen=True)
class ObservationNoise:
    """Half-widths of the additive uniform observation noise per group."""

    gravity: float = 0.0
    velocity: float = 0.0
    joints: float = 0.0
    action: float = 0.0
    command: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0.0:
                raise KeyposeError(f"Noise scale '{f.name}' must be non-negative", KeyposeError.VALIDATION,
                                   {f.name: getattr(self, f.name)})

    @classmethod
    def from_dict(cls, data: dict) -> "ObservationNoise":
        _reject_unknown(cls, data, "observation noise")
        return cls(**{k: float(v) for k, v in data.items()})

    @property
    def is_zero(self) -> bool:
        return all(getattr(self, f.name) == 0.0 for f in fields(self))


@dataclass(frozen=True)
class RandomizationSample:
    ee_added_mass: float
    inertia_scale: float
    impulse_times: tuple[float, ...]
    impulse_forces: np.ndarray
    base_push: np.ndarray


@dataclass(frozen=True)
class RandomizationConfig:
    """Sim-to-real randomization ranges; sampled values are stored, not applied."""

    ee_mass: tuple[float, float] = (0.0, 1.8)
    ee_nominal_mass: float = 1.0
    impulse_force: tuple[float, float] = (-10.0, 10.0)
    impulse_interval: tuple[float, float] = (3.0, 4.0)
    base_push: tuple[float, float] = (-0.5, 0.5)
    noise: ObservationNoise = field(default_factory=ObservationNoise)

    def __post_init__(self):
        for name in ("ee_mass", "impulse_force", "impulse_interval", "base_push"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise KeyposeError(f"Range '{name}' is not ordered", KeyposeError.VALIDATION,
                                   {"range": name, "lower": lo, "upper": hi})
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.ee_mass[0] < 0.0 or not self.ee_nominal_mass > 0.0:
            raise KeyposeError("End-effector masses must be non-negative", KeyposeError.VALIDATION,
                               {"ee_mass": self.ee_mass, "ee_nominal_mass": self.ee_nominal_mass})
        if not self.impulse_interval[0] > 0.0:
            raise KeyposeError("Impulse interval must be positive", KeyposeError.VALIDATION,
                               {"impulse_interval": self.impulse_interval})

    @classmethod
    def from_dict(cls, data: dict) -> "RandomizationConfig":
        _reject_unknown(cls, data, "randomization")
        kwargs = {k: (ObservationNoise.from_dict(v) if k == "noise" else v) for k, v in data.items()}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in kwargs.items()}
        return cls(**kwargs)

    def sample(self, rng: np.random.Generator, episode_length: float) -> RandomizationSample:
        """Draw one episode's added mass, end-effector impulses and base push."""
        added = float(rng.uniform(*self.ee_mass))
        times = []
        t = float(rng.uniform(*self.impulse_interval))
        while t < episode_length:
            times.append(t)
            t += float(rng.uniform(*self.impulse_interval))
        forces = rng.uniform(*self.impulse_force, size=(len(times), 3))
        push = rng.uniform(*self.base_push, size=2)
        return RandomizationSample(added, (self.ee_nominal_mass + added) / self.ee_nominal_mass,
                                   tuple(times), forces, push)


def _zeros():
    return np.zeros(N_JOINTS)


@dataclass
class StepState:
    """Everything the reward terms read at one control step; owned by one environment instance."""

    time_in_command: float
    measured_pose: SE3Pose
    command_pose: SE3Pose
    best_distances: np.ndarray
    foot_forces: np.ndarray = field(default_factory=lambda: np.zeros(4))
    q: np.ndarray = field(default_factory=_zeros)
    qd: np.ndarray = field(default_factory=_zeros)
    qdd: np.ndarray = field(default_factory=_zeros)
    tau: np.ndarray = field(default_factory=_zeros)
    action: np.ndarray = field(default_factory=_zeros)
    prev_action: np.ndarray = field(default_factory=_zeros)
    q_init: np.ndarray = field(default_factory=_zeros)
    best_alt_errors: np.ndarray | None = None

    def __post_init__(self):
        self.best_distances = np.array(self.best_distances, dtype=float).reshape(3)
        self.foot_forces = np.array(self.foot_forces, dtype=float).reshape(4)
        for name in ("q", "qd", "qdd", "tau", "action", "prev_action", "q_init"):
            value = np.array(getattr(self, name), dtype=float).reshape(-1)
            if value.shape != (N_JOINTS,):
                raise KeyposeError(f"StepState.{name} must have {N_JOINTS} entries", KeyposeError.VALIDATION,
                                   {"shape": value.shape})
            setattr(self, name, value)
        if self.time_in_command < 0.0:
            raise KeyposeError("time_in_command must be non-negative", KeyposeError.VALIDATION,
                               {"time_in_command": self.time_in_command})

    @property
    def measured(self) -> KeypointTriple:
        return keypoints_of(self.measured_pose)

    @property
    def command(self) -> KeypointTriple:
        return keypoints_of(self.command_pose)

    def keypoint_distances(self) -> np.ndarray:
        return np.linalg.norm(self.measured.points - self.command.points, axis=1)

    def reset_command(self, command_pose: SE3Pose, time_in_command: float = 0.0, kind: str | None = None):
        """Start a new command cycle: best distances restart from the current keypoint distances."""
        self.command_pose = command_pose
        self.time_in_command = time_in_command
        self.best_distances = self.keypoint_distances()
        self.best_alt_errors = np.array(alt_pose_errors(kind, self.measured_pose, command_pose)) if kind else None


@dataclass(frozen=True)
class RewardBreakdown:
    raw: dict
    weighted: dict
    total: float

    def as_row(self) -> dict:
        row = {f"raw_{k}": v for k, v in self.raw.items()}
        row.update({f"weighted_{k}": v for k, v in self.weighted.items()})
        row["total"] = self.total
        return row


def _reward_active(time_in_command: float, schedule: EpisodeSchedule) -> bool:
    if time_in_command > schedule.command_period + _GATE_EPS:
        raise KeyposeError("time_in_command exceeds the command period", KeyposeError.VALIDATION,
                           {"time_in_command": time_in_command, "command_period": schedule.command_period})
    return time_in_command > schedule.command_period - schedule.reward_window + _GATE_EPS


def tracking_reward(state: StepState, w: RewardWeights, schedule: EpisodeSchedule) -> float:
    """Delayed keypoint tracking reward, zero outside the last ``T_r`` seconds of the command."""
    if not _reward_active(state.time_in_command, schedule):
        return 0.0
    d = state.keypoint_distances()
    return float(np.sum(np.exp(-d / w.sigma_t)) / schedule.reward_window)


def progress_reward(state: StepState, condition: str = "all") -> tuple[float, np.ndarray]:
    """Reward improvement over the best keypoint distances so far.

    Returns:
        tuple[float, ndarray]: The reward and the best distances after this step.
    """
    if condition not in PROGRESS_CONDITIONS:
        raise KeyposeError(f"Unknown progress condition '{condition}'", KeyposeError.VALIDATION,
                           {"condition": condition, "expected": PROGRESS_CONDITIONS})
    d = state.keypoint_distances()
    best = state.best_distances
    improved = bool(np.all(d < best)) if condition == "all" else bool(np.sum(d) < np.sum(best))
    if not improved:
        return 0.0, best.copy()
    return float(np.sum(best - d) / 3.0), d


def feet_contact_reward(state: StepState) -> float:
    forces = state.foot_forces
    if np.any(forces < 0.0):
        raise KeyposeError("Foot contact forces must be non-negative", KeyposeError.VALIDATION,
                           {"foot_forces": forces.tolist()})
    if np.any(forces <= CONTACT_THRESHOLD):
        return 0.0
    return float(np.sum(forces - CONTACT_THRESHOLD))


def initial_joint_reward(state: StepState, w: RewardWeights) -> float:
    """Closeness of the 12 leg joints to the episode's initial configuration."""
    diff = np.abs(state.q_init[:N_LEG_JOINTS] - state.q[:N_LEG_JOINTS])
    return float(np.sum(np.exp(-diff / w.sigma_q)))


def action_to_targets(a, model: RobotModel) -> np.ndarray:
    """Joint position targets ``0.5 * a + default_config``; limits are penalized, not enforced."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1:] != (N_JOINTS,):
        raise KeyposeError(f"Action must have {N_JOINTS} entries", KeyposeError.VALIDATION, {"shape": a.shape})
    return ACTION_SCALE * a + model.default_config


def joint_limit_violation(targets: np.ndarray, model: RobotModel) -> float:
    """Sum of one-sided distances of joint targets beyond their limits."""
    return float(np.sum(np.maximum(0.0, targets - model.upper) + np.maximum(0.0, model.lower - targets)))


def penalty_terms(state: StepState, model: RobotModel) -> dict:
    """Unweighted penalty terms."""
    return {
        "torque": float(state.tau @ state.tau),
        "joint_acc": float(state.qdd @ state.qdd),
        "action_rate": float(np.sum((state.action - state.prev_action) ** 2)),
        "joint_limit": joint_limit_violation(action_to_targets(state.action, model), model),
    }


def penalties(state: StepState, model: RobotModel, w: RewardWeights) -> float:
    terms = penalty_terms(state, model)
    return w.w5 * terms["torque"] + w.w6 * terms["joint_acc"] + w.w7 * terms["action_rate"] + w.w8 * terms["joint_limit"]


def total_reward(state: StepState, model: RobotModel, w: RewardWeights, schedule: EpisodeSchedule,
                 condition: str = "all") -> RewardBreakdown:
    """Evaluate every term, weight it and update ``state.best_distances``."""
    progress, best = progress_reward(state, condition)
    raw = {
        "tracking": tracking_reward(state, w, schedule),
        "progress": progress,
        "feet_contact": feet_contact_reward(state),
        "initial_joint": initial_joint_reward(state, w),
    }
    raw.update(penalty_terms(state, model))
    weights = w.term_weights()
    weighted = {name: weights[name] * raw[name] for name in TERM_NAMES}
    state.best_distances = best
    return RewardBreakdown(raw, weighted, sum(weighted.values()))


# -- alternate representations -----------------------------------------------------------------

def alt_pose_errors(kind: str, measured: SE3Pose, command: SE3Pose) -> tuple[float, float]:
    """Position error (m) and orientation error (rad) after a round trip through ``kind``."""
    q_meas = quaternion_from_payload(kind, rotation_payload(kind, measured.rotation))
    q_cmd = quaternion_from_payload(kind, rotation_payload(kind, command.rotation))
    d_pos = float(np.linalg.norm(command.position - measured.position))
    return d_pos, float(quat_angle(quat_multiply(quat_conjugate(q_meas), q_cmd)))


def alt_tracking_reward(kind: str, state: StepState, w: RewardWeights, schedule: EpisodeSchedule) -> float:
    """Delayed reward on the summed position and orientation errors of a competitor representation."""
    if not _reward_active(state.time_in_command, schedule):
        return 0.0
    d_pos, d_rot = alt_pose_errors(kind, state.measured_pose, state.command_pose)
    return float(np.exp(-(d_pos + d_rot) / w.sigma_t_alt) / schedule.reward_window)


def alt_progress_reward(kind: str, state: StepState) -> tuple[float, np.ndarray]:
    """Progress reward when both the position and the orientation error improved."""
    current = np.array(alt_pose_errors(kind, state.measured_pose, state.command_pose))
    best = state.best_alt_errors if state.best_alt_errors is not None else current
    if current[0] < best[0] and current[1] < best[1]:
        return float(np.sum(best - current)), current
    return 0.0, np.array(best, dtype=float)


# -- policy-facing transforms ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.shape != (OBSERVATION_SIZE,):
            raise KeyposeError(f"Observation must have {OBSERVATION_SIZE} entries", KeyposeError.VALIDATION,
                               {"shape": values.shape})
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def gravity(self) -> np.ndarray:
        return self.values[0:3]

    @property
    def base_velocity(self) -> np.ndarray:
        return self.values[3:9]

    @property
    def joints(self) -> np.ndarray:
        return self.values[9:27]

    @property
    def prev_action(self) -> np.ndarray:
        return self.values[27:45]

    @property
    def command(self) -> np.ndarray:
        return self.values[45:54]


def build_observation(model: RobotModel, base_pose: SE3Pose, base_velocities, q, a_prev,
                      command: CommandSample, noise: ObservationNoise | None = None,
                      rng: np.random.Generator | None = None) -> ObservationVector:
    """Projected gravity, base velocities, joints, previous action and the keypoint command delta."""
    noise = noise or ObservationNoise()
    gravity = base_pose.rotation.T @ np.array([0.0, 0.0, -1.0])
    command_in_base = base_pose.inverse() @ command.target
    delta = encode_delta("keypoint", ee_pose_in_base(model, q), command_in_base).payload
    parts = [
        (gravity, noise.gravity),
        (np.asarray(base_velocities, dtype=float).reshape(6), noise.velocity),
        (np.asarray(q, dtype=float).reshape(N_JOINTS), noise.joints),
        (np.asarray(a_prev, dtype=float).reshape(N_JOINTS), noise.action),
        (delta, noise.command),
    ]
    if not noise.is_zero and rng is None:
        raise KeyposeError("Observation noise needs a random generator", KeyposeError.VALIDATION)
    values = []
    for part, scale in parts:
        if scale > 0.0:
            part = part + rng.uniform(-scale, scale, size=part.shape)
        values.append(part)
    return ObservationVector(np.concatenate(values))


def should_terminate(base_contact: bool, knee_contacts) -> bool:
    """Episodes end on any base or knee contact."""
    return bool(base_contact) or bool(np.any(knee_contacts))


# -- kinematic-harness proxies -----------------------------------------------------------------

def pd_gains() -> tuple[np.ndarray, np.ndarray]:
    kp = np.concatenate([np.full(N_LEG_JOINTS, 80.0), np.full(N_JOINTS - N_LEG_JOINTS, 40.0)])
    kd = np.concatenate([np.full(N_LEG_JOINTS, 2.0), np.full(N_JOINTS - N_LEG_JOINTS, 1.0)])
    return kp, kd


def pd_torque_proxy(q_target, q, qd) -> np.ndarray:
    kp, kd = pd_gains()
    return kp * (np.asarray(q_target, dtype=float) - q) - kd * np.asarray(qd, dtype=float)


def central_difference_acceleration(q_prev, q, q_next, dt: float) -> np.ndarray:
    return (np.asarray(q_next, dtype=float) - 2.0 * np.asarray(q, dtype=float) + np.asarray(q_prev, dtype=float)) / dt**2


def foot_contact_forces(model: RobotModel, terrain, base: SE3Pose, q, tolerance: float = CONTACT_TOLERANCE) -> np.ndarray:
    """Static weight split evenly over the feet within ``tolerance`` of the terrain surface."""
    feet = foot_positions(model, base, q)
    gap = feet[:, 2] - terrain.height_at(feet[:, 0], feet[:, 1])
    contact = np.abs(gap) <= tolerance
    forces = np.zeros(4)
    if np.any(contact):
        forces[contact] = model.total_mass * GRAVITY / np.count_nonzero(contact)
    return forces
