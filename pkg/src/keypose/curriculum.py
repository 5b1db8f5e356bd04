# Terrain curriculum and procedural initial stances filtered by the stability predicate.

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ._exceptions import KeyposeError
from ._se3 import SE3Pose
from .command_sampler import EpisodeSchedule
from .robot_model import N_LEG_JOINTS, RobotModel, foot_positions, leg_joint_slice, link_transforms, solve_leg_ik
from .terrain import TerrainField

logger = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class CurriculumConfig:
    """Level thresholds in meters and degrees, plus the locomotion-rollout ranges of a physics initializer."""

    promote_pos: float = 0.20
    promote_rot: float = 20.0
    demote_pos: float = 0.80
    demote_rot: float = 120.0
    max_level: int = 10
    rollout_heading_rate: tuple[float, float] = (-1.0, 1.0)
    rollout_velocity: tuple[float, float] = (-1.0, 1.0)
    rollout_duration: float = 4.0

    def __post_init__(self):
        if not (0.0 < self.promote_pos < self.demote_pos and 0.0 < self.promote_rot < self.demote_rot):
            raise KeyposeError("Promotion thresholds must lie below demotion thresholds", KeyposeError.VALIDATION,
                               {"promote": (self.promote_pos, self.promote_rot),
                                "demote": (self.demote_pos, self.demote_rot)})
        if self.max_level < 0:
            raise KeyposeError("max_level must be non-negative", KeyposeError.VALIDATION,
                               {"max_level": self.max_level})
        for name in ("rollout_heading_rate", "rollout_velocity"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise KeyposeError(f"Range '{name}' is not ordered", KeyposeError.VALIDATION, {"range": name})
            object.__setattr__(self, name, (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, data: dict) -> "CurriculumConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise KeyposeError(f"Unknown curriculum key '{key}'", KeyposeError.SCHEMA, {"field": key})
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path: str | Path) -> "CurriculumConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as e:
            raise KeyposeError(f"Cannot read curriculum configuration: {e}", KeyposeError.IO, {"path": str(path)})
        except json.JSONDecodeError as e:
            raise KeyposeError(f"Curriculum configuration is not valid JSON: {e}", KeyposeError.SCHEMA,
                               {"path": str(path)})


@dataclass(frozen=True)
class CurriculumState:
    level: int = 0
    max_level: int = 10
    history: tuple = ()

    def __post_init__(self):
        if not 0 <= self.level <= self.max_level:
            raise KeyposeError("Curriculum level out of range", KeyposeError.VALIDATION,
                               {"level": self.level, "max_level": self.max_level})


def curriculum_update(state: CurriculumState, episode_mean_pos_err: float, episode_mean_rot_err: float,
                      rng: np.random.Generator, config: CurriculumConfig | None = None) -> CurriculumState:
    """Promote, demote or keep the terrain level after one episode.

    Args:
        state (CurriculumState): Current state; not modified.
        episode_mean_pos_err (float): Mean position error over the reward-active windows, meters.
        episode_mean_rot_err (float): Mean orientation error over the reward-active windows, degrees.
        rng (np.random.Generator): Draws the new level when a robot is promoted past the top.
        config (CurriculumConfig, optional): Thresholds; defaults to the standard ones.
    Returns:
        CurriculumState: The next state with this episode appended to the history.
    """
    config = config or CurriculumConfig()
    if episode_mean_pos_err < 0.0 or episode_mean_rot_err < 0.0:
        raise KeyposeError("Tracking errors must be non-negative", KeyposeError.VALIDATION,
                           {"pos_err": episode_mean_pos_err, "rot_err": episode_mean_rot_err})
    level = state.level
    if episode_mean_pos_err < config.promote_pos and episode_mean_rot_err < config.promote_rot:
        level += 1
        if level > state.max_level:
            level = int(rng.integers(0, state.max_level + 1))
            logger.debug("Top level passed; reassigned to level %d", level)
    elif episode_mean_pos_err > config.demote_pos and episode_mean_rot_err > config.demote_rot:
        level = max(level - 1, 0)
    entry = (float(episode_mean_pos_err), float(episode_mean_rot_err), level)
    return CurriculumState(level, state.max_level, state.history + (entry,))


def episode_mean_errors(pos_errors, rot_errors, schedule: EpisodeSchedule) -> tuple[float, float]:
    """Average per-step errors over the reward-active control steps of one episode."""
    pos_errors = np.asarray(pos_errors, dtype=float)
    rot_errors = np.asarray(rot_errors, dtype=float)
    mask = schedule.reward_mask()
    if pos_errors.shape != mask.shape or rot_errors.shape != mask.shape:
        raise KeyposeError("Per-step errors must cover every control step of the episode", KeyposeError.VALIDATION,
                           {"expected": mask.size, "pos": pos_errors.size, "rot": rot_errors.size})
    return float(pos_errors[mask].mean()), float(rot_errors[mask].mean())


# -- initial stances ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StanceConfig:
    spawn_half_width: float = 1.5
    leg_perturbation: float = 0.1
    arm_perturbation: float = 0.2
    contact_tolerance: float = 0.01
    max_tilt_deg: float = 55.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0.0:
                raise KeyposeError(f"Stance parameter '{f.name}' must be non-negative", KeyposeError.VALIDATION,
                                   {f.name: getattr(self, f.name)})


@dataclass(frozen=True, eq=False)
class InitialConfiguration:
    base_pose: SE3Pose
    q: np.ndarray
    terrain: TerrainField = field(repr=False)
    tilt_angle: float
    attempts: int = 1


def stance_tilt(base_pose: SE3Pose) -> float:
    """Angle in degrees between gravity and the gravity vector projected into the base frame."""
    return float(np.degrees(np.arccos(np.clip(base_pose.rotation[2, 2], -1.0, 1.0))))


def stance_is_stable(model: RobotModel, terrain: TerrainField, configuration: InitialConfiguration,
                     config: StanceConfig | None = None) -> bool:
    """Re-evaluate the tilt limit and the feet-on-terrain condition from scratch."""
    config = config or StanceConfig()
    if stance_tilt(configuration.base_pose) >= config.max_tilt_deg:
        return False
    feet = foot_positions(model, configuration.base_pose, configuration.q)
    try:
        ground = terrain.height_at(feet[:, 0], feet[:, 1])
    except KeyposeError:
        return False
    return bool(np.all(np.abs(feet[:, 2] - ground) <= config.contact_tolerance))


def _align_z(normal: np.ndarray) -> np.ndarray:
    """Smallest rotation taking the world z-axis onto ``normal``."""
    axis = np.cross([0.0, 0.0, 1.0], normal)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        return np.eye(3)
    angle = np.arctan2(s, normal[2])
    return Rotation.from_rotvec(axis / s * angle).as_matrix()


def _fit_normal(points: np.ndarray) -> np.ndarray:
    A = np.column_stack([points[:, 0], points[:, 1], np.ones(len(points))])
    (a, b, _), *_ = np.linalg.lstsq(A, points[:, 2], rcond=None)
    n = np.array([-a, -b, 1.0])
    return n / np.linalg.norm(n)


def _solve_stance(model: RobotModel, terrain: TerrainField, x: float, y: float, yaw: float,
                  q_legs: np.ndarray) -> tuple[SE3Pose, np.ndarray] | None:
    """Base pose and leg joints placing the feet of ``q_legs`` on the terrain, or None if infeasible."""
    q = model.default_config.copy()
    q[:N_LEG_JOINTS] = q_legs
    T = link_transforms(model, q)
    feet_b = T[list(model.foot_link_ids), :3, 3]
    Rz = Rotation.from_euler("z", yaw).as_matrix()
    R = Rz
    base_pos = np.array([x, y, 0.0])
    try:
        for _ in range(3):
            feet_w = base_pos + feet_b @ R.T
            targets = np.column_stack([feet_w[:, :2], terrain.height_at(feet_w[:, 0], feet_w[:, 1])])
            R = _align_z(_fit_normal(targets)) @ Rz
            base_pos = targets.mean(axis=0) - R @ feet_b.mean(axis=0)
    except KeyposeError:
        return None

    legs = np.empty(N_LEG_JOINTS)
    for leg in range(4):
        sl = leg_joint_slice(leg)
        knee_sign = np.sign(model.default_config[sl][2])
        solution = solve_leg_ik(model, leg, R.T @ (targets[leg] - base_pos), knee_sign)
        if solution is None or np.any(solution <= model.lower[sl]) or np.any(solution >= model.upper[sl]):
            return None
        legs[sl] = solution
    return SE3Pose.from_rotation_matrix(base_pos, R), legs


def generate_initial_configuration(model: RobotModel, terrain: TerrainField, rng: np.random.Generator,
                                   max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                                   config: StanceConfig | None = None) -> InitialConfiguration:
    """Sample a standing configuration on the terrain.

    Base xy and yaw are drawn around the terrain centre, the default legs are perturbed, foot targets
    are projected onto the surface and each leg is solved analytically. The arm gets a perturbed
    default posture within its limits.

    Raises:
        KeyposeError: STANCE_INFEASIBLE when no attempt passes the stability predicate.
    """
    config = config or StanceConfig()
    if max_attempts < 1:
        raise KeyposeError("max_attempts must be at least 1", KeyposeError.VALIDATION, {"max_attempts": max_attempts})
    xmin, xmax, ymin, ymax = terrain.bounds
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    w = config.spawn_half_width
    for attempt in range(1, max_attempts + 1):
        x, y = rng.uniform([cx - w, cy - w], [cx + w, cy + w])
        yaw = rng.uniform(-np.pi, np.pi)
        legs = model.default_config[:N_LEG_JOINTS] + rng.uniform(-config.leg_perturbation, config.leg_perturbation,
                                                                  N_LEG_JOINTS)
        arm = np.clip(model.default_config[N_LEG_JOINTS:]
                      + rng.uniform(-config.arm_perturbation, config.arm_perturbation, 18 - N_LEG_JOINTS),
                      model.lower[N_LEG_JOINTS:], model.upper[N_LEG_JOINTS:])
        solved = _solve_stance(model, terrain, x, y, yaw, legs)
        if solved is None:
            continue
        base_pose, legs = solved
        candidate = InitialConfiguration(base_pose, np.concatenate([legs, arm]), terrain,
                                         stance_tilt(base_pose), attempt)
        if stance_is_stable(model, terrain, candidate, config):
            logger.debug("Stance accepted on attempt %d (tilt %.1f deg)", attempt, candidate.tilt_angle)
            return candidate
    raise KeyposeError(f"No stable stance found within {max_attempts} attempts", KeyposeError.STANCE_INFEASIBLE,
                       {"attempts": max_attempts, "terrain": terrain.kind})


def place_stance(model: RobotModel, terrain: TerrainField, x: float = 0.0, y: float = 0.0, yaw: float = 0.0,
                 config: StanceConfig | None = None) -> InitialConfiguration:
    """The unperturbed default stance at a given xy and heading."""
    solved = _solve_stance(model, terrain, x, y, yaw, model.default_config[:N_LEG_JOINTS])
    if solved is not None:
        base_pose, legs = solved
        q = model.default_config.copy()
        q[:N_LEG_JOINTS] = legs
        candidate = InitialConfiguration(base_pose, q, terrain, stance_tilt(base_pose))
        if stance_is_stable(model, terrain, candidate, config):
            return candidate
    raise KeyposeError("Default stance is not stable at this location", KeyposeError.STANCE_INFEASIBLE,
                       {"x": x, "y": y, "yaw": yaw, "terrain": terrain.kind})
