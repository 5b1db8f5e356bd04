# Damped-least-squares whole-body tracker: the desk-scale stand-in for a learned tracking policy.

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from ._exceptions import KeyposeError
from ._se3 import SE3Pose, matrix_to_quat
from ._workers import run_chunked
from .collision import self_collision
from .command_sampler import CommandSample
from .curriculum import InitialConfiguration
from .pose_repr import keypoint_array, pose_errors
from .robot_model import N_JOINTS, N_LEG_JOINTS, RobotModel, link_transforms, point_jacobian
from .terrain import TerrainField

logger = logging.getLogger(__name__)

N_DOF = 6 + N_JOINTS
POSTURE_SCOPES = ("legs", "all")


@dataclass(frozen=True)
class TrackerConfig:
    """Solver parameters. Task weights scale the rows of their task directly.

    A solve converges once the keypoint error is within ``tolerance`` and every foot is within
    ``foot_tolerance`` of the position it was pinned to.
    """

    damping: float = 0.05
    step_scale: float = 0.5
    max_iterations: int = 500
    tolerance: float = 1e-3
    foot_tolerance: float = 5e-3
    foot_weight: float = 1e3
    posture_weight: float = 1e-2
    posture_scope: str = "legs"

    def __post_init__(self):
        if not self.damping > 0.0:
            raise KeyposeError("Damping must be positive", KeyposeError.VALIDATION, {"damping": self.damping})
        if not 0.0 < self.step_scale <= 1.0:
            raise KeyposeError("Step scale must lie in (0, 1]", KeyposeError.VALIDATION,
                               {"step_scale": self.step_scale})
        if not (self.tolerance > 0.0 and self.foot_tolerance > 0.0):
            raise KeyposeError("Tolerances must be positive", KeyposeError.VALIDATION,
                               {"tolerance": self.tolerance, "foot_tolerance": self.foot_tolerance})
        if self.max_iterations < 0:
            raise KeyposeError("max_iterations must be non-negative", KeyposeError.VALIDATION,
                               {"max_iterations": self.max_iterations})
        if self.foot_weight < 0.0 or self.posture_weight < 0.0:
            raise KeyposeError("Task weights must be non-negative", KeyposeError.VALIDATION,
                               {"foot_weight": self.foot_weight, "posture_weight": self.posture_weight})
        if self.posture_scope not in POSTURE_SCOPES:
            raise KeyposeError(f"Unknown posture scope '{self.posture_scope}'", KeyposeError.VALIDATION,
                               {"posture_scope": self.posture_scope, "expected": POSTURE_SCOPES})

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise KeyposeError(f"Unknown tracker key '{key}'", KeyposeError.SCHEMA, {"field": key})
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrackerConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as e:
            raise KeyposeError(f"Cannot read tracker configuration: {e}", KeyposeError.IO, {"path": str(path)})
        except json.JSONDecodeError as e:
            raise KeyposeError(f"Tracker configuration is not valid JSON: {e}", KeyposeError.SCHEMA,
                               {"path": str(path)})


@dataclass(frozen=True, eq=False)
class TrackingResult:
    converged: bool
    iterations: int
    position_error: float
    orientation_error: float
    initial_keypoint_error: float
    final_keypoint_error: float
    foot_displacement: float
    self_collision: bool
    below_terrain: bool
    joint_trajectory: np.ndarray = field(repr=False)
    base_trajectory: np.ndarray = field(repr=False)
    keypoint_errors: np.ndarray = field(repr=False)

    @property
    def final_base_pose(self) -> SE3Pose:
        return SE3Pose.from_array(self.base_trajectory[-1])

    @property
    def final_q(self) -> np.ndarray:
        return self.joint_trajectory[-1]

    def summary_row(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "position_error": self.position_error,
            "orientation_error": self.orientation_error,
            "keypoint_error": self.final_keypoint_error,
            "foot_displacement": self.foot_displacement,
            "self_collision": self.self_collision,
            "below_terrain": self.below_terrain,
        }

    def to_dict(self) -> dict:
        doc = self.summary_row()
        doc.update({
            "initial_keypoint_error": self.initial_keypoint_error,
            "joint_trajectory": self.joint_trajectory.tolist(),
            "base_trajectory": self.base_trajectory.tolist(),
            "keypoint_errors": self.keypoint_errors.tolist(),
        })
        return doc


def _posture_rows(config: TrackerConfig) -> np.ndarray:
    return np.arange(N_LEG_JOINTS if config.posture_scope == "legs" else N_JOINTS)


def _stacked_system(model, T, feet_targets, keypoint_targets, q, q_ref, config):
    """Weighted stacked Jacobian and error: feet, keypoints, posture."""
    feet = T[list(model.foot_link_ids), :3, 3]
    ee = T[model.ee_link_id]
    keypoints = keypoint_array(ee[:3, 3], ee[:3, :3])
    rows, errors = [], []
    for k, link in enumerate(model.foot_link_ids):
        rows.append(config.foot_weight * point_jacobian(model, T, link, feet[k]))
        errors.append(config.foot_weight * (feet_targets[k] - feet[k]))
    kp_error = (keypoint_targets - keypoints).reshape(9)
    for k in range(3):
        rows.append(point_jacobian(model, T, model.ee_link_id, keypoints[k]))
    errors.append(kp_error)
    posture = _posture_rows(config)
    J_post = np.zeros((len(posture), N_DOF))
    J_post[np.arange(len(posture)), 6 + posture] = 1.0
    rows.append(config.posture_weight * J_post)
    errors.append(config.posture_weight * (q_ref[posture] - q[posture]))
    return np.vstack(rows), np.concatenate(errors), kp_error


def dls_step(model: RobotModel, base_pose: SE3Pose, q, feet_targets, keypoint_targets, q_ref,
             config: TrackerConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One scaled damped-least-squares update of the 24-dim decision variable.

    Returns:
        tuple[ndarray, ndarray]: ``alpha * J^T (J J^T + lambda^2 I)^-1 e`` ordered (base translation,
        base rotation vector in the world frame, joints), and the current 9-dim keypoint error.
        Joints that would leave their range stop on the limit and the other columns absorb the rest.
    """
    config = config or TrackerConfig()
    T = link_transforms(model, np.asarray(q, dtype=float), base_pose)
    return _dls_update(model, T, np.asarray(q, dtype=float), np.asarray(feet_targets, dtype=float),
                       np.asarray(keypoint_targets, dtype=float), np.asarray(q_ref, dtype=float), config)


def _dls_update(model, T, q, feet_targets, keypoint_targets, q_ref, config):
    J, e, kp_error = _stacked_system(model, T, feet_targets, keypoint_targets, q, q_ref, config)
    dx = clamped_dls(J, config.step_scale * e, q, model.lower, model.upper, config.damping)
    return dx, kp_error


def clamped_dls(J: np.ndarray, e: np.ndarray, q: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                damping: float) -> np.ndarray:
    """Damped least-squares step over base and joint columns that never leaves the joint limits.

    Joints whose step would cross a limit are moved onto it, their contribution is taken out of the
    task error and the remaining columns are solved again. The six base columns are never clamped.
    """
    n_base = J.shape[1] - len(q)
    dx = np.zeros(J.shape[1])
    free = np.ones(J.shape[1], dtype=bool)
    residual = np.array(e, dtype=float)
    damp = damping ** 2 * np.eye(J.shape[0])
    while True:
        Jf = J[:, free]
        dx[free] = Jf.T @ linalg.solve(Jf @ Jf.T + damp, residual, assume_a="pos")
        moved = q + dx[n_base:]
        crossing = free[n_base:] & ((moved > upper) | (moved < lower))
        if not crossing.any():
            return dx
        cols = n_base + np.flatnonzero(crossing)
        dx[cols] = np.clip(moved[crossing], lower[crossing], upper[crossing]) - q[crossing]
        residual = residual - J[:, cols] @ dx[cols]
        free[cols] = False


def track_command(model: RobotModel, terrain: TerrainField, init: InitialConfiguration, command: CommandSample,
                  config: TrackerConfig | None = None) -> TrackingResult:
    """Drive the whole body toward the command's keypoints with the feet pinned.

    Every iterate stays within the joint limits (see ``clamped_dls``).

    Raises:
        KeyposeError: NUMERICAL when an iterate becomes non-finite, with the iteration index.
    """
    config = config or TrackerConfig()
    base = init.base_pose.matrix()
    q = np.array(init.q, dtype=float)
    q_ref = q.copy()
    T = link_transforms(model, q, base)
    feet_targets = T[list(model.foot_link_ids), :3, 3].copy()
    target = command.target
    keypoint_targets = keypoint_array(target.position, target.rotation)

    joints, bases, kp_norms = [q.copy()], [base.copy()], []
    converged = False
    iteration = 0
    while True:
        try:
            dx, kp_error = _dls_update(model, T, q, feet_targets, keypoint_targets, q_ref, config)
        except (ValueError, linalg.LinAlgError) as e:
            raise KeyposeError(f"Tracker system could not be solved: {e}", KeyposeError.NUMERICAL,
                               {"iteration": iteration})
        kp_norm = float(np.linalg.norm(kp_error))
        kp_norms.append(kp_norm)
        if not (np.all(np.isfinite(dx)) and np.isfinite(kp_norm)):
            raise KeyposeError("Tracker produced non-finite values", KeyposeError.NUMERICAL,
                               {"iteration": iteration})
        foot_drift = np.max(np.linalg.norm(T[list(model.foot_link_ids), :3, 3] - feet_targets, axis=1))
        if kp_norm <= config.tolerance and foot_drift <= config.foot_tolerance:
            converged = True
            break
        if iteration >= config.max_iterations:
            break
        base = base.copy()
        base[:3, 3] += dx[:3]
        base[:3, :3] = Rotation.from_rotvec(dx[3:6]).as_matrix() @ base[:3, :3]
        # the step already stops on the limits; clip only absorbs rounding
        q = model.clip(q + dx[6:])
        iteration += 1
        T = link_transforms(model, q, base)
        joints.append(q.copy())
        bases.append(base.copy())

    bases = np.array(bases)
    base_traj = np.concatenate([bases[:, :3, 3], matrix_to_quat(bases[:, :3, :3])], axis=1)
    final_base = SE3Pose.from_array(base_traj[-1])
    measured = SE3Pose.from_matrix(T[model.ee_link_id])
    position_error, orientation_error = pose_errors(measured, target)
    feet = T[list(model.foot_link_ids), :3, 3]
    try:
        below = bool(measured.position[2] < terrain.height_at(measured.position[0], measured.position[1]))
    except KeyposeError:
        below = False
    result = TrackingResult(
        converged=converged,
        iterations=iteration,
        position_error=position_error,
        orientation_error=orientation_error,
        initial_keypoint_error=kp_norms[0],
        final_keypoint_error=kp_norms[-1],
        foot_displacement=float(np.max(np.linalg.norm(feet - feet_targets, axis=1))),
        self_collision=self_collision(model, final_base, q).colliding,
        below_terrain=below,
        joint_trajectory=np.array(joints),
        base_trajectory=base_traj,
        keypoint_errors=np.array(kp_norms),
    )
    logger.debug("Tracking %s after %d iterations (keypoint error %.2e m)",
                 "converged" if converged else "stopped", iteration, result.final_keypoint_error)
    return result


@dataclass(frozen=True)
class BatchReport:
    results: list = field(repr=False)
    rows: list = field(repr=False)
    summary: dict


def evaluate_batch(model: RobotModel, terrain: TerrainField, init: InitialConfiguration, commands: list,
                   config: TrackerConfig | None = None, workers: int = 1) -> BatchReport:
    """Track every command from the same initial configuration and summarize the errors.

    Per-command failures are recorded in their row and counted as not converged; the batch continues.
    """
    config = config or TrackerConfig()

    def _track(start, stop):
        out = []
        for i in range(start, stop):
            try:
                out.append((track_command(model, terrain, init, commands[i], config), None))
            except KeyposeError as e:
                logger.warning("Command %d failed: %s", i, e)
                out.append((None, e))
        return out

    outcomes = [o for chunk in run_chunked(_track, len(commands), workers, chunk_size=1) for o in chunk]
    results, rows = [], []
    for i, (result, error) in enumerate(outcomes):
        results.append(result)
        if result is not None:
            row = {"command": i, **result.summary_row(), "failure": ""}
        else:
            row = {"command": i, "converged": False, "iterations": -1, "position_error": float("nan"),
                   "orientation_error": float("nan"), "keypoint_error": float("nan"),
                   "foot_displacement": float("nan"), "self_collision": False, "below_terrain": False,
                   "failure": error.error_code}
        rows.append(row)
    summary = summarize(results)
    logger.info("Batch of %d commands: %.1f%% converged, mean error %.4f m / %.2f deg",
                len(commands), 100.0 * summary["convergence_rate"], summary["position_error_mean"],
                summary["orientation_error_mean"])
    return BatchReport(results, rows, summary)


def summarize(results: list) -> dict:
    """Aggregate statistics over tracking results; ``None`` entries count as failures."""
    done = [r for r in results if r is not None]
    n = len(results)
    summary = {
        "commands": n,
        "converged": sum(r.converged for r in done),
        "failures": n - len(done),
        "convergence_rate": (sum(r.converged for r in done) / n) if n else 0.0,
    }
    for name in ("position_error", "orientation_error", "iterations", "foot_displacement"):
        values = np.array([getattr(r, name) for r in done], dtype=float)
        if values.size == 0:
            values = np.array([np.nan])
        summary[f"{name}_mean"] = float(np.mean(values))
        summary[f"{name}_median"] = float(np.percentile(values, 50))
        summary[f"{name}_p90"] = float(np.percentile(values, 90))
        summary[f"{name}_max"] = float(np.max(values))
    summary["self_collisions"] = sum(r.self_collision for r in done)
    summary["below_terrain"] = sum(r.below_terrain for r in done)
    return summary
