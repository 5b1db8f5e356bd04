# Trajectory files and their replay through the reward terms.

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._exceptions import KeyposeError
from ._se3 import SE3Pose
from .command_sampler import EpisodeSchedule
from .dls_tracker import TrackingResult
from .pose_repr import REPRESENTATION_KINDS
from .reward_engine import (ACTION_SCALE, RewardWeights, StepState, action_to_targets, alt_progress_reward,
                            alt_tracking_reward, central_difference_acceleration, foot_contact_forces,
                            pd_torque_proxy, total_reward)
from .robot_model import N_JOINTS, RobotModel, forward_kinematics

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A control-rate state sequence. Row ``k`` is the state at time ``k * control_dt``."""

    control_dt: float
    q_init: np.ndarray
    command_targets: tuple
    issue_steps: tuple
    base_poses: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    actions: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.control_dt > 0.0:
            raise KeyposeError("control_dt must be positive", KeyposeError.VALIDATION, {"control_dt": self.control_dt})
        object.__setattr__(self, "q_init", np.array(self.q_init, dtype=float).reshape(N_JOINTS))
        object.__setattr__(self, "command_targets", tuple(self.command_targets))
        object.__setattr__(self, "issue_steps", tuple(int(s) for s in self.issue_steps))
        base = np.array(self.base_poses, dtype=float)
        q = np.array(self.q, dtype=float)
        actions = np.array(self.actions, dtype=float)
        n = len(q)
        if base.shape != (n, 7) or q.shape != (n, N_JOINTS) or actions.shape != (n, N_JOINTS) or n < 2:
            raise KeyposeError("Trajectory arrays disagree in shape", KeyposeError.VALIDATION,
                               {"base_poses": base.shape, "q": q.shape, "actions": actions.shape})
        if not self.command_targets or len(self.command_targets) != len(self.issue_steps):
            raise KeyposeError("Every command needs an issue step", KeyposeError.VALIDATION,
                               {"commands": len(self.command_targets), "issue_steps": len(self.issue_steps)})
        steps = self.issue_steps
        if steps[0] != 0 or any(b <= a for a, b in zip(steps, steps[1:])) or steps[-1] >= n:
            raise KeyposeError("Issue steps must start at 0 and increase within the trajectory",
                               KeyposeError.VALIDATION, {"issue_steps": steps, "steps": n})
        object.__setattr__(self, "base_poses", base)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return len(self.q)

    def base_pose(self, k: int) -> SE3Pose:
        return SE3Pose.from_array(self.base_poses[k])

    def command_index(self, k: int) -> int:
        """Command tracked at step ``k``; a command issued at step s is active for steps s+1 onwards."""
        return max(0, int(np.searchsorted(self.issue_steps, k, side="left")) - 1)

    def time_in_command(self, k: int) -> float:
        return (k - self.issue_steps[self.command_index(k)]) * self.control_dt

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "control_dt": self.control_dt,
            "q_init": self.q_init.tolist(),
            "commands": [{"issue_step": s, "target": t.to_dict()}
                         for s, t in zip(self.issue_steps, self.command_targets)],
            "steps": [{"time": k * self.control_dt, "base_pose": self.base_poses[k].tolist(),
                       "q": self.q[k].tolist(), "action": self.actions[k].tolist()} for k in range(len(self))],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Trajectory":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise KeyposeError("Unsupported trajectory schema version", KeyposeError.SCHEMA,
                               {"field": "schema_version", "value": doc.get("schema_version")})
        try:
            commands = doc["commands"]
            steps = doc["steps"]
            return cls(
                control_dt=float(doc["control_dt"]),
                q_init=doc["q_init"],
                command_targets=[SE3Pose.from_dict(c["target"]) for c in commands],
                issue_steps=[c["issue_step"] for c in commands],
                base_poses=[s["base_pose"] for s in steps],
                q=[s["q"] for s in steps],
                actions=[s["action"] for s in steps],
            )
        except KeyError as e:
            raise KeyposeError(f"Trajectory record is missing {e}", KeyposeError.SCHEMA, {"field": str(e)})
        except (TypeError, ValueError) as e:
            raise KeyposeError(f"Malformed trajectory: {e}", KeyposeError.SCHEMA)


def save_trajectory(trajectory: Trajectory, path: str | Path) -> None:
    try:
        Path(path).write_text(json.dumps(trajectory.to_dict()), encoding="utf-8")
    except OSError as e:
        raise KeyposeError(f"Cannot write trajectory: {e}", KeyposeError.IO, {"path": str(path)})


def load_trajectory(path: str | Path) -> Trajectory:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise KeyposeError(f"Cannot read trajectory: {e}", KeyposeError.IO, {"path": str(path)})
    except json.JSONDecodeError as e:
        raise KeyposeError(f"Trajectory is not valid JSON: {e}", KeyposeError.SCHEMA, {"path": str(path)})
    return Trajectory.from_dict(doc)


def stationary_trajectory(model: RobotModel, base_pose: SE3Pose, q, schedule: EpisodeSchedule,
                          command_targets: list | None = None) -> Trajectory:
    """A motionless episode; without explicit targets every command is the current end-effector pose."""
    q = np.asarray(q, dtype=float).reshape(N_JOINTS)
    n = schedule.steps_per_episode + 1
    if command_targets is None:
        ee = forward_kinematics(model, base_pose, q)[model.ee_link_id]
        command_targets = [ee] * schedule.commands_per_episode
    action = (q - model.default_config) / ACTION_SCALE
    return Trajectory(
        control_dt=schedule.control_dt,
        q_init=q,
        command_targets=command_targets,
        issue_steps=[k * schedule.steps_per_command for k in range(len(command_targets))],
        base_poses=np.tile(base_pose.as_array(), (n, 1)),
        q=np.tile(q, (n, 1)),
        actions=np.tile(action, (n, 1)),
    )


def trajectory_from_tracking(model: RobotModel, result: TrackingResult, target: SE3Pose,
                             schedule: EpisodeSchedule) -> Trajectory:
    """Lay the tracker iterates out over one command period.

    Iterates play one per control step and the last one is held to the end of the period; solves longer than
    a period are subsampled uniformly.
    """
    steps = schedule.steps_per_command
    n_iter = len(result.joint_trajectory) - 1
    k = np.arange(steps + 1)
    index = k if n_iter <= steps else np.rint(k * n_iter / steps).astype(int)
    index = np.minimum(index, n_iter)
    q = result.joint_trajectory[index]
    return Trajectory(
        control_dt=schedule.control_dt,
        q_init=result.joint_trajectory[0],
        command_targets=[target],
        issue_steps=[0],
        base_poses=result.base_trajectory[index],
        q=q,
        actions=(q - model.default_config) / ACTION_SCALE,
    )


def replay_rewards(model: RobotModel, trajectory: Trajectory, weights: RewardWeights | None = None,
                   schedule: EpisodeSchedule | None = None, terrain=None, condition: str = "all",
                   representation: str | None = None) -> list[dict]:
    """Evaluate the reward terms at every step after the first.

    Velocities are backward differences, accelerations central differences (held at the last step) and
    torques the PD proxy toward the action targets. Without a terrain all foot forces are zero.

    Returns:
        list[dict]: One row per step 1..n-1 with the raw and weighted terms; with ``representation`` also the
        alternate tracking and progress rewards of that encoding.
    """
    weights = weights or RewardWeights()
    schedule = schedule or EpisodeSchedule(control_dt=trajectory.control_dt)
    if not math.isclose(schedule.control_dt, trajectory.control_dt, rel_tol=1e-12):
        raise KeyposeError("Schedule and trajectory control rates differ", KeyposeError.VALIDATION,
                           {"schedule": schedule.control_dt, "trajectory": trajectory.control_dt})
    if representation is not None and representation not in REPRESENTATION_KINDS:
        raise KeyposeError(f"Unknown representation '{representation}'", KeyposeError.VALIDATION,
                           {"representation": representation, "expected": REPRESENTATION_KINDS})

    dt = trajectory.control_dt
    q = trajectory.q
    n = len(trajectory)

    def _ee(k):
        return forward_kinematics(model, trajectory.base_pose(k), q[k])[model.ee_link_id]

    state = StepState(0.0, _ee(0), trajectory.command_targets[0], np.zeros(3), q=q[0],
                      action=trajectory.actions[0], prev_action=trajectory.actions[0], q_init=trajectory.q_init)
    state.reset_command(trajectory.command_targets[0], 0.0, representation)
    rows = []
    for k in range(1, n):
        command = trajectory.command_index(k)
        if command != trajectory.command_index(k - 1):
            state.reset_command(trajectory.command_targets[command], 0.0, representation)
        base = trajectory.base_pose(k)
        qd = (q[k] - q[k - 1]) / dt
        state.time_in_command = trajectory.time_in_command(k)
        state.measured_pose = _ee(k)
        state.q = q[k]
        state.qd = qd
        state.qdd = central_difference_acceleration(q[k - 1], q[k], q[min(k + 1, n - 1)], dt)
        state.prev_action = trajectory.actions[k - 1]
        state.action = trajectory.actions[k]
        state.tau = pd_torque_proxy(action_to_targets(state.action, model), q[k], qd)
        state.foot_forces = (foot_contact_forces(model, terrain, base, q[k]) if terrain is not None
                             else np.zeros(4))
        breakdown = total_reward(state, model, weights, schedule, condition)
        row = {"step": k, "time": k * dt, "command": command, "time_in_command": state.time_in_command}
        row.update(breakdown.as_row())
        if representation is not None:
            alt_progress, best = alt_progress_reward(representation, state)
            state.best_alt_errors = best
            row["alt_tracking"] = alt_tracking_reward(representation, state, weights, schedule)
            row["alt_progress"] = alt_progress
        rows.append(row)
    logger.info("Replayed %d steps, total reward %.3f", len(rows), sum(r["total"] for r in rows))
    return rows
