# Terrain-feasible end-effector pose commands on the episode schedule.

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ._exceptions import KeyposeError
from ._se3 import SE3Pose
from .collision import TERRAIN_MARGIN, terrain_clearance
from .terrain import CoarseHeightMap
from .workspace import BodyOffsetRanges, WorkspaceDataset, expand_command, sample_binned_index

logger = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 100
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EpisodeSchedule:
    """Episode timing in seconds: three commands per episode, reward active at the end of each."""

    episode_length: float = 12.0
    command_period: float = 4.0
    reward_window: float = 2.0
    control_dt: float = 0.02

    def __post_init__(self):
        if not self.control_dt > 0.0:
            raise KeyposeError("control_dt must be positive", KeyposeError.VALIDATION, {"control_dt": self.control_dt})
        if not math.isclose(self.episode_length, 3.0 * self.command_period, rel_tol=0.0, abs_tol=1e-9):
            raise KeyposeError("Episode length must be three command periods", KeyposeError.VALIDATION,
                               {"episode_length": self.episode_length, "command_period": self.command_period})
        if not 0.0 < self.reward_window < self.command_period:
            raise KeyposeError("Reward window must be shorter than the command period", KeyposeError.VALIDATION,
                               {"reward_window": self.reward_window, "command_period": self.command_period})
        for name in ("command_period", "reward_window"):
            ratio = getattr(self, name) / self.control_dt
            if abs(ratio - round(ratio)) > 1e-9:
                raise KeyposeError(f"control_dt must divide {name} exactly", KeyposeError.VALIDATION,
                                   {name: getattr(self, name), "control_dt": self.control_dt})

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeSchedule":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise KeyposeError(f"Unknown schedule key '{key}'", KeyposeError.SCHEMA, {"field": key})
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, path: str | Path) -> "EpisodeSchedule":
        return cls.from_dict(_read_json(path))

    @property
    def commands_per_episode(self) -> int:
        return 3

    @property
    def steps_per_command(self) -> int:
        return int(round(self.command_period / self.control_dt))

    @property
    def window_steps(self) -> int:
        return int(round(self.reward_window / self.control_dt))

    @property
    def steps_per_episode(self) -> int:
        return self.commands_per_episode * self.steps_per_command

    @property
    def issue_times(self) -> tuple[float, ...]:
        return tuple(k * self.command_period for k in range(self.commands_per_episode))

    def time_in_command(self, t: float) -> float:
        """Time since the current command was issued, in (0, T] for t > 0."""
        if t <= 0.0:
            return 0.0
        return t - (math.ceil(t / self.command_period - 1e-9) - 1) * self.command_period

    def step_time_in_command(self, step: int) -> float:
        """Time in command after control step ``step`` (1-based) of the episode."""
        if step <= 0:
            return 0.0
        return (((step - 1) % self.steps_per_command) + 1) * self.control_dt

    def step_reward_active(self, step: int) -> bool:
        return step > 0 and ((step - 1) % self.steps_per_command) + 1 > self.steps_per_command - self.window_steps

    def reward_mask(self) -> np.ndarray:
        """Reward-active flag for each control step 1..steps_per_episode (time ``step * control_dt``)."""
        steps = np.arange(1, self.steps_per_episode + 1)
        return ((steps - 1) % self.steps_per_command) + 1 > self.steps_per_command - self.window_steps

    def command_of_step(self, step: int) -> int:
        """Index of the command being tracked at control step ``step`` (1-based)."""
        return min(max(step - 1, 0) // self.steps_per_command, self.commands_per_episode - 1)


@dataclass(frozen=True)
class CommandSample:
    target: SE3Pose
    target_in_base: SE3Pose
    source_index: int
    body_offset: SE3Pose
    resample_attempts: int = 0
    issue_time: float = 0.0

    def __post_init__(self):
        if self.resample_attempts < 0:
            raise KeyposeError("resample_attempts must be non-negative", KeyposeError.VALIDATION,
                               {"resample_attempts": self.resample_attempts})

    def to_dict(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "target_in_base": self.target_in_base.to_dict(),
            "source_index": self.source_index,
            "body_offset": self.body_offset.to_dict(),
            "resample_attempts": self.resample_attempts,
            "issue_time": self.issue_time,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CommandSample":
        try:
            return cls(SE3Pose.from_dict(data["target"]), SE3Pose.from_dict(data["target_in_base"]),
                       int(data["source_index"]), SE3Pose.from_dict(data["body_offset"]),
                       int(data["resample_attempts"]), float(data["issue_time"]))
        except KeyError as e:
            raise KeyposeError(f"Command record is missing {e}", KeyposeError.SCHEMA, {"field": str(e)})


def next_command(dataset: WorkspaceDataset, coarse_map: CoarseHeightMap, base_pose: SE3Pose,
                 rng: np.random.Generator, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                 ranges: BodyOffsetRanges | None = None, fixed_base: bool = False,
                 issue_time: float = 0.0) -> CommandSample:
    """Draw commands until one clears the terrain by the 8 cm margin.

    Args:
        dataset (WorkspaceDataset): Pre-sampled fixed-base poses.
        coarse_map (CoarseHeightMap): Conservative terrain envelope.
        base_pose (SE3Pose): World pose of the robot base.
        rng (np.random.Generator): Source of randomness, advanced in place.
        max_attempts (int): Candidates to try before giving up.
        ranges (BodyOffsetRanges, optional): Body offset ranges; defaults to the standard ones.
        fixed_base (bool): Skip the body offset and command the pre-sampled pose directly.
        issue_time (float): Stored on the returned sample.
    Returns:
        CommandSample: The accepted command; ``resample_attempts`` counts rejected candidates.
    Raises:
        KeyposeError: COMMAND_INFEASIBLE after ``max_attempts`` rejections; ``candidate`` holds the last one.
    """
    if max_attempts < 1:
        raise KeyposeError("max_attempts must be at least 1", KeyposeError.VALIDATION, {"max_attempts": max_attempts})
    last = None
    for attempt in range(max_attempts):
        index = sample_binned_index(dataset, rng)
        pose = dataset.pose(index)
        if fixed_base:
            command_in_base, offset = pose, SE3Pose.identity()
        else:
            command_in_base, offset = expand_command(pose, rng, ranges)
        target = base_pose @ command_in_base
        try:
            clear = terrain_clearance(target, coarse_map, TERRAIN_MARGIN)
        except KeyposeError as e:
            if e.error_code != KeyposeError.OUT_OF_BOUNDS:
                raise
            clear = False
        candidate = CommandSample(target, command_in_base, index, offset, attempt, issue_time)
        if clear:
            if attempt:
                logger.debug("Command accepted after %d rejected candidates", attempt)
            return candidate
        last = candidate

    err = KeyposeError(f"No command cleared the terrain within {max_attempts} attempts",
                       KeyposeError.COMMAND_INFEASIBLE,
                       {"attempts": max_attempts, "base_position": tuple(np.round(base_pose.position, 4))})
    err.candidate = last
    raise err


def command_stream(schedule: EpisodeSchedule, dataset: WorkspaceDataset, coarse_map: CoarseHeightMap,
                   base_pose: SE3Pose, rng: np.random.Generator, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                   ranges: BodyOffsetRanges | None = None, fixed_base: bool = False) -> list[CommandSample]:
    """The commands of one episode, issued at the start of each command period."""
    stream = []
    for k, issue_time in enumerate(schedule.issue_times):
        try:
            stream.append(next_command(dataset, coarse_map, base_pose, rng, max_attempts, ranges, fixed_base,
                                       issue_time))
        except KeyposeError as e:
            raise e.with_context(command=k, issue_time=issue_time) from e
    return stream


def save_commands(commands: list[CommandSample], path: str | Path, base_pose: SE3Pose | None = None,
                  metadata: dict | None = None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "base_pose": base_pose.to_dict() if base_pose is not None else None,
        "metadata": metadata or {},
        "commands": [c.to_dict() for c in commands],
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")
    except OSError as e:
        raise KeyposeError(f"Cannot write commands: {e}", KeyposeError.IO, {"path": str(path)})


def load_commands(path: str | Path) -> tuple[list[CommandSample], SE3Pose | None]:
    """Read a command file written by ``save_commands``; returns the commands and the sampling base pose."""
    doc = _read_json(path)
    if isinstance(doc, list):
        return [CommandSample.from_dict(c) for c in doc], None
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise KeyposeError("Unsupported command file schema version", KeyposeError.SCHEMA,
                           {"field": "schema_version", "value": doc.get("schema_version")})
    if "commands" not in doc:
        raise KeyposeError("Command file is missing 'commands'", KeyposeError.SCHEMA, {"field": "commands"})
    base = doc.get("base_pose")
    return [CommandSample.from_dict(c) for c in doc["commands"]], SE3Pose.from_dict(base) if base else None


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise KeyposeError(f"Cannot read {path}: {e}", KeyposeError.IO, {"path": str(path)})
    except json.JSONDecodeError as e:
        raise KeyposeError(f"{path} is not valid JSON: {e}", KeyposeError.SCHEMA, {"path": str(path)})
