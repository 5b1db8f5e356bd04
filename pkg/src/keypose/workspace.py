# Fixed-base end-effector workspace: grid sweep over the arm joints, cylinder bins and body offsets.

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ._exceptions import KeyposeError
from ._se3 import SE3Pose, matrix_to_quat
from ._workers import run_chunked
from .collision import collision_pairs, pair_clearances
from .robot_model import N_LEG_JOINTS, RobotModel, link_transforms, model_hash

logger = logging.getLogger(__name__)

N_BINS = 5
SCHEMA_VERSION = 1
# Share of poses per bin reported for the real robot, innermost first.
REFERENCE_BIN_FRACTIONS = (0.51, 0.21, 0.13, 0.06, 0.02)


@dataclass(frozen=True)
class BodyOffsetRanges:
    """Uniform sampling ranges of the virtual body displacement (meters, radians)."""

    x: tuple[float, float] = (-0.2, 0.2)
    y: tuple[float, float] = (-0.2, 0.2)
    z: tuple[float, float] = (-0.3, 0.1)
    roll: tuple[float, float] = (-np.pi / 6, np.pi / 6)
    pitch: tuple[float, float] = (-np.pi / 6, np.pi / 6)
    yaw: tuple[float, float] = (-np.pi / 6, np.pi / 6)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not lo <= hi:
                raise KeyposeError(f"Range '{f.name}' is not ordered", KeyposeError.VALIDATION,
                                   {"range": f.name, "lower": lo, "upper": hi})
            object.__setattr__(self, f.name, (float(lo), float(hi)))

    @classmethod
    def zero(cls) -> "BodyOffsetRanges":
        return cls(*[(0.0, 0.0)] * 6)

    @classmethod
    def from_dict(cls, data: dict) -> "BodyOffsetRanges":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise KeyposeError(f"Unknown body offset key '{key}'", KeyposeError.SCHEMA, {"field": key})
        return cls(**{k: tuple(v) for k, v in data.items()})

    @property
    def lower(self) -> np.ndarray:
        return np.array([getattr(self, f.name)[0] for f in fields(self)])

    @property
    def upper(self) -> np.ndarray:
        return np.array([getattr(self, f.name)[1] for f in fields(self)])


def bin_radii_for(r_max: float) -> np.ndarray:
    """Outer radii of the five concentric cylinders; the last one equals ``r_max`` exactly."""
    radii = r_max * np.arange(1, N_BINS + 1) / N_BINS
    radii[-1] = r_max
    return radii


def assign_bins(positions: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Bin of each position by xy-radius; bins are (r_{i-1}, r_i] with bin 0 closed at the axis."""
    r = np.hypot(positions[..., 0], positions[..., 1])
    return np.minimum(np.searchsorted(radii, r, side="left"), N_BINS - 1)


@dataclass(frozen=True, eq=False)
class WorkspaceDataset:
    """Base-frame end-effector poses grouped into concentric z-aligned cylinder bins."""

    positions: np.ndarray
    orientations: np.ndarray
    bin_index: np.ndarray
    r_max: float
    bin_radii: np.ndarray
    metadata: dict = field(default_factory=dict)
    _members: tuple = field(init=False, repr=False)

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        orientations = np.array(self.orientations, dtype=float).reshape(-1, 4)
        bin_index = np.array(self.bin_index, dtype=int).reshape(-1)
        radii = np.array(self.bin_radii, dtype=float).reshape(-1)
        if not (len(positions) == len(orientations) == len(bin_index)):
            raise KeyposeError("Pose and bin arrays differ in length", KeyposeError.VALIDATION,
                               {"positions": len(positions), "orientations": len(orientations),
                                "bins": len(bin_index)})
        if radii.shape != (N_BINS,) or np.any(np.diff(radii) <= 0.0):
            raise KeyposeError("Bin radii must be 5 ascending values", KeyposeError.VALIDATION,
                               {"bin_radii": radii.tolist()})
        if np.any((bin_index < 0) | (bin_index >= N_BINS)):
            raise KeyposeError("Bin index out of range", KeyposeError.VALIDATION)
        for arr in (positions, orientations, bin_index, radii):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "orientations", orientations)
        object.__setattr__(self, "bin_index", bin_index)
        object.__setattr__(self, "bin_radii", radii)
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "_members", tuple(np.flatnonzero(bin_index == b) for b in range(N_BINS)))

    @classmethod
    def from_poses(cls, positions, orientations, metadata: dict | None = None) -> "WorkspaceDataset":
        """Bin arbitrary base-frame poses using ``r_max`` = their largest xy-radius."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if len(positions) == 0:
            raise KeyposeError("Workspace dataset needs at least one pose", KeyposeError.INSUFFICIENT_POSES,
                               {"available": 0})
        r_max = float(np.max(np.hypot(positions[:, 0], positions[:, 1])))
        if r_max <= 0.0:
            raise KeyposeError("All poses lie on the base z-axis; bins are undefined", KeyposeError.VALIDATION)
        radii = bin_radii_for(r_max)
        return cls(positions, orientations, assign_bins(positions, radii), r_max, radii, dict(metadata or {}))

    def __len__(self) -> int:
        return len(self.positions)

    def pose(self, i: int) -> SE3Pose:
        return SE3Pose(self.positions[i], self.orientations[i])

    @property
    def poses(self) -> list[SE3Pose]:
        return [self.pose(i) for i in range(len(self))]

    @property
    def bin_counts(self) -> np.ndarray:
        return np.array([len(m) for m in self._members])

    def bin_members(self, b: int) -> np.ndarray:
        return self._members[b]

    def bin_fractions(self) -> np.ndarray:
        return self.bin_counts / max(len(self), 1)


def presample_workspace(model: RobotModel, steps_per_joint: int = 7, target_count: int = 10000, seed: int = 0,
                        workers: int = 1, chunk_size: int = 4096) -> WorkspaceDataset:
    """Sweep the arm joints on a regular grid with legs at default and keep collision-free poses.

    Args:
        model (RobotModel): The robot.
        steps_per_joint (int): Grid points per arm joint, limits included.
        target_count (int): Number of poses kept by seeded uniform subsampling.
        seed (int): Subsampling seed.
        workers (int): Sweep threads; the result does not depend on this.
    Returns:
        WorkspaceDataset: Binned dataset in the base frame.
    Raises:
        KeyposeError: VALIDATION for bad arguments, INSUFFICIENT_POSES when fewer collision-free poses exist.
    """
    if steps_per_joint < 2:
        raise KeyposeError("steps_per_joint must be at least 2", KeyposeError.VALIDATION,
                           {"steps_per_joint": steps_per_joint})
    if target_count < 1:
        raise KeyposeError("target_count must be positive", KeyposeError.VALIDATION, {"target_count": target_count})

    grids = [np.linspace(model.lower[j], model.upper[j], steps_per_joint) for j in range(N_LEG_JOINTS, 18)]
    shape = (steps_per_joint,) * len(grids)
    total = steps_per_joint ** len(grids)
    pairs = collision_pairs(model)
    ee = model.ee_link_id

    def _sweep(start, stop):
        idx = np.unravel_index(np.arange(start, stop), shape)
        q = np.tile(model.default_config, (stop - start, 1))
        for k, grid in enumerate(grids):
            q[:, N_LEG_JOINTS + k] = grid[idx[k]]
        T = link_transforms(model, q)
        ok = np.all(pair_clearances(model, T, pairs) >= 0.0, axis=-1)
        return T[ok, ee, :3, 3], T[ok, ee, :3, :3]

    logger.info("Sweeping %d arm configurations (%d steps per joint)", total, steps_per_joint)
    chunks = run_chunked(_sweep, total, workers, chunk_size)
    positions = np.concatenate([c[0] for c in chunks])
    rotations = np.concatenate([c[1] for c in chunks])
    available = len(positions)
    logger.info("%d of %d configurations are collision-free", available, total)
    if target_count > available:
        raise KeyposeError(f"Requested {target_count} poses but only {available} are collision-free",
                           KeyposeError.INSUFFICIENT_POSES, {"available": available, "requested": target_count})

    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(available, size=target_count, replace=False))
    dataset = WorkspaceDataset.from_poses(
        positions[keep], matrix_to_quat(rotations[keep]),
        {"seed": seed, "steps_per_joint": steps_per_joint, "model_hash": model_hash(model),
         "collision_free_count": available},
    )
    fractions = ", ".join(f"{f:.0%}" for f in dataset.bin_fractions())
    reference = ", ".join(f"{f:.0%}" for f in REFERENCE_BIN_FRACTIONS)
    logger.info("Bin fractions %s (reference %s), r_max %.3f m", fractions, reference, dataset.r_max)
    return dataset


def sample_binned_index(dataset: WorkspaceDataset, rng: np.random.Generator) -> int:
    """Pick a bin uniformly, then a pose uniformly within it; returns the pose index."""
    counts = dataset.bin_counts
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise KeyposeError(f"Workspace bin {int(empty[0])} is empty", KeyposeError.EMPTY_BIN,
                           {"bin": int(empty[0]), "bin_counts": counts.tolist()})
    b = int(rng.integers(N_BINS))
    members = dataset.bin_members(b)
    return int(members[rng.integers(len(members))])


def sample_binned(dataset: WorkspaceDataset, rng: np.random.Generator) -> SE3Pose:
    return dataset.pose(sample_binned_index(dataset, rng))


def sample_body_offset(rng: np.random.Generator, ranges: BodyOffsetRanges | None = None) -> SE3Pose:
    ranges = ranges or BodyOffsetRanges()
    values = rng.uniform(ranges.lower, ranges.upper)
    return SE3Pose.from_xyz_rpy(values[:3], values[3:])


def expand_command(pose: SE3Pose, rng: np.random.Generator,
                   ranges: BodyOffsetRanges | None = None) -> tuple[SE3Pose, SE3Pose]:
    """Apply a random virtual base displacement to a fixed-base pose.

    The offset pre-multiplies the pose: ``command = offset ∘ pose``, both in the base frame.

    Returns:
        tuple[SE3Pose, SE3Pose]: The expanded command and the offset that produced it.
    """
    offset = sample_body_offset(rng, ranges)
    return offset @ pose, offset


def save_workspace(dataset: WorkspaceDataset, path: str | Path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "r_max": dataset.r_max,
        "bin_radii": dataset.bin_radii.tolist(),
        "bin_counts": dataset.bin_counts.tolist(),
        "metadata": dataset.metadata,
        "poses": np.concatenate([dataset.positions, dataset.orientations], axis=1).tolist(),
        "bin_index": dataset.bin_index.tolist(),
    }
    try:
        Path(path).write_text(json.dumps(doc), encoding="utf-8")
    except OSError as e:
        raise KeyposeError(f"Cannot write workspace dataset: {e}", KeyposeError.IO, {"path": str(path)})


def load_workspace(path: str | Path) -> WorkspaceDataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise KeyposeError(f"Cannot read workspace dataset: {e}", KeyposeError.IO, {"path": str(path)})
    except json.JSONDecodeError as e:
        raise KeyposeError(f"Workspace file is not valid JSON: {e}", KeyposeError.SCHEMA, {"path": str(path)})
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise KeyposeError("Unsupported workspace schema version", KeyposeError.SCHEMA,
                           {"field": "schema_version", "value": doc.get("schema_version")})
    for key in ("poses", "bin_index", "bin_radii", "r_max"):
        if key not in doc:
            raise KeyposeError(f"Workspace file is missing '{key}'", KeyposeError.SCHEMA, {"field": key})
    poses = np.asarray(doc["poses"], dtype=float).reshape(-1, 7)
    return WorkspaceDataset(poses[:, :3], poses[:, 3:], doc["bin_index"], doc["r_max"], doc["bin_radii"],
                            doc.get("metadata", {}))
