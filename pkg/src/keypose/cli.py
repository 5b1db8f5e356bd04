# Batch front-end: every pipeline stage as a subcommand writing into one output directory.

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import _plotting
from ._exceptions import KeyposeError
from ._se3 import SE3Pose
from .command_sampler import (DEFAULT_MAX_ATTEMPTS, EpisodeSchedule, command_stream, load_commands, next_command,
                              save_commands)
from .curriculum import (CurriculumConfig, CurriculumState, InitialConfiguration, curriculum_update,
                         episode_mean_errors, generate_initial_configuration, place_stance, stance_tilt)
from .dls_tracker import TrackerConfig, evaluate_batch, track_command
from .pose_repr import REPRESENTATION_KINDS, continuity_audit, pose_errors
from .reward_engine import PROGRESS_CONDITIONS, RewardWeights
from .robot_model import forward_kinematics, load_robot
from .terrain import DEFAULT_EXTENT, TERRAIN_KINDS, build_coarse_map, generate_terrain, load_terrain, save_terrain
from .trajectory import load_trajectory, replay_rewards, save_trajectory, trajectory_from_tracking
from .workspace import N_BINS, REFERENCE_BIN_FRACTIONS, load_workspace, presample_workspace, save_workspace

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "KEYPOSE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "keypose-out"
MANIFEST_NAME = "manifest.json"
SCHEMA_VERSION = 1
SEED_STREAMS = ("terrain", "workspace", "commands", "stance", "curriculum", "audit")
INPUT_FLAGS = ("robot", "terrain", "workspace", "commands", "config", "weights", "trajectory", "error_trace")
TRACE_COLUMNS = ("pos_error", "rot_error")
DEFAULT_EPISODES = 10


class _ArgumentParser(argparse.ArgumentParser):
    """Raises KeyposeError instead of exiting so bad flags share the validation exit status.

    Flag abbreviations are off: a misspelled flag fails instead of matching a longer one.
    """

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise KeyposeError(message, KeyposeError.VALIDATION, {"prog": self.prog})


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    input_hashes: dict
    seed: int
    version: str
    timestamp: str
    outputs: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION}
        doc.update(asdict(self))
        doc["outputs"] = list(self.outputs)
        return doc


class _Run:
    """Output directory of one invocation; ``discard`` removes everything this run created."""

    def __init__(self, out_dir: Path, plots: bool):
        self.out_dir = out_dir
        self.plots = plots
        self.created_dir = not out_dir.exists()
        self.written: list[Path] = []
        self._preexisting: set[Path] = set()

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        if p.exists():
            self._preexisting.add(p)
        self.written.append(p)
        return p

    def discard(self):
        for p in reversed(self.written):
            if p in self._preexisting:
                continue
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()
        if self.created_dir and self.out_dir.is_dir() and not any(self.out_dir.iterdir()):
            self.out_dir.rmdir()


def _tool_version() -> str:
    try:
        return version("keypose")
    except PackageNotFoundError:
        return "unknown"


def _child_seed(root: int, stream: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(root).spawn(len(SEED_STREAMS))[SEED_STREAMS.index(stream)]


def seed_for(root: int, stream: str) -> int:
    """Integer seed of one module's stream, derived from the invocation's root seed."""
    return int(_child_seed(root, stream).generate_state(1)[0])


def rng_for(root: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(_child_seed(root, stream))


def file_hash(path: str | Path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise KeyposeError(f"Cannot read input: {e}", KeyposeError.IO, {"path": str(path)})


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path: Path, doc: dict) -> None:
    try:
        path.write_text(json.dumps(doc, indent=1, default=_jsonable), encoding="utf-8")
    except OSError as e:
        raise KeyposeError(f"Cannot write {path.name}: {e}", KeyposeError.IO, {"path": str(path)})


def write_csv(path: Path, rows: list[dict]) -> None:
    """Rows as CSV with a leading schema_version column; an empty list writes the header only."""
    fieldnames = ["schema_version"] + (list(rows[0].keys()) if rows else [])
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=fieldnames)
            w.writeheader()
            for r in rows:
                w.writerow({"schema_version": SCHEMA_VERSION, **r})
    except OSError as e:
        raise KeyposeError(f"Cannot write {path.name}: {e}", KeyposeError.IO, {"path": str(path)})


def _load_terrain_arg(args):
    if args.terrain:
        return load_terrain(args.terrain)
    return generate_terrain("flat", 0.0, 0)


def _stance_from_base(model, terrain, base: SE3Pose | None, args) -> InitialConfiguration:
    if base is None:
        x, y = args.base_xy
        yaw = args.base_yaw
    else:
        x, y = base.position[:2]
        yaw = Rotation.from_matrix(base.rotation).as_euler("ZYX")[0]
    stance = place_stance(model, terrain, float(x), float(y), float(yaw))
    if base is not None and not stance.base_pose.allclose(base, atol=1e-6):
        logger.warning("Stance base pose differs from the base pose the commands were sampled for")
    return stance


# -- subcommands -------------------------------------------------------------------------------

def _gen_terrain(args, run: _Run) -> dict:
    seed = seed_for(args.seed, "terrain")
    terrain = generate_terrain(args.kind, args.difficulty, seed, args.extent)
    save_terrain(terrain, run.path(args.out))
    coarse = build_coarse_map(terrain)
    logger.info("Terrain %s: heights %.3f..%.3f m, coarse map %dx%d", args.kind, terrain.heights.min(),
                terrain.heights.max(), *coarse.heights.shape)
    if run.plots:
        _plotting.heightmap_svg(terrain.heights, terrain.bounds, run.path("terrain.svg"),
                                f"{args.kind}, difficulty {args.difficulty:g}")
    return {"terrain_seed": seed}


def _sample_workspace(args, run: _Run) -> dict:
    model = load_robot(args.robot)
    seed = seed_for(args.seed, "workspace")
    dataset = presample_workspace(model, args.steps_per_joint, args.count, seed, args.workers)
    save_workspace(dataset, run.path(args.out))
    if run.plots:
        _plotting.bar_svg([f"bin {b}" for b in range(N_BINS)], dataset.bin_fractions(),
                          run.path("workspace_bins.svg"), "Workspace bin fractions", "fraction")
    return {"workspace_seed": seed, "bin_counts": dataset.bin_counts.tolist(),
            "reference_fractions": list(REFERENCE_BIN_FRACTIONS)}


def _sample_commands(args, run: _Run) -> dict:
    model = load_robot(args.robot)
    terrain = _load_terrain_arg(args)
    dataset = load_workspace(args.workspace)
    if args.base_pose:
        x, y, z, yaw = args.base_pose
        base_pose = SE3Pose.from_xyz_rpy([x, y, z], [0.0, 0.0, yaw])
    else:
        base_pose = _stance_from_base(model, terrain, None, args).base_pose
    coarse = build_coarse_map(terrain)
    rng = rng_for(args.seed, "commands")
    issue_times = EpisodeSchedule().issue_times
    commands = []
    for i in range(args.count):
        try:
            commands.append(next_command(dataset, coarse, base_pose, rng, args.max_attempts, None,
                                         args.fixed_base, issue_times[i % len(issue_times)]))
        except KeyposeError as e:
            raise e.with_context(command=i) from e
    attempts = [c.resample_attempts for c in commands]
    logger.info("Sampled %d commands, %d rejected candidates in total", len(commands), sum(attempts))
    save_commands(commands, run.path(args.out), base_pose,
                  {"fixed_base": args.fixed_base, "terrain_kind": terrain.kind})
    return {"rejected_candidates": int(sum(attempts))}


def _eval_tracking(args, run: _Run) -> dict:
    model = load_robot(args.robot)
    terrain = _load_terrain_arg(args)
    commands, base = load_commands(args.commands)
    config = TrackerConfig.from_json(args.config) if args.config else TrackerConfig()
    init = _stance_from_base(model, terrain, base, args)
    report = evaluate_batch(model, terrain, init, commands, config, args.workers)
    write_csv(run.path(args.out), report.rows)
    write_json(run.path("tracking_summary.json"), {"schema_version": SCHEMA_VERSION, **report.summary})
    if args.trajectories:
        folder = run.path(args.trajectories)
        folder.mkdir(parents=True, exist_ok=True)
        schedule = EpisodeSchedule()
        for i, (result, command) in enumerate(zip(report.results, commands)):
            if result is not None:
                save_trajectory(trajectory_from_tracking(model, result, command.target, schedule),
                                folder / f"command_{i:05d}.json")
    if run.plots:
        done = [r for r in report.results if r is not None]
        _plotting.histogram_svg([100.0 * r.position_error for r in done], run.path("position_errors.svg"),
                                "Position error", "error [cm]")
        _plotting.histogram_svg([r.orientation_error for r in done], run.path("orientation_errors.svg"),
                                "Orientation error", "error [deg]")
    return {"convergence_rate": report.summary["convergence_rate"]}


def _episode_errors(model, terrain, dataset, rng, schedule, config) -> tuple[float, float]:
    """Track one episode's three commands in sequence and average the errors over the reward windows."""
    init = generate_initial_configuration(model, terrain, rng)
    coarse = build_coarse_map(terrain)
    stream = command_stream(schedule, dataset, coarse, init.base_pose, rng)
    pos, rot = [], []
    for command in stream:
        result = track_command(model, terrain, init, command, config)
        trajectory = trajectory_from_tracking(model, result, command.target, schedule)
        for k in range(1, len(trajectory)):
            ee = forward_kinematics(model, trajectory.base_pose(k), trajectory.q[k])[model.ee_link_id]
            p, r = pose_errors(ee, command.target)
            pos.append(p)
            rot.append(r)
        base = result.final_base_pose
        init = InitialConfiguration(base, result.final_q, terrain, stance_tilt(base))
    return episode_mean_errors(pos, rot, schedule)


def _curriculum_sim(args, run: _Run) -> dict:
    config = CurriculumConfig.from_json(args.config) if args.config else CurriculumConfig()
    rng = rng_for(args.seed, "curriculum")
    state = CurriculumState(args.start_level, config.max_level)
    if args.error_trace:
        trace = _read_error_trace(args.error_trace)
        episodes = len(trace) if args.episodes is None else args.episodes
        if not 0 <= episodes <= len(trace):
            raise KeyposeError(f"Error trace has {len(trace)} episodes, {episodes} requested",
                               KeyposeError.VALIDATION, {"episodes": episodes, "trace_length": len(trace)})
    elif args.workspace:
        model = load_robot(args.robot)
        dataset = load_workspace(args.workspace)
        schedule = EpisodeSchedule()
        tracker = TrackerConfig(max_iterations=args.max_iterations)
        terrain_rng = rng_for(args.seed, "terrain")
        episodes = DEFAULT_EPISODES if args.episodes is None else args.episodes
    else:
        raise KeyposeError("curriculum-sim needs --error-trace or --workspace", KeyposeError.VALIDATION)

    rows = []
    for episode in range(episodes):
        level = state.level
        if args.error_trace:
            pos, rot = trace[episode]
        else:
            difficulty = level / config.max_level if config.max_level else 0.0
            terrain = generate_terrain(args.kind, difficulty, int(terrain_rng.integers(2**31)), args.extent)
            try:
                pos, rot = _episode_errors(model, terrain, dataset, rng, schedule, tracker)
            except KeyposeError as e:
                raise e.with_context(episode=episode, level=level) from e
        state = curriculum_update(state, pos, rot, rng, config)
        rows.append({"episode": episode, TRACE_COLUMNS[0]: pos, TRACE_COLUMNS[1]: rot, "level_before": level,
                     "level_after": state.level})
        logger.info("Episode %d: %.3f m / %.1f deg, level %d -> %d", episode, pos, rot, level, state.level)
    write_csv(run.path("curriculum.csv"), rows)
    if run.plots and rows:
        _plotting.line_svg([r["episode"] for r in rows], {"level": [r["level_after"] for r in rows]},
                           run.path("curriculum_levels.svg"), "Terrain level", "episode", "level")
    return {"final_level": state.level}


def _read_error_trace(path) -> list[tuple[float, float]]:
    """Per-episode (position m, orientation deg) pairs from a CSV with ``pos_error`` and ``rot_error`` columns.

    Other columns are ignored, so a ``curriculum.csv`` written by this tool replays as-is.
    """
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = {TRACE_COLUMNS[0], TRACE_COLUMNS[1]} - set(reader.fieldnames or ())
            if missing:
                raise KeyposeError("Error trace is missing columns", KeyposeError.SCHEMA,
                                   {"path": str(path), "missing": sorted(missing)})
            rows = list(reader)
    except OSError as e:
        raise KeyposeError(f"Cannot read error trace: {e}", KeyposeError.IO, {"path": str(path)})
    trace = []
    for line, row in enumerate(rows, start=2):
        try:
            trace.append((float(row[TRACE_COLUMNS[0]]), float(row[TRACE_COLUMNS[1]])))
        except (TypeError, ValueError):
            raise KeyposeError("Error trace values must be numbers", KeyposeError.SCHEMA,
                               {"path": str(path), "line": line})
    return trace


def _repr_audit(args, run: _Run) -> dict:
    seed = seed_for(args.seed, "audit")
    report = continuity_audit(args.paths, seed, args.dt)
    write_csv(run.path("repr_audit.csv"), report.rows)
    write_json(run.path("repr_audit_summary.json"), {
        "schema_version": SCHEMA_VERSION,
        "paths": report.n_paths,
        "dt": report.dt,
        "crossing_paths": report.crossing_paths,
        "half_turn_paths": report.half_turn_paths,
        "quaternion_sign_flips": report.quaternion_sign_flips,
        "quaternion_sign_flips_raw": report.quaternion_sign_flips_raw,
        "representations": {k: asdict(s) for k, s in report.stats.items()},
    })
    if run.plots:
        kinds = list(report.stats)
        _plotting.bar_svg(kinds, [report.stats[k].max_step for k in kinds], run.path("repr_max_step.svg"),
                          "Largest delta step per representation", "step norm")
    return {"audit_seed": seed}


def _reward_trace(args, run: _Run) -> dict:
    model = load_robot(args.robot)
    trajectory = load_trajectory(args.trajectory)
    weights = RewardWeights.from_json(args.weights) if args.weights else RewardWeights()
    terrain = load_terrain(args.terrain) if args.terrain else None
    schedule = EpisodeSchedule(control_dt=trajectory.control_dt)
    rows = replay_rewards(model, trajectory, weights, schedule, terrain, args.condition, args.representation)
    write_csv(run.path("reward_trace.csv"), rows)
    if run.plots and rows:
        _plotting.line_svg([r["time"] for r in rows],
                           {name: [r[f"weighted_{name}"] for r in rows] for name in ("tracking", "progress")}
                           | {"total": [r["total"] for r in rows]},
                           run.path("reward_trace.svg"), "Reward", "time [s]", "reward")
    return {"total_reward": float(sum(r["total"] for r in rows))}


# -- parser ------------------------------------------------------------------------------------

def _base_pose_arg(text: str) -> tuple[float, float, float, float]:
    """``x,y,z`` or ``x,y,z,yaw`` in meters and radians."""
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        values = []
    if len(values) not in (3, 4) or not np.all(np.isfinite(values)):
        raise argparse.ArgumentTypeError(f"expected x,y,z[,yaw], got '{text}'")
    if len(values) == 3:
        values.append(0.0)
    return tuple(values)


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--out-dir", type=Path, default=Path(os.environ.get(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR)),
                        help=f"output directory (default: ${ENV_OUTPUT_DIR} or ./{DEFAULT_OUTPUT_DIR})")
    common.add_argument("--seed", type=int, default=0, help="root seed of the invocation")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    common.add_argument("--no-plots", action="store_true", help="skip SVG plots")
    common.add_argument("--robot", type=Path, help="robot description (default: bundled approximate ALMA)")
    common.add_argument("--workers", type=int, default=1, help="worker threads for sweeps and batches")

    parser = _ArgumentParser(prog="keypose", description="Keypoint-commanded whole-body pose tracking toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("gen-terrain", parents=[common], help="generate a terrain height field")
    p.add_argument("--kind", choices=TERRAIN_KINDS, required=True)
    p.add_argument("--difficulty", type=float, default=0.0)
    p.add_argument("--extent", type=float, default=DEFAULT_EXTENT)
    p.add_argument("--out", default="terrain.json", help="terrain file, relative to the output directory")
    p.set_defaults(handler=_gen_terrain)

    p = sub.add_parser("sample-workspace", parents=[common], help="pre-sample the fixed-base workspace")
    p.add_argument("--steps", "--steps-per-joint", dest="steps_per_joint", type=int, default=7)
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--out", default="workspace.json", help="dataset file, relative to the output directory")
    p.set_defaults(handler=_sample_workspace)

    p = sub.add_parser("sample-commands", parents=[common], help="sample terrain-feasible commands")
    p.add_argument("--workspace", type=Path, required=True)
    p.add_argument("--terrain", type=Path, help="terrain file (default: flat)")
    p.add_argument("--n", "--count", dest="count", type=int, default=3, help="number of commands")
    p.add_argument("--max-attempts", type=int, default=DEFAULT_MAX_ATTEMPTS)
    p.add_argument("--fixed-base", action="store_true", help="command pre-sampled poses without body offsets")
    base = p.add_mutually_exclusive_group()
    base.add_argument("--base-pose", type=_base_pose_arg, metavar="X,Y,Z[,YAW]",
                      help="sample for this base pose instead of the default stance on the terrain")
    base.add_argument("--base-xy", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"))
    p.add_argument("--base-yaw", type=float, default=0.0)
    p.add_argument("--out", default="commands.json", help="commands file, relative to the output directory")
    p.set_defaults(handler=_sample_commands)

    p = sub.add_parser("eval-tracking", parents=[common], help="track commands with the DLS whole-body solver")
    p.add_argument("--commands", type=Path, required=True)
    p.add_argument("--terrain", type=Path, help="terrain file (default: flat)")
    p.add_argument("--config", type=Path, help="tracker configuration JSON")
    p.add_argument("--out", default="tracking.csv", help="results file name inside the output directory")
    p.add_argument("--trajectories", help="subdirectory for per-command trajectory JSON")
    p.add_argument("--base-xy", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"))
    p.add_argument("--base-yaw", type=float, default=0.0)
    p.set_defaults(handler=_eval_tracking)

    p = sub.add_parser("curriculum-sim", parents=[common], help="run the terrain curriculum")
    p.add_argument("--error-trace", type=Path, help="CSV of per-episode pos_error [m] and rot_error [deg]")
    p.add_argument("--workspace", type=Path, help="workspace dataset for tracker-driven episodes")
    p.add_argument("--config", type=Path, help="curriculum configuration JSON")
    p.add_argument("--episodes", type=int,
                   help=f"episodes to run (default: the whole trace, or {DEFAULT_EPISODES} tracked episodes)")
    p.add_argument("--start-level", type=int, default=0)
    p.add_argument("--kind", choices=TERRAIN_KINDS, default="stairs")
    p.add_argument("--extent", type=float, default=DEFAULT_EXTENT)
    p.add_argument("--max-iterations", type=int, default=TrackerConfig().max_iterations)
    p.set_defaults(handler=_curriculum_sim)

    p = sub.add_parser("repr-audit", parents=[common], help="continuity audit of the pose representations")
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.set_defaults(handler=_repr_audit)

    p = sub.add_parser("reward-trace", parents=[common], help="replay a trajectory through the reward terms")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--weights", type=Path, help="reward weights JSON")
    p.add_argument("--terrain", type=Path, help="terrain for foot contacts (default: none)")
    p.add_argument("--condition", choices=PROGRESS_CONDITIONS, default="all")
    p.add_argument("--representation", choices=REPRESENTATION_KINDS,
                   help="also report the alternate reward of this representation")
    p.set_defaults(handler=_reward_trace)
    return parser


def _set_verbosity(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.getLogger("keypose").setLevel(level)


def _resolved_config(args) -> dict:
    return {k: _jsonable(v) if isinstance(v, Path) else (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(args).items() if k != "handler"}


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv``, execute the subcommand and write its manifest.

    Records go to the ``keypose`` loggers at the level chosen by ``-v``; handlers are left to ``main``.

    Returns:
        int: 0 on success, 1 for validation failures, 2 for runtime or numerical failures.
    """
    try:
        args = build_parser().parse_args(argv)
    except KeyposeError as e:
        print(e, file=sys.stderr)
        return e.exit_status
    _set_verbosity(args.verbose)

    out_dir = Path(args.out_dir)
    run_dir = _Run(out_dir, not args.no_plots)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        inputs = {flag: file_hash(getattr(args, flag)) for flag in INPUT_FLAGS if getattr(args, flag, None)}
        extra = args.handler(args, run_dir)
        manifest = RunManifest(
            command=args.command,
            config={**_resolved_config(args), **extra},
            input_hashes=inputs,
            seed=args.seed,
            version=_tool_version(),
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            outputs=tuple(p.name for p in run_dir.written),
        )
        write_json(run_dir.path(MANIFEST_NAME), manifest.to_dict())
    except KeyposeError as e:
        run_dir.discard()
        logger.debug("%r", e)
        print(e, file=sys.stderr)
        return e.exit_status
    except OSError as e:
        run_dir.discard()
        err = KeyposeError(str(e), KeyposeError.IO, {"out_dir": str(out_dir)})
        print(err, file=sys.stderr)
        return err.exit_status
    except Exception as e:
        run_dir.discard()
        logger.exception("Unexpected failure in %s", args.command)
        err = KeyposeError(str(e), KeyposeError.UNKNOWN, {"command": args.command})
        print(err, file=sys.stderr)
        return err.exit_status
    logger.info("Wrote %d files to %s", len(run_dir.written), out_dir)
    return 0


def main() -> int:
    # handlers belong to the executable; run() only sets the keypose level
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
