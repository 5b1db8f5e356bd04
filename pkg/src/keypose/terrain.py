# Procedural training terrains and the conservative coarse height map used for command filtering.

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import maximum_filter

from ._exceptions import KeyposeError

logger = logging.getLogger(__name__)

TERRAIN_KINDS = ("flat", "rough", "discrete_obstacles", "stairs")
SCHEMA_VERSION = 1

SAMPLE_PITCH = 0.05
COARSE_CELL = 0.10
COARSE_WINDOW = 0.20
DEFAULT_EXTENT = 8.0

ROUGH_GRID = 0.10
OBSTACLE_SIZE = (0.4, 1.0)
OBSTACLE_DENSITY = 0.625  # obstacles per square meter
STAIR_TREAD = 0.30
PLATFORM_SIZE = 1.0


def rough_amplitude(difficulty: float) -> float:
    return 0.02 + 0.08 * difficulty


def obstacle_height(difficulty: float) -> float:
    return 0.05 + 0.15 * difficulty


def stair_riser(difficulty: float) -> float:
    return 0.05 + 0.15 * difficulty


def _check_bounds(x, y, bounds, what):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xmin, xmax, ymin, ymax = bounds
    outside = (x < xmin - 1e-12) | (x > xmax + 1e-12) | (y < ymin - 1e-12) | (y > ymax + 1e-12)
    if np.any(outside):
        k = np.flatnonzero(np.ravel(outside))[0]
        bx, by = (float(np.ravel(v)[k]) for v in np.broadcast_arrays(x, y))
        raise KeyposeError(f"Query ({bx:.3f}, {by:.3f}) lies outside the {what}", KeyposeError.OUT_OF_BOUNDS,
                           {"x": bx, "y": by, "bounds": tuple(round(b, 6) for b in bounds)})
    return x, y


@dataclass(frozen=True, eq=False)
class TerrainField:
    """Height samples ``heights[i, j]`` at ``(origin[0] + i*cell_size, origin[1] + j*cell_size)``."""

    kind: str
    heights: np.ndarray
    cell_size: float = SAMPLE_PITCH
    difficulty: float = 0.0
    seed: int = 0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    _interp: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in TERRAIN_KINDS:
            raise KeyposeError(f"Unknown terrain kind '{self.kind}'", KeyposeError.VALIDATION,
                               {"kind": self.kind, "expected": TERRAIN_KINDS})
        heights = np.array(self.heights, dtype=float)
        if heights.ndim != 2 or min(heights.shape) < 2:
            raise KeyposeError("Terrain heights must be a 2-D grid of at least 2x2 samples",
                               KeyposeError.VALIDATION, {"shape": heights.shape})
        if not np.all(np.isfinite(heights)):
            raise KeyposeError("Terrain heights must be finite", KeyposeError.VALIDATION)
        if self.kind == "flat" and np.ptp(heights) != 0.0:
            raise KeyposeError("Flat terrain must have a single height", KeyposeError.VALIDATION)
        if not 0.0 <= self.difficulty <= 1.0:
            raise KeyposeError("Difficulty must lie in [0, 1]", KeyposeError.VALIDATION,
                               {"difficulty": self.difficulty})
        if not self.cell_size > 0.0:
            raise KeyposeError("Cell size must be positive", KeyposeError.VALIDATION, {"cell_size": self.cell_size})
        origin = np.array(self.origin, dtype=float).reshape(2)
        heights.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "origin", origin)
        xs = origin[0] + self.cell_size * np.arange(heights.shape[0])
        ys = origin[1] + self.cell_size * np.arange(heights.shape[1])
        object.__setattr__(self, "_interp", RegularGridInterpolator((xs, ys), heights, method="linear"))

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the sampled area."""
        nx, ny = self.heights.shape
        return (float(self.origin[0]), float(self.origin[0] + (nx - 1) * self.cell_size),
                float(self.origin[1]), float(self.origin[1] + (ny - 1) * self.cell_size))

    def height_at(self, x, y):
        """Bilinearly interpolated terrain height; raises OUT_OF_BOUNDS outside the sampled area."""
        x, y = _check_bounds(x, y, self.bounds, "terrain")
        xmin, xmax, ymin, ymax = self.bounds
        bx, by = np.broadcast_arrays(np.clip(x, xmin, xmax), np.clip(y, ymin, ymax))
        h = self._interp(np.stack([bx.ravel(), by.ravel()], axis=-1)).reshape(bx.shape)
        return float(h) if h.ndim == 0 else h

    def sample_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.heights.shape
        return (self.origin[0] + self.cell_size * np.arange(nx), self.origin[1] + self.cell_size * np.arange(ny))


@dataclass(frozen=True, eq=False)
class CoarseHeightMap:
    """Per-cell maximum terrain height over a square window centered on the cell."""

    heights: np.ndarray
    cell_size: float = COARSE_CELL
    window: float = COARSE_WINDOW
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        heights = np.array(self.heights, dtype=float)
        if heights.ndim != 2 or heights.size == 0:
            raise KeyposeError("Coarse heights must be a non-empty 2-D grid", KeyposeError.VALIDATION,
                               {"shape": heights.shape})
        origin = np.array(self.origin, dtype=float).reshape(2)
        heights.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "origin", origin)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        nx, ny = self.heights.shape
        return (float(self.origin[0]), float(self.origin[0] + (nx - 1) * self.cell_size),
                float(self.origin[1]), float(self.origin[1] + (ny - 1) * self.cell_size))

    def height_at(self, x, y):
        """Height of the nearest coarse cell; raises OUT_OF_BOUNDS outside the map."""
        x, y = _check_bounds(x, y, self.bounds, "coarse height map")
        nx, ny = self.heights.shape
        i = np.clip(np.floor((x - self.origin[0]) / self.cell_size + 0.5).astype(int), 0, nx - 1)
        j = np.clip(np.floor((y - self.origin[1]) / self.cell_size + 0.5).astype(int), 0, ny - 1)
        h = self.heights[i, j]
        return float(h) if np.ndim(h) == 0 else h

    def raised(self, offset: float) -> "CoarseHeightMap":
        return CoarseHeightMap(self.heights + offset, self.cell_size, self.window, self.origin)


def generate_terrain(kind: str, difficulty: float, seed: int, extent: float = DEFAULT_EXTENT) -> TerrainField:
    """Generate one of the four training terrains.

    Args:
        kind (str): One of ``flat``, ``rough``, ``discrete_obstacles``, ``stairs``.
        difficulty (float): Difficulty in [0, 1]; parameters scale linearly with it.
        seed (int): Seed of the generator.
        extent (float, optional): Side length of the square terrain in meters. Defaults to 8.
    Returns:
        TerrainField: Terrain centered on the world origin.
    Raises:
        KeyposeError: VALIDATION for an unknown kind, a difficulty outside [0, 1] or a too small extent.
    """
    if kind not in TERRAIN_KINDS:
        raise KeyposeError(f"Unknown terrain kind '{kind}'", KeyposeError.VALIDATION,
                           {"kind": kind, "expected": TERRAIN_KINDS})
    if not 0.0 <= difficulty <= 1.0:
        raise KeyposeError("Difficulty must lie in [0, 1]", KeyposeError.VALIDATION, {"difficulty": difficulty})
    if not extent >= PLATFORM_SIZE:
        raise KeyposeError(f"Extent must be at least {PLATFORM_SIZE} m", KeyposeError.VALIDATION, {"extent": extent})

    n = int(round(extent / SAMPLE_PITCH)) + 1
    origin = np.array([-extent / 2.0, -extent / 2.0])
    rng = np.random.default_rng(seed)

    if kind == "flat":
        heights = np.zeros((n, n))
    elif kind == "rough":
        heights = _random_uniform(rng, n, extent, rough_amplitude(difficulty))
    elif kind == "discrete_obstacles":
        heights = _discrete_obstacles(rng, n, extent, obstacle_height(difficulty))
    else:
        heights = _pyramid_stairs(n, stair_riser(difficulty))

    logger.debug("Generated %s terrain (d=%.2f, seed=%d, %dx%d samples, max height %.3f m)",
                 kind, difficulty, seed, n, n, float(heights.max()))
    return TerrainField(kind, heights, SAMPLE_PITCH, float(difficulty), int(seed), origin)


def _random_uniform(rng, n, extent, amplitude):
    n_coarse = int(round(extent / ROUGH_GRID)) + 1
    coarse = rng.uniform(-amplitude, amplitude, size=(n_coarse, n_coarse))
    axis_coarse = np.linspace(0.0, extent, n_coarse)
    axis_fine = np.linspace(0.0, extent, n)
    interp = RegularGridInterpolator((axis_coarse, axis_coarse), coarse, method="linear")
    xx, yy = np.meshgrid(axis_fine, axis_fine, indexing="ij")
    heights = interp(np.stack([xx, yy], axis=-1))
    return np.clip(heights, -amplitude, amplitude)


def _discrete_obstacles(rng, n, extent, height):
    heights = np.zeros((n, n))
    choices = np.array([-height, -height / 2.0, height / 2.0, height])
    lo, hi = (int(round(s / SAMPLE_PITCH)) for s in OBSTACLE_SIZE)
    count = int(round(OBSTACLE_DENSITY * extent * extent))
    for _ in range(count):
        w, l = rng.integers(lo, hi + 1, size=2)
        i = rng.integers(0, max(n - w, 1))
        j = rng.integers(0, max(n - l, 1))
        heights[i:i + w, j:j + l] = rng.choice(choices)
    _flatten_platform(heights, n, 0.0)
    return heights


def _pyramid_stairs(n, riser):
    idx = np.arange(n)
    edge = np.minimum(idx, n - 1 - idx)
    edge_dist = np.minimum.outer(edge, edge) * SAMPLE_PITCH
    half = (n - 1) * SAMPLE_PITCH / 2.0
    top_level = int(np.floor((half - PLATFORM_SIZE / 2.0) / STAIR_TREAD + 1e-9))
    level = np.minimum(np.floor(edge_dist / STAIR_TREAD + 1e-9), top_level)
    return riser * level


def _flatten_platform(heights, n, value):
    half = int(round(PLATFORM_SIZE / 2.0 / SAMPLE_PITCH))
    c = (n - 1) // 2
    heights[c - half:c + half + 1, c - half:c + half + 1] = value


def build_coarse_map(terrain: TerrainField, cell_size: float = COARSE_CELL,
                     window: float = COARSE_WINDOW) -> CoarseHeightMap:
    """Max-pool the terrain over a centered window and subsample to the coarse cell pitch.

    Windows clipped by the border use only the samples that exist.
    """
    size = int(round(window / terrain.cell_size)) + 1
    stride = int(round(cell_size / terrain.cell_size))
    if stride < 1 or not np.isclose(stride * terrain.cell_size, cell_size):
        raise KeyposeError("Coarse cell size must be a multiple of the terrain sample pitch",
                           KeyposeError.VALIDATION, {"cell_size": cell_size, "pitch": terrain.cell_size})
    pooled = maximum_filter(terrain.heights, size=size, mode="nearest")
    return CoarseHeightMap(pooled[::stride, ::stride], cell_size, window, terrain.origin)


def save_terrain(terrain: TerrainField, path: str | Path) -> None:
    """Write the terrain as a JSON header plus row-major heights."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": terrain.kind,
        "seed": terrain.seed,
        "difficulty": terrain.difficulty,
        "cell_size": terrain.cell_size,
        "origin": terrain.origin.tolist(),
        "dims": list(terrain.heights.shape),
        "heights": terrain.heights.ravel().tolist(),
    }
    try:
        Path(path).write_text(json.dumps(doc), encoding="utf-8")
    except OSError as e:
        raise KeyposeError(f"Cannot write terrain: {e}", KeyposeError.IO, {"path": str(path)})


def load_terrain(path: str | Path) -> TerrainField:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise KeyposeError(f"Cannot read terrain: {e}", KeyposeError.IO, {"path": str(path)})
    except json.JSONDecodeError as e:
        raise KeyposeError(f"Terrain file is not valid JSON: {e}", KeyposeError.SCHEMA, {"path": str(path)})
    missing = [k for k in ("kind", "seed", "difficulty", "cell_size", "origin", "dims", "heights") if k not in doc]
    if missing:
        raise KeyposeError("Terrain file is missing fields", KeyposeError.SCHEMA, {"field": missing[0]})
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise KeyposeError("Unsupported terrain schema version", KeyposeError.SCHEMA,
                           {"field": "schema_version", "value": doc.get("schema_version")})
    dims = tuple(doc["dims"])
    heights = np.asarray(doc["heights"], dtype=float)
    if len(dims) != 2 or heights.size != dims[0] * dims[1]:
        raise KeyposeError("Terrain dims do not match the height array", KeyposeError.SCHEMA,
                           {"field": "dims", "dims": dims, "count": heights.size})
    return TerrainField(doc["kind"], heights.reshape(dims), float(doc["cell_size"]), float(doc["difficulty"]),
                        int(doc["seed"]), np.asarray(doc["origin"], dtype=float))
