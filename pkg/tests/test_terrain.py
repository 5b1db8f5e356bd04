import os
import sys
import tempfile

try:
    sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))
except Exception:
    pass

import json
import unittest
from pathlib import Path

import numpy as np

from keypose import KeyposeError
from keypose.terrain import (TerrainField, build_coarse_map, generate_terrain, load_terrain, save_terrain,
                             stair_riser)


def _brute_force_coarse(heights, half=2, stride=2):
    nx, ny = heights.shape
    out = np.empty(((nx - 1) // stride + 1, (ny - 1) // stride + 1))
    for a in range(out.shape[0]):
        for b in range(out.shape[1]):
            i, j = a * stride, b * stride
            out[a, b] = heights[max(i - half, 0):i + half + 1, max(j - half, 0):j + half + 1].max()
    return out


class TestGenerateTerrain(unittest.TestCase):
    """Procedural terrain generation."""

    def test_flat_is_zero(self):
        for seed in (0, 9):
            terrain = generate_terrain("flat", 0.7, seed, extent=2.0)
            self.assertTrue(np.all(terrain.heights == 0.0))
            self.assertEqual(terrain.shape, (41, 41))
            self.assertEqual(terrain.bounds, (-1.0, 1.0, -1.0, 1.0))

    def test_deterministic(self):
        a = generate_terrain("stairs", 1.0, 7)
        b = generate_terrain("stairs", 1.0, 7)
        np.testing.assert_array_equal(a.heights, b.heights)
        c = generate_terrain("discrete_obstacles", 0.5, 3, extent=4.0)
        d = generate_terrain("discrete_obstacles", 0.5, 3, extent=4.0)
        e = generate_terrain("discrete_obstacles", 0.5, 4, extent=4.0)
        np.testing.assert_array_equal(c.heights, d.heights)
        self.assertFalse(np.array_equal(c.heights, e.heights))

    def test_rough_amplitude(self):
        terrain = generate_terrain("rough", 0.5, 3)
        self.assertLessEqual(np.max(np.abs(terrain.heights)), 0.06)
        self.assertGreater(np.var(terrain.heights), 0.0)

    def test_obstacles_keep_spawn_platform(self):
        terrain = generate_terrain("discrete_obstacles", 1.0, 11)
        c = (terrain.shape[0] - 1) // 2
        np.testing.assert_array_equal(terrain.heights[c - 10:c + 11, c - 10:c + 11], 0.0)
        self.assertLessEqual(len(np.unique(terrain.heights)), 5)
        self.assertAlmostEqual(float(np.max(np.abs(terrain.heights))), 0.2)

    def test_pyramid_stairs(self):
        terrain = generate_terrain("stairs", 0.5, 0, extent=4.0)
        riser = stair_riser(0.5)
        c = (terrain.shape[0] - 1) // 2
        row = terrain.heights[:c + 1, c]
        steps = np.diff(row)
        self.assertTrue(np.all(np.isclose(steps, 0.0) | np.isclose(steps, riser)))
        self.assertEqual(row[0], 0.0)
        self.assertAlmostEqual(terrain.height_at(0.0, 0.0), float(row.max()))
        # Symmetric about the centre
        np.testing.assert_array_equal(terrain.heights, terrain.heights[::-1, :])
        np.testing.assert_array_equal(terrain.heights, terrain.heights.T)

    def test_invalid_arguments(self):
        for kwargs in ({"kind": "stairs", "difficulty": 1.5}, {"kind": "stairs", "difficulty": -0.1},
                       {"kind": "lava", "difficulty": 0.5}):
            with self.assertRaises(KeyposeError) as cm:
                generate_terrain(seed=0, **kwargs)
            self.assertEqual(cm.exception.error_code, KeyposeError.VALIDATION)
        with self.assertRaises(KeyposeError):
            TerrainField("flat", np.array([[0.0, 1.0], [0.0, 0.0]]))
        with self.assertRaises(KeyposeError):
            TerrainField("rough", np.array([[0.0, np.nan], [0.0, 0.0]]))


class TestHeightQueries(unittest.TestCase):

    def test_bilinear_interpolation(self):
        terrain = generate_terrain("rough", 1.0, 5, extent=2.0)
        xs, ys = terrain.sample_coordinates()
        self.assertAlmostEqual(terrain.height_at(xs[3], ys[7]), terrain.heights[3, 7], places=12)
        mid = terrain.height_at((xs[3] + xs[4]) / 2.0, ys[7])
        self.assertAlmostEqual(mid, (terrain.heights[3, 7] + terrain.heights[4, 7]) / 2.0, places=12)
        batch = terrain.height_at(xs[:5], ys[:5])
        np.testing.assert_allclose(batch, terrain.heights[np.arange(5), np.arange(5)], atol=1e-12)

    def test_out_of_bounds(self):
        terrain = generate_terrain("flat", 0.0, 0, extent=2.0)
        self.assertEqual(terrain.height_at(1.0, -1.0), 0.0)
        with self.assertRaises(KeyposeError) as cm:
            terrain.height_at(1.01, 0.0)
        self.assertEqual(cm.exception.error_code, KeyposeError.OUT_OF_BOUNDS)
        self.assertEqual(cm.exception.context["bounds"], (-1.0, 1.0, -1.0, 1.0))


class TestCoarseMap(unittest.TestCase):
    """Max-pooled coarse height map."""

    def test_flat_is_zero(self):
        coarse = build_coarse_map(generate_terrain("flat", 0.0, 0, extent=2.0))
        self.assertEqual(coarse.heights.shape, (21, 21))
        self.assertTrue(np.all(coarse.heights == 0.0))

    def test_single_spike(self):
        heights = np.zeros((41, 41))
        heights[20, 20] = 0.5
        coarse = build_coarse_map(TerrainField("rough", heights))
        expected = np.zeros((21, 21))
        expected[9:12, 9:12] = 0.5
        np.testing.assert_array_equal(coarse.heights, expected)

    def test_matches_brute_force(self):
        for kind in ("stairs", "discrete_obstacles", "rough"):
            terrain = generate_terrain(kind, 1.0, 2, extent=3.0)
            coarse = build_coarse_map(terrain)
            np.testing.assert_array_equal(coarse.heights, _brute_force_coarse(terrain.heights))

    def test_riser_edge_reads_upper_tread(self):
        terrain = generate_terrain("stairs", 1.0, 0, extent=4.0)
        coarse = build_coarse_map(terrain)
        c = (terrain.shape[0] - 1) // 2
        row = terrain.heights[:, c]
        edge = int(np.flatnonzero(np.diff(row) > 0)[0])
        below = edge if edge % 2 == 0 else edge - 1
        self.assertLess(row[below], row[edge + 1])
        x = terrain.origin[0] + below * terrain.cell_size
        self.assertEqual(coarse.height_at(x, 0.0), row[edge + 1])

    def test_dominates_terrain(self):
        terrain = generate_terrain("discrete_obstacles", 0.8, 6, extent=3.0)
        coarse = build_coarse_map(terrain)
        rng = np.random.default_rng(1)
        xmin, xmax, ymin, ymax = terrain.bounds
        x = rng.uniform(xmin, xmax, 2000)
        y = rng.uniform(ymin, ymax, 2000)
        i = np.rint((x - xmin) / terrain.cell_size).astype(int)
        j = np.rint((y - ymin) / terrain.cell_size).astype(int)
        self.assertTrue(np.all(coarse.height_at(x, y) >= terrain.heights[i, j]))

    def test_unchanged_inside_wide_flat_regions(self):
        heights = np.zeros((41, 41))
        heights[:, 20:] = 0.3
        coarse = build_coarse_map(TerrainField("rough", heights))
        np.testing.assert_array_equal(coarse.heights[:, 11:], 0.3)
        np.testing.assert_array_equal(coarse.heights[:, :9], 0.0)


class TestTerrainFile(unittest.TestCase):

    def test_round_trip(self):
        terrain = generate_terrain("rough", 0.4, 8, extent=2.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "terrain.json"
            save_terrain(terrain, path)
            loaded = load_terrain(path)
            doc = json.loads(path.read_text(encoding="utf-8"))
        np.testing.assert_array_equal(loaded.heights, terrain.heights)
        self.assertEqual((loaded.kind, loaded.seed, loaded.difficulty), ("rough", 8, 0.4))
        self.assertEqual(doc["dims"], [41, 41])

    def test_schema_errors(self):
        terrain = generate_terrain("flat", 0.0, 0, extent=2.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "terrain.json"
            save_terrain(terrain, path)
            doc = json.loads(path.read_text(encoding="utf-8"))
            doc["dims"] = [40, 41]
            path.write_text(json.dumps(doc), encoding="utf-8")
            with self.assertRaises(KeyposeError) as cm:
                load_terrain(path)
            self.assertEqual(cm.exception.error_code, KeyposeError.SCHEMA)
            with self.assertRaises(KeyposeError) as cm:
                load_terrain(Path(tmp) / "missing.json")
            self.assertEqual(cm.exception.error_code, KeyposeError.IO)


if __name__ == '__main__':
    unittest.main()
