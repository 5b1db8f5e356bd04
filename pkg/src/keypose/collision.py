# Self-collision between link primitives and end-effector clearance against terrain.

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._exceptions import KeyposeError
from ._se3 import SE3Pose
from .robot_model import RobotModel, link_transforms

logger = logging.getLogger(__name__)

TERRAIN_MARGIN = 0.08
_EPS = 1e-12


@dataclass(frozen=True)
class CollisionPair:
    link_a: int
    link_b: int
    depth: float


@dataclass(frozen=True)
class CollisionReport:
    pairs: tuple[CollisionPair, ...] = ()

    def __post_init__(self):
        for pair in self.pairs:
            if not pair.depth > 0.0:
                raise KeyposeError("Reported penetration depth must be positive", KeyposeError.VALIDATION,
                                   {"pair": (pair.link_a, pair.link_b), "depth": pair.depth})

    @property
    def colliding(self) -> bool:
        return bool(self.pairs)


def segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Closest distance between segments [p1, q1] and [p2, q2], batched over leading dimensions.

    Degenerate segments (points) are handled, so spheres and capsules share one formula.
    """
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    a_ok = a > _EPS
    e_ok = e > _EPS
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)

    denom = a * e - b * b
    general = denom > _EPS
    s = np.where(general, np.clip((b * f - c * e) / np.where(general, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0),
                 np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)

    s = np.where(a_ok, s, 0.0)
    t = np.where(a_ok, t, np.clip(f / safe_e, 0.0, 1.0))
    s = np.where(a_ok & ~e_ok, np.clip(-c / safe_a, 0.0, 1.0), s)
    t = np.where(e_ok, t, 0.0)

    closest = (p1 + d1 * s[..., None]) - (p2 + d2 * t[..., None])
    return np.linalg.norm(closest, axis=-1)


def collision_pairs(model: RobotModel) -> np.ndarray:
    """Primitive index pairs that are checked, shape (n_pairs, 2)."""
    prims = model.collision_primitives
    pairs = [
        (i, j)
        for i in range(len(prims))
        for j in range(i + 1, len(prims))
        if not model.is_excluded(prims[i].link, prims[j].link)
    ]
    return np.array(pairs, dtype=int).reshape(-1, 2)


def primitive_segments(model: RobotModel, transforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World endpoints of every primitive's core segment, each of shape (..., n_primitives, 3)."""
    starts, ends = [], []
    for prim in model.collision_primitives:
        T = transforms[..., prim.link, :, :]
        R = T[..., :3, :3]
        center = R @ prim.offset + T[..., :3, 3]
        half = (R @ prim.axis) * prim.half_length
        starts.append(center - half)
        ends.append(center + half)
    return np.stack(starts, axis=-2), np.stack(ends, axis=-2)


def pair_clearances(model: RobotModel, transforms: np.ndarray, pairs: np.ndarray | None = None) -> np.ndarray:
    """Signed clearance (distance minus radii sum) for each checked pair.

    Args:
        transforms (ndarray): Link transforms, (..., n_links, 4, 4).
        pairs (ndarray, optional): Output of ``collision_pairs``; computed when omitted.
    Returns:
        ndarray: (..., n_pairs) clearances in meters; negative means penetration.
    """
    if pairs is None:
        pairs = collision_pairs(model)
    if len(pairs) == 0:
        return np.zeros(transforms.shape[:-3] + (0,))
    starts, ends = primitive_segments(model, transforms)
    i, j = pairs[:, 0], pairs[:, 1]
    dist = segment_distance(starts[..., i, :], ends[..., i, :], starts[..., j, :], ends[..., j, :])
    radii = np.array([p.radius for p in model.collision_primitives])
    return dist - (radii[i] + radii[j])


def self_collision(model: RobotModel, base: SE3Pose, q) -> CollisionReport:
    """Report every link pair whose primitives are closer than the sum of their radii."""
    T = link_transforms(model, np.asarray(q, dtype=float), base)
    pairs = collision_pairs(model)
    clearances = pair_clearances(model, T, pairs)
    depths: dict[tuple[int, int], float] = {}
    for (i, j), clearance in zip(pairs, clearances):
        if clearance < 0.0:
            a = model.collision_primitives[i].link
            b = model.collision_primitives[j].link
            key = (min(a, b), max(a, b))
            depths[key] = max(depths.get(key, 0.0), float(-clearance))
    report = CollisionReport(tuple(CollisionPair(a, b, d) for (a, b), d in sorted(depths.items())))
    if report.colliding:
        logger.debug("Self-collision between %s",
                     ", ".join(f"{model.links[p.link_a].name}/{model.links[p.link_b].name}" for p in report.pairs))
    return report


def terrain_clearance(pose: SE3Pose, coarse_map, margin: float = TERRAIN_MARGIN) -> bool:
    """True iff the pose height is at least the coarse terrain height plus ``margin`` (inclusive)."""
    x, y, z = pose.position
    return bool(z >= coarse_map.height_at(x, y) + margin)


def dense_sampling_distance(start_a, end_a, start_b, end_b, samples: int = 200) -> float:
    """Reference distance between two segments from evenly spaced points along each."""
    s = np.linspace(0.0, 1.0, samples)[:, None]
    pa = np.asarray(start_a, dtype=float) + s * (np.asarray(end_a, dtype=float) - start_a)
    pb = np.asarray(start_b, dtype=float) + s * (np.asarray(end_b, dtype=float) - start_b)
    diff = pa[:, None, :] - pb[None, :, :]
    return float(np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff))))
