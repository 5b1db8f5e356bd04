# Rigid-body pose type and the quaternion helpers everything else is built on.
# Quaternions are scalar-first (w, x, y, z) and kept on the w >= 0 hemisphere. scipy Rotation is
# scalar-last, so conversions go through _to_scipy and _from_scipy.

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ._exceptions import KeyposeError

QUAT_TOLERANCE = 1e-9


def hemisphere(q: np.ndarray) -> np.ndarray:
    """Flip quaternions with a negative scalar part onto the positive hemisphere."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a ⊗ b`` of (batched) scalar-first quaternions."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (batched) unit quaternions."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Scalar-first, hemisphere-normalized quaternions for (batched) rotation matrices."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    q = _from_scipy(Rotation.from_matrix(flat).as_quat())
    return hemisphere(q).reshape(R.shape[:-2] + (4,))


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in ``[0, pi]`` of (batched) unit quaternions."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def _to_scipy(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float)[..., [1, 2, 3, 0]]


def _from_scipy(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float)[..., [3, 0, 1, 2]]


def from_rotation(rot: Rotation) -> np.ndarray:
    return hemisphere(_from_scipy(rot.as_quat()))


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """A rigid transform: translation in meters and a unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        position = np.array(self.position, dtype=float).reshape(-1)
        orientation = np.array(self.orientation, dtype=float).reshape(-1)
        if position.shape != (3,) or orientation.shape != (4,):
            raise KeyposeError("SE3Pose needs a 3-vector position and a 4-vector quaternion",
                               KeyposeError.VALIDATION,
                               {"position_shape": position.shape, "orientation_shape": orientation.shape})
        if not (np.all(np.isfinite(position)) and np.all(np.isfinite(orientation))):
            raise KeyposeError("SE3Pose components must be finite", KeyposeError.VALIDATION)
        norm = np.linalg.norm(orientation)
        if norm < 1e-12:
            raise KeyposeError("Quaternion has zero norm", KeyposeError.VALIDATION)
        if abs(norm - 1.0) > QUAT_TOLERANCE:
            orientation = orientation / norm
        orientation = hemisphere(orientation)
        position.setflags(write=False)
        orientation.setflags(write=False)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "orientation", orientation)

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "SE3Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], matrix_to_quat(T[:3, :3]))

    @classmethod
    def from_rotation_matrix(cls, position, R: np.ndarray) -> "SE3Pose":
        return cls(position, matrix_to_quat(R))

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy) -> "SE3Pose":
        """Pose from a translation and roll/pitch/yaw (R = Rz(yaw)·Ry(pitch)·Rx(roll))."""
        roll, pitch, yaw = rpy
        rot = Rotation.from_euler("ZYX", [yaw, pitch, roll])
        return cls(xyz, from_rotation(rot))

    @classmethod
    def from_array(cls, values) -> "SE3Pose":
        values = np.asarray(values, dtype=float)
        return cls(values[:3], values[3:7])

    @classmethod
    def from_dict(cls, data: dict) -> "SE3Pose":
        try:
            return cls(data["position"], data["orientation"])
        except KeyError as e:
            raise KeyposeError(f"Pose record is missing {e}", KeyposeError.SCHEMA, {"field": str(e)})

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "orientation": self.orientation.tolist()}

    def __matmul__(self, other: "SE3Pose") -> "SE3Pose":
        return self.compose(other)

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return SE3Pose(self.position + self.rotation @ other.position,
                       quat_multiply(self.orientation, other.orientation))

    def inverse(self) -> "SE3Pose":
        R_T = self.rotation.T
        return SE3Pose(-R_T @ self.position, quat_conjugate(self.orientation))

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from this frame into the parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position

    def allclose(self, other: "SE3Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.position, other.position, atol=atol, rtol=0.0)
                    and np.allclose(self.orientation, other.orientation, atol=atol, rtol=0.0))

    def __repr__(self):
        p = ", ".join(f"{v:.6g}" for v in self.position)
        q = ", ".join(f"{v:.6g}" for v in self.orientation)
        return f"SE3Pose(position=[{p}], orientation=[{q}])"
