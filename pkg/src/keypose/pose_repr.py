# Keypoint-cube pose representation, competitor rotation encodings and their continuity audit.

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation, Slerp

from ._exceptions import KeyposeError
from ._se3 import SE3Pose, from_rotation, hemisphere, matrix_to_quat, quat_angle, quat_conjugate, quat_multiply

logger = logging.getLogger(__name__)

CUBE_SIDE = 0.3
# Three mutually equidistant cube vertices (+++, +--, -+-) in the end-effector frame.
LOCAL_VERTICES = (CUBE_SIDE / 2.0) * np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0]])
VERTEX_SEPARATION = CUBE_SIDE * np.sqrt(2.0)
RIGIDITY_TOLERANCE = 1e-6

REPRESENTATION_KINDS = ("keypoint", "quaternion", "euler", "six_d")
PAYLOAD_SIZES = {"keypoint": 9, "quaternion": 7, "euler": 6, "six_d": 9}


@dataclass(frozen=True, eq=False)
class KeypointTriple:
    """Three cube vertices in the frame the pose was expressed in, shape (3, 3)."""

    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(points)):
            raise KeyposeError("Keypoints must be finite", KeyposeError.VALIDATION)
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def k0(self) -> np.ndarray:
        return self.points[0]

    @property
    def k1(self) -> np.ndarray:
        return self.points[1]

    @property
    def k2(self) -> np.ndarray:
        return self.points[2]

    def as_vector(self) -> np.ndarray:
        return self.points.reshape(9)

    def rigidity_deviation(self) -> float:
        """Largest deviation of a pairwise distance from the canonical vertex separation."""
        p = self.points
        d = np.array([np.linalg.norm(p[0] - p[1]), np.linalg.norm(p[0] - p[2]), np.linalg.norm(p[1] - p[2])])
        return float(np.max(np.abs(d - VERTEX_SEPARATION)))


@dataclass(frozen=True, eq=False)
class PoseDelta:
    kind: str
    payload: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in PAYLOAD_SIZES:
            raise KeyposeError(f"Unknown representation '{self.kind}'", KeyposeError.VALIDATION,
                               {"kind": self.kind, "expected": REPRESENTATION_KINDS})
        payload = np.array(self.payload, dtype=float).reshape(-1)
        if payload.shape != (PAYLOAD_SIZES[self.kind],):
            raise KeyposeError("Payload length does not match the representation", KeyposeError.VALIDATION,
                               {"kind": self.kind, "length": payload.size})
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)


def keypoint_array(positions: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Keypoints for batched poses: positions (..., 3), rotations (..., 3, 3) -> (..., 3, 3)."""
    return np.einsum("...ij,kj->...ki", rotations, LOCAL_VERTICES) + np.asarray(positions)[..., None, :]


def keypoints_of(pose: SE3Pose) -> KeypointTriple:
    return KeypointTriple(keypoint_array(pose.position, pose.rotation))


def pose_from_keypoints(kp: KeypointTriple) -> SE3Pose:
    """Recover the pose by orthogonal Procrustes on the three vertex correspondences.

    Raises:
        KeyposeError: RIGIDITY when a pairwise distance deviates from the cube geometry by more than 1e-6 m.
    """
    deviation = kp.rigidity_deviation()
    if deviation > RIGIDITY_TOLERANCE:
        raise KeyposeError("Keypoints do not form a rigid copy of the cube vertices", KeyposeError.RIGIDITY,
                           {"max_deviation": deviation})
    local_centroid = LOCAL_VERTICES.mean(axis=0)
    centroid = kp.points.mean(axis=0)
    H = (LOCAL_VERTICES - local_centroid).T @ (kp.points - centroid)
    U, _, Vt = linalg.svd(H)
    d = np.sign(linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return SE3Pose.from_rotation_matrix(centroid - R @ local_centroid, R)


def six_d_of(R: np.ndarray) -> np.ndarray:
    """First two columns of (batched) rotation matrices, concatenated."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def matrix_from_six_d(d6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt reconstruction of rotation matrices from 6D encodings."""
    d6 = np.asarray(d6, dtype=float)
    a1, a2 = d6[..., :3], d6[..., 3:]
    b1 = a1 / np.linalg.norm(a1, axis=-1, keepdims=True)
    b2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = b2 / np.linalg.norm(b2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def euler_of(R: np.ndarray) -> np.ndarray:
    """Intrinsic ZYX angles (yaw, pitch, roll) of (batched) rotation matrices."""
    R = np.asarray(R, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return Rotation.from_matrix(R.reshape(-1, 3, 3)).as_euler("ZYX").reshape(R.shape[:-2] + (3,))


def wrap_angle(angle):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def rotation_payload(kind: str, R: np.ndarray) -> np.ndarray:
    """A rotation expressed in one of the representations."""
    R = np.asarray(R, dtype=float)
    if kind == "keypoint":
        return (LOCAL_VERTICES @ R.T).reshape(9)
    if kind == "quaternion":
        return matrix_to_quat(R)
    if kind == "euler":
        return euler_of(R)
    if kind == "six_d":
        return six_d_of(R)
    raise KeyposeError(f"Unknown representation '{kind}'", KeyposeError.VALIDATION, {"kind": kind})


def quaternion_from_payload(kind: str, payload: np.ndarray) -> np.ndarray:
    """Convert a rotation payload from ``rotation_payload`` back to a unit quaternion."""
    payload = np.asarray(payload, dtype=float)
    if kind == "keypoint":
        return pose_from_keypoints(KeypointTriple(payload.reshape(3, 3))).orientation
    if kind == "quaternion":
        return hemisphere(payload / np.linalg.norm(payload))
    if kind == "euler":
        return from_rotation(Rotation.from_euler("ZYX", payload))
    if kind == "six_d":
        return matrix_to_quat(matrix_from_six_d(payload))
    raise KeyposeError(f"Unknown representation '{kind}'", KeyposeError.VALIDATION, {"kind": kind})


def encode_delta(kind: str, measured: SE3Pose, command: SE3Pose) -> PoseDelta:
    """Difference between a command and a measured pose in the requested representation.

    ``keypoint`` gives the 9 command-minus-measured keypoint differences. The other kinds prefix the
    position difference: ``quaternion`` appends q_cmd ⊗ q_meas⁻¹, ``euler`` the wrapped ZYX angle
    differences and ``six_d`` the difference of the 6D encodings.
    """
    if kind == "keypoint":
        return PoseDelta(kind, keypoints_of(command).as_vector() - keypoints_of(measured).as_vector())
    dp = command.position - measured.position
    if kind == "quaternion":
        dq = hemisphere(quat_multiply(command.orientation, quat_conjugate(measured.orientation)))
        return PoseDelta(kind, np.concatenate([dp, dq]))
    if kind == "euler":
        return PoseDelta(kind, np.concatenate([dp, wrap_angle(euler_of(command.rotation) - euler_of(measured.rotation))]))
    if kind == "six_d":
        return PoseDelta(kind, np.concatenate([dp, six_d_of(command.rotation) - six_d_of(measured.rotation)]))
    raise KeyposeError(f"Unknown representation '{kind}'", KeyposeError.VALIDATION,
                       {"kind": kind, "expected": REPRESENTATION_KINDS})


def pose_errors(measured: SE3Pose, command: SE3Pose) -> tuple[float, float]:
    """Position error in meters and orientation error in degrees (axis-angle magnitude, in [0, 180])."""
    position_error = float(np.linalg.norm(command.position - measured.position))
    relative = quat_multiply(quat_conjugate(measured.orientation), command.orientation)
    return position_error, float(np.degrees(quat_angle(relative)))


# -- continuity audit --------------------------------------------------------------------------

@dataclass(frozen=True)
class RepresentationStats:
    kind: str
    max_step: float
    lipschitz: float
    random_paths_with_jump: int
    crossing_paths_with_jump: int


@dataclass(frozen=True)
class ContinuityReport:
    n_paths: int
    dt: float
    crossing_paths: int
    half_turn_paths: int
    stats: dict
    quaternion_sign_flips: int
    quaternion_sign_flips_raw: int
    rows: list = field(default_factory=list, repr=False)


def _path_payloads(rotations: Rotation) -> dict:
    """Delta payload rotation parts of each sample against the identity command."""
    R = rotations.as_matrix()
    q_raw = rotations.as_quat()[:, [3, 0, 1, 2]]
    return {
        "keypoint": (LOCAL_VERTICES - np.einsum("nij,kj->nki", R, LOCAL_VERTICES)).reshape(-1, 9),
        "quaternion": hemisphere(quat_conjugate(q_raw)),
        "euler": wrap_angle(-euler_of(R)),
        "six_d": six_d_of(np.eye(3)) - six_d_of(R),
    }


def _steps(payload: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(payload, axis=0), axis=1)


def continuity_audit(n_paths: int, seed: int, dt: float = 1e-3) -> ContinuityReport:
    """Step statistics of each representation along SLERP paths sampled at parameter step ``dt``.

    Random paths connect uniformly random orientations. Constructed crossing paths sweep the pitch
    through +pi/2 and half-turn paths pass through a rotation angle of pi.

    Args:
        n_paths (int): Number of random paths; a tenth as many (at least one) crossing and half-turn paths.
        seed (int): Seed of the orientation sampler.
        dt (float): Path parameter step in (0, 1).
    Returns:
        ContinuityReport: Per-representation statistics and per-path rows.
    """
    if n_paths < 1 or not 0.0 < dt < 1.0:
        raise KeyposeError("Audit needs n_paths >= 1 and 0 < dt < 1", KeyposeError.VALIDATION,
                           {"n_paths": n_paths, "dt": dt})
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 1.0, int(round(1.0 / dt)) + 1)
    jump = np.pi / 2.0
    max_step = dict.fromkeys(REPRESENTATION_KINDS, 0.0)
    lipschitz = dict.fromkeys(REPRESENTATION_KINDS, 0.0)
    random_jumps = dict.fromkeys(REPRESENTATION_KINDS, 0)
    crossing_jumps = dict.fromkeys(REPRESENTATION_KINDS, 0)
    rows = []

    def _record(path, path_type, rotations, angle_step, jumps):
        for kind, payload in _path_payloads(rotations).items():
            steps = _steps(payload)
            worst = float(steps.max())
            ratio = worst / angle_step if angle_step > 0.0 else 0.0
            max_step[kind] = max(max_step[kind], worst)
            if path_type == "random":
                lipschitz[kind] = max(lipschitz[kind], ratio)
            if worst > jump:
                jumps[kind] += 1
            rows.append({"path": path, "type": path_type, "kind": kind, "max_step": worst, "ratio": ratio})

    for p in range(n_paths):
        ends = Rotation.from_quat(_random_quats(rng, 2))
        angle = float((ends[0].inv() * ends[1]).magnitude())
        rotations = Slerp([0.0, 1.0], ends)(times)
        _record(p, "random", rotations, angle / (len(times) - 1), random_jumps)

    n_special = max(1, n_paths // 10)
    for p in range(n_special):
        yaw, roll = rng.uniform(-np.pi, np.pi, size=2)
        a, b = rng.uniform(0.1, 0.5, size=2)
        ends = Rotation.from_euler("ZYX", [[yaw, np.pi / 2 - a, roll], [yaw, np.pi / 2 + b, roll]])
        rotations = Slerp([0.0, 1.0], ends)(times)
        _record(n_paths + p, "crossing", rotations, (a + b) / (len(times) - 1), crossing_jumps)

    flips = flips_raw = 0
    for p in range(n_special):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        c = rng.uniform(0.1, 0.5)
        ends = Rotation.from_rotvec([axis * (np.pi - c), -axis * (np.pi - c)])
        rotations = Slerp([0.0, 1.0], ends)(times)
        q_raw = rotations.as_quat()
        q_hemi = _path_payloads(rotations)["quaternion"]
        flips += int(np.sum(_steps(q_hemi) > 1.0))
        flips_raw += int(np.sum(np.einsum("ij,ij->i", q_raw[1:], q_raw[:-1]) < 0.0))

    stats = {k: RepresentationStats(k, max_step[k], lipschitz[k], random_jumps[k], crossing_jumps[k])
             for k in REPRESENTATION_KINDS}
    for s in stats.values():
        logger.info("%-10s max step %.4f, Lipschitz %.3f, jumps %d random / %d crossing",
                    s.kind, s.max_step, s.lipschitz, s.random_paths_with_jump, s.crossing_paths_with_jump)
    return ContinuityReport(n_paths, dt, n_special, n_special, stats, flips, flips_raw, rows)


def _random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform random unit quaternions (scalar-last, for scipy)."""
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)
