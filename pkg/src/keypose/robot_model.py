# Kinematic description of a quadruped with a 6-DoF arm, forward kinematics and Jacobians.

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ._exceptions import KeyposeError
from ._se3 import SE3Pose

logger = logging.getLogger(__name__)

N_JOINTS = 18
N_LEG_JOINTS = 12
N_ARM_JOINTS = 6
LEG_NAMES = ("LF", "RF", "LH", "RH")
DEFAULT_DESCRIPTION = "alma_approx.json"

# Alias for documentation: an (18,) float array ordered legs (LF, RF, LH, RH; HAA, HFE, KFE) then arm.
JointVector = np.ndarray


def joint_vector(values) -> JointVector:
    """Validate and return an 18-element joint vector.

    Raises:
        KeyposeError: If the input does not hold exactly 18 finite values.
    """
    q = np.asarray(values, dtype=float)
    if q.shape != (N_JOINTS,):
        raise KeyposeError(f"Joint vector must have {N_JOINTS} entries", KeyposeError.VALIDATION,
                           {"shape": q.shape})
    if not np.all(np.isfinite(q)):
        raise KeyposeError("Joint vector contains non-finite values", KeyposeError.VALIDATION)
    return q


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    parent: int
    origin: np.ndarray
    axis: np.ndarray
    joint_type: str
    joint_name: str | None = None
    joint_index: int = -1


@dataclass(frozen=True, eq=False)
class CollisionPrimitive:
    """A capsule (segment of length ``2*half_length`` along ``axis``) or a sphere, in link coordinates."""

    link: int
    shape: str
    offset: np.ndarray
    axis: np.ndarray
    radius: float
    half_length: float = 0.0


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Immutable kinematic tree with limits and collision primitives.

    Validation runs on construction, so ``dataclasses.replace`` on a model re-checks every invariant.
    """

    name: str
    links: tuple[Link, ...]
    lower: np.ndarray
    upper: np.ndarray
    default_config: np.ndarray
    foot_link_ids: tuple[int, ...]
    ee_link_id: int
    collision_primitives: tuple[CollisionPrimitive, ...] = ()
    collision_exclusions: frozenset = frozenset()
    total_mass: float = 62.0
    order: tuple[int, ...] = field(init=False)
    chains: tuple[tuple[int, ...], ...] = field(init=False)
    joint_names: tuple[str, ...] = field(init=False)
    joint_links: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        order = _topological_order(self.links)
        actuated = [i for i, link in enumerate(self.links) if link.joint_index >= 0]
        if len(actuated) != N_JOINTS:
            raise KeyposeError(f"Model must have exactly {N_JOINTS} actuated joints, found {len(actuated)}",
                               KeyposeError.VALIDATION)
        joint_links = [-1] * N_JOINTS
        for i in actuated:
            joint_links[self.links[i].joint_index] = i
        if -1 in joint_links:
            raise KeyposeError("Actuated joint indices must cover 0..17", KeyposeError.VALIDATION)

        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        default = np.asarray(self.default_config, dtype=float)
        for name, arr in (("lower", lower), ("upper", upper), ("default_config", default)):
            if arr.shape != (N_JOINTS,):
                raise KeyposeError(f"{name} must have {N_JOINTS} entries", KeyposeError.VALIDATION,
                                   {"shape": arr.shape})
        bad = np.flatnonzero(~(lower < upper))
        if bad.size:
            j = int(bad[0])
            raise KeyposeError("Joint limit lower bound must be below upper bound", KeyposeError.VALIDATION,
                               {"joint": self.links[joint_links[j]].joint_name, "lower": lower[j], "upper": upper[j]})
        outside = np.flatnonzero(~((default > lower) & (default < upper)))
        if outside.size:
            j = int(outside[0])
            raise KeyposeError("Default configuration must lie strictly inside joint limits",
                               KeyposeError.VALIDATION,
                               {"joint": self.links[joint_links[j]].joint_name, "value": default[j]})
        if len(self.foot_link_ids) != 4:
            raise KeyposeError("Model must declare exactly 4 feet", KeyposeError.VALIDATION,
                               {"feet": len(self.foot_link_ids)})
        for idx in (*self.foot_link_ids, self.ee_link_id):
            if not 0 <= idx < len(self.links):
                raise KeyposeError("Foot or end-effector link index out of range", KeyposeError.VALIDATION,
                                   {"index": idx})

        chains = []
        for i in range(len(self.links)):
            chain = []
            j = i
            while j >= 0:
                if self.links[j].joint_index >= 0:
                    chain.append(j)
                j = self.links[j].parent
            chains.append(tuple(reversed(chain)))
        arm_chain = [self.links[j].joint_index for j in chains[self.ee_link_id]]
        if arm_chain != list(range(N_LEG_JOINTS, N_JOINTS)):
            raise KeyposeError("End-effector chain must consist of the six arm joints in order",
                               KeyposeError.VALIDATION, {"chain": arm_chain})

        for arr in (lower, upper, default):
            arr.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "default_config", default)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "chains", tuple(chains))
        object.__setattr__(self, "joint_links", tuple(joint_links))
        object.__setattr__(self, "joint_names", tuple(self.links[i].joint_name for i in joint_links))

    @property
    def root(self) -> int:
        return self.order[0]

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise KeyposeError(f"Unknown link '{name}'", KeyposeError.VALIDATION, {"link": name})

    def is_excluded(self, a: int, b: int) -> bool:
        """True when the collision pair (a, b) is skipped: same link, parent/child, or listed exclusion."""
        if a == b:
            return True
        if self.links[a].parent == b or self.links[b].parent == a:
            return True
        return (min(a, b), max(a, b)) in self.collision_exclusions

    def clip(self, q: np.ndarray) -> np.ndarray:
        """Joint vector(s) with every angle moved inside its limits."""
        return np.clip(q, self.lower, self.upper)


def _topological_order(links) -> tuple[int, ...]:
    n = len(links)
    roots = [i for i, link in enumerate(links) if link.parent < 0]
    if len(roots) != 1:
        raise KeyposeError("Kinematic tree must have exactly one root link", KeyposeError.VALIDATION,
                           {"roots": [links[i].name for i in roots]})
    for i, link in enumerate(links):
        if link.parent >= n:
            raise KeyposeError("Parent index out of range", KeyposeError.VALIDATION,
                               {"link": link.name, "parent": link.parent})
        j, steps = i, 0
        while j >= 0:
            j = links[j].parent
            steps += 1
            if steps > n:
                raise KeyposeError("Kinematic tree contains a cycle", KeyposeError.VALIDATION,
                                   {"link": link.name})
    children = [[] for _ in range(n)]
    for i, link in enumerate(links):
        if link.parent >= 0:
            children[link.parent].append(i)
    order, queue = [], [roots[0]]
    while queue:
        i = queue.pop(0)
        order.append(i)
        queue.extend(children[i])
    return tuple(order)


# -- loading ---------------------------------------------------------------------------------

def load_robot(description_file: str | Path | None = None) -> RobotModel:
    """Load a robot description JSON file.

    Args:
        description_file (str | Path, optional): Path to the description. Defaults to the bundled
            approximate ALMA model.
    Returns:
        RobotModel: The validated model.
    Raises:
        KeyposeError: SCHEMA on parse/structure errors (with the field path), VALIDATION on invariant violations.
    """
    try:
        if description_file is None:
            text = resources.files("keypose.data").joinpath(DEFAULT_DESCRIPTION).read_text(encoding="utf-8")
            source = DEFAULT_DESCRIPTION
        else:
            text = Path(description_file).read_text(encoding="utf-8")
            source = str(description_file)
    except OSError as e:
        raise KeyposeError(f"Cannot read robot description: {e}", KeyposeError.IO,
                           {"path": str(description_file)})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise KeyposeError(f"Robot description is not valid JSON: {e}", KeyposeError.SCHEMA, {"path": source})
    model = robot_from_dict(data)
    logger.debug("Loaded robot '%s' from %s (%d links)", model.name, source, len(model.links))
    return model


def robot_from_dict(data: dict) -> RobotModel:
    """Build a RobotModel from a parsed description document."""
    links_raw = _require(data, "links", list)
    joints_raw = _require(data, "joints", list)
    limits_raw = _require(data, "limits", list)
    default_raw = _require(data, "default_config", list)

    names = []
    for i, entry in enumerate(links_raw):
        names.append(_require(entry, "name", str, f"links[{i}]"))
    if len(set(names)) != len(names):
        raise KeyposeError("Link names must be unique", KeyposeError.SCHEMA, {"field": "links"})
    index = {name: i for i, name in enumerate(names)}

    parents = []
    for i, entry in enumerate(links_raw):
        parent = entry.get("parent")
        if parent is None:
            parents.append(-1)
        elif isinstance(parent, int) and not isinstance(parent, bool):
            parents.append(parent)
        elif isinstance(parent, str) and parent in index:
            parents.append(index[parent])
        else:
            raise KeyposeError(f"Unknown parent '{parent}'", KeyposeError.SCHEMA, {"field": f"links[{i}].parent"})

    joint_of = {}
    actuated = 0
    for i, entry in enumerate(joints_raw):
        path = f"joints[{i}]"
        jname = _require(entry, "name", str, path)
        jtype = _require(entry, "type", str, path)
        if jtype not in ("revolute", "fixed"):
            raise KeyposeError(f"Unsupported joint type '{jtype}'", KeyposeError.SCHEMA, {"field": f"{path}.type"})
        child = _require(entry, "child", str, path)
        if child not in index:
            raise KeyposeError(f"Unknown child link '{child}'", KeyposeError.SCHEMA, {"field": f"{path}.child"})
        if child in joint_of:
            raise KeyposeError(f"Link '{child}' has more than one joint", KeyposeError.SCHEMA,
                               {"field": f"{path}.child"})
        origin = _origin_matrix(entry.get("origin", {}), f"{path}.origin")
        if jtype == "revolute":
            axis = _vector(_require(entry, "axis", list, path), 3, f"{path}.axis")
            norm = np.linalg.norm(axis)
            if norm < 1e-12:
                raise KeyposeError("Joint axis must be non-zero", KeyposeError.SCHEMA, {"field": f"{path}.axis"})
            axis = axis / norm
            joint_of[child] = (jname, jtype, origin, axis, actuated)
            actuated += 1
        else:
            joint_of[child] = (jname, jtype, origin, np.zeros(3), -1)

    links = []
    for i, name in enumerate(names):
        if parents[i] < 0:
            links.append(Link(name, -1, np.eye(4), np.zeros(3), "floating"))
            continue
        if name not in joint_of:
            raise KeyposeError(f"Link '{name}' has no joint connecting it to its parent", KeyposeError.SCHEMA,
                               {"field": f"links[{i}]"})
        jname, jtype, origin, axis, jidx = joint_of[name]
        links.append(Link(name, parents[i], origin, axis, jtype, jname, jidx))

    joint_index_by_name = {v[0]: v[4] for v in joint_of.values() if v[4] >= 0}
    lower = np.full(N_JOINTS, np.nan)
    upper = np.full(N_JOINTS, np.nan)
    for i, entry in enumerate(limits_raw):
        path = f"limits[{i}]"
        jname = _require(entry, "joint", str, path)
        if jname not in joint_index_by_name:
            raise KeyposeError(f"Limit for unknown joint '{jname}'", KeyposeError.SCHEMA, {"field": f"{path}.joint"})
        j = joint_index_by_name[jname]
        if j < N_JOINTS:
            lower[j] = _number(_require(entry, "lower", (int, float), path), f"{path}.lower")
            upper[j] = _number(_require(entry, "upper", (int, float), path), f"{path}.upper")
    if actuated == N_JOINTS and np.any(np.isnan(lower)):
        missing = [n for n, j in joint_index_by_name.items() if np.isnan(lower[j])]
        raise KeyposeError("Missing joint limits", KeyposeError.SCHEMA, {"field": "limits", "joints": missing})

    default = _vector(default_raw, len(default_raw), "default_config")

    feet = tuple(_link_ref(index, name, f"feet[{k}]") for k, name in enumerate(_require(data, "feet", list)))
    ee = _link_ref(index, _require(data, "end_effector", str), "end_effector")

    primitives = []
    for i, entry in enumerate(data.get("collision", [])):
        path = f"collision[{i}]"
        link = _link_ref(index, _require(entry, "link", str, path), f"{path}.link")
        shape = _require(entry, "shape", str, path)
        offset = _vector(entry.get("offset", [0.0, 0.0, 0.0]), 3, f"{path}.offset")
        radius = _number(_require(entry, "radius", (int, float), path), f"{path}.radius")
        if radius <= 0:
            raise KeyposeError("Collision radius must be positive", KeyposeError.SCHEMA, {"field": f"{path}.radius"})
        if shape == "capsule":
            axis = _vector(_require(entry, "axis", list, path), 3, f"{path}.axis")
            axis = axis / np.linalg.norm(axis)
            half = _number(_require(entry, "half_length", (int, float), path), f"{path}.half_length")
            primitives.append(CollisionPrimitive(link, shape, offset, axis, radius, half))
        elif shape == "sphere":
            primitives.append(CollisionPrimitive(link, shape, offset, np.array([0.0, 0.0, 1.0]), radius, 0.0))
        else:
            raise KeyposeError(f"Unsupported collision shape '{shape}'", KeyposeError.SCHEMA,
                               {"field": f"{path}.shape"})

    exclusions = set()
    for i, pair in enumerate(data.get("collision_exclusions", [])):
        if not isinstance(pair, list) or len(pair) != 2:
            raise KeyposeError("Exclusions are pairs of link names", KeyposeError.SCHEMA,
                               {"field": f"collision_exclusions[{i}]"})
        a = _link_ref(index, pair[0], f"collision_exclusions[{i}][0]")
        b = _link_ref(index, pair[1], f"collision_exclusions[{i}][1]")
        exclusions.add((min(a, b), max(a, b)))

    return RobotModel(
        name=str(data.get("name", "robot")),
        links=tuple(links),
        lower=lower,
        upper=upper,
        default_config=default,
        foot_link_ids=feet,
        ee_link_id=ee,
        collision_primitives=tuple(primitives),
        collision_exclusions=frozenset(exclusions),
        total_mass=float(data.get("total_mass", 62.0)),
    )


def _require(entry, key, kind, path=""):
    where = f"{path}.{key}" if path else key
    if not isinstance(entry, dict) or key not in entry:
        raise KeyposeError(f"Missing field '{where}'", KeyposeError.SCHEMA, {"field": where})
    value = entry[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise KeyposeError(f"Field '{where}' has the wrong type", KeyposeError.SCHEMA,
                           {"field": where, "type": type(value).__name__})
    return value


def _number(value, path) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise KeyposeError(f"Field '{path}' must be finite", KeyposeError.SCHEMA, {"field": path})
    return value


def _vector(values, length, path) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise KeyposeError(f"Field '{path}' must be numeric", KeyposeError.SCHEMA, {"field": path})
    if arr.shape != (length,) or not np.all(np.isfinite(arr)):
        raise KeyposeError(f"Field '{path}' must hold {length} finite numbers", KeyposeError.SCHEMA,
                           {"field": path})
    return arr


def _origin_matrix(origin, path) -> np.ndarray:
    if not isinstance(origin, dict):
        raise KeyposeError(f"Field '{path}' must be an object", KeyposeError.SCHEMA, {"field": path})
    xyz = _vector(origin.get("xyz", [0.0, 0.0, 0.0]), 3, f"{path}.xyz")
    rpy = _vector(origin.get("rpy", [0.0, 0.0, 0.0]), 3, f"{path}.rpy")
    T = np.eye(4)
    if np.any(rpy != 0.0):
        T[:3, :3] = Rotation.from_euler("ZYX", rpy[::-1]).as_matrix()
    T[:3, 3] = xyz
    return T


def _link_ref(index, name, path) -> int:
    if name not in index:
        raise KeyposeError(f"Unknown link '{name}'", KeyposeError.SCHEMA, {"field": path})
    return index[name]


def model_hash(model: RobotModel) -> str:
    """SHA-256 over the model's geometry, limits and collision data."""
    h = hashlib.sha256(model.name.encode("utf-8"))
    for link in model.links:
        h.update(f"{link.name}|{link.parent}|{link.joint_type}|{link.joint_index}".encode("utf-8"))
        h.update(np.ascontiguousarray(link.origin).tobytes())
        h.update(np.ascontiguousarray(link.axis).tobytes())
    for arr in (model.lower, model.upper, model.default_config):
        h.update(np.ascontiguousarray(arr).tobytes())
    for prim in model.collision_primitives:
        h.update(f"{prim.link}|{prim.shape}|{prim.radius!r}|{prim.half_length!r}".encode("utf-8"))
        h.update(np.ascontiguousarray(prim.offset).tobytes())
        h.update(np.ascontiguousarray(prim.axis).tobytes())
    h.update(repr(sorted(model.collision_exclusions)).encode("utf-8"))
    return h.hexdigest()


# -- kinematics ------------------------------------------------------------------------------

def _axis_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Homogeneous rotations about a fixed unit axis for a batch of angles (Rodrigues)."""
    angle = np.asarray(angle, dtype=float)
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    T = np.zeros(angle.shape + (4, 4))
    T[..., :3, :3] = np.eye(3) + s * K + (1.0 - c) * (K @ K)
    T[..., 3, 3] = 1.0
    return T


def _base_matrix(base) -> np.ndarray:
    if base is None:
        return np.eye(4)
    if isinstance(base, SE3Pose):
        return base.matrix()
    return np.asarray(base, dtype=float)


def link_transforms(model: RobotModel, q, base=None) -> np.ndarray:
    """World transforms of every link.

    Args:
        model (RobotModel): The robot.
        q (array-like): Joint angles, shape (..., 18); leading dimensions are batch dimensions.
        base (SE3Pose | ndarray, optional): Base pose, or 4x4 matrices broadcastable to the batch.
    Returns:
        ndarray: Shape (..., n_links, 4, 4).
    """
    q = np.asarray(q, dtype=float)
    batch = q.shape[:-1]
    base_T = np.broadcast_to(_base_matrix(base), batch + (4, 4))
    T = np.empty(batch + (len(model.links), 4, 4))
    for i in model.order:
        link = model.links[i]
        if link.parent < 0:
            T[..., i, :, :] = base_T
            continue
        M = T[..., link.parent, :, :] @ link.origin
        if link.joint_index >= 0:
            M = M @ _axis_rotation(link.axis, q[..., link.joint_index])
        T[..., i, :, :] = M
    return T


def forward_kinematics(model: RobotModel, base: SE3Pose, q) -> list[SE3Pose]:
    """Pose of every link for a single configuration; the root pose is ``base`` itself."""
    q = joint_vector(q)
    T = link_transforms(model, q, base)
    poses = [SE3Pose.from_matrix(T[i]) for i in range(len(model.links))]
    poses[model.root] = base
    return poses


def ee_pose_in_base(model: RobotModel, q) -> SE3Pose:
    """End-effector pose expressed in the base frame."""
    q = joint_vector(q)
    T = link_transforms(model, q)
    return SE3Pose.from_matrix(T[model.ee_link_id])


def foot_positions(model: RobotModel, base, q) -> np.ndarray:
    """World positions of the four feet, shape (4, 3)."""
    T = link_transforms(model, q, base)
    return T[..., list(model.foot_link_ids), :3, 3]


def point_jacobian(model: RobotModel, transforms: np.ndarray, link_id: int, point: np.ndarray) -> np.ndarray:
    """Analytic position Jacobian of a point rigidly attached to ``link_id``.

    Columns are ordered: base translation (3), base rotation as a world-frame rotation vector about the
    base origin (3), then the 18 joints.

    Args:
        transforms (ndarray): Output of ``link_transforms`` for a single configuration, (n_links, 4, 4).
        point (ndarray): World position of the point.
    Returns:
        ndarray: (3, 24) Jacobian.
    """
    point = np.asarray(point, dtype=float)
    J = np.zeros((3, 6 + N_JOINTS))
    J[:, :3] = np.eye(3)
    r = point - transforms[model.root][:3, 3]
    J[:, 3:6] = -_skew(r)
    for j in model.chains[link_id]:
        link = model.links[j]
        axis_world = transforms[j][:3, :3] @ link.axis
        J[:, 6 + link.joint_index] = np.cross(axis_world, point - transforms[j][:3, 3])
    return J


def ee_position_jacobian(model: RobotModel, q, base=None) -> np.ndarray:
    """(3, 18) Jacobian of the end-effector position with respect to the joints."""
    T = link_transforms(model, joint_vector(q), base)
    return point_jacobian(model, T, model.ee_link_id, T[model.ee_link_id][:3, 3])[:, 6:]


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


# -- leg inverse kinematics --------------------------------------------------------------------

def leg_joint_slice(leg: int) -> slice:
    return slice(3 * leg, 3 * leg + 3)


def _leg_geometry(model: RobotModel, leg: int):
    hip, thigh, shank = (model.joint_links[j] for j in range(3 * leg, 3 * leg + 3))
    foot = model.foot_link_ids[leg]
    axes = [model.links[i].axis for i in (hip, thigh, shank)]
    expected = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0])]
    haa = model.links[hip].origin
    hfe = model.links[thigh].origin[:3, 3]
    kfe = model.links[shank].origin[:3, 3]
    foot_off = model.links[foot].origin[:3, 3]
    supported = (
        model.links[hip].parent == model.root
        and model.links[foot].parent == shank
        and all(np.allclose(a, e) for a, e in zip(axes, expected))
        and all(np.allclose(model.links[i].origin[:3, :3], np.eye(3)) for i in (hip, thigh, shank, foot))
        and abs(hfe[2]) < 1e-12 and abs(kfe[0]) < 1e-12
        and np.allclose(foot_off[:2], 0.0)
    )
    if not supported:
        raise KeyposeError("Leg geometry does not match the HAA(x)/HFE(y)/KFE(y) layout", KeyposeError.VALIDATION,
                           {"leg": LEG_NAMES[leg] if leg < 4 else leg})
    return haa[:3, 3], hfe[0], hfe[1] + kfe[1], -kfe[2], -foot_off[2]


def solve_leg_ik(model: RobotModel, leg: int, foot_in_base: np.ndarray, knee_sign: float) -> np.ndarray | None:
    """Analytic 3-DoF inverse kinematics of one leg.

    Args:
        leg (int): Leg index in LF, RF, LH, RH order.
        foot_in_base (ndarray): Target foot position in the base frame.
        knee_sign (float): Sign of the knee angle (branch selection).
    Returns:
        ndarray | None: (HAA, HFE, KFE) angles, or None when the target is out of reach.
    """
    hip_origin, hx, d, l1, l2 = _leg_geometry(model, leg)
    px, py, pz = np.asarray(foot_in_base, dtype=float) - hip_origin
    r2 = py * py + pz * pz
    if r2 < d * d:
        return None
    sz = -np.sqrt(r2 - d * d)
    haa = np.arctan2(pz, py) - np.arctan2(sz, d)
    sx = px - hx
    c3 = (sx * sx + sz * sz - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if abs(c3) > 1.0:
        return None
    kfe = np.copysign(np.arccos(c3), knee_sign)
    hfe = np.arctan2(-sx, -sz) - np.arctan2(l2 * np.sin(kfe), l1 + l2 * np.cos(kfe))
    return np.array([_wrap(haa), _wrap(hfe), kfe])


def _wrap(angle: float) -> float:
    return float(np.pi - np.mod(np.pi - angle, 2.0 * np.pi))
