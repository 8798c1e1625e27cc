"""Rigid-body poses and revolute kinematic chains.

Poses are position (3,) plus unit quaternion (4,) in (w, x, y, z) order,
float64. Twists and pose errors are 6-vectors with the angular part first,
expressed in the world frame. Robot models are trees of revolute joints
with fixed frames (tool flange, palm, fingertips, wrist camera) attached;
the hot chain math lives in :mod:`deskgrasp.kernels`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels as K


# ---------------------------------------------------------------------------
# Quaternion helpers
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(q))
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    return q / n

def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return K.quat_mul(np.asarray(a, dtype=np.float64),
                      np.asarray(b, dtype=np.float64))

def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    half = 0.5 * angle
    return np.array([np.cos(half), *(a * np.sin(half))])

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])

def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)

def rotation_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a unit quaternion, angle in [0, pi].

    At exactly pi the axis sign is ambiguous; the component with the
    largest magnitude is made positive so the result is deterministic.
    """
    if q[0] < 0.0:
        q = -q
    vn = float(np.linalg.norm(q[1:]))
    angle = 2.0 * np.arctan2(vn, q[0])
    if vn < 1e-12:
        return 2.0 * q[1:]
    axis = q[1:] / vn
    if angle > np.pi - 1e-9:
        k = int(np.argmax(np.abs(axis)))
        if axis[k] < 0.0:
            axis = -axis
        angle = np.pi
    return axis * angle

def quat_slerp(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    d = float(a @ b)
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - 1e-10:
        return quat_normalize(a + s * (b - a))
    th = np.arccos(min(d, 1.0))
    return quat_normalize((np.sin((1.0 - s) * th) * a + np.sin(s * th) * b) / np.sin(th))


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------

@dataclass
class Pose:
    """Position + orientation of a frame, world-from-frame convention."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.quaternion = quat_normalize(
            np.asarray(self.quaternion, dtype=np.float64).reshape(4))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        return Pose(m[:3, 3].copy(), matrix_to_quat(m[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.quaternion)
        m[:3, 3] = self.position
        return m

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.quaternion.copy())


def compose(a: Pose, b: Pose) -> Pose:
    """Pose of b's frame expressed through a: a then b."""
    return Pose(a.position + K.quat_rotate(a.quaternion, b.position),
                K.quat_mul(a.quaternion, b.quaternion))

def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.quaternion)
    return Pose(-K.quat_rotate(qc, p.position), qc)

def transform_point(p: Pose, point: np.ndarray) -> np.ndarray:
    return p.position + K.quat_rotate(p.quaternion, np.asarray(point, dtype=np.float64))

def pose_error(current: Pose, target: Pose) -> np.ndarray:
    """World-frame twist-like error taking current toward target.

    Rows 0..2: rotation vector of target * current^-1 (world frame);
    rows 3..5: target position minus current position.
    """
    e = np.zeros(6)
    e[:3] = rotation_log(K.quat_mul(target.quaternion, quat_conj(current.quaternion)))
    e[3:] = target.position - current.position
    return e

def pose_interp(a: Pose, b: Pose, s: float) -> Pose:
    return Pose(a.position + s * (b.position - a.position),
                quat_slerp(a.quaternion, b.quaternion, s))


# ---------------------------------------------------------------------------
# Robot models
# ---------------------------------------------------------------------------

@dataclass
class Joint:
    name: str
    parent: int              # parent joint index, -1 for the base
    origin: Pose             # fixed transform from parent frame at q = 0
    axis: np.ndarray         # unit rotation axis, local frame
    lower: float
    upper: float
    vmax: float              # rad/s

@dataclass
class Frame:
    name: str
    parent: int              # joint index carrying this frame, -1 = world
    origin: Pose

@dataclass
class Finger:
    name: str
    tip_frame: str
    joints: List[int]        # model joint indices, proximal to distal
    close_dir: np.ndarray    # per-joint closing scale (0 = not a curl joint)


@dataclass
class RobotModel:
    name: str
    joints: List[Joint]
    frames: List[Frame]
    fingers: List[Finger]
    arm_joints: List[int]
    hand_joints: List[int]
    ee_frame: str
    palm_frame: str
    wrist_camera: Optional[str]
    neutral: np.ndarray
    _compiled: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.neutral = np.asarray(self.neutral, dtype=np.float64).reshape(self.n_dof)
        names = [j.name for j in self.joints] + [f.name for f in self.frames]
        if len(set(names)) != len(names):
            raise ValueError("duplicate joint/frame names")
        for i, j in enumerate(self.joints):
            if j.parent >= i:
                raise ValueError(f"joint {j.name}: parent must precede child")
            n = np.linalg.norm(j.axis)
            if n < 1e-9:
                raise ValueError(f"joint {j.name}: zero axis")
            j.axis = np.asarray(j.axis, dtype=np.float64) / n
            if not (j.lower < j.upper):
                raise ValueError(f"joint {j.name}: lower must be < upper")
            if j.vmax <= 0:
                raise ValueError(f"joint {j.name}: vmax must be positive")
        if sorted(self.arm_joints + self.hand_joints) != list(range(self.n_dof)):
            raise ValueError("arm_joints + hand_joints must partition all joints")
        for fr in (self.ee_frame, self.palm_frame):
            self.frame_index(fr)
        for fg in self.fingers:
            self.frame_index(fg.tip_frame)
            fg.close_dir = np.asarray(fg.close_dir, dtype=np.float64)

    @property
    def n_dof(self) -> int:
        return len(self.joints)

    def joint_limits(self):
        lo = np.array([j.lower for j in self.joints])
        hi = np.array([j.upper for j in self.joints])
        return lo, hi

    def velocity_limits(self) -> np.ndarray:
        return np.array([j.vmax for j in self.joints])

    def frame_index(self, name: str) -> int:
        """Index into the combined frame list: joints first, then fixed frames."""
        c = self.compiled()
        try:
            return c["frame_ids"][name]
        except KeyError:
            raise KeyError(f"unknown frame {name!r} on robot {self.name!r}") from None

    def frame_names(self) -> List[str]:
        return list(self.compiled()["frame_ids"].keys())

    def compiled(self) -> dict:
        if self._compiled is None:
            nj = len(self.joints)
            c = {
                "parent": np.array([j.parent for j in self.joints], dtype=np.int64),
                "org_pos": np.stack([j.origin.position for j in self.joints]),
                "org_quat": np.stack([j.origin.quaternion for j in self.joints]),
                "axis": np.stack([j.axis for j in self.joints]),
                "fparent": np.array([f.parent for f in self.frames], dtype=np.int64),
                "fpos": np.stack([f.origin.position for f in self.frames]),
                "fquat": np.stack([f.origin.quaternion for f in self.frames]),
            }
            ids = {j.name: i for i, j in enumerate(self.joints)}
            for k, f in enumerate(self.frames):
                ids[f.name] = nj + k
            c["frame_ids"] = ids
            # ancestor mask per combined frame: joints on the path to the base
            masks = np.zeros((nj + len(self.frames), nj), dtype=np.uint8)
            for i in range(nj):
                a = i
                while a >= 0:
                    masks[i, a] = 1
                    a = self.joints[a].parent
            for k, f in enumerate(self.frames):
                a = f.parent
                while a >= 0:
                    masks[nj + k, a] = 1
                    a = self.joints[a].parent
            c["ancestor"] = masks
            self._compiled = c
        return self._compiled

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joints": [{
                "name": j.name, "parent": j.parent,
                "origin_position": j.origin.position.tolist(),
                "origin_quaternion": j.origin.quaternion.tolist(),
                "axis": j.axis.tolist(),
                "lower": j.lower, "upper": j.upper, "vmax": j.vmax,
            } for j in self.joints],
            "frames": [{
                "name": f.name, "parent": f.parent,
                "origin_position": f.origin.position.tolist(),
                "origin_quaternion": f.origin.quaternion.tolist(),
            } for f in self.frames],
            "fingers": [{
                "name": f.name, "tip_frame": f.tip_frame, "joints": list(f.joints),
                "close_dir": f.close_dir.tolist(),
            } for f in self.fingers],
            "arm_joints": list(self.arm_joints),
            "hand_joints": list(self.hand_joints),
            "ee_frame": self.ee_frame,
            "palm_frame": self.palm_frame,
            "wrist_camera": self.wrist_camera,
            "neutral": self.neutral.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "RobotModel":
        return RobotModel(
            name=d["name"],
            joints=[Joint(j["name"], j["parent"],
                          Pose(np.array(j["origin_position"]), np.array(j["origin_quaternion"])),
                          np.array(j["axis"]), j["lower"], j["upper"], j["vmax"])
                    for j in d["joints"]],
            frames=[Frame(f["name"], f["parent"],
                          Pose(np.array(f["origin_position"]), np.array(f["origin_quaternion"])))
                    for f in d["frames"]],
            fingers=[Finger(f["name"], f["tip_frame"], list(f["joints"]),
                            np.array(f["close_dir"]))
                     for f in d["fingers"]],
            arm_joints=list(d["arm_joints"]),
            hand_joints=list(d["hand_joints"]),
            ee_frame=d["ee_frame"],
            palm_frame=d["palm_frame"],
            wrist_camera=d.get("wrist_camera"),
            neutral=np.array(d["neutral"]),
        )


# ---------------------------------------------------------------------------
# FK / Jacobian
# ---------------------------------------------------------------------------

def fk(model: RobotModel, q: np.ndarray) -> Dict[str, Pose]:
    """World pose of every joint and fixed frame at configuration q."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != model.n_dof:
        raise ValueError(f"expected {model.n_dof} joint values, got {q.shape[0]}")
    c = model.compiled()
    jpos, jquat = K.fk_chain(c["parent"], c["org_pos"], c["org_quat"], c["axis"], q)
    fpos, fquat = K.frame_world(jpos, jquat, c["fparent"], c["fpos"], c["fquat"])
    out: Dict[str, Pose] = {}
    nj = len(model.joints)
    for name, idx in c["frame_ids"].items():
        if idx < nj:
            out[name] = Pose(jpos[idx].copy(), jquat[idx].copy())
        else:
            out[name] = Pose(fpos[idx - nj].copy(), fquat[idx - nj].copy())
    return out


def frame_pose(model: RobotModel, q: np.ndarray, frame: str) -> Pose:
    """World pose of a single named frame (full-chain FK under the hood)."""
    return fk(model, q)[frame]


def jacobian(model: RobotModel, q: np.ndarray, frame: str) -> np.ndarray:
    """6 x n geometric world-frame Jacobian of a frame; angular rows first."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != model.n_dof:
        raise ValueError(f"expected {model.n_dof} joint values, got {q.shape[0]}")
    idx = model.frame_index(frame)
    c = model.compiled()
    jpos, jquat = K.fk_chain(c["parent"], c["org_pos"], c["org_quat"], c["axis"], q)
    nj = len(model.joints)
    if idx < nj:
        tpos = jpos[idx]
    else:
        fpos, _ = K.frame_world(jpos, jquat, c["fparent"], c["fpos"], c["fquat"])
        tpos = fpos[idx - nj]
    return K.jacobian_chain(jpos, jquat, c["axis"], c["ancestor"][idx], tpos)


def load_robot(name_or_path: str) -> RobotModel:
    """Built-in model by name ('xhand12', 'alt6') or a JSON model file."""
    from . import robots
    if name_or_path in robots.BUILTIN:
        return robots.BUILTIN[name_or_path]()
    p = Path(name_or_path)
    if not p.exists():
        raise FileNotFoundError(f"no built-in robot or model file {name_or_path!r}")
    return RobotModel.from_dict(json.loads(p.read_text()))
