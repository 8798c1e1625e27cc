"""Deterministic desk-top grasping world.

Quasi-static: objects rest on the table, follow the palm while attached,
and settle back when released; there is no free-flight dynamics. Fingertip
contacts are penalty springs (F = stiffness * penetration) rendered onto
10x12 taxel grids as Gaussian patches, with velocity-based shear capped by
friction. Depth images are ray-cast against the object primitives (the
robot body is not rendered).

All stepping is pure: ``step`` returns a new WorldState and never mutates
its input, so worlds can be cloned, replayed, and compared bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels as K
from .kinematics import (Pose, RobotModel, compose, fk, inverse,
                         matrix_to_quat, quat_from_axis_angle, quat_mul,
                         quat_to_matrix)
from .robots import xhand12

GRAVITY = 9.81
TAXEL_ROWS = 10
TAXEL_COLS = 12
TAXEL_PITCH = 0.002          # m between taxel centers
TAXEL_FORCE_CAP = 50.0       # N per taxel entry, sensor saturation
ATTACH_FORCE = 0.5           # N per fingertip to engage
DETACH_FORCE = 0.2           # N total, sustained, to release
DETACH_STEPS = 10            # consecutive inner steps below DETACH_FORCE
OPPOSING_DOT = -0.5          # contact-normal dot for "opposing sides"
ATTACHABLE_MASS = 2.0        # kg; heavier bodies (the table) never attach
SLIP_RATE = 0.02             # m/s downward drift under grip-force deficit
MAX_SLIP = 0.06              # m of drift before the grasp lets go outright

SHAPE_IDS = {"sphere": K.SHAPE_SPHERE, "box": K.SHAPE_BOX,
              "cylinder": K.SHAPE_CYLINDER}


@dataclass
class ObjectSpec:
    """One primitive body: sphere (r), box (half extents), cylinder (r, hh)."""
    id: str
    shape: str
    dimensions: np.ndarray
    mass: float = 0.1
    friction: float = 0.8
    stiffness: float = 5000.0

    def __post_init__(self):
        if self.shape not in SHAPE_IDS:
            raise ValueError(f"unknown shape {self.shape!r}")
        self.dimensions = np.asarray(self.dimensions, dtype=np.float64)
        need = {"sphere": 1, "box": 3, "cylinder": 2}[self.shape]
        if self.dimensions.shape != (need,) or np.any(self.dimensions <= 0):
            raise ValueError(f"{self.shape} needs {need} positive dimensions")
        if self.mass <= 0 or self.stiffness <= 0:
            raise ValueError("mass and stiffness must be positive")
        if not 0.0 <= self.friction <= 2.0:
            raise ValueError("friction must be within [0, 2]")

    @property
    def kernel_params(self) -> np.ndarray:
        p = np.zeros(3)
        p[: self.dimensions.shape[0]] = self.dimensions
        return p

    def rest_height(self, upright: bool = True) -> float:
        if self.shape == "sphere":
            return float(self.dimensions[0])
        if self.shape == "box":
            return float(self.dimensions[2] if upright else
                         self.dimensions.min())
        return float(self.dimensions[1] if upright else self.dimensions[0])

    def to_dict(self) -> dict:
        return {"id": self.id, "shape": self.shape,
                "dimensions": self.dimensions.tolist(), "mass": self.mass,
                "friction": self.friction, "stiffness": self.stiffness}

    @staticmethod
    def from_dict(d: dict) -> "ObjectSpec":
        return ObjectSpec(d["id"], d["shape"], np.array(d["dimensions"]),
                          d["mass"], d["friction"], d["stiffness"])


@dataclass
class SimConfig:
    inner_rate: int = 450            # Hz; every control rate must divide it
    operator_rate: int = 90
    hand_rate: int = 50              # 30 or 50
    log_rate: int = 30
    patch_sigma: float = 1.5         # taxels
    tip_radius: float = 0.012        # m fingertip contact sphere
    shear_gain: float = 10.0         # N*s/m, capped at friction * normal
    camera_focal: float = 22.0       # px for the 32x32 depth images
    camera_far: float = 2.0          # m
    cameras: Dict[str, Pose] = field(default_factory=dict)

    def __post_init__(self):
        if self.hand_rate not in (30, 50):
            raise ValueError("hand rate must be 30 or 50 Hz")
        for rate in (self.operator_rate, self.hand_rate, self.log_rate):
            if self.inner_rate % rate != 0:
                raise ValueError(
                    f"control rate {rate} Hz must divide the inner rate "
                    f"{self.inner_rate} Hz")
        if not self.cameras:
            self.cameras = default_cameras()

    @property
    def inner_dt(self) -> float:
        return 1.0 / self.inner_rate


def default_cameras() -> Dict[str, Pose]:
    """Fixed front and overhead views of the workspace center."""
    return {
        "front_cam": look_at(np.array([0.50, 0.0, 0.35]),
                             np.array([0.15, 0.0, 0.0])),
        "top_cam": look_at(np.array([0.18, 0.0, 0.60]),
                           np.array([0.18, 0.0, 0.0])),
    }


def look_at(eye: np.ndarray, target: np.ndarray) -> Pose:
    """Camera pose with +z toward the target, x right, y down."""
    z = target - eye
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(-up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(eye.astype(np.float64), matrix_to_quat(np.column_stack([x, y, z])))


@dataclass
class Attachment:
    object_id: str
    offset: Pose                     # palm-frame pose of the object
    low_force_steps: int = 0
    attached_steps: int = 0
    slip: float = 0.0                # accumulated downward drift, m


@dataclass
class WorldState:
    model: RobotModel
    config: SimConfig
    specs: List[ObjectSpec]
    opos: np.ndarray                 # (n, 3)
    oquat: np.ndarray                # (n, 4)
    ovel: np.ndarray                 # (n, 3) finite-difference velocity
    q: np.ndarray                    # full robot configuration
    spawn_z: np.ndarray              # (n,) center height at spawn
    time: float = 0.0
    seed: int = 0
    attachment: Optional[Attachment] = None
    lifted_steps: int = 0            # consecutive inner steps attached+lifted
    prev_tips: Optional[np.ndarray] = None

    def index_of(self, object_id: str) -> int:
        for i, s in enumerate(self.specs):
            if s.id == object_id:
                return i
        raise KeyError(object_id)

    def object_pose(self, object_id: str) -> Pose:
        i = self.index_of(object_id)
        return Pose(self.opos[i].copy(), self.oquat[i].copy())

    def clone(self) -> "WorldState":
        return replace(
            self, opos=self.opos.copy(), oquat=self.oquat.copy(),
            ovel=self.ovel.copy(), q=self.q.copy(),
            spawn_z=self.spawn_z.copy(),
            attachment=None if self.attachment is None else Attachment(
                self.attachment.object_id, self.attachment.offset.copy(),
                self.attachment.low_force_steps,
                self.attachment.attached_steps, self.attachment.slip),
            prev_tips=None if self.prev_tips is None else self.prev_tips.copy())

    # -- kernel-facing arrays ------------------------------------------------

    def _kernel_arrays(self):
        n = len(self.specs)
        otypes = np.array([SHAPE_IDS[s.shape] for s in self.specs],
                          dtype=np.int64)
        oparams = np.stack([s.kernel_params for s in self.specs]) if n else \
            np.zeros((0, 3))
        return otypes, oparams


def tip_frames(model: RobotModel) -> List[str]:
    return [f.tip_frame for f in model.fingers]


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def step(world: WorldState, arm_cmd: np.ndarray, hand_cmd: np.ndarray,
         dt: float) -> Tuple[WorldState, np.ndarray]:
    """One inner physics step toward the commanded joint targets.

    Returns (next world, tactile frame (fingers, 10, 12, 3)). Commands are
    absolute joint targets for the model's arm and hand joints.
    """
    m = world.model
    cfg = world.config
    if abs(dt - cfg.inner_dt) > 1e-12:
        raise ValueError(f"dt must be the inner dt {cfg.inner_dt}")
    arm_cmd = np.asarray(arm_cmd, dtype=np.float64).reshape(-1)
    hand_cmd = np.asarray(hand_cmd, dtype=np.float64).reshape(-1)
    if arm_cmd.shape[0] != len(m.arm_joints) \
            or hand_cmd.shape[0] != len(m.hand_joints):
        raise ValueError("command length does not match the joint split")
    if not (np.all(np.isfinite(arm_cmd)) and np.all(np.isfinite(hand_cmd))):
        raise ValueError("non-finite joint command rejected")

    w = world.clone()
    lo, hi = m.joint_limits()
    vmax = m.velocity_limits()
    target = w.q.copy()
    target[m.arm_joints] = arm_cmd
    target[m.hand_joints] = hand_cmd
    target = np.clip(target, lo, hi)
    w.q = w.q + np.clip(target - w.q, -vmax * dt, vmax * dt)

    poses = fk(m, w.q)
    palm = poses[m.palm_frame]
    tips = np.stack([poses[f].position for f in tip_frames(m)])
    tip_quats = np.stack([poses[f].quaternion for f in tip_frames(m)])

    prev_opos = w.opos.copy()

    # attached object follows the palm; grip-force deficit makes it slip
    if w.attachment is not None:
        att = w.attachment
        i = w.index_of(att.object_id)
        pose = compose(palm, att.offset)
        w.opos[i] = pose.position
        w.oquat[i] = pose.quaternion

    otypes, oparams = w._kernel_arrays()
    pen, normal, objid, cpoint = K.tip_contacts(
        tips, cfg.tip_radius, otypes, oparams, w.opos, w.oquat)

    tip_vel = np.zeros_like(tips) if w.prev_tips is None else \
        (tips - w.prev_tips) / dt

    frame = np.zeros((len(tips), TAXEL_ROWS, TAXEL_COLS, 3))
    fz = np.zeros(len(tips))
    for i in range(len(tips)):
        o = int(objid[i])
        if o < 0 or pen[i] <= 0.0:
            continue
        spec = w.specs[o]
        fn = spec.stiffness * float(pen[i])
        n = normal[i]
        ovel = (w.opos[o] - prev_opos[o]) / dt
        vrel = tip_vel[i] - ovel
        vt = vrel - (vrel @ n) * n
        shear_w = -cfg.shear_gain * vt
        smag = float(np.linalg.norm(shear_w))
        cap = spec.friction * fn
        if smag > cap and smag > 0.0:
            shear_w *= cap / smag
        # express contact location and shear in the tip pad frame
        R = quat_to_matrix(tip_quats[i])
        local = R.T @ (cpoint[i] - tips[i])
        sx, sy = float(R[:, 0] @ shear_w), float(R[:, 1] @ shear_w)
        rc = np.clip(4.5 + local[1] / TAXEL_PITCH, 0.0, TAXEL_ROWS - 1.0)
        cc = np.clip(5.5 + local[0] / TAXEL_PITCH, 0.0, TAXEL_COLS - 1.0)
        patch = K.tactile_patch(fn, sx, sy, float(rc), float(cc),
                                cfg.patch_sigma, TAXEL_ROWS, TAXEL_COLS)
        # sensor saturation: rescale any taxel whose force vector tops 50 N
        norms = np.linalg.norm(patch, axis=-1, keepdims=True)
        over = norms > TAXEL_FORCE_CAP
        if np.any(over):
            patch = np.where(over, patch * (TAXEL_FORCE_CAP / norms), patch)
        frame[i] = patch
        fz[i] = fn

    _update_attachment(w, palm, pen, normal, objid, fz)

    # grasp-success bookkeeping: consecutive steps attached and lifted
    if w.attachment is not None:
        i = w.index_of(w.attachment.object_id)
        w.attachment.attached_steps += 1
        if w.opos[i, 2] - w.spawn_z[i] >= 0.10:
            w.lifted_steps += 1
        else:
            w.lifted_steps = 0
    else:
        w.lifted_steps = 0

    w.ovel = (w.opos - prev_opos) / dt
    w.prev_tips = tips
    w.time = world.time + dt
    return w, frame


def _update_attachment(w: WorldState, palm: Pose, pen, normal, objid, fz):
    cfg = w.config
    if w.attachment is not None:
        att = w.attachment
        i = w.index_of(att.object_id)
        spec = w.specs[i]
        on_obj = objid == i
        total = float(fz[on_obj].sum())
        if total < DETACH_FORCE:
            att.low_force_steps += 1
        else:
            att.low_force_steps = 0
        required = spec.mass * GRAVITY / max(spec.friction, 1e-6)
        if total < required:
            # grip too weak for the load: object slides down in the palm
            drop = SLIP_RATE * cfg.inner_dt
            pose = Pose(w.opos[i] - [0.0, 0.0, drop], w.oquat[i])
            w.opos[i] = pose.position
            att.offset = compose(inverse(palm), pose)
            att.slip += drop
        if att.low_force_steps >= DETACH_STEPS or att.slip >= MAX_SLIP:
            _settle(w, i)
            w.attachment = None
        return

    # engage: two opposing fingertips on one attachable object, firm grip
    for i, spec in enumerate(w.specs):
        if spec.mass > ATTACHABLE_MASS:
            continue
        idx = [k for k in range(len(fz))
               if objid[k] == i and fz[k] >= ATTACH_FORCE]
        if len(idx) < 2:
            continue
        opposing = any(
            float(normal[a] @ normal[b]) < OPPOSING_DOT
            for ai, a in enumerate(idx) for b in idx[ai + 1:])
        if opposing:
            obj = Pose(w.opos[i].copy(), w.oquat[i].copy())
            w.attachment = Attachment(spec.id, compose(inverse(palm), obj))
            return


def _settle(w: WorldState, i: int):
    """Drop a released object straight down onto the table, toppling it
    when it is released far from upright."""
    spec = w.specs[i]
    up_world = K.quat_rotate(w.oquat[i], np.array([0.0, 0.0, 1.0]))
    upright = float(up_world[2]) > 0.7 or spec.shape == "sphere"
    if not upright and spec.shape != "sphere":
        # lie on the side: rotate the body z-axis to horizontal, keeping yaw
        yaw = np.arctan2(up_world[1], up_world[0])
        w.oquat[i] = quat_mul(
            quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), float(yaw)),
            quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), np.pi / 2))
    w.opos[i, 2] = spec.rest_height(upright)


# ---------------------------------------------------------------------------
# Depth rendering
# ---------------------------------------------------------------------------

def render_depth(world: WorldState, camera: str,
                 occlude: bool = False) -> np.ndarray:
    """32x32 float depth image (meters along the ray, far plane fill)."""
    cfg = world.config
    if camera in cfg.cameras:
        cam = cfg.cameras[camera]
    else:
        cam = fk(world.model, world.q)[camera]  # raises KeyError if unknown
    if occlude:
        return np.full((32, 32), cfg.camera_far)
    otypes, oparams = world._kernel_arrays()
    return K.raycast_depth(cam.position, quat_to_matrix(cam.quaternion),
                           cfg.camera_focal, 32, 32,
                           otypes, oparams, world.opos, world.oquat,
                           cfg.camera_far)


# ---------------------------------------------------------------------------
# Outcome evaluation
# ---------------------------------------------------------------------------

@dataclass
class SuccessCriteria:
    lift_height: float = 0.10        # m above spawn height
    hold_ticks: int = 30             # consecutive logging ticks


def grasp_success(world: WorldState,
                  criteria: SuccessCriteria = SuccessCriteria()) -> bool:
    if world.attachment is None:
        return False
    i = world.index_of(world.attachment.object_id)
    if world.opos[i, 2] - world.spawn_z[i] < criteria.lift_height:
        return False
    needed = criteria.hold_ticks * (world.config.inner_rate //
                                    world.config.log_rate)
    return world.lifted_steps >= needed


# ---------------------------------------------------------------------------
# Scene construction
# ---------------------------------------------------------------------------

WORKSPACE_CENTER = np.array([0.18, 0.0])
TABLE = ObjectSpec("table", "box", np.array([0.6, 0.6, 0.01]),
                   mass=50.0, friction=1.0, stiffness=20000.0)


def object_catalog() -> List[ObjectSpec]:
    """Twenty graspable desk objects (max diameter 0.055 m)."""
    out: List[ObjectSpec] = []
    for i, r in enumerate([0.020, 0.0225, 0.025, 0.0275]):
        out.append(ObjectSpec(f"sphere{i}", "sphere", np.array([r]),
                              mass=0.05 + 0.5 * r))
    for i, (hx, hy, hz) in enumerate([
            (0.015, 0.015, 0.025), (0.020, 0.020, 0.020),
            (0.0125, 0.025, 0.030), (0.0275, 0.0175, 0.015),
            (0.0225, 0.0225, 0.035), (0.015, 0.0275, 0.0225),
            (0.0175, 0.0175, 0.045), (0.025, 0.0125, 0.020)]):
        out.append(ObjectSpec(f"box{i}", "box", np.array([hx, hy, hz]),
                              mass=0.06 + 2.0 * hx * hy * hz / 1e-4))
    for i, (r, hh) in enumerate([
            (0.0175, 0.030), (0.020, 0.025), (0.0225, 0.040),
            (0.025, 0.020), (0.0175, 0.045), (0.020, 0.035),
            (0.0275, 0.0275), (0.0225, 0.020)]):
        out.append(ObjectSpec(f"cyl{i}", "cylinder", np.array([r, hh]),
                              mass=0.05 + 1.5 * r * hh / 1e-3 * 0.05))
    return out


def spawn_scene(seed: int, workspace: Tuple[float, float] = (0.40, 0.40),
                n_objects: int = 1, orientation_mode: str = "random",
                catalog: Optional[Sequence[ObjectSpec]] = None,
                model: Optional[RobotModel] = None,
                config: Optional[SimConfig] = None) -> WorldState:
    """Seeded reproducible scene on the desk.

    orientation_mode 'random' scatters objects with pairwise clearance;
    'grid3x3-upright-inverted' places them on a 3x3 grid with seeded
    upright or inverted orientation.
    """
    if n_objects < 1:
        raise ValueError("need at least one object")
    rng = np.random.default_rng(seed)
    cat = list(catalog if catalog is not None else object_catalog())
    model = model or xhand12()
    config = config or SimConfig()
    wx, wy = workspace

    picks = [cat[int(rng.integers(len(cat)))] for _ in range(n_objects)]
    positions = []
    yaws = []
    inverted = []
    if orientation_mode == "grid3x3-upright-inverted":
        if n_objects > 9:
            raise ValueError("grid mode holds at most 9 objects")
        cells = rng.permutation(9)[:n_objects]
        pitch = wx / 3.0
        for c in cells:
            r, col = divmod(int(c), 3)
            positions.append(WORKSPACE_CENTER
                             + [(col - 1) * pitch, (r - 1) * pitch])
            yaws.append(float(rng.uniform(-np.pi, np.pi)))
            inverted.append(bool(rng.integers(2)))
    elif orientation_mode == "random":
        for k in range(n_objects):
            for attempt in range(200):
                p = WORKSPACE_CENTER + rng.uniform(
                    [-wx / 2, -wy / 2], [wx / 2, wy / 2])
                if all(np.linalg.norm(p - p2) >= 0.10 for p2 in positions):
                    positions.append(p)
                    break
            else:
                raise ValueError(
                    f"could not place {n_objects} objects with 0.10 m "
                    f"clearance in a {wx}x{wy} workspace")
            yaws.append(float(rng.uniform(-np.pi, np.pi)))
            inverted.append(False)
    else:
        raise ValueError(f"unknown orientation mode {orientation_mode!r}")

    specs = [TABLE]
    opos = [np.array([0.0, 0.0, -TABLE.dimensions[2]])]
    oquat = [np.array([1.0, 0.0, 0.0, 0.0])]
    for k, (spec, p, yaw) in enumerate(zip(picks, positions, yaws)):
        spec = ObjectSpec(f"{spec.id}_{k}", spec.shape, spec.dimensions,
                          spec.mass, spec.friction, spec.stiffness)
        quat = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
        if inverted[k]:
            quat = quat_mul(quat, quat_from_axis_angle(
                np.array([1.0, 0.0, 0.0]), np.pi))
        specs.append(spec)
        opos.append(np.array([p[0], p[1], spec.rest_height(True)]))
        oquat.append(quat)

    n = len(specs)
    return WorldState(
        model=model, config=config, specs=specs,
        opos=np.stack(opos), oquat=np.stack(oquat), ovel=np.zeros((n, 3)),
        q=model.neutral.copy(),
        spawn_z=np.array([p[2] for p in opos]),
        seed=seed)


def scene_to_dict(world: WorldState) -> dict:
    return {
        "seed": world.seed,
        "specs": [s.to_dict() for s in world.specs],
        "opos": world.opos.tolist(),
        "oquat": world.oquat.tolist(),
        "q": world.q.tolist(),
        "spawn_z": world.spawn_z.tolist(),
    }


def scene_from_dict(d: dict, model: Optional[RobotModel] = None,
                    config: Optional[SimConfig] = None) -> WorldState:
    specs = [ObjectSpec.from_dict(s) for s in d["specs"]]
    n = len(specs)
    return WorldState(
        model=model or xhand12(), config=config or SimConfig(), specs=specs,
        opos=np.array(d["opos"], dtype=np.float64),
        oquat=np.array(d["oquat"], dtype=np.float64),
        ovel=np.zeros((n, 3)),
        q=np.array(d["q"], dtype=np.float64),
        spawn_z=np.array(d["spawn_z"], dtype=np.float64),
        seed=int(d["seed"]))
