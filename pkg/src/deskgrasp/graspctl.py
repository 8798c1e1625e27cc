"""Force-adaptive hand closure and the copilot that decides when to run it.

The closure law adds, per control tick, a joint increment that decays
exponentially with the finger's measured normal force:

    q_c[j] = q_m[j] + q0[j] * exp(-k[g] * f_z[g])

so fingers sweep shut quickly in free space and tighten ever more gently
as contact force builds. The copilot arms itself when any fingertip stays
within 3 cm of a graspable object for a few consecutive ticks, closes,
holds, and releases along a timed linear ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import kernels as K
from .kinematics import RobotModel, fk
from .simworld import ATTACHABLE_MASS, SHAPE_IDS, WorldState, tip_frames
from .tactilefeat import resultants

TRIGGER_DISTANCE = 0.03   # m fingertip-to-surface
TRIGGER_TICKS = 5
RELEASE_TIME = 0.5        # s, linear ramp back to the open pose
HOLD_EPS = 1e-3           # rad; increments below this count as holding


@dataclass
class GraspGains:
    k: np.ndarray = field(default_factory=lambda: np.full(5, 0.5))  # 1/N
    rate: int = 50

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64).reshape(-1)
        if np.any(self.k <= 0):
            raise ValueError("closure gain k must be positive")
        if self.rate not in (30, 50):
            raise ValueError("hand control rate must be 30 or 50 Hz")


@dataclass
class GraspPhase:
    state: str = "idle"                 # idle|closing|holding|releasing
    f_z: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        if np.any(self.f_z < 0):
            raise ValueError("resultant normal force cannot be negative")


def finger_of_hand_joint(model: RobotModel) -> np.ndarray:
    """Finger index for each entry of the hand-joint vector."""
    pos = {j: i for i, j in enumerate(model.hand_joints)}
    out = np.full(len(model.hand_joints), -1, dtype=np.int64)
    for g, f in enumerate(model.fingers):
        for j in f.joints:
            out[pos[j]] = g
    return out


def fingertip_fz(frame: np.ndarray) -> np.ndarray:
    """Per-finger normal force: z component of the resultant, floored at 0."""
    return np.clip(resultants(frame)[:, 2], 0.0, None)


def force_adaptive_command(model: RobotModel, q_m: np.ndarray,
                           q0: np.ndarray, k: np.ndarray,
                           f_z: np.ndarray) -> np.ndarray:
    """One closure-law tick, clamped to the hand's joint limits."""
    q_m = np.asarray(q_m, dtype=np.float64).reshape(-1)
    q0 = np.asarray(q0, dtype=np.float64).reshape(-1)
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    f_z = np.asarray(f_z, dtype=np.float64).reshape(-1)
    nh, nf = len(model.hand_joints), len(model.fingers)
    if q_m.shape != (nh,) or q0.shape != (nh,):
        raise ValueError("q_m and q0 must be hand-joint vectors")
    if k.shape != (nf,) or f_z.shape != (nf,):
        raise ValueError("k and f_z must be per-finger vectors")
    if np.any(f_z < 0):
        raise ValueError("f_z must be nonnegative")
    group = finger_of_hand_joint(model)
    q_c = q_m + q0 * np.exp(-k[group] * f_z[group])
    lo, hi = model.joint_limits()
    return np.clip(q_c, lo[model.hand_joints], hi[model.hand_joints])


def min_tip_object_distance(world: WorldState) -> float:
    """Smallest fingertip-surface to object-surface distance, meters."""
    poses = fk(world.model, world.q)
    tips = [poses[f].position for f in tip_frames(world.model)]
    best = np.inf
    for i, spec in enumerate(world.specs):
        if spec.mass > ATTACHABLE_MASS:
            continue
        for tip in tips:
            d, _ = K.sdf_world(SHAPE_IDS[spec.shape], spec.kernel_params,
                               world.opos[i], world.oquat[i], tip)
            best = min(best, d - world.config.tip_radius)
    return float(best)


class CopilotTrigger:
    """Fires after the fingertips dwell near an object long enough."""

    def __init__(self, threshold: float = TRIGGER_DISTANCE,
                 persistence: int = TRIGGER_TICKS):
        self.threshold = threshold
        self.persistence = persistence
        self.count = 0

    def update(self, min_distance: float) -> bool:
        if min_distance < self.threshold:
            self.count += 1
        else:
            self.count = 0
        return self.count >= self.persistence


class HandCopilot:
    """Phase machine around the closure law.

    idle -> closing on the dwell trigger (q0 is captured from the open
    pose right then); closing -> holding once increments fall below
    HOLD_EPS; release() ramps linearly back to the captured open pose
    over RELEASE_TIME seconds, then returns to idle.
    """

    def __init__(self, model: RobotModel, gains: Optional[GraspGains] = None,
                 threshold: float = TRIGGER_DISTANCE,
                 persistence: int = TRIGGER_TICKS):
        self.model = model
        self.gains = gains or GraspGains(np.full(len(model.fingers), 0.5))
        self.trigger = CopilotTrigger(threshold, persistence)
        self.state = "idle"
        self.q0: Optional[np.ndarray] = None
        self.open_pose: Optional[np.ndarray] = None
        self.last_fz = np.zeros(len(model.fingers))
        self._release_from: Optional[np.ndarray] = None
        self._release_t = 0.0
        # per-joint closing span scale: curl joints sweep, abduction holds
        scale = np.zeros(len(model.hand_joints))
        pos = {j: i for i, j in enumerate(model.hand_joints)}
        for f in model.fingers:
            for j, s in zip(f.joints, f.close_dir):
                scale[pos[j]] = s
        self._close_scale = scale

    def phase(self) -> GraspPhase:
        return GraspPhase(self.state, self.last_fz.copy())

    def release(self):
        if self.state in ("closing", "holding"):
            self.state = "releasing"
            self._release_t = 0.0

    def tick(self, q_hand: np.ndarray, f_z: np.ndarray, min_dist: float,
             dt: float) -> np.ndarray:
        q_hand = np.asarray(q_hand, dtype=np.float64).reshape(-1)
        self.last_fz = np.asarray(f_z, dtype=np.float64).reshape(-1)
        if self.state == "idle":
            if self.trigger.update(min_dist):
                # q(0) anchors at the trigger instant: remaining curl travel
                hi = self.model.joint_limits()[1][self.model.hand_joints]
                self.open_pose = q_hand.copy()
                self.q0 = self._close_scale * (hi - q_hand)
                self.state = "closing"
            else:
                return q_hand.copy()
        if self.state in ("closing", "holding"):
            cmd = force_adaptive_command(self.model, q_hand, self.q0,
                                         self.gains.k, self.last_fz)
            if np.max(np.abs(cmd - q_hand)) < HOLD_EPS:
                self.state = "holding"
            return cmd
        if self.state == "releasing":
            if self._release_from is None:
                self._release_from = q_hand.copy()
            self._release_t += dt
            s = min(self._release_t / RELEASE_TIME, 1.0)
            cmd = self._release_from + s * (self.open_pose - self._release_from)
            if s >= 1.0:
                self.state = "idle"
                self.trigger.count = 0
                self.q0 = None
                self._release_from = None
            return cmd
        raise RuntimeError(f"unknown phase {self.state!r}")
