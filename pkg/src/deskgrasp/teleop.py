"""Clutch-based relative-pose teleoperation.

While the clutch is engaged, controller motion relative to its engage-time
anchor is replayed onto the robot's engage-time pose:

    target = T_rob0 * (T_vr0^-1 * T_vr_t)

Re-engaging re-anchors both poses, so the operator can ratchet through a
large workspace with small hand motions. A scripted operator stands in for
the human in headless runs: a minimum-jerk approach to a pre-grasp pose
with seeded pose noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .kinematics import (Pose, compose, inverse, quat_from_axis_angle,
                         quat_mul, pose_interp)


class ClutchDisengagedError(RuntimeError):
    """Mapping was requested while the clutch is not engaged."""


@dataclass(frozen=True)
class ClutchState:
    engaged: bool = False
    T_vr0: Optional[Pose] = None
    T_rob0: Optional[Pose] = None
    scale: float = 1.0           # controller-to-robot translation gain

    def __post_init__(self):
        if self.engaged and (self.T_vr0 is None or self.T_rob0 is None):
            raise ValueError("engaged clutch must hold both anchor poses")


def engage(clutch: ClutchState, t_vr_now: Pose, t_rob_now: Pose) -> ClutchState:
    """Anchor both poses at the same instant and start mapping."""
    return replace(clutch, engaged=True, T_vr0=t_vr_now.copy(),
                   T_rob0=t_rob_now.copy())


def disengage(clutch: ClutchState) -> ClutchState:
    return replace(clutch, engaged=False, T_vr0=None, T_rob0=None)


def clutch_map(clutch: ClutchState, t_vr_t: Pose) -> Pose:
    """Robot target for the current controller pose."""
    if not clutch.engaged:
        raise ClutchDisengagedError("clutch is not engaged")
    delta = compose(inverse(clutch.T_vr0), t_vr_t)
    if clutch.scale != 1.0:
        delta = Pose(clutch.scale * delta.position, delta.quaternion)
    return compose(clutch.T_rob0, delta)


def target_frame(model, handheld: bool) -> str:
    """Frame the operator drives: the tool, or the hand base directly."""
    return model.palm_frame if handheld else model.ee_frame


# ---------------------------------------------------------------------------
# Commands and the scripted operator
# ---------------------------------------------------------------------------

@dataclass
class OperatorCommand:
    pose: Pose
    grip: bool = False
    intervene: bool = False
    mark: Optional[str] = None   # None | "success" | "failure"
    timestamp: float = 0.0


@dataclass
class ScriptedOperatorConfig:
    pregrasp_offset: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 0.08]))
    approach_duration: float = 2.0
    noise_pos: float = 0.0       # m, per-command jitter
    noise_rot: float = 0.0       # rad
    seed: int = 0
    give_up_after: float = 5.0   # s past the nominal duration
    settle_tol: float = 0.01     # m, "arrived" radius

    def __post_init__(self):
        self.pregrasp_offset = np.asarray(self.pregrasp_offset,
                                          dtype=np.float64).reshape(3)
        if self.approach_duration <= 0:
            raise ValueError("approach duration must be positive")


def min_jerk(s: float) -> float:
    """Smooth 0..1 profile with zero boundary velocity and acceleration."""
    s = min(max(s, 0.0), 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


class ScriptedOperator:
    """Deterministic stand-in operator: approach the pre-grasp pose.

    The plan is anchored at the first observation; per-command noise is
    seeded, so identical seeds give identical command streams. If the
    executor has not brought the tool near the pre-grasp pose within the
    timeout, the operator gives up with a failure mark.
    """

    def __init__(self, cfg: ScriptedOperatorConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.start: Optional[Pose] = None
        self.goal: Optional[Pose] = None
        self.t0: float = 0.0
        self.gave_up = False
        self._last_t = -np.inf

    def step(self, ee_pose: Pose, object_pose: Pose, t: float) -> OperatorCommand:
        if t <= self._last_t:
            raise ValueError("operator time must be strictly increasing")
        self._last_t = t
        if self.start is None:
            self.start = ee_pose.copy()
            self.goal = Pose(
                object_pose.position
                + _rotate(object_pose.quaternion, self.cfg.pregrasp_offset),
                ee_pose.quaternion)
            self.t0 = t

        s = min_jerk((t - self.t0) / self.cfg.approach_duration)
        pose = pose_interp(self.start, self.goal, s)
        if self.cfg.noise_pos > 0.0 or self.cfg.noise_rot > 0.0:
            pose = Pose(
                pose.position + self.rng.normal(0.0, self.cfg.noise_pos, 3),
                quat_mul(_noise_quat(self.rng, self.cfg.noise_rot),
                         pose.quaternion))

        mark = None
        overtime = t - self.t0 - self.cfg.approach_duration
        arrived = np.linalg.norm(ee_pose.position - self.goal.position) \
            <= self.cfg.settle_tol
        if overtime > self.cfg.give_up_after and not arrived:
            self.gave_up = True
        if self.gave_up:
            mark = "failure"
        return OperatorCommand(pose=pose, grip=True, mark=mark, timestamp=t)


def _rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    from . import kernels as K
    return K.quat_rotate(q, v)


def _noise_quat(rng: np.random.Generator, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return quat_from_axis_angle(axis, float(rng.normal(0.0, sigma)))
