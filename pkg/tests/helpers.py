"""Shared test fixtures: seeded reachable end-effector targets.

Targets live in the desk working envelope (positions over the tabletop,
tool-down orientations with free yaw and bounded tilt). Every target comes
with a witness configuration proving reachability: the witness is inside
joint limits and its forward kinematics reproduces the target pose.
"""
from __future__ import annotations

from typing import List, Tuple

import numpy as np

from deskgrasp.ikqp import solve_reach
from deskgrasp.kinematics import (Pose, RobotModel, frame_pose, pose_error,
                                  quat_from_axis_angle, quat_mul,
                                  quat_normalize)

POSITION_BOUNDS = np.array([[0.05, 0.38], [-0.22, 0.22], [0.06, 0.35]])
MAX_TILT = np.pi / 4


def desk_targets(model: RobotModel, n: int, seed: int,
                 frame: str = "ee") -> Tuple[List[Pose], List[np.ndarray]]:
    """n seeded reachable poses plus their witness configurations."""
    rng = np.random.default_rng(seed)
    lo, hi = model.joint_limits()
    down = frame_pose(model, model.neutral, frame).quaternion
    targets: List[Pose] = []
    witnesses: List[np.ndarray] = []
    while len(targets) < n:
        pos = rng.uniform(POSITION_BOUNDS[:, 0], POSITION_BOUNDS[:, 1])
        yaw = rng.uniform(-np.pi, np.pi)
        tilt = rng.uniform(0.0, MAX_TILT)
        tax = rng.uniform(-np.pi, np.pi)
        axis = np.array([np.cos(tax), np.sin(tax), 0.0])
        quat = quat_mul(quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw),
                        quat_mul(quat_from_axis_angle(axis, tilt), down))
        target = Pose(pos, quat_normalize(quat))
        witness, err = solve_reach(model, model.neutral, frame, target)
        if err > 1e-9:
            continue
        assert np.all(witness >= lo - 1e-9) and np.all(witness <= hi + 1e-9)
        assert np.linalg.norm(
            pose_error(frame_pose(model, witness, frame), target)) < 1e-6
        targets.append(target)
        witnesses.append(witness)
    return targets, witnesses
