"""Built-in robot models.

`xhand12`: 6-dof arm plus a 12-dof five-finger hand (thumb 3, index 3,
middle/ring/pinky 2 each). `alt6`: the same arm with a reduced 6-dof hand
(thumb 2, one curl joint per remaining finger). The arm base sits on the
tabletop at x = -0.38 so a 0.40 x 0.40 workspace centered near x = 0.18
is reachable with the tool pointing down.

Axis conventions: positive pitch about +y tilts the local +x axis toward
-z, so the neutral arm posture uses a negative shoulder angle to lift the
elbow. Finger curl joints rotate about local -y, making positive commands
close the finger toward the palm axis.
"""

from __future__ import annotations

import numpy as np

from .kinematics import (Finger, Frame, Joint, Pose, RobotModel, compose,
                         quat_from_axis_angle)

_QI = np.array([1.0, 0.0, 0.0, 0.0])
# palm +z along local +x of the flange: the tool direction
_Q_Z_TO_X = quat_from_axis_angle((0, 1, 0), np.pi / 2)
# fingertip pad normal: local +z mapped onto the inward radial direction
_Q_Z_TO_NEG_X = quat_from_axis_angle((0, 1, 0), -np.pi / 2)

_CURL_AXIS = np.array([0.0, -1.0, 0.0])
_ABD_AXIS = np.array([0.0, 0.0, 1.0])

_PROX_LEN = 0.045
_DIST_LEN = 0.035
_MOUNT_RADIUS = 0.05


def _pose(x=0.0, y=0.0, z=0.0, quat=None) -> Pose:
    return Pose(np.array([x, y, z]), _QI if quat is None else quat)


def _arm_joints():
    return [
        Joint("arm_yaw", -1, _pose(-0.38, 0.0, 0.10), np.array([0.0, 0.0, 1.0]),
              -2.0 * np.pi, 2.0 * np.pi, 2.5),
        Joint("arm_shoulder", 0, _pose(0.0, 0.06, 0.08), np.array([0.0, 1.0, 0.0]),
              -2.2, 2.2, 2.5),
        Joint("arm_elbow", 1, _pose(0.38, -0.06, 0.0), np.array([0.0, 1.0, 0.0]),
              -2.8, 2.8, 3.0),
        Joint("arm_wrist_pitch", 2, _pose(0.34, 0.05, 0.0), np.array([0.0, 1.0, 0.0]),
              -2.0 * np.pi, 2.0 * np.pi, 3.5),
        Joint("arm_wrist_roll", 3, _pose(0.07, -0.05, 0.0), np.array([1.0, 0.0, 0.0]),
              -2.0 * np.pi, 2.0 * np.pi, 3.5),
        Joint("arm_wrist_pitch2", 4, _pose(0.06, 0.0, 0.0), np.array([0.0, 1.0, 0.0]),
              -2.0 * np.pi, 2.0 * np.pi, 3.5),
    ]


# tool down: shoulder + elbow + wrist pitches sum to +pi/2
_ARM_NEUTRAL = [0.0, -0.9, 1.2, np.pi / 2 - 0.3, 0.0, 0.0]


def _palm_mount(azimuth_deg: float) -> Pose:
    """Finger mount on the palm circle: +x radially out, +z along the palm."""
    a = np.deg2rad(azimuth_deg)
    return Pose(np.array([_MOUNT_RADIUS * np.cos(a), _MOUNT_RADIUS * np.sin(a), 0.0]),
                quat_from_axis_angle((0, 0, 1), a))


def _finger_grid():
    # name, palm azimuth (deg), has abduction joint, curl joint count
    return [
        ("thumb", 180.0, True, 2),
        ("index", 50.0, True, 2),
        ("middle", 17.0, False, 2),
        ("ring", -17.0, False, 2),
        ("pinky", -50.0, False, 2),
    ]


def _build(name: str, spec) -> RobotModel:
    joints = _arm_joints()
    frames = [
        Frame("ee", 5, _pose(0.09, 0.0, 0.0, quat=_Q_Z_TO_X)),
        Frame("palm", 5, _pose(0.11, 0.0, 0.0, quat=_Q_Z_TO_X)),
        Frame("wrist_cam", 5, _pose(0.02, 0.0, 0.04, quat=_Q_Z_TO_X)),
    ]
    fingers = []
    neutral = list(_ARM_NEUTRAL)
    palm_parent = 5  # last arm joint carries the palm
    for fname, azim, has_abd, curls in spec:
        mount = _palm_mount(azim)
        # express the mount relative to the flange: palm offset then azimuth
        base = Pose(np.array([0.11, 0.0, 0.0]), _Q_Z_TO_X)
        mount_in_flange = compose(base, mount)
        idxs = []
        dirs = []
        parent = palm_parent
        origin = mount_in_flange
        if has_abd:
            joints.append(Joint(f"{fname}_abd", parent, origin, _ABD_AXIS.copy(),
                                -0.6, 0.6, 8.0))
            parent = len(joints) - 1
            origin = _pose()
            idxs.append(parent)
            dirs.append(0.0)
            neutral.append(0.0)
        seg = [0.0, _PROX_LEN, _DIST_LEN]
        for c in range(curls):
            org = compose(origin, _pose(0.0, 0.0, seg[c])) if c == 0 else _pose(0.0, 0.0, seg[c])
            joints.append(Joint(f"{fname}_curl{c}", parent, org, _CURL_AXIS.copy(),
                                -0.2, 1.9 if c == 0 else 1.6, 8.0))
            parent = len(joints) - 1
            idxs.append(parent)
            dirs.append(1.0 if c == 0 else 0.7)
            neutral.append(0.15)
        tip_len = seg[curls] if curls >= 2 else _PROX_LEN + _DIST_LEN
        frames.append(Frame(f"{fname}_tip", parent,
                            _pose(0.0, 0.0, tip_len, quat=_Q_Z_TO_NEG_X)))
        fingers.append(Finger(fname, f"{fname}_tip", idxs, np.array(dirs)))
    return RobotModel(
        name=name,
        joints=joints,
        frames=frames,
        fingers=fingers,
        arm_joints=list(range(6)),
        hand_joints=list(range(6, len(joints))),
        ee_frame="ee",
        palm_frame="palm",
        wrist_camera="wrist_cam",
        neutral=np.array(neutral),
    )


def xhand12() -> RobotModel:
    return _build("xhand12", _finger_grid())


def alt6() -> RobotModel:
    spec = [
        ("thumb", 180.0, False, 2),
        ("index", 50.0, False, 1),
        ("middle", 17.0, False, 1),
        ("ring", -17.0, False, 1),
        ("pinky", -50.0, False, 1),
    ]
    return _build("alt6", spec)


BUILTIN = {"xhand12": xhand12, "alt6": alt6}
