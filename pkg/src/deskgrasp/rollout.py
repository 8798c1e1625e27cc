"""Synchronized control sessions over the simulated world.

One session runs the inner dynamics at 450 Hz while three slower loops
tick on exact divisors: the arm driver at the operator rate (90 Hz),
the hand at the hand rate (50 Hz), and recording at the log rate. A
driver supplies end-effector pose targets (tracked by the velocity QP)
and optionally hand joint targets; when it leaves the hand to the
copilot, the force-adaptive closure runs it. Everything is seeded and
single-threaded, so identical inputs give bit-identical episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .dataops import EpisodeRecord, Tick
from .graspctl import HandCopilot, fingertip_fz, min_tip_object_distance
from .ikqp import ik_step
from .kinematics import (Pose, RobotModel, compose, fk, quat_from_axis_angle,
                         quat_to_matrix)
from .simworld import (ObjectSpec, SuccessCriteria, WorldState, grasp_success,
                       render_depth, spawn_scene, step, tip_frames,
                       TAXEL_ROWS, TAXEL_COLS)
from .teleop import min_jerk


@dataclass
class SessionView:
    """Read-only snapshot handed to drivers at their tick times."""

    world: WorldState
    frame: np.ndarray            # latest tactile frame (5,10,12,3)
    t: float
    q_arm: np.ndarray
    q_hand: np.ndarray
    ee_pose: Pose
    palm_pose: Pose
    f_z: np.ndarray              # (5,) clamped fingertip normal loads
    attached: bool


class Driver:
    """Base driver: hold position, leave the hand to the copilot."""

    intervention = False
    operator_engaged = True

    def arm_target(self, view: SessionView) -> Optional[Pose]:
        return None

    def hand_target(self, view: SessionView) -> Optional[np.ndarray]:
        return None

    def done(self, view: SessionView) -> Optional[str]:
        return None


@dataclass
class SessionConfig:
    task: str = "grasp"
    instruction_id: int = 0
    instruction: str = ""
    max_seconds: float = 30.0
    cameras: Tuple[str, ...] = ()
    record_tactile: bool = False
    record_commands: bool = False
    scene: dict = field(default_factory=dict)
    criteria: SuccessCriteria = field(default_factory=SuccessCriteria)


# spawn box (wx, wy) around the workspace center inside which a scripted
# grasp tracks well from the parked arm; the default spawn box reaches
# into elbow-singular territory where the servo loop hunts
GRASP_WORKSPACE = (0.16, 0.24)


def park_arm(model: RobotModel, raise_by: float = 0.15) -> np.ndarray:
    """Arm joint angles with the hand lifted clear of the work surface.

    Episodes started here cannot clip tall objects while translating, so
    the first contact a session sees is the one the script intends.
    """
    q = model.neutral.copy()
    ee = fk(model, q)[model.ee_frame]
    target = Pose(ee.position + np.array([0.0, 0.0, raise_by]),
                  ee.quaternion)
    for _ in range(60):
        q, _ = ik_step(model, q, {model.ee_frame: target}, 1.0 / 30.0)
    return q[: len(model.arm_joints)].copy()


def session_cameras(model: RobotModel) -> Tuple[str, str, str]:
    """The standard three views: two scene cameras plus eye-in-hand."""
    return ("front_cam", "top_cam", model.wrist_camera)


def run_session(world: WorldState, driver: Driver,
                copilot: Optional[HandCopilot], cfg: SessionConfig,
                encoder: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                ) -> Tuple[EpisodeRecord, WorldState]:
    """Run one episode to driver completion or timeout.

    `encoder`, when given, maps each logged tactile frame to (5,128)
    float32 latents stored in the episode. Returns the record and the
    final world state.
    """
    model = world.model
    sc = world.config
    per_op = sc.inner_rate // sc.operator_rate
    per_hand = sc.inner_rate // sc.hand_rate
    per_log = sc.inner_rate // sc.log_rate
    record = EpisodeRecord(
        task=cfg.task, instruction_id=cfg.instruction_id,
        instruction=cfg.instruction, robot=model.name,
        rates={"inner": sc.inner_rate, "operator": sc.operator_rate,
               "hand": sc.hand_rate, "log": sc.log_rate},
        seed=world.seed, scene=dict(cfg.scene))
    cmd_arm = world.q[:6].copy()
    cmd_hand = world.q[6:].copy()
    frame = np.zeros((5, TAXEL_ROWS, TAXEL_COLS, 3))
    copilot_drove = False
    outcome: Optional[str] = None
    # episodes always end right after a log tick so recorded command
    # streams line up with the tick count on replay
    n_inner = int(round(cfg.max_seconds * sc.inner_rate)) \
        // per_log * per_log

    view: Optional[SessionView] = None
    for i in range(n_inner):
        t = i * sc.inner_dt
        # drivers only look at tick boundaries; skip the fk otherwise
        if i % per_op == 0 or i % per_hand == 0 or (i + 1) % per_log == 0:
            frames = fk(model, world.q)
            view = SessionView(
                world=world, frame=frame, t=t,
                q_arm=world.q[:6].copy(), q_hand=world.q[6:].copy(),
                ee_pose=frames[model.ee_frame],
                palm_pose=frames[model.palm_frame],
                f_z=fingertip_fz(frame),
                attached=world.attachment is not None)
        if i % per_op == 0:
            target = driver.arm_target(view)
            if target is not None:
                q_next, _ = ik_step(model, world.q,
                                    {model.ee_frame: target},
                                    1.0 / sc.operator_rate)
                cmd_arm = q_next[:6]
        if i % per_hand == 0:
            ht = driver.hand_target(view)
            if ht is not None:
                cmd_hand = np.asarray(ht, dtype=np.float64).copy()
                copilot_drove = False
            elif copilot is not None:
                cmd_hand = copilot.tick(
                    world.q[6:], view.f_z,
                    min_tip_object_distance(world), 1.0 / sc.hand_rate)
                copilot_drove = True
        if cfg.record_commands:
            if i % per_op == 0:
                record.arm_cmd_frames.append(cmd_arm.copy())
            if i % per_hand == 0:
                record.hand_cmd_frames.append(cmd_hand.copy())
        world, frame = step(world, cmd_arm, cmd_hand, sc.inner_dt)
        if (i + 1) % per_log == 0:
            t_log = (i + 1) * sc.inner_dt
            frame_refs: Dict[str, int] = {}
            for cam in cfg.cameras:
                frame_refs[cam] = len(record.depth_frames)
                record.depth_frames.append(
                    render_depth(world, cam).astype(np.float32))
            ee = fk(model, world.q)[model.ee_frame]
            record.ticks.append(Tick(
                t_idx=len(record.ticks), t_sec=t_log,
                q_arm=world.q[:6].copy(), q_hand=world.q[6:].copy(),
                cmd_arm=cmd_arm.copy(), cmd_hand=cmd_hand.copy(),
                ee_pose=np.concatenate([ee.position, ee.quaternion]),
                tactile_res=frame.reshape(5, -1, 3).sum(axis=1).reshape(-1),
                frames=frame_refs,
                operator_engaged=driver.operator_engaged,
                copilot_active=copilot_drove,
                intervention=driver.intervention))
            if cfg.record_tactile:
                record.tactile_frames.append(frame.astype(np.float32))
            if encoder is not None:
                record.latent_frames.append(encoder(frame))
            outcome = driver.done(view)
            if outcome is not None:
                break

    achieved = grasp_success(world, cfg.criteria)
    record.success = achieved and outcome != "failure"
    if not record.success:
        record.failure = outcome if outcome == "failure" else (
            outcome or "timeout")
        if record.failure == "success":
            record.failure = "not-held"
    return record, world


# ---------------------------------------------------------------------------
# Scripted grasp driver
# ---------------------------------------------------------------------------

def pinch_preshape(model: RobotModel, width: float,
                   spread: float = -0.2) -> np.ndarray:
    """Hand pose whose thumb-middle tip gap matches `width` meters.

    All hand joints open to `spread`; thumb and middle curl in together
    until the tip gap hits the requested width (bisection, the gap is
    monotone in the curl parameter). Out-of-range widths clamp to the
    widest or narrowest achievable pinch.
    """
    names = {j.name: k for k, j in enumerate(model.joints)}

    def hand_for(s: float) -> np.ndarray:
        q = model.neutral.copy()
        for j in model.hand_joints:
            q[j] = spread
        q[names["thumb_abd"]] = 0.0
        for f in ("thumb", "middle"):
            q[names[f"{f}_curl0"]] = spread + s * (0.25 - spread)
            q[names[f"{f}_curl1"]] = spread + s * (0.20 - spread)
        return q

    def gap(s: float) -> float:
        p = fk(model, hand_for(s))
        return float(np.linalg.norm(p["thumb_tip"].position
                                    - p["middle_tip"].position))

    lo_s, hi_s = 0.0, 1.0
    if width >= gap(lo_s):
        s = lo_s
    elif width <= gap(hi_s):
        s = hi_s
    else:
        for _ in range(40):
            mid = 0.5 * (lo_s + hi_s)
            if gap(mid) > width:
                lo_s = mid
            else:
                hi_s = mid
        s = 0.5 * (lo_s + hi_s)
    return hand_for(s)[model.hand_joints]


def grasp_width(spec: ObjectSpec) -> float:
    """Pinch span of an object across its narrowest horizontal axis."""
    d = spec.dimensions
    if spec.shape == "sphere":
        return 2.0 * d[0]
    if spec.shape == "cylinder":
        return 2.0 * d[0]
    return 2.0 * min(d[0], d[1])


def _narrow_axis_world(spec: ObjectSpec, quat: np.ndarray) -> np.ndarray:
    axis = np.array([1.0, 0.0, 0.0]) if spec.dimensions[0] <= \
        spec.dimensions[1] else np.array([0.0, 1.0, 0.0])
    return quat_to_matrix(quat) @ axis


@dataclass
class GraspScriptConfig:
    approach: float = 2.0        # s, start -> pregrasp
    descend: float = 1.5         # s, pregrasp -> grasp pose
    settle_max: float = 2.5      # s, wait for attachment before lifting
    lift: float = 1.5            # s, grasp pose -> lifted
    hold: float = 1.5            # s, keep still before marking
    pregrasp_clearance: float = 0.08   # m above the grasp pose
    lift_height: float = 0.15    # m
    tip_clearance: float = 0.005  # m between tip surface and object
    graze: float = 0.0           # m, sideways press after descend (0 = skip)
    graze_time: float = 0.4      # s, duration of the press leg
    hand_mode: str = "preshape"  # or "copilot": never command the fingers
    noise_pos: float = 0.0       # m, per-anchor seeded jitter
    seed: int = 0

    def __post_init__(self):
        for name in ("approach", "descend", "settle_max", "lift", "hold",
                     "graze_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} duration must be positive")
        if self.graze < 0:
            raise ValueError("graze distance must be nonnegative")
        if self.hand_mode not in ("preshape", "copilot"):
            raise ValueError(f"unknown hand_mode {self.hand_mode!r}")


class GraspScript(Driver):
    """Scripted operator for one full grasp-and-lift of a chosen object.

    The plan is laid out at the first tick: the hand pre-shapes so the
    thumb-middle pinch straddles the object, the wrist yaws so the pinch
    crosses a box's narrow axis, and the end-effector target places the
    pinch midpoint at the object center. Minimum-jerk blends connect
    start, pregrasp, grasp, and lifted poses. The settle phase hands the
    fingers to the closure copilot and ends as soon as the object is
    attached (or after settle_max).

    With graze > 0 an extra press leg follows the descent: the hand
    shifts sideways along the pinch axis so the second pinch finger
    grazes the object before closure begins. One grazing tip cannot
    engage an attachment, but it does put the contact on the tactile
    channel, which is the only closure cue a blind hand policy can see.
    """

    def __init__(self, model: RobotModel, object_id: str,
                 cfg: Optional[GraspScriptConfig] = None):
        self.model = model
        self.object_id = object_id
        self.cfg = cfg or GraspScriptConfig()
        self._rng = np.random.default_rng(self.cfg.seed)
        self._anchors: Optional[Dict[str, np.ndarray]] = None
        self._quat: Optional[np.ndarray] = None
        self._preshape: Optional[np.ndarray] = None
        self._phase = "rise"
        self._phase_start = 0.0

    # -- planning --

    def _plan(self, view: SessionView):
        c = self.cfg
        world = view.world
        spec = world.specs[world.index_of(self.object_id)]
        tipr = world.config.tip_radius
        width = grasp_width(spec) + 2.0 * (tipr + c.tip_clearance)
        self._preshape = pinch_preshape(self.model, width)

        # calibrate at the pre-shape: where the pinch midpoint sits
        # relative to the end-effector, and which way the pinch crosses
        q = world.q.copy()
        q[self.model.hand_joints] = self._preshape
        frames = fk(self.model, q)
        ee = frames[self.model.ee_frame]
        a = frames["thumb_tip"].position
        b = frames["middle_tip"].position
        quat = ee.quaternion.copy()
        if spec.shape == "box":
            u = b - a
            w = _narrow_axis_world(spec, world.object_pose(
                self.object_id).quaternion)
            if np.hypot(w[0], w[1]) > 1e-6:
                theta = np.arctan2(w[1], w[0]) - np.arctan2(u[1], u[0])
                theta = (theta + np.pi / 2) % np.pi - np.pi / 2
                spin = Pose(np.zeros(3),
                            quat_from_axis_angle((0, 0, 1), theta))
                quat = compose(spin, Pose(np.zeros(3), quat)).quaternion
        # the pinch offset is rigid in the end-effector frame, so the
        # world offset rotates with the target orientation
        ee_inv = quat_to_matrix(ee.quaternion).T
        rot = quat_to_matrix(quat)
        v_local = ee_inv @ (0.5 * (a + b) - ee.position)
        offset = rot @ v_local

        center = world.object_pose(self.object_id).position
        grasp = center - offset + self._rng.normal(0.0, c.noise_pos, size=3)
        hold_from = grasp
        start = view.ee_pose.position.copy()
        pregrasp = grasp + np.array([0.0, 0.0, c.pregrasp_clearance])
        # rise before the transit so the fingertips clear whatever
        # stands between the start pose and the pregrasp point
        self._anchors = {
            "start": start,
            "risen": np.array([start[0], start[1],
                               max(start[2], pregrasp[2])]),
            "pregrasp": pregrasp,
            "grasp": grasp}
        self._order = ["rise", "approach", "descend"]
        if c.graze > 0:
            # shift toward the thumb so the opposite tip meets the object
            d = rot @ (ee_inv @ (a - b))
            d[2] = 0.0
            d /= max(np.linalg.norm(d), 1e-12)
            hold_from = grasp + c.graze * d
            self._anchors["press"] = hold_from
            self._order.append("press")
        self._order += ["settle", "lift", "hold", "end"]
        self._anchors["held"] = hold_from
        self._anchors["lifted"] = hold_from + np.array(
            [0.0, 0.0, c.lift_height])
        self._legs = {"rise": ("start", "risen"),
                      "approach": ("risen", "pregrasp"),
                      "descend": ("pregrasp", "grasp"),
                      "press": ("grasp", "press"),
                      "settle": ("held", "held"),
                      "lift": ("held", "lifted"),
                      "hold": ("lifted", "lifted"),
                      "end": ("lifted", "lifted")}
        self._quat = quat

    # -- phase machine --

    def _duration(self, phase: str) -> float:
        c = self.cfg
        return {"rise": 0.3 * c.approach, "approach": 0.7 * c.approach,
                "descend": c.descend, "press": c.graze_time,
                "settle": c.settle_max, "lift": c.lift, "hold": c.hold,
                "end": np.inf}[phase]

    def _advance(self, view: SessionView):
        if self._phase == "settle" and view.attached:
            self._phase, self._phase_start = "lift", view.t
            return
        while view.t - self._phase_start >= self._duration(self._phase):
            nxt = self._order[self._order.index(self._phase) + 1]
            self._phase_start += self._duration(self._phase)
            self._phase = nxt

    def arm_target(self, view: SessionView) -> Optional[Pose]:
        if self._anchors is None:
            self._plan(view)
        self._advance(view)
        an = self._anchors
        s = min((view.t - self._phase_start)
                / self._duration(self._phase), 1.0)
        a, b = self._legs[self._phase]
        p = an[a] + min_jerk(s) * (an[b] - an[a])
        return Pose(p, self._quat)

    def hand_target(self, view: SessionView) -> Optional[np.ndarray]:
        if self._anchors is None:
            self._plan(view)
        if self.cfg.hand_mode == "copilot":
            return None
        if self._phase in ("rise", "approach", "descend"):
            return self._preshape
        return None                     # closure copilot takes over

    def done(self, view: SessionView) -> Optional[str]:
        if self._phase != "end":
            return None
        return "success" if view.attached else "failure"


def render_views(world: WorldState, cameras: Sequence[str],
                 occluded: Iterable[str] = ()) -> np.ndarray:
    """Stack 32x32 depth images (m, 32, 32); occluded cameras blanked."""
    occluded = set(occluded)
    return np.stack([render_depth(world, cam, occlude=(cam in occluded))
                     for cam in cameras])


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

def world_from_scene(scene: Dict, model: Optional[RobotModel] = None,
                     config=None) -> WorldState:
    """Rebuild the initial world an episode's scene header describes.

    The header holds spawn_scene keyword arguments, plus the optional
    "q0_arm"/"q0_hand" entries for sessions that started away from the
    model's neutral configuration.
    """
    kwargs = dict(scene)
    q0_arm = kwargs.pop("q0_arm", None)
    q0_hand = kwargs.pop("q0_hand", None)
    world = spawn_scene(model=model, config=config, **kwargs)
    m = world.model
    if q0_arm is not None:
        world.q[m.arm_joints] = np.asarray(q0_arm, dtype=np.float64)
    if q0_hand is not None:
        world.q[m.hand_joints] = np.asarray(q0_hand, dtype=np.float64)
    if q0_arm is not None or q0_hand is not None:
        poses = fk(m, world.q)
        world.prev_tips = np.stack(
            [poses[f].position for f in tip_frames(m)])
    return world


def replay_episode(world: WorldState, record: EpisodeRecord,
                   encoder: Optional[Callable[[np.ndarray],
                                              np.ndarray]] = None,
                   ) -> Tuple[EpisodeRecord, WorldState]:
    """Re-run an episode from its recorded command streams.

    `world` must be the same initial state the episode started from
    (same spawn). States, tactile frames, and renders are recomputed by
    stepping the dynamics under the recorded commands; driver
    annotations (flags, outcome) are carried over since they are inputs
    to the run, not products of it. With a matching world the result
    serializes byte-identically to the source episode.
    """
    sc = world.config
    model = world.model
    rates = {"inner": sc.inner_rate, "operator": sc.operator_rate,
             "hand": sc.hand_rate, "log": sc.log_rate}
    if {k: int(v) for k, v in record.rates.items()} != rates:
        raise ValueError(f"episode rates {record.rates} do not match "
                         f"the world clock {rates}")
    if not record.arm_cmd_frames or not record.hand_cmd_frames:
        raise ValueError("episode carries no command streams to replay")
    per_op = sc.inner_rate // sc.operator_rate
    per_hand = sc.inner_rate // sc.hand_rate
    per_log = sc.inner_rate // sc.log_rate

    out = EpisodeRecord(
        task=record.task, instruction_id=record.instruction_id,
        instruction=record.instruction, robot=record.robot,
        rates=dict(record.rates), seed=record.seed,
        scene=dict(record.scene), success=record.success,
        failure=record.failure, footer_present=record.footer_present)
    out.arm_cmd_frames = [a.copy() for a in record.arm_cmd_frames]
    out.hand_cmd_frames = [h.copy() for h in record.hand_cmd_frames]

    cmd_arm = world.q[:6].copy()
    cmd_hand = world.q[6:].copy()
    for i in range(len(record.ticks) * per_log):
        if i % per_op == 0:
            cmd_arm = record.arm_cmd_frames[i // per_op]
        if i % per_hand == 0:
            cmd_hand = record.hand_cmd_frames[i // per_hand]
        world, frame = step(world, cmd_arm, cmd_hand, sc.inner_dt)
        if (i + 1) % per_log == 0:
            src = record.ticks[len(out.ticks)]
            frame_refs: Dict[str, int] = {}
            for cam, _ in sorted(src.frames.items(), key=lambda kv: kv[1]):
                frame_refs[cam] = len(out.depth_frames)
                out.depth_frames.append(
                    render_depth(world, cam).astype(np.float32))
            ee = fk(model, world.q)[model.ee_frame]
            out.ticks.append(Tick(
                t_idx=len(out.ticks), t_sec=(i + 1) * sc.inner_dt,
                q_arm=world.q[:6].copy(), q_hand=world.q[6:].copy(),
                cmd_arm=cmd_arm.copy(), cmd_hand=cmd_hand.copy(),
                ee_pose=np.concatenate([ee.position, ee.quaternion]),
                tactile_res=frame.reshape(5, -1, 3).sum(axis=1).reshape(-1),
                frames=frame_refs,
                operator_engaged=src.operator_engaged,
                copilot_active=src.copilot_active,
                intervention=src.intervention))
            if record.tactile_frames:
                out.tactile_frames.append(frame.astype(np.float32))
            if encoder is not None:
                out.latent_frames.append(encoder(frame))
    return out, world
