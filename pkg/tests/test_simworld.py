"""World stepping: contacts, tactile synthesis, attachment, rendering,
seeded spawning, and the determinism guarantees everything else leans on."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskgrasp import kernels as K
from deskgrasp.ikqp import ik_step
from deskgrasp.kinematics import Pose, compose, fk
from deskgrasp.robots import xhand12
from deskgrasp.simworld import (TABLE, ObjectSpec, SimConfig, SuccessCriteria,
                                WorldState, grasp_success, look_at,
                                object_catalog, render_depth, scene_from_dict,
                                scene_to_dict, spawn_scene, step, tip_frames)


def bare_world(specs, opos, oquat, q=None, config=None):
    m = xhand12()
    n = len(specs)
    pos = np.asarray(opos, dtype=np.float64).reshape(n, 3)
    return WorldState(
        model=m, config=config or SimConfig(), specs=list(specs),
        opos=pos.copy(), oquat=np.asarray(oquat, dtype=np.float64).reshape(n, 4),
        ovel=np.zeros((n, 3)), q=m.neutral.copy() if q is None else q.copy(),
        spawn_z=pos[:, 2].copy(), seed=0)


def hold_cmds(w):
    m = w.model
    return w.q[m.arm_joints].copy(), w.q[m.hand_joints].copy()


def grip_world(pen=2e-4, mass=0.02, friction=0.8, stiffness=5000.0):
    """Sphere pinched between the curled thumb and middle fingertips.

    Both tips penetrate by exactly `pen`; the other fingers are splayed
    open so they stay clear. Returns (world, grip hand command).
    """
    m = xhand12()
    q = m.neutral.copy()
    names = {j.name: k for k, j in enumerate(m.joints)}
    for j in m.hand_joints:
        q[j] = -0.2
    for name, val in [("thumb_curl0", 0.25), ("thumb_curl1", 0.2),
                      ("middle_curl0", 0.25), ("middle_curl1", 0.2),
                      ("thumb_abd", 0.0)]:
        q[names[name]] = val
    poses = fk(m, q)
    a = poses["thumb_tip"].position
    b = poses["middle_tip"].position
    cfg = SimConfig()
    r = 0.5 * np.linalg.norm(a - b) - cfg.tip_radius + pen
    assert r > 0.005
    sphere = ObjectSpec("ball", "sphere", np.array([r]), mass=mass,
                        friction=friction, stiffness=stiffness)
    center = 0.5 * (a + b)
    w = bare_world([TABLE, sphere],
                   [[0.0, 0.0, -TABLE.dimensions[2]], center],
                   [[1.0, 0, 0, 0], [1.0, 0, 0, 0]], q=q, config=cfg)
    # the fixture only works if exactly the two gripping tips touch
    tips = np.stack([fk(m, q)[f].position for f in tip_frames(m)])
    otypes, oparams = w._kernel_arrays()
    p, _, objid, _ = K.tip_contacts(tips, cfg.tip_radius, otypes, oparams,
                                    w.opos, w.oquat)
    assert list(np.nonzero(p > 0)[0]) == [0, 2]
    assert all(objid[i] == 1 for i in (0, 2))
    return w, q[m.hand_joints].copy()


class TestStepContacts:
    def test_no_contact_all_zero(self):
        sphere = ObjectSpec("s", "sphere", np.array([0.03]))
        w = bare_world([sphere], [[0.5, 0.5, 0.5]], [[1.0, 0, 0, 0]])
        arm, hand = hold_cmds(w)
        w2, frame = step(w, arm, hand, w.config.inner_dt)
        assert frame.shape == (5, 10, 12, 3)
        assert np.all(frame == 0.0)
        assert w2.time == pytest.approx(w.config.inner_dt)

    def test_single_tip_1mm_penetration_is_5N(self):
        m = xhand12()
        tip = fk(m, m.neutral)["thumb_tip"].position
        r = 0.03
        cfg = SimConfig()
        center = tip + np.array([1.0, 0.0, 0.0]) * (r + cfg.tip_radius - 1e-3)
        sphere = ObjectSpec("s", "sphere", np.array([r]), stiffness=5000.0)
        w = bare_world([sphere], [center], [[1.0, 0, 0, 0]], config=cfg)
        arm, hand = hold_cmds(w)
        _, frame = step(w, arm, hand, cfg.inner_dt)
        assert abs(frame[0, :, :, 2].sum() - 5.0) < 1e-6
        assert np.all(frame[1:] == 0.0)

    def test_taxel_saturation_cap(self):
        m = xhand12()
        tip = fk(m, m.neutral)["thumb_tip"].position
        r = 0.03
        cfg = SimConfig()
        center = tip + np.array([1.0, 0.0, 0.0]) * (r + cfg.tip_radius - 3e-3)
        sphere = ObjectSpec("s", "sphere", np.array([r]), stiffness=1e6)
        w = bare_world([sphere], [center], [[1.0, 0, 0, 0]], config=cfg)
        arm, hand = hold_cmds(w)
        _, frame = step(w, arm, hand, cfg.inner_dt)
        norms = np.linalg.norm(frame, axis=-1)
        assert norms.max() <= 50.0 + 1e-9
        assert norms.max() > 49.0  # the cap actually engaged

    def test_nan_command_rejected(self):
        w = bare_world([], np.zeros((0, 3)), np.zeros((0, 4)))
        arm, hand = hold_cmds(w)
        arm[2] = np.nan
        with pytest.raises(ValueError):
            step(w, arm, hand, w.config.inner_dt)

    def test_wrong_dt_rejected(self):
        w = bare_world([], np.zeros((0, 3)), np.zeros((0, 4)))
        arm, hand = hold_cmds(w)
        with pytest.raises(ValueError):
            step(w, arm, hand, 0.01)

    def test_wrong_command_length_rejected(self):
        w = bare_world([], np.zeros((0, 3)), np.zeros((0, 4)))
        arm, hand = hold_cmds(w)
        with pytest.raises(ValueError):
            step(w, arm[:-1], hand, w.config.inner_dt)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_tactile_sum_matches_contact_model(self, seed):
        rng = np.random.default_rng(seed)
        m = xhand12()
        cfg = SimConfig()
        tips = np.stack([fk(m, m.neutral)[f].position for f in tip_frames(m)])
        tip = tips[int(rng.integers(5))]
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        pen = float(rng.uniform(1e-4, 3e-3))
        r = float(rng.uniform(0.02, 0.05))
        k = float(rng.uniform(1000.0, 9000.0))
        mu = float(rng.uniform(0.1, 1.5))
        sphere = ObjectSpec("s", "sphere", np.array([r]), friction=mu,
                            stiffness=k)
        center = tip + d * (r + cfg.tip_radius - pen)
        w = bare_world([sphere], [center], [[1.0, 0, 0, 0]], config=cfg)
        arm, hand = hold_cmds(w)
        _, frame = step(w, arm, hand, cfg.inner_dt)
        p, _, objid, _ = K.tip_contacts(
            tips, cfg.tip_radius, *w._kernel_arrays(), w.opos, w.oquat)
        for i in range(5):
            total = frame[i, :, :, 2].sum()
            if objid[i] == 0 and p[i] > 0:
                assert abs(total - k * p[i]) < 1e-6
                shear = np.linalg.norm(
                    [frame[i, :, :, 0].sum(), frame[i, :, :, 1].sum()])
                assert shear <= mu * k * p[i] + 1e-9
            else:
                assert total == 0.0


class TestAttachment:
    def test_opposing_grip_attaches_and_lift_raises(self):
        w, grip = grip_world()
        m = w.model
        dt = w.config.inner_dt
        arm = w.q[m.arm_joints].copy()
        w, frame = step(w, arm, grip, dt)
        assert w.attachment is not None
        assert w.attachment.object_id == "ball"
        assert abs(frame[0, :, :, 2].sum() - 1.0) < 1e-6  # 1 N per tip
        assert abs(frame[2, :, :, 2].sum() - 1.0) < 1e-6

        palm0 = fk(m, w.q)[m.palm_frame]
        obj0 = w.object_pose("ball").position.copy()
        target = Pose(palm0.position + np.array([0.0, 0.0, 0.15]),
                      palm0.quaternion)
        for _ in range(680):
            qd, _ = ik_step(m, w.q, {m.palm_frame: target}, dt)
            w, _ = step(w, qd[m.arm_joints], grip, dt)
        assert w.attachment is not None
        palm1 = fk(m, w.q)[m.palm_frame]
        obj1 = w.object_pose("ball").position
        palm_rise = palm1.position[2] - palm0.position[2]
        obj_rise = obj1[2] - obj0[2]
        assert palm_rise > 0.12
        # rigid attachment: a pure-translation lift carries the object
        assert abs(obj_rise - palm_rise) < 1e-4
        assert grasp_success(w)

    def test_open_hand_detaches_and_object_settles(self):
        w, grip = grip_world()
        m = w.model
        dt = w.config.inner_dt
        arm = w.q[m.arm_joints].copy()
        w, _ = step(w, arm, grip, dt)
        assert w.attachment is not None
        open_cmd = np.full(len(m.hand_joints), -0.2)
        for _ in range(300):
            w, _ = step(w, arm, open_cmd, dt)
            if w.attachment is None:
                break
        assert w.attachment is None
        i = w.index_of("ball")
        assert w.opos[i, 2] == pytest.approx(w.specs[i].dimensions[0],
                                             abs=1e-12)
        assert not grasp_success(w)

    def test_weak_grip_on_heavy_object_slips_off(self):
        w, grip = grip_world(mass=2.0, friction=0.3)
        m = w.model
        dt = w.config.inner_dt
        arm = w.q[m.arm_joints].copy()
        w, _ = step(w, arm, grip, dt)
        assert w.attachment is not None
        slipped = False
        for _ in range(3000):
            w, _ = step(w, arm, grip, dt)
            if w.attachment is not None and w.attachment.slip > 0:
                slipped = True
            if w.attachment is None:
                break
        assert slipped
        assert w.attachment is None
        i = w.index_of("ball")
        assert w.opos[i, 2] == pytest.approx(w.specs[i].dimensions[0],
                                             abs=1e-12)

    def test_attached_object_never_teleports(self):
        w, grip = grip_world()
        m = w.model
        dt = w.config.inner_dt
        arm0 = w.q[m.arm_joints].copy()
        w, _ = step(w, arm0, grip, dt)
        assert w.attachment is not None
        rng = np.random.default_rng(9)
        i = w.index_of("ball")
        for k in range(150):
            if k % 25 == 0:
                arm = arm0 + rng.normal(0.0, 0.25, size=arm0.shape)
            palm_prev = fk(m, w.q)[m.palm_frame]
            off = w.attachment.offset
            prev = w.opos[i].copy()
            w, _ = step(w, arm, grip, dt)
            if w.attachment is None:
                break
            palm_now = fk(m, w.q)[m.palm_frame]
            carried = compose(palm_now, off).position \
                - compose(palm_prev, off).position
            moved = np.linalg.norm(w.opos[i] - prev)
            # rigid follow plus at most one slip increment per step
            assert moved <= np.linalg.norm(carried) + 0.02 * dt + 1e-9
            # the state invariant: pose = palm pose composed with offset
            assert np.allclose(
                compose(palm_now, w.attachment.offset).position,
                w.opos[i], atol=1e-12)


class TestRendering:
    def test_empty_scene_far_plane(self):
        w = bare_world([], np.zeros((0, 3)), np.zeros((0, 4)))
        img = render_depth(w, "front_cam")
        assert img.shape == (32, 32)
        assert np.all(img == 2.0)

    def test_unit_distance_sphere_center_pixel(self):
        cfg = SimConfig(cameras={
            "probe": look_at(np.array([0.0, 0.0, 0.5]),
                             np.array([1.0, 0.0, 0.5]))})
        sphere = ObjectSpec("s", "sphere", np.array([0.05]))
        w = bare_world([sphere], [[1.0, 0.0, 0.5]], [[1.0, 0, 0, 0]],
                       config=cfg)
        img = render_depth(w, "probe")
        assert abs(img[16, 16] - 0.95) < 1e-9

    def test_occlude_blanks_to_far(self):
        sphere = ObjectSpec("s", "sphere", np.array([0.05]))
        w = bare_world([sphere], [[1.0, 0.0, 0.5]], [[1.0, 0, 0, 0]])
        img = render_depth(w, "front_cam", occlude=True)
        empty = render_depth(
            bare_world([], np.zeros((0, 3)), np.zeros((0, 4))), "front_cam")
        assert np.array_equal(img, empty)
        assert np.all(img == 2.0)

    def test_wrist_camera_frame(self):
        w = spawn_scene(seed=4, n_objects=2)
        img = render_depth(w, w.model.wrist_camera)
        assert img.shape == (32, 32)
        assert np.all(np.isfinite(img))

    def test_unknown_camera(self):
        w = spawn_scene(seed=4)
        with pytest.raises(KeyError):
            render_depth(w, "no_such_cam")


class TestSuccess:
    def _held_world(self, rise, ticks):
        w = spawn_scene(seed=2, n_objects=1)
        i = 1  # first object after the table
        from deskgrasp.simworld import Attachment
        w.attachment = Attachment(w.specs[i].id, Pose.identity())
        w.opos[i, 2] = w.spawn_z[i] + rise
        w.lifted_steps = ticks * (w.config.inner_rate // w.config.log_rate)
        return w

    def test_never_attached_is_failure(self):
        w = spawn_scene(seed=2, n_objects=1)
        assert not grasp_success(w)

    def test_held_high_long_enough(self):
        assert grasp_success(self._held_world(0.12, 45))

    def test_hold_window_broken(self):
        assert not grasp_success(self._held_world(0.12, 20))

    def test_not_lifted_enough(self):
        assert not grasp_success(self._held_world(0.08, 45))

    def test_custom_criteria(self):
        w = self._held_world(0.06, 45)
        assert grasp_success(w, SuccessCriteria(lift_height=0.05))


class TestSpawning:
    def test_same_seed_bitwise_identical(self):
        a = spawn_scene(seed=7, n_objects=3)
        b = spawn_scene(seed=7, n_objects=3)
        assert [s.id for s in a.specs] == [s.id for s in b.specs]
        assert np.array_equal(a.opos, b.opos)
        assert np.array_equal(a.oquat, b.oquat)
        assert np.array_equal(a.q, b.q)
        assert scene_to_dict(a) == scene_to_dict(b)

    def test_different_seed_differs(self):
        a = spawn_scene(seed=7, n_objects=3)
        b = spawn_scene(seed=8, n_objects=3)
        assert not np.array_equal(a.opos, b.opos)

    def test_random_mode_in_bounds_with_clearance(self):
        w = spawn_scene(seed=3, n_objects=3, orientation_mode="random")
        pts = w.opos[1:, :2]  # skip the table
        assert np.all(np.abs(pts - np.array([0.18, 0.0])) <= 0.20 + 1e-12)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                assert np.linalg.norm(pts[i] - pts[j]) >= 0.10

    def test_grid_mode_cells_spaced(self):
        w = spawn_scene(seed=5, n_objects=9,
                        orientation_mode="grid3x3-upright-inverted")
        pts = w.opos[1:, :2]
        for i in range(9):
            for j in range(i + 1, 9):
                assert np.linalg.norm(pts[i] - pts[j]) >= 0.10

    def test_grid_overflow(self):
        with pytest.raises(ValueError):
            spawn_scene(seed=5, n_objects=10,
                        orientation_mode="grid3x3-upright-inverted")

    def test_random_overflow(self):
        with pytest.raises(ValueError):
            spawn_scene(seed=5, workspace=(0.08, 0.08), n_objects=3)

    def test_objects_rest_on_table(self):
        w = spawn_scene(seed=9, n_objects=4)
        for i, s in enumerate(w.specs):
            if s.id == "table":
                continue
            assert w.opos[i, 2] > 0.0
            assert w.opos[i, 2] == pytest.approx(w.spawn_z[i])

    def test_scene_json_roundtrip(self):
        import json
        a = spawn_scene(seed=12, n_objects=2)
        d = json.loads(json.dumps(scene_to_dict(a)))
        b = scene_from_dict(d)
        assert np.array_equal(a.opos, b.opos)
        assert np.array_equal(a.oquat, b.oquat)
        assert np.array_equal(a.q, b.q)
        assert [s.to_dict() for s in a.specs] == [s.to_dict() for s in b.specs]

    def test_catalog_is_graspable(self):
        cat = object_catalog()
        assert len(cat) == 20
        for s in cat:
            if s.shape == "sphere":
                assert 2 * s.dimensions[0] <= 0.055
            elif s.shape == "box":
                assert 2 * min(s.dimensions[0], s.dimensions[1]) <= 0.055
            else:
                assert 2 * s.dimensions[0] <= 0.055


class TestDeterminism:
    def _run(self, seed):
        w = spawn_scene(seed=11, n_objects=2)
        m = w.model
        dt = w.config.inner_dt
        rng = np.random.default_rng(seed)
        arm0 = w.q[m.arm_joints].copy()
        hand0 = w.q[m.hand_joints].copy()
        trace = []
        for k in range(150):
            arm = arm0 + 0.2 * np.sin(0.01 * k + np.arange(len(arm0)))
            hand = hand0 + float(rng.uniform(0, 0.3))
            w, frame = step(w, arm, hand, dt)
            trace.append((w.q.copy(), w.opos.copy(), frame.copy()))
        return trace

    def test_identical_runs_bit_exact(self):
        t1 = self._run(5)
        t2 = self._run(5)
        for (q1, p1, f1), (q2, p2, f2) in zip(t1, t2):
            assert np.array_equal(q1, q2)
            assert np.array_equal(p1, p2)
            assert np.array_equal(f1, f2)


class TestConfig:
    def test_rates_must_divide(self):
        with pytest.raises(ValueError):
            SimConfig(inner_rate=300)  # 90 Hz operator does not divide
        with pytest.raises(ValueError):
            SimConfig(hand_rate=40)
        cfg = SimConfig(inner_rate=450, hand_rate=50)
        assert cfg.inner_dt == pytest.approx(1.0 / 450.0)

    def test_object_spec_validation(self):
        with pytest.raises(ValueError):
            ObjectSpec("x", "cone", np.array([0.1]))
        with pytest.raises(ValueError):
            ObjectSpec("x", "sphere", np.array([0.1, 0.2]))
        with pytest.raises(ValueError):
            ObjectSpec("x", "sphere", np.array([0.1]), friction=2.5)
        with pytest.raises(ValueError):
            ObjectSpec("x", "box", np.array([0.1, 0.1, -0.1]))
