"""Cloned hand policy: inputs, windows, loss, training, data pipeline."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import deskgrasp.bclstm as bc
import deskgrasp.dataops as do
import deskgrasp.nncore as nn
from deskgrasp.graspctl import finger_of_hand_joint
from deskgrasp.nncore import Tensor, TrainingError
from deskgrasp.robots import xhand12


@pytest.fixture(scope="module")
def model():
    return xhand12()


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    """Two copilot and two operator episodes, shared across tests."""
    root = tmp_path_factory.mktemp("bcds") / "d"
    meta = bc.generate_bc_dataset(str(root), seed=7, n_param=2, n_teleop=2)
    return str(root), meta


class TestInputs:
    def test_input_layout(self, model):
        levers = bc.torque_levers(model)
        fingers = finger_of_hand_joint(model)
        q = np.linspace(0.0, 1.1, 12)
        res = np.arange(15, dtype=np.float64).reshape(5, 3)
        x = bc.bc_input(q, res, levers, fingers)
        assert x.shape == (39,)
        np.testing.assert_array_equal(x[:12], q)
        np.testing.assert_array_equal(x[24:], res.ravel())
        # torque = lever * clamped normal load of the joint's finger
        load = np.clip(res[:, 2], 0.0, None)
        np.testing.assert_allclose(x[12:24], levers * load[fingers])

    def test_negative_load_clamps_torque_only(self, model):
        levers = bc.torque_levers(model)
        fingers = finger_of_hand_joint(model)
        res = np.zeros((5, 3))
        res[:, 2] = -4.0
        x = bc.bc_input(np.zeros(12), res, levers, fingers)
        np.testing.assert_array_equal(x[12:24], 0.0)
        assert np.all(x[26::3] == -4.0)

    def test_levers_by_joint_type(self, model):
        levers = bc.torque_levers(model)
        names = [model.joints[j].name for j in model.hand_joints]
        for name, lever in zip(names, levers):
            assert lever == bc.TORQUE_LEVER[name.rsplit("_", 1)[1]]

    def test_bad_shapes_raise(self, model):
        levers = bc.torque_levers(model)
        fingers = finger_of_hand_joint(model)
        with pytest.raises(nn.DimensionError):
            bc.bc_input(np.zeros(11), np.zeros((5, 3)), levers, fingers)
        with pytest.raises(nn.DimensionError):
            bc.bc_input(np.zeros(12), np.zeros((4, 3)), levers, fingers)


class TestWindows:
    def test_shape_and_padding(self):
        X = np.arange(6, dtype=np.float64)[:, None] * np.ones((1, 39))
        W = bc.make_windows(X, T=4)
        assert W.shape == (6, 4, 39)
        # short history pads on the left with the first frame
        np.testing.assert_array_equal(W[0, :, 0], [0, 0, 0, 0])
        np.testing.assert_array_equal(W[2, :, 0], [0, 0, 1, 2])
        np.testing.assert_array_equal(W[5, :, 0], [2, 3, 4, 5])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_full_windows_ignore_old_frames(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(bc.WINDOW, 3 * bc.WINDOW))
        X = rng.normal(size=(n, 39))
        W = bc.make_windows(X)
        k = int(rng.integers(bc.WINDOW - 1, n))
        np.testing.assert_array_equal(W[k], X[k - bc.WINDOW + 1:k + 1])
        # rewriting history older than the window changes nothing
        Y = X.copy()
        Y[:k - bc.WINDOW + 1] = rng.normal(size=(k - bc.WINDOW + 1, 39))
        np.testing.assert_array_equal(bc.make_windows(Y)[k], W[k])

    def test_validation(self):
        with pytest.raises(nn.DimensionError):
            bc.make_windows(np.zeros(39))
        with pytest.raises(ValueError, match="window length"):
            bc.make_windows(np.zeros((5, 39)), T=0)


class TestLoss:
    def test_perfect_prediction_is_zero(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(8, 12))
        assert float(bc.bc_loss(a, a, 0.0).data) == 0.0

    def test_uniform_offset(self):
        pred = np.full((1, 12), 0.1)
        tgt = np.zeros((1, 12))
        assert float(bc.bc_loss(pred, tgt, 0.0).data) \
            == pytest.approx(0.12, abs=1e-15)

    def test_penalty_term_alone(self):
        a = np.zeros((1, 12))
        theta = Tensor(np.array([2.0]), requires_grad=True)
        assert float(bc.bc_loss(a, a, 1.0, [theta]).data) == 4.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_zero_reg_recovers_mse(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        pred = rng.normal(size=(n, 12))
        tgt = rng.normal(size=(n, 12))
        params = [Tensor(rng.normal(size=4), requires_grad=True)]
        want = np.sum((pred - tgt) ** 2) / n
        got = float(bc.bc_loss(pred, tgt, 0.0, params).data)
        assert got == pytest.approx(want, rel=1e-12)
        lam = float(rng.uniform(0.1, 10.0))
        full = float(bc.bc_loss(pred, tgt, lam, params).data)
        penalty = lam * float(np.sum(params[0].data ** 2))
        assert full == pytest.approx(want + penalty, rel=1e-12)

    def test_validation(self):
        with pytest.raises(nn.DimensionError):
            bc.bc_loss(np.zeros((2, 11)), np.zeros((2, 11)), 0.0)
        with pytest.raises(nn.DimensionError):
            bc.bc_loss(np.zeros((2, 12)), np.zeros((3, 12)), 0.0)
        with pytest.raises(ValueError, match="nonnegative"):
            bc.bc_loss(np.zeros((2, 12)), np.zeros((2, 12)), -1.0)
        with pytest.raises(ValueError, match="nonnegative"):
            bc.BCTrainConfig(lambda_reg=-0.5)


class TestPolicy:
    def test_forward_deterministic(self):
        policy = bc.BCPolicy(seed=1)
        rng = np.random.default_rng(0)
        w = rng.normal(size=(bc.WINDOW, 39))
        a1 = bc.bc_forward(policy, w)
        a2 = bc.bc_forward(policy, w)
        assert a1.shape == (12,)
        np.testing.assert_array_equal(a1, a2)

    def test_constant_window_matches_manual_rollout(self):
        policy = bc.BCPolicy(seed=2)
        policy.train(False)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 39))
        window = np.tile(x, (bc.WINDOW, 1))
        feats = policy.features(Tensor(x))
        h, c = policy.cell.init_state(1)
        for _ in range(bc.WINDOW):
            h, c = policy.cell(feats, h, c)
        manual = policy.head(h).data[0]
        np.testing.assert_allclose(bc.bc_forward(policy, window), manual,
                                   atol=1e-12)

    def test_forward_shape_errors(self):
        policy = bc.BCPolicy(seed=0)
        with pytest.raises(nn.DimensionError):
            bc.bc_forward(policy, np.zeros((bc.WINDOW, 38)))
        with pytest.raises(nn.DimensionError):
            policy.forward_windows(np.zeros((2, 39)))

    def test_gradients_match_finite_differences(self):
        policy = bc.BCPolicy(seed=0)
        policy.train(True)
        rng = np.random.default_rng(4)
        windows = rng.normal(size=(4, 5, 39))
        actions = rng.normal(size=(4, 12))

        def loss_fn():
            return bc.bc_loss(policy.forward_windows(windows), actions,
                              1e-4, policy.params())

        assert nn.grad_check(policy.params(), loss_fn, coords=120,
                             seed=0) < 1e-4

    def test_checkpoint_round_trip(self, tmp_path):
        policy = bc.BCPolicy(seed=5)
        # nudge running stats away from their init so they must travel
        policy.train(True)
        rng = np.random.default_rng(6)
        policy.forward_windows(rng.normal(size=(3, 4, 39)))
        p = tmp_path / "bc.dxc"
        policy.save(str(p))
        back = bc.BCPolicy.load(str(p))
        w = rng.normal(size=(bc.WINDOW, 39))
        np.testing.assert_array_equal(bc.bc_forward(policy, w),
                                      bc.bc_forward(back, w))

    def test_checkpoint_kind_checked(self, tmp_path):
        p = tmp_path / "other.dxc"
        nn.save_checkpoint(str(p), {"x": np.zeros(3)},
                           meta={"kind": "not_a_policy"})
        with pytest.raises(ValueError, match="checkpoint"):
            bc.BCPolicy.load(str(p))


class TestDataset:
    def test_quality_fractions_recorded(self, tiny_dataset):
        _, meta = tiny_dataset
        assert meta["attached_param"] == 1.0
        assert set(meta["episodes"]) == {"param_000.jsonl",
                                         "param_001.jsonl",
                                         "teleop_000.jsonl",
                                         "teleop_001.jsonl"}

    def test_same_seed_identical_bytes(self, tiny_dataset, tmp_path):
        root, meta = tiny_dataset
        again = bc.generate_bc_dataset(str(tmp_path / "d2"), seed=7,
                                       n_param=2, n_teleop=2)
        assert again == meta
        for name, digest in meta["episodes"].items():
            assert do.episode_hash(str(tmp_path / "d2" / name)) == digest

    def test_quality_gate_raises(self, model, tmp_path, monkeypatch):
        class NeverCloses:
            def __init__(self, *a, **k):
                pass

            def tick(self, q_m, f_z, dist, dt):
                return np.asarray(q_m, dtype=np.float64).copy()

        monkeypatch.setattr(bc, "HandCopilot", NeverCloses)
        with pytest.raises(TrainingError, match="gate"):
            bc.generate_bc_dataset(str(tmp_path / "bad"), seed=0,
                                   n_param=1, n_teleop=0)
        # the rejected dataset is still on disk for inspection
        assert (tmp_path / "bad" / "dataset.json").exists()

    def test_episodes_end_attached_or_timeout(self, tiny_dataset, model):
        root, meta = tiny_dataset
        for name in meta["episodes"]:
            rec = do.read_episode(f"{root}/{name}")
            assert rec.success or rec.failure in ("failure", "timeout",
                                                  "not-held")
            assert rec.rates["log"] == rec.rates["hand"] == 50

    def test_pair_alignment(self, tiny_dataset, model):
        root, meta = tiny_dataset
        rec = do.read_episode(f"{root}/param_000.jsonl")
        inputs, actions = bc.episode_pairs(rec, model)
        n = len(rec.ticks)
        assert inputs.shape == (n - 1, 39)
        assert actions.shape == (n - 1, 12)
        np.testing.assert_array_equal(actions[3], rec.ticks[4].cmd_hand)
        np.testing.assert_array_equal(inputs[3, :12], rec.ticks[3].q_hand)

    def test_pairs_require_hand_rate_logging(self, model, tiny_dataset):
        root, _ = tiny_dataset
        rec = do.read_episode(f"{root}/param_000.jsonl")
        rec.rates["log"] = 30
        with pytest.raises(ValueError, match="hand-rate"):
            bc.episode_pairs(rec, model)

    def test_load_stride_and_kind_filter(self, tiny_dataset, model):
        root, _ = tiny_dataset
        full = bc.load_bc_dataset(root, model=model)
        strided = bc.load_bc_dataset(root, stride=3, model=model)
        param = bc.load_bc_dataset(root, kinds=("param",), model=model)
        assert full.windows.shape[1:] == (bc.WINDOW, 39)
        per_ep = [int(np.sum(full.episode == i))
                  for i in range(len(full.ids))]
        per_strided = [int(np.sum(strided.episode == i))
                       for i in range(len(strided.ids))]
        assert per_strided == [(n + 2) // 3 for n in per_ep]
        assert param.kinds == ["param", "param"]
        assert set(param.ids) < set(full.ids)
        with pytest.raises(ValueError, match="no matching"):
            bc.load_bc_dataset(root, kinds=("nope",), model=model)


@pytest.fixture(scope="module")
def loaded(tiny_dataset, model):
    root, _ = tiny_dataset
    return bc.load_bc_dataset(root, stride=4, kinds=("param",),
                              model=model)


class TestTraining:
    def test_smoke_run_reports(self, loaded):
        cfg = bc.BCTrainConfig(lr=1e-3, batch=16, epochs=3, seed=0)
        policy, report = bc.train_bc(loaded, cfg, holdout=0.5)
        assert len(report["epoch_loss"]) == 3
        assert all(np.isfinite(v) for v in report["epoch_loss"])
        assert report["epoch_loss"][-1] < report["epoch_loss"][0]
        assert len(report["held_out_mae"]) == 12
        assert len(report["held_episodes"]) == 1

    def test_deterministic_per_seed(self, loaded):
        cfg = bc.BCTrainConfig(lr=1e-3, batch=16, epochs=1, seed=3)
        p1, r1 = bc.train_bc(loaded, cfg, holdout=0.5)
        p2, r2 = bc.train_bc(loaded, cfg, holdout=0.5)
        assert r1["epoch_loss"] == r2["epoch_loss"]
        a1, a2 = p1.named_arrays(), p2.named_arrays()
        assert sorted(a1) == sorted(a2)
        for name in a1:
            np.testing.assert_array_equal(a1[name], a2[name])

    def test_heavy_penalty_shrinks_parameters(self, loaded):
        cfg0 = bc.BCTrainConfig(lambda_reg=0.0, lr=1e-3, batch=16,
                                epochs=2, seed=0)
        cfg3 = bc.BCTrainConfig(lambda_reg=1e3, lr=1e-3, batch=16,
                                epochs=2, seed=0)
        _, r0 = bc.train_bc(loaded, cfg0, holdout=0.5)
        _, r3 = bc.train_bc(loaded, cfg3, holdout=0.5)
        assert r3["param_norm"] < r0["param_norm"]

    def test_divergence_raises(self, loaded):
        cfg = bc.BCTrainConfig(lambda_reg=1e308, lr=1e-3, batch=16,
                               epochs=1, seed=0)
        with np.errstate(over="ignore"):
            with pytest.raises(TrainingError, match="diverged"):
                bc.train_bc(loaded, cfg, holdout=0.5)


class TestZeroContact:
    def test_increment_selection(self):
        fingers = finger_of_hand_joint(xhand12())
        q = np.zeros(12)
        hold = {"t": 0.0, "f_z": np.zeros(5), "q": q, "a": q.copy()}
        closing = {"t": 1.0, "f_z": np.array([0.0, 0.0, 3.0, 0.0, 0.0]),
                   "q": q, "a": np.full(12, 0.2)}
        inc = bc.zero_contact_increments([hold, closing], fingers)
        # middle finger carries force, so only the other four count
        assert inc.size == int(np.sum(fingers != 2))
        assert np.all(inc == 0.2)

    def test_no_closing_no_samples(self):
        fingers = finger_of_hand_joint(xhand12())
        q = np.zeros(12)
        rows = [{"t": 0.0, "f_z": np.zeros(5), "q": q, "a": q.copy()}]
        assert bc.zero_contact_increments(rows, fingers).size == 0
