"""Blind behavior-cloned hand closure: a window LSTM over hand state.

The policy never sees the arm or a camera. At every hand tick it reads
a short history of joint positions, joint torques, and fingertip force
resultants, and emits the next absolute hand-joint command. Training
data comes from two scripted sources against seeded scenes: the
force-adaptive copilot running the closure law, and a jittered
operator that closes finger by finger with seeded timing and pose
noise. Both use the graze press, so the closure onset always has a
tactile cue the policy can see.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nncore as nn
from .dataops import EpisodeRecord, episode_hash, read_episode, write_episode
from .graspctl import HandCopilot, finger_of_hand_joint
from .kinematics import RobotModel, fk
from .nncore import Tensor, TrainingError
from .robots import xhand12
from .rollout import (GRASP_WORKSPACE, GraspScript, GraspScriptConfig,
                      SessionConfig, grasp_width, park_arm, pinch_preshape,
                      run_session)
from .simworld import SimConfig, SuccessCriteria, spawn_scene, tip_frames
from .tactilefeat import resultants

WINDOW = 20              # ticks of history at 50 Hz (0.4 s)
STATE_DIM = 24           # 12 joint positions + 12 joint torques
FORCE_DIM = 15           # five fingertip force resultants
INPUT_DIM = STATE_DIM + FORCE_DIM
ACTION_DIM = 12
HIDDEN = 128             # encoder MLP width
LSTM_HIDDEN = 256

# the simulator has no motor model, so the torque channel maps each
# fingertip load through a fixed lever arm per joint type
TORQUE_LEVER = {"abd": 0.02, "curl0": 0.08, "curl1": 0.035}   # m

# data-collection script: graze press after the descent so the second
# pinch finger touches the object right when the closure should start
COLLECT_SCRIPT = dict(approach=1.2, descend=0.9, graze=0.007,
                      graze_time=0.4, settle_max=1.6, lift=0.8, hold=0.7)
COLLECT_TRIGGER = 0.004  # m; tight enough that the copilot fires at
                         # the press contact, not on approach clearance
EPISODE_SECONDS = 7.0
HOLD_TICKS = 30


# ---------------------------------------------------------------------------
# Inputs and windows
# ---------------------------------------------------------------------------

def torque_levers(model: RobotModel) -> np.ndarray:
    """Per hand joint lever arm, keyed by the joint name suffix."""
    out = np.empty(len(model.hand_joints))
    for i, j in enumerate(model.hand_joints):
        out[i] = TORQUE_LEVER[model.joints[j].name.rsplit("_", 1)[1]]
    return out


def bc_input(q_hand: np.ndarray, tactile_res: np.ndarray,
             levers: np.ndarray, fingers: np.ndarray) -> np.ndarray:
    """One 39-entry policy input: positions, torques, force resultants.

    The torque entries are the clamped fingertip normal loads mapped
    through each joint's lever arm; the force block is the raw (5,3)
    resultant, row-major.
    """
    q_hand = np.asarray(q_hand, dtype=np.float64).reshape(-1)
    res = np.asarray(tactile_res, dtype=np.float64).reshape(-1, 3)
    if q_hand.shape != (ACTION_DIM,) or res.shape != (FORCE_DIM // 3, 3):
        raise nn.DimensionError("input needs 12 joint positions and 5 "
                                "force resultants")
    load = np.clip(res[:, 2], 0.0, None)
    return np.concatenate([q_hand, levers * load[fingers], res.ravel()])


def episode_inputs(record: EpisodeRecord,
                   model: RobotModel) -> np.ndarray:
    """Stack every tick of an episode into (n, 39) policy inputs."""
    levers = torque_levers(model)
    fingers = finger_of_hand_joint(model)
    n = len(record.ticks)
    q = np.stack([t.q_hand for t in record.ticks])
    res = np.stack([t.tactile_res for t in record.ticks]).reshape(n, -1, 3)
    load = np.clip(res[:, :, 2], 0.0, None)
    tau = levers[None, :] * load[:, fingers]
    return np.concatenate([q, tau, res.reshape(n, -1)], axis=1)


def episode_pairs(record: EpisodeRecord, model: RobotModel
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Cloning pairs: the input at tick k, the command logged at k+1.

    Tick k+1's hand command is the one the controller computed from
    tick k's state, so this pairing matches what a live driver sees.
    Episodes must be logged at the hand rate.
    """
    if record.rates["hand"] != record.rates["log"]:
        raise ValueError("cloning pairs need hand-rate logging "
                         f"(log {record.rates['log']} != hand "
                         f"{record.rates['hand']})")
    if len(record.ticks) < 2:
        raise ValueError("episode too short to pair")
    inputs = episode_inputs(record, model)
    actions = np.stack([t.cmd_hand for t in record.ticks[1:]])
    return inputs[:-1], actions


def make_windows(inputs: np.ndarray, T: int = WINDOW) -> np.ndarray:
    """(n, 39) inputs -> (n, T, 39) sliding windows.

    Row k holds ticks k-T+1 .. k in time order; histories shorter than
    T are left-padded with the first frame.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise nn.DimensionError("windows need a (n, dim) input stack")
    if T < 1:
        raise ValueError("window length must be at least 1")
    idx = np.arange(inputs.shape[0])[:, None] \
        - np.arange(T - 1, -1, -1)[None, :]
    return inputs[np.clip(idx, 0, None)]


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

class BCPolicy:
    """Parallel state and force MLP encoders into one LSTM layer.

    Each encoder is three Dense+BatchNorm+ReLU stages of width 128;
    their outputs concatenate into the 256-wide feature the LSTM
    consumes step by step. A linear head maps the final hidden state
    to the 12 absolute joint targets.
    """

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.state_mlp: List[nn.Dense] = []
        self.state_bns: List[nn.BatchNorm] = []
        self.force_mlp: List[nn.Dense] = []
        self.force_bns: List[nn.BatchNorm] = []
        for i, fan_in in enumerate((STATE_DIM, HIDDEN, HIDDEN)):
            self.state_mlp.append(nn.Dense(fan_in, HIDDEN, rng,
                                           name=f"state{i + 1}"))
            self.state_bns.append(nn.BatchNorm(HIDDEN,
                                               name=f"state_bn{i + 1}"))
        for i, fan_in in enumerate((FORCE_DIM, HIDDEN, HIDDEN)):
            self.force_mlp.append(nn.Dense(fan_in, HIDDEN, rng,
                                           name=f"force{i + 1}"))
            self.force_bns.append(nn.BatchNorm(HIDDEN,
                                               name=f"force_bn{i + 1}"))
        self.cell = nn.LSTMCell(2 * HIDDEN, LSTM_HIDDEN, rng, name="lstm")
        self.head = nn.Dense(LSTM_HIDDEN, ACTION_DIM, rng, init="xavier",
                             name="head")

    def _layers(self):
        out: List[nn.Layer] = []
        for dense, bnorm in zip(self.state_mlp, self.state_bns):
            out += [dense, bnorm]
        for dense, bnorm in zip(self.force_mlp, self.force_bns):
            out += [dense, bnorm]
        out += [self.cell, self.head]
        return out

    def params(self):
        out = []
        for l in self._layers():
            out.extend(l.params())
        return out

    def train(self, flag: bool):
        nn.set_training(self._layers(), flag)

    def features(self, x: Tensor) -> Tensor:
        """(N, 39) inputs -> (N, 256) fused features."""
        s = nn.narrow(x, 1, 0, STATE_DIM)
        f = nn.narrow(x, 1, STATE_DIM, FORCE_DIM)
        for dense, bnorm in zip(self.state_mlp, self.state_bns):
            s = nn.relu(bnorm(dense(s)))
        for dense, bnorm in zip(self.force_mlp, self.force_bns):
            f = nn.relu(bnorm(dense(f)))
        return nn.concat([s, f], axis=1)

    def forward_windows(self, windows: np.ndarray) -> Tensor:
        """(B, T, 39) windows -> (B, 12) actions, with gradients."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != INPUT_DIM:
            raise nn.DimensionError(
                f"expected (B, T, {INPUT_DIM}) windows, got "
                f"{windows.shape}")
        b, t = windows.shape[:2]
        # encode every timestep in one batch so train-mode batchnorm
        # sees the same statistics at every step of the rollout
        flat = Tensor(windows.transpose(1, 0, 2).reshape(t * b, INPUT_DIM))
        feats = self.features(flat)
        h, c = self.cell.init_state(b)
        for i in range(t):
            h, c = self.cell(nn.narrow(feats, 0, i * b, b), h, c)
        return self.head(h)

    def named_arrays(self):
        arrays = {}
        for l in self._layers():
            for name, p in l.named_params():
                arrays[name] = p.data
            if isinstance(l, nn.BatchNorm):
                for name, arr in l.state_arrays():
                    arrays[name] = arr
        return arrays

    def save(self, path: str):
        nn.save_checkpoint(path, self.named_arrays(),
                           meta={"kind": "bc_lstm", "seed": self.seed})

    @classmethod
    def load(cls, path: str) -> "BCPolicy":
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "bc_lstm":
            raise ValueError("checkpoint is not a cloned hand policy")
        policy = cls(seed=int(meta.get("seed", 0)))
        for l in policy._layers():
            for name, p in l.named_params():
                p.data = arrays[name].astype(np.float64)
            if isinstance(l, nn.BatchNorm):
                l.running_mean = arrays[f"{l.name}.running_mean"].copy()
                l.running_var = arrays[f"{l.name}.running_var"].copy()
        return policy


def bc_forward(policy: BCPolicy, window: np.ndarray) -> np.ndarray:
    """Eval-mode action for one (T, 39) window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != INPUT_DIM:
        raise nn.DimensionError(
            f"expected a (T, {INPUT_DIM}) window, got {window.shape}")
    policy.train(False)
    return policy.forward_windows(window[None]).data[0].copy()


def bc_loss(pred, target: np.ndarray, lambda_reg: float,
            params: Sequence[Tensor] = ()) -> Tensor:
    """Mean squared action error plus an L2 parameter penalty.

    The data term averages over the batch only; each residual's squared
    norm sums over the 12 action entries.
    """
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64)
    if pred.data.ndim != 2 or pred.data.shape[1] != ACTION_DIM \
            or pred.data.shape != target.shape:
        raise nn.DimensionError("pred and target batches must both be "
                                f"(N, {ACTION_DIM})")
    if pred.data.shape[0] < 1:
        raise ValueError("loss needs at least one sample")
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    diff = pred - Tensor(target)
    loss = nn.scale(nn.tsum(diff * diff), 1.0 / pred.data.shape[0])
    if lambda_reg > 0:
        for p in params:
            loss = loss + nn.scale(nn.tsum(p * p), lambda_reg)
    return loss


@dataclass
class BCTrainConfig:
    lambda_reg: float = 0.0
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 30
    seed: int = 0
    # std (rad) of a window-constant offset added to the measured joint
    # positions during training. The recorded postures sit exactly on the
    # reference trajectory, so without this a cloned policy never learns
    # to pull back toward it and its own sub-milliradian bias compounds
    # tick by tick until the grasp misses.
    input_noise: float = 0.0

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be at least 1")
        if self.input_noise < 0:
            raise ValueError("input_noise must be nonnegative")


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

class JitteredOperator(GraspScript):
    """Operator-style closure: per-finger ramps with seeded jitter.

    The arm follows the usual scripted legs (plus any pose noise from
    the config); the fingers hold the pre-shape until the press has
    landed, then each finger closes along its own minimum-jerk ramp
    with a seeded delay, duration, and depth.
    """

    def __init__(self, model: RobotModel, object_id: str,
                 cfg: Optional[GraspScriptConfig] = None):
        super().__init__(model, object_id, cfg)
        c = self.cfg
        nf = len(model.fingers)
        press_mid = c.approach + c.descend + 0.5 * c.graze_time
        self._start = press_mid + self._rng.uniform(0.05, 0.35, size=nf)
        self._ramp = 0.6 + self._rng.uniform(0.0, 0.4, size=nf)
        # the closure law settles near 0.1..0.27 of each joint's span;
        # ramping much past that crushes through the object and the
        # flipped contact normals never form an opposing pair
        self._depth = self._rng.uniform(0.12, 0.28, size=nf)
        self._map = finger_of_hand_joint(model)

    def hand_target(self, view) -> np.ndarray:
        if self._anchors is None:
            self._plan(view)
        hi = self.model.joint_limits()[1][self.model.hand_joints]
        s = np.clip((view.t - self._start[self._map])
                    / self._ramp[self._map], 0.0, 1.0)
        prof = s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
        span = self._depth[self._map] * (hi - self._preshape)
        return self._preshape + prof * span


def _episode_setup(model: RobotModel, q_park: np.ndarray, scene_seed: int,
                   cfg: GraspScriptConfig):
    """Seeded single-object scene, parked arm, object-sized pre-shape."""
    world = spawn_scene(seed=scene_seed, workspace=GRASP_WORKSPACE,
                        n_objects=1, model=model,
                        config=SimConfig(log_rate=50))
    spec = next(s for s in world.specs if s.id != "table")
    width = grasp_width(spec) \
        + 2.0 * (world.config.tip_radius + cfg.tip_clearance)
    preshape = pinch_preshape(model, width)
    world.q[model.arm_joints] = q_park
    world.q[model.hand_joints] = preshape
    poses = fk(model, world.q)
    world.prev_tips = np.stack([poses[f].position
                                for f in tip_frames(model)])
    scene = {"seed": scene_seed, "workspace": list(GRASP_WORKSPACE),
             "n_objects": 1, "q0_arm": q_park.tolist(),
             "q0_hand": preshape.tolist()}
    return world, spec, scene


def generate_bc_dataset(out_dir: str, seed: int = 0, n_param: int = 68,
                        n_teleop: int = 150,
                        model: Optional[RobotModel] = None,
                        min_attached: float = 0.9) -> dict:
    """Write a hand-policy dataset of copilot and operator episodes.

    Every episode runs to a definite outcome: attached at the end, or
    timed out trying. The attached fraction over the copilot episodes
    is the data-quality gate; a dataset below `min_attached` raises
    after writing, so the bad data is inspectable but unusable by
    accident. Same seed, same bytes.
    """
    model = model or xhand12()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    q_park = park_arm(model)
    index: Dict[str, str] = {}
    attached = {"param": 0, "teleop": 0}
    for kind, count in (("param", n_param), ("teleop", n_teleop)):
        for i in range(count):
            ep_seed = int(rng.integers(2 ** 31 - 1))
            cfg = GraspScriptConfig(
                seed=ep_seed,
                hand_mode="copilot" if kind == "param" else "preshape",
                noise_pos=0.0 if kind == "param" else 0.001,
                **COLLECT_SCRIPT)
            world, spec, scene = _episode_setup(model, q_park, ep_seed, cfg)
            if kind == "param":
                script: GraspScript = GraspScript(model, spec.id, cfg)
                copilot = HandCopilot(model, threshold=COLLECT_TRIGGER)
            else:
                script = JitteredOperator(model, spec.id, cfg)
                copilot = None
            sess = SessionConfig(max_seconds=EPISODE_SECONDS, scene=scene,
                                 criteria=SuccessCriteria(
                                     hold_ticks=HOLD_TICKS))
            rec, final = run_session(world, script, copilot, sess)
            attached[kind] += int(final.attachment is not None)
            name = f"{kind}_{i:03d}.jsonl"
            write_episode(str(out / name), rec)
            index[name] = episode_hash(str(out / name))
    meta = {"seed": seed, "n_param": n_param, "n_teleop": n_teleop,
            "attached_param":
                attached["param"] / n_param if n_param else 1.0,
            "attached_teleop":
                attached["teleop"] / n_teleop if n_teleop else 1.0,
            "episodes": index}
    (out / "dataset.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n")
    if meta["attached_param"] < min_attached:
        raise TrainingError(
            f"copilot episodes attached at {meta['attached_param']:.2f}, "
            f"gate is {min_attached}")
    return meta


@dataclass
class BCDataset:
    windows: np.ndarray          # (N, T, 39)
    actions: np.ndarray          # (N, 12)
    episode: np.ndarray          # (N,) index into ids
    ids: List[str]
    kinds: List[str]             # per episode: "param" or "teleop"
    scene_seeds: List[int]
    T: int


def load_bc_dataset(path: str, T: int = WINDOW, stride: int = 1,
                    model: Optional[RobotModel] = None,
                    kinds: Optional[Sequence[str]] = None) -> BCDataset:
    """Windowed training arrays from a generated dataset directory.

    `stride` subsamples window end ticks within each episode; `kinds`
    filters the episode sources ("param", "teleop").
    """
    if stride < 1:
        raise ValueError("stride must be at least 1")
    model = model or xhand12()
    root = Path(path)
    meta = json.loads((root / "dataset.json").read_text())
    wins, acts, epi = [], [], []
    ids: List[str] = []
    kind_of: List[str] = []
    seeds: List[int] = []
    for name in sorted(meta["episodes"]):
        kind = name.split("_")[0]
        if kinds is not None and kind not in kinds:
            continue
        rec = read_episode(str(root / name))
        inputs, actions = episode_pairs(rec, model)
        w = make_windows(inputs, T)[::stride]
        wins.append(w)
        acts.append(actions[::stride])
        epi.append(np.full(w.shape[0], len(ids), dtype=np.int64))
        ids.append(name)
        kind_of.append(kind)
        seeds.append(int(rec.scene["seed"]))
    if not wins:
        raise ValueError("dataset holds no matching episodes")
    return BCDataset(np.concatenate(wins), np.concatenate(acts),
                     np.concatenate(epi), ids, kind_of, seeds, T)


# ---------------------------------------------------------------------------
# Training and closed-loop evaluation
# ---------------------------------------------------------------------------

def predict_bc(policy: BCPolicy, windows: np.ndarray,
               batch: int = 512) -> np.ndarray:
    """Eval-mode actions for a stack of windows."""
    policy.train(False)
    return np.concatenate([policy.forward_windows(windows[i:i + batch]).data
                           for i in range(0, windows.shape[0], batch)])


def train_bc(data: BCDataset, config: BCTrainConfig,
             holdout: float = 0.15, log_every: int = 0
             ) -> Tuple[BCPolicy, dict]:
    """Fit the policy by cloning the recorded commands.

    Whole episodes (never single windows) go to the held-out set, so
    the reported per-joint MAE measures behavior on unseen grasps.
    Deterministic per seed; raises TrainingError if the loss goes
    non-finite.
    """
    n_ep = len(data.ids)
    rng = np.random.default_rng(config.seed)
    n_hold = int(round(holdout * n_ep))
    if holdout > 0 and n_hold == 0 and n_ep > 1:
        n_hold = 1
    held = rng.permutation(n_ep)[:n_hold]
    held_mask = np.isin(data.episode, held)
    x_train = data.windows[~held_mask]
    a_train = data.actions[~held_mask]
    if x_train.shape[0] == 0:
        raise ValueError("holdout left no training windows")

    policy = BCPolicy(seed=config.seed)
    policy.train(True)
    opt = nn.Adam(policy.params(), lr=config.lr)
    epoch_loss = []
    for epoch in range(config.epochs):
        losses = []
        for idx in nn.batches(x_train.shape[0], config.batch, rng):
            xb = x_train[idx]
            if config.input_noise > 0.0:
                # offset held constant across the window: the target is
                # robustness to slow drift, not to per-tick sensor noise
                xb = xb.copy()
                xb[:, :, :ACTION_DIM] += rng.normal(
                    0.0, config.input_noise, (xb.shape[0], 1, ACTION_DIM))
            pred = policy.forward_windows(xb)
            loss = bc_loss(pred, a_train[idx], config.lambda_reg,
                           policy.params())
            val = float(loss.data)
            if not np.isfinite(val):
                raise TrainingError(
                    f"cloning loss diverged at epoch {epoch}: {val}")
            losses.append(val)
            opt.zero_grad()
            loss.backward()
            opt.step()
        epoch_loss.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"bc epoch {epoch + 1}: loss {epoch_loss[-1]:.6f}")
    policy.train(False)

    report = {
        "epoch_loss": epoch_loss,
        "held_episodes": [data.ids[i] for i in sorted(held)],
        "param_norm": float(np.sqrt(sum(np.sum(p.data ** 2)
                                        for p in policy.params())))}
    if n_hold:
        pred = predict_bc(policy, data.windows[held_mask])
        mae = np.abs(pred - data.actions[held_mask]).mean(axis=0)
        report["held_out_mae"] = mae.tolist()
    return policy, report


class BCHandDriver(GraspScript):
    """Closed-loop evaluator: scripted arm, learned hand.

    The arm replays the same legs the data-collection script used; the
    hand command at every tick is the policy output on the live input
    window. The per-tick trace (force, command, measured position)
    feeds the evaluation statistics.
    """

    def __init__(self, model: RobotModel, object_id: str, policy: BCPolicy,
                 cfg: Optional[GraspScriptConfig] = None, T: int = WINDOW):
        super().__init__(model, object_id, cfg)
        policy.train(False)
        self.policy = policy
        self.T = T
        self._levers = torque_levers(model)
        self._map = finger_of_hand_joint(model)
        self._hist: List[np.ndarray] = []
        self.trace: List[dict] = []

    def hand_target(self, view) -> np.ndarray:
        if self._anchors is None:
            self._plan(view)
        x = bc_input(view.q_hand, resultants(view.frame),
                     self._levers, self._map)
        self._hist.append(x)
        n = len(self._hist)
        if n >= self.T:
            window = np.stack(self._hist[n - self.T:])
        else:
            window = np.stack([self._hist[0]] * (self.T - n) + self._hist)
        action = bc_forward(self.policy, window)
        self.trace.append({"t": view.t, "f_z": view.f_z.copy(),
                           "q": view.q_hand.copy(), "a": action})
        return action


def zero_contact_increments(trace: Sequence[dict],
                            fingers: np.ndarray) -> np.ndarray:
    """Commanded increments on force-free fingers once closing starts.

    The closure law commands its largest increments exactly when a
    finger feels nothing, so a faithful clone must keep pushing
    force-free fingers shut. Closing starts at the first tick whose
    mean commanded increment exceeds 0.01 rad.
    """
    start = None
    for i, row in enumerate(trace):
        if np.mean(row["a"] - row["q"]) > 0.01:
            start = i
            break
    if start is None:
        return np.empty(0)
    out = []
    for row in trace[start:]:
        free = row["f_z"][fingers] < 0.05
        if np.any(free):
            out.extend((row["a"] - row["q"])[free])
    return np.asarray(out)


def evaluate_bc(policy: BCPolicy, scene_seeds: Sequence[int],
                model: Optional[RobotModel] = None,
                T: int = WINDOW) -> dict:
    """Closed-loop grasp outcomes on seeded scenes.

    Each scene is set up exactly like data collection (parked arm,
    sized pre-shape, graze press) but the hand runs the policy instead
    of the copilot. Reports the success fraction and the pooled
    force-free closing increments.
    """
    model = model or xhand12()
    q_park = park_arm(model)
    fingers = finger_of_hand_joint(model)
    successes = []
    free_inc = []
    for s in scene_seeds:
        cfg = GraspScriptConfig(seed=int(s), **COLLECT_SCRIPT)
        world, spec, _ = _episode_setup(model, q_park, int(s), cfg)
        driver = BCHandDriver(model, spec.id, policy, cfg, T=T)
        sess = SessionConfig(max_seconds=EPISODE_SECONDS,
                             criteria=SuccessCriteria(hold_ticks=HOLD_TICKS))
        rec, _ = run_session(world, driver, None, sess)
        successes.append(bool(rec.success))
        free_inc.append(zero_contact_increments(driver.trace, fingers))
    pooled = np.concatenate(free_inc) if free_inc else np.empty(0)
    return {"success_rate": float(np.mean(successes)),
            "successes": successes,
            "zero_contact_mean_increment":
                float(pooled.mean()) if pooled.size else float("nan"),
            "zero_contact_samples": int(pooled.size)}
