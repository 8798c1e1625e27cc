"""Tactile force features: resultants, padded force images, and the
convolutional autoencoder that compresses each fingertip's image to a
128-float latent.

One autoencoder is shared across all five fingertips; latents destined
for episode sidecars are stored float32, everything else stays float64.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from . import kernels as K
from . import nncore as nn
from .nncore import Tensor, TrainingError
from .simworld import TAXEL_ROWS, TAXEL_COLS

FORCE_NORM = 15.0        # N per axis; full-scale fingertip grip force
IMAGE_SIZE = 16
ROW_OFFSET = (IMAGE_SIZE - TAXEL_ROWS) // 2   # 3: raw rows land at 3..12
COL_OFFSET = (IMAGE_SIZE - TAXEL_COLS) // 2   # 2: raw cols land at 2..13
LATENT_DIM = 128


def resultants(frame: np.ndarray) -> np.ndarray:
    """Per-fingertip net contact force: sum each taxel slab. (F,3) N."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 4 or frame.shape[1:] != (TAXEL_ROWS, TAXEL_COLS, 3):
        raise ValueError(
            f"expected (fingers, {TAXEL_ROWS}, {TAXEL_COLS}, 3) frame, "
            f"got {frame.shape}")
    return frame.reshape(frame.shape[0], -1, 3).sum(axis=1)


def to_tactile_image(raw: np.ndarray) -> np.ndarray:
    """One fingertip slab (10x12x3) -> normalized 16x16x3 image.

    Forces divide by FORCE_NORM and clamp to [-1, 1]; the slab sits
    centered (rows 3..12, cols 2..13) and the border stays exactly zero.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (TAXEL_ROWS, TAXEL_COLS, 3):
        raise ValueError(f"expected ({TAXEL_ROWS}, {TAXEL_COLS}, 3) slab, "
                         f"got {raw.shape}")
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3))
    img[ROW_OFFSET:ROW_OFFSET + TAXEL_ROWS,
        COL_OFFSET:COL_OFFSET + TAXEL_COLS] = \
        np.clip(raw / FORCE_NORM, -1.0, 1.0)
    return img


def to_tactile_images(frame: np.ndarray) -> np.ndarray:
    """All fingertips at once: (F,10,12,3) -> (F,16,16,3)."""
    frame = np.asarray(frame, dtype=np.float64)
    return np.stack([to_tactile_image(slab) for slab in frame])


def from_tactile_image(img: np.ndarray) -> np.ndarray:
    """Inverse of to_tactile_image on the support region (below clamp)."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ValueError("expected a 16x16x3 image")
    return img[ROW_OFFSET:ROW_OFFSET + TAXEL_ROWS,
               COL_OFFSET:COL_OFFSET + TAXEL_COLS] * FORCE_NORM


def cae_recon_loss(img: np.ndarray, recon: np.ndarray) -> float:
    """Mean squared error over all 3*16*16 entries of one image."""
    img = np.asarray(img, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE, 3) or recon.shape != img.shape:
        raise nn.DimensionError("reconstruction loss needs two 16x16x3 "
                                "images")
    d = img - recon
    return float(np.sum(d * d) / (3.0 * IMAGE_SIZE * IMAGE_SIZE))


class TactileAutoencoder:
    """Conv encoder (32/64/128 filters, stride 2) to a 2x2x128 map,
    projected to a 128 latent; mirrored transposed-conv decoder."""

    # Contact images live at ~1e-2 amplitude; starting the batchnorm
    # scales small keeps early decoder output near the data scale.
    # With the default gamma of 1 reconstruction stalls two decades high.
    GAMMA_INIT = 0.1

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.seed = seed
        g = self.GAMMA_INIT
        self.conv1 = nn.Conv2d(3, 32, rng, name="enc1")
        self.bn1 = nn.BatchNorm(32, name="enc_bn1", gamma_init=g)
        self.conv2 = nn.Conv2d(32, 64, rng, name="enc2")
        self.bn2 = nn.BatchNorm(64, name="enc_bn2", gamma_init=g)
        self.conv3 = nn.Conv2d(64, 128, rng, name="enc3")
        self.proj = nn.Dense(2 * 2 * 128, LATENT_DIM, rng, init="xavier",
                             name="enc_proj")
        self.unproj = nn.Dense(LATENT_DIM, 2 * 2 * 128, rng,
                               name="dec_proj")
        self.tconv1 = nn.TConv2d(128, 64, rng, name="dec1")
        self.dbn1 = nn.BatchNorm(64, name="dec_bn1", gamma_init=g)
        self.tconv2 = nn.TConv2d(64, 32, rng, name="dec2")
        self.dbn2 = nn.BatchNorm(32, name="dec_bn2", gamma_init=g)
        self.tconv3 = nn.TConv2d(32, 3, rng, name="dec3")

    def _layers(self):
        return [self.conv1, self.bn1, self.conv2, self.bn2, self.conv3,
                self.proj, self.unproj, self.tconv1, self.dbn1,
                self.tconv2, self.dbn2, self.tconv3]

    def params(self):
        out = []
        for l in self._layers():
            out.extend(l.params())
        return out

    def train(self, flag: bool):
        nn.set_training(self._layers(), flag)

    def encode(self, images: np.ndarray) -> Tensor:
        """(N,16,16,3) images -> (N,128) latents."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE,
                                                    3):
            raise nn.DimensionError("encoder expects (N,16,16,3) images")
        x = Tensor(images.transpose(0, 3, 1, 2))
        x = nn.relu(self.bn1(self.conv1(x)))
        x = nn.relu(self.bn2(self.conv2(x)))
        x = self.conv3(x)                     # (N, 128, 2, 2)
        return self.proj(nn.reshape(x, (images.shape[0], -1)))

    def decode(self, z: Tensor) -> Tensor:
        """(N,128) latents -> (N,3,16,16) channel-first reconstructions."""
        x = nn.reshape(self.unproj(z), (z.shape[0], 128, 2, 2))
        x = nn.relu(self.dbn1(self.tconv1(x)))
        x = nn.relu(self.dbn2(self.tconv2(x)))
        return self.tconv3(x)

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        out = self.decode(self.encode(images)).data
        return out.transpose(0, 2, 3, 1)

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
                           meta={"kind": "tactile_cae", "seed": self.seed})

    @classmethod
    def load(cls, path: str) -> "TactileAutoencoder":
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "tactile_cae":
            raise ValueError("checkpoint is not a tactile autoencoder")
        model = cls(seed=int(meta.get("seed", 0)))
        for l in model._layers():
            for name, p in l.named_params():
                p.data = arrays[name].astype(np.float64)
            if isinstance(l, nn.BatchNorm):
                l.running_mean = arrays[f"{l.name}.running_mean"].copy()
                l.running_var = arrays[f"{l.name}.running_var"].copy()
        return model


def encode_fingertips(model: TactileAutoencoder,
                      frame: np.ndarray) -> np.ndarray:
    """TactileFrame (5,10,12,3) -> (5,128) float32 latents, eval mode."""
    model.train(False)
    z = model.encode(to_tactile_images(frame)).data
    if not np.all(np.isfinite(z)):
        raise TrainingError("encoder produced non-finite latents")
    return z.astype(np.float32)


def sample_contact_images(n: int, seed: int = 0) -> np.ndarray:
    """Seeded synthetic contact images for autoencoder training.

    Draws one contact patch per image through the same taxel kernel and
    spread the simulator uses, with randomized center, normal force, and
    shear (capped at a friction-like fraction of the normal load), then
    pads and normalizes. Returns (n, 16, 16, 3).
    """
    rng = np.random.default_rng(seed)
    images = np.zeros((n, IMAGE_SIZE, IMAGE_SIZE, 3))
    for i in range(n):
        fn = rng.uniform(0.5, 20.0)
        cap = 0.8 * fn
        sx, sy = rng.uniform(-cap, cap, size=2)
        rc = rng.uniform(2.0, TAXEL_ROWS - 3.0)
        cc = rng.uniform(3.0, TAXEL_COLS - 4.0)
        raw = K.tactile_patch(fn, sx, sy, rc, cc, 1.5,
                              TAXEL_ROWS, TAXEL_COLS)
        images[i] = to_tactile_image(raw)
    return images


def evaluate_cae(model: TactileAutoencoder, images: np.ndarray) -> float:
    """Mean reconstruction loss over a held-out set, eval mode."""
    model.train(False)
    recon = model.reconstruct(images)
    losses = [cae_recon_loss(img, rec) for img, rec in zip(images, recon)]
    return float(np.mean(losses))


def train_cae(images: np.ndarray, steps: int = 2000, batch_size: int = 64,
              lr: float = 1e-3, seed: int = 0,
              log_every: int = 0) -> Tuple[TactileAutoencoder, list]:
    """Fit the autoencoder by minimizing the reconstruction loss.

    Deterministic per seed. Raises TrainingError if the loss goes
    non-finite. Returns the trained model and the per-step loss trace.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise nn.DimensionError("training expects (N,16,16,3) images")
    model = TactileAutoencoder(seed=seed)
    model.train(True)
    opt = nn.Adam(model.params(), lr=lr)
    rng = np.random.default_rng(seed + 1)
    n = images.shape[0]
    trace = []
    step = 0
    while step < steps:
        for idx in nn.batches(n, batch_size, rng):
            if step >= steps:
                break
            batch = images[idx]
            x = Tensor(batch.transpose(0, 3, 1, 2))
            recon = model.decode(model.encode(batch))
            diff = recon - x
            loss = nn.tmean(diff * diff)
            val = float(loss.data)
            if not np.isfinite(val):
                raise TrainingError(
                    f"reconstruction loss diverged at step {step}: {val}")
            trace.append(val)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            if log_every and step % log_every == 0:
                print(f"cae step {step}: loss {val:.6f}")
    model.train(False)
    return model, trace
