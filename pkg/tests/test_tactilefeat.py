"""Tactile feature pipeline: resultants, image padding, autoencoder."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import deskgrasp.nncore as nn
import deskgrasp.tactilefeat as tf


class TestResultants:
    def test_zero_frame(self):
        np.testing.assert_array_equal(
            tf.resultants(np.zeros((5, 10, 12, 3))), np.zeros((5, 3)))

    def test_uniform_z_sums_over_all_taxels(self):
        frame = np.zeros((5, 10, 12, 3))
        frame[2, :, :, 2] = 0.01
        r = tf.resultants(frame)
        np.testing.assert_allclose(r[2], [0.0, 0.0, 1.2], atol=1e-12)
        np.testing.assert_array_equal(r[[0, 1, 3, 4]], 0.0)

    def test_linearity_under_negation(self):
        rng = np.random.default_rng(0)
        frame = rng.normal(size=(5, 10, 12, 3))
        np.testing.assert_allclose(tf.resultants(-frame),
                                   -tf.resultants(frame), atol=1e-12)

    def test_taxel_permutation_invariance(self):
        rng = np.random.default_rng(1)
        frame = rng.normal(size=(5, 10, 12, 3))
        flat = frame.reshape(5, 120, 3)
        perm = rng.permutation(120)
        shuffled = flat[:, perm].reshape(5, 10, 12, 3)
        np.testing.assert_allclose(tf.resultants(shuffled),
                                   tf.resultants(frame), atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            tf.resultants(np.zeros((5, 10, 12)))


class TestTactileImage:
    def test_zero_slab_zero_image(self):
        np.testing.assert_array_equal(
            tf.to_tactile_image(np.zeros((10, 12, 3))), np.zeros((16, 16, 3)))

    def test_corner_placement_and_normalization(self):
        raw = np.zeros((10, 12, 3))
        raw[0, 0, 0] = 15.0
        img = tf.to_tactile_image(raw)
        assert img[3, 2, 0] == 1.0
        assert img.sum() == 1.0

    def test_clamp_at_unit(self):
        raw = np.zeros((10, 12, 3))
        raw[4, 7, 1] = 30.0
        raw[5, 7, 2] = -30.0
        img = tf.to_tactile_image(raw)
        assert img[7, 9, 1] == 1.0
        assert img[8, 9, 2] == -1.0

    def test_padding_region_exactly_zero(self):
        rng = np.random.default_rng(2)
        img = tf.to_tactile_image(rng.normal(scale=5.0, size=(10, 12, 3)))
        mask = np.ones((16, 16, 3), dtype=bool)
        mask[3:13, 2:14] = False
        np.testing.assert_array_equal(img[mask], 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invertible_below_clamp(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(-14.9, 14.9, size=(10, 12, 3))
        back = tf.from_tactile_image(tf.to_tactile_image(raw))
        np.testing.assert_allclose(back, raw, atol=1e-12)

    def test_batch_helper_shape(self):
        frame = np.zeros((5, 10, 12, 3))
        assert tf.to_tactile_images(frame).shape == (5, 16, 16, 3)


class TestReconLoss:
    def test_equal_images_zero(self):
        rng = np.random.default_rng(3)
        img = rng.normal(size=(16, 16, 3))
        assert tf.cae_recon_loss(img, img) == 0.0

    def test_single_entry_difference(self):
        img = np.zeros((16, 16, 3))
        recon = np.zeros((16, 16, 3))
        recon[5, 5, 1] = 0.3
        loss = tf.cae_recon_loss(img, recon)
        assert abs(loss - 1.171875e-4) < 1e-15
        assert loss == 0.3 ** 2 / 768.0

    def test_uniform_difference(self):
        img = np.zeros((16, 16, 3))
        recon = np.full((16, 16, 3), 0.25)
        assert abs(tf.cae_recon_loss(img, recon) - 0.0625) < 1e-15

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(16, 16, 3))
        b = rng.normal(size=(16, 16, 3))
        assert tf.cae_recon_loss(a, b) == tf.cae_recon_loss(b, a)
        assert tf.cae_recon_loss(a, b) > 0.0

    def test_shape_mismatch(self):
        with pytest.raises(nn.DimensionError):
            tf.cae_recon_loss(np.zeros((16, 16, 3)), np.zeros((16, 16)))


class TestAutoencoder:
    def test_latent_and_reconstruction_shapes(self):
        model = tf.TactileAutoencoder(seed=0)
        model.train(False)
        images = tf.sample_contact_images(4, seed=5)
        z = model.encode(images)
        assert z.shape == (4, 128)
        recon = model.reconstruct(images)
        assert recon.shape == (4, 16, 16, 3)

    def test_preprojection_map_is_2x2x128(self):
        model = tf.TactileAutoencoder(seed=0)
        model.train(False)
        images = tf.sample_contact_images(2, seed=6)
        x = nn.Tensor(images.transpose(0, 3, 1, 2))
        x = nn.relu(model.bn1(model.conv1(x)))
        x = nn.relu(model.bn2(model.conv2(x)))
        assert model.conv3(x).shape == (2, 128, 2, 2)

    def test_encode_fingertips_float32(self):
        model = tf.TactileAutoencoder(seed=0)
        rng = np.random.default_rng(7)
        frame = rng.uniform(-5, 5, size=(5, 10, 12, 3))
        z = tf.encode_fingertips(model, frame)
        assert z.shape == (5, 128)
        assert z.dtype == np.float32
        assert np.all(np.isfinite(z))

    def test_checkpoint_roundtrip_preserves_latents(self, tmp_path):
        images = tf.sample_contact_images(64, seed=8)
        model, _ = tf.train_cae(images, steps=10, batch_size=16, seed=8)
        path = str(tmp_path / "cae.dxc")
        model.save(path)
        clone = tf.TactileAutoencoder.load(path)
        clone.train(False)
        model.train(False)
        np.testing.assert_array_equal(clone.encode(images[:4]).data,
                                      model.encode(images[:4]).data)

    def test_load_rejects_foreign_checkpoint(self, tmp_path):
        path = str(tmp_path / "other.dxc")
        nn.save_checkpoint(path, {"w": np.ones(3)}, meta={"kind": "other"})
        with pytest.raises(ValueError):
            tf.TactileAutoencoder.load(path)


class TestTraining:
    def test_zero_dataset_reaches_tiny_loss(self):
        images = np.zeros((64, 16, 16, 3))
        model, trace = tf.train_cae(images, steps=30, batch_size=16, seed=9)
        assert tf.evaluate_cae(model, images) < 1e-6

    def test_training_reduces_heldout_loss(self):
        images = tf.sample_contact_images(320, seed=10)
        train, held = images[:256], images[256:]
        fresh = tf.TactileAutoencoder(seed=11)
        before = tf.evaluate_cae(fresh, held)
        model, trace = tf.train_cae(train, steps=220, batch_size=32,
                                    seed=11)
        after = tf.evaluate_cae(model, held)
        assert after < 0.5 * before
        assert len(trace) == 220

    def test_training_is_deterministic(self):
        images = tf.sample_contact_images(96, seed=12)

        def run():
            model, _ = tf.train_cae(images, steps=12, batch_size=32,
                                    seed=13)
            return model.proj.w.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_nonfinite_loss_raises(self):
        images = tf.sample_contact_images(64, seed=14)
        images[3, 8, 8, 0] = np.nan
        with pytest.raises(tf.TrainingError, match="diverged"):
            tf.train_cae(images, steps=60, batch_size=64, seed=14)

    def test_sampled_images_are_valid(self):
        images = tf.sample_contact_images(32, seed=15)
        assert np.abs(images).max() <= 1.0
        mask = np.ones((16, 16, 3), dtype=bool)
        mask[3:13, 2:14] = False
        np.testing.assert_array_equal(images[:, mask], 0.0)
        # same seed, same images
        np.testing.assert_array_equal(images,
                                      tf.sample_contact_images(32, seed=15))
