"""
Slow end-to-end checks on trained models

Skipped unless LATENTFORGE_SLOW_TESTS=true; each one trains a model for
several minutes on a CPU.
"""
import functools
import unittest

import numpy as np

from config.schemas import CardsConfig, TrainConfig
from config.settings import Config
from modules import latentlab as lab
from modules.latticegraph import atom_patches, synth_honeycomb
from modules.models import decode_latents, make_model_config, one_hot
from modules.stochastic import latent_slices
from modules.synthdata import ImageBatch, corrupt, make_cards_dataset, rotate_batch, suit_templates
from modules.trainer import TrainingData, train
from utils.helpers import circular_correlation, wrap_angle

DIAMONDS = 3


@functools.lru_cache(maxsize=None)
def _cards_iii_rvae():
    data = make_cards_dataset(CardsConfig.preset('cards-iii', count_per_suit=1000, seed=8))
    model = make_model_config('rvae', image_size=32, k=2, encoder_hidden=(512, 512),
                              decoder_hidden=(512, 512), dataset='cards-iii')
    ckpt, _ = train(TrainConfig(epochs=30, batch_size=64, learning_rate=1e-3, seed=0), model, data)
    return ckpt, data


def _unlabeled(batch: ImageBatch) -> ImageBatch:
    return ImageBatch(images=batch.images, meta=batch.meta)


@unittest.skipUnless(Config.SLOW_TESTS, "set LATENTFORGE_SLOW_TESTS=true to run training acceptance checks")
class TestTrainedModels(unittest.TestCase):

    def test_vae_separates_cards_i(self):
        data = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=1000, seed=1))
        held_out = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=300, seed=2))
        model = make_model_config('vae', image_size=32, k=2, dataset='cards-i')
        ckpt, log = train(TrainConfig(epochs=30, batch_size=64, learning_rate=1e-3, seed=0), model, data)
        self.assertLess(log['loss'].iloc[-5:].mean(), log['loss'].iloc[:5].mean())

        means, _ = lab.encode_means(ckpt, held_out)
        purity, _, _ = lab.kmeans_purity(means, held_out.labels, n_clusters=4)
        self.assertGreaterEqual(purity, 0.80)

    def test_vae_on_cards_iv_only_isolates_diamonds(self):
        data = make_cards_dataset(CardsConfig.preset('cards-iv', count_per_suit=1000, seed=11))
        held_out = make_cards_dataset(CardsConfig.preset('cards-iv', count_per_suit=300, seed=12))
        model = make_model_config('vae', image_size=32, k=2, dataset='cards-iv')
        ckpt, _ = train(TrainConfig(epochs=30, batch_size=64, learning_rate=1e-3, seed=0), model, data)

        means, _ = lab.encode_means(ckpt, held_out)
        _, mapping, clusters = lab.kmeans_purity(means, held_out.labels, n_clusters=4)
        mapped = np.array([mapping[c] for c in clusters])
        per_suit = {suit: float(np.mean(mapped[held_out.labels == suit] == suit)) for suit in range(4)}
        self.assertGreaterEqual(per_suit[DIAMONDS], 0.8)
        self.assertGreaterEqual(sum(per_suit[suit] < 0.6 for suit in range(3)), 2)

    def test_rvae_recovers_card_angles(self):
        ckpt, data = _cards_iii_rvae()
        scores = lab.angle_recovery(lab.latent_scatter_export(ckpt, data))
        self.assertGreaterEqual(sum(score >= 0.9 for score in scores.values()), 3)

    def test_rvae_theta_follows_input_rotation(self):
        ckpt, _ = _cards_iii_rvae()
        held_out = make_cards_dataset(CardsConfig.preset('cards-iii', count_per_suit=100, seed=9))
        turned = rotate_batch(held_out, 30.0, seed=10)
        delta = np.radians(turned.meta[:, 0] - held_out.meta[:, 0])

        column = latent_slices(ckpt.model.prior)['theta'].start
        before, _ = lab.encode_means(ckpt, held_out)
        after, _ = lab.encode_means(ckpt, turned)
        shift = wrap_angle(after[:, column] - before[:, column])
        # either handedness, as in angle recovery
        handedness = np.sign(circular_correlation(shift, delta))
        self.assertNotEqual(handedness, 0.0)
        error = np.abs(wrap_angle(shift - handedness * delta))
        self.assertLessEqual(np.median(error), np.radians(15.0))

    def test_crvae_decodes_the_conditioned_suit(self):
        data = make_cards_dataset(CardsConfig.preset('cards-iv', count_per_suit=1000, seed=13))
        model = make_model_config('crvae', image_size=32, k=2, num_classes=4, dataset='cards-iv')
        ckpt, _ = train(TrainConfig(epochs=30, batch_size=64, learning_rate=1e-3, seed=0), model, data)
        templates = suit_templates(32)

        samples = 50
        z = np.random.default_rng(14).normal(size=(samples, model.k))
        rows = np.zeros((4 * samples, model.latent_width))
        rows[:, latent_slices(model.prior)['z']] = np.tile(z, (4, 1))
        classes = np.repeat(np.arange(4), samples)
        decoded = decode_latents(model, ckpt.params(), rows, one_hot(classes, 4)).data
        nearest = lab.nearest_template(decoded, templates)
        self.assertGreaterEqual(np.mean(nearest == classes), 0.9)

        tiles = lab.traverse_manifold(ckpt, varied_dim=0, steps=8)
        self.assertEqual(tiles.shape, (4, 8, 32, 32))
        nearest = lab.nearest_template(tiles.reshape(32, 32, 32), templates)
        self.assertGreaterEqual(np.mean(nearest == np.repeat(np.arange(4), 8)), 0.9)

    def test_ssrvae_generalizes_to_cards_iv(self):
        labeled = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=200, seed=15))
        pool = make_cards_dataset(CardsConfig.preset('cards-iv', count_per_suit=3000, seed=16))
        validation = make_cards_dataset(CardsConfig.preset('cards-iv', count_per_suit=300, seed=17))
        model = make_model_config('ssrvae', image_size=32, k=2, num_classes=4, dataset='cards-iv')
        ckpt, _ = train(TrainConfig(epochs=30, batch_size=64, learning_rate=1e-3, seed=0), model,
                        TrainingData(train=labeled, unlabeled=_unlabeled(pool)))

        self.assertGreaterEqual(lab.evaluate(ckpt, validation).accuracy, 0.70)

    def test_jrvae_clusters_cards(self):
        for preset, seed, floor in (('cards-iii', 18, 0.70), ('cards-i', 20, 0.90)):
            with self.subTest(preset=preset):
                data = make_cards_dataset(CardsConfig.preset(preset, count_per_suit=1000, seed=seed))
                held_out = make_cards_dataset(CardsConfig.preset(preset, count_per_suit=300, seed=seed + 1))
                model = make_model_config('jrvae', image_size=32, k=2, num_classes=4, dataset=preset)
                ckpt, _ = train(TrainConfig(epochs=50, batch_size=64, learning_rate=1e-3, ramp_steps=10000,
                                            seed=0), model, _unlabeled(data))

                self.assertGreaterEqual(lab.evaluate(ckpt, held_out).accuracy, floor)

    def test_denoising_autoencoder_raises_psnr(self):
        clean = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=500, seed=3))
        noisy = corrupt(clean, 'noise', 0.3, seed=4)
        model = make_model_config('ae', image_size=32, k=8, dataset='cards-i')
        ckpt, _ = train(TrainConfig(epochs=20, batch_size=64, learning_rate=1e-3, seed=0), model,
                        TrainingData(train=noisy, targets=clean))

        test_clean = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=100, seed=5))
        test_noisy = corrupt(test_clean, 'noise', 0.3, seed=6)
        means, _ = lab.encode_means(ckpt, test_noisy)
        restored = decode_latents(model, ckpt.params(), means).data.reshape(test_clean.images.shape)

        before = lab.psnr(test_clean.images, test_noisy.images)
        after = lab.psnr(test_clean.images, restored)
        self.assertGreaterEqual(after - before, 5.0)

    def test_inpainting_autoencoder_fills_masked_pixels(self):
        clean = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=500, seed=22))
        masked = corrupt(clean, 'mask', 0.25, seed=23)
        model = make_model_config('ae', image_size=32, k=8, dataset='cards-i')
        ckpt, _ = train(TrainConfig(epochs=20, batch_size=64, learning_rate=1e-3, seed=0), model,
                        TrainingData(train=masked, targets=clean))

        test_clean = make_cards_dataset(CardsConfig.preset('cards-i', count_per_suit=100, seed=24))
        test_masked = corrupt(test_clean, 'mask', 0.25, seed=25)
        # same seed and shape, so the same pixels are zeroed
        ones = ImageBatch(images=np.ones_like(test_clean.images))
        hidden = corrupt(ones, 'mask', 0.25, seed=25).images == 0.0
        means, _ = lab.encode_means(ckpt, test_masked)
        restored = decode_latents(model, ckpt.params(), means).data.reshape(test_clean.images.shape)

        squared = (restored - test_clean.images) ** 2
        self.assertLessEqual(squared[hidden].mean(), 2.0 * squared[~hidden].mean())

    def test_rotation_latent_shows_two_lattice_orientations(self):
        points = synth_honeycomb(24, 24, jitter_std=0.02, seed=7)
        patches, _, _ = atom_patches(points, pixels_per_unit=8.0)
        model = make_model_config('rvae', image_size=patches.image_size, k=2, dataset='honeycomb')
        ckpt, _ = train(TrainConfig(epochs=60, batch_size=64, learning_rate=1e-3, seed=0), model, patches)

        frame = lab.latent_scatter_export(ckpt, patches)
        histogram = lab.theta_histogram(frame['theta'].to_numpy(), bins=60)
        modes = lab.histogram_modes(histogram['count'].to_numpy())
        self.assertEqual(len(modes), 2)

        centers = (histogram['bin_lo'] + histogram['bin_hi']).to_numpy()[modes] / 2
        gap = np.degrees(abs(np.angle(np.exp(1j * (centers[1] - centers[0])))))
        self.assertAlmostEqual(gap, 60.0, delta=6.0)


if __name__ == '__main__':
    unittest.main()
