"""
Unit tests for latent grids, traversals, exports, histograms, metrics and mosaics
"""
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from config.schemas import LatentGridSpec, TrainConfig
from core.exceptions import DimensionError, UsageError
from core.tensor import no_grad
from modules import models as M
from modules.latentlab import (angle_histogram, angle_recovery, cluster_accuracy, compose_mosaic, confusion, decoded_latent_grid,
                               encode_means, evaluate, histogram_modes, kmeans_purity, latent_scatter_export,
                               nearest_template, psnr, theta_histogram, traverse_manifold, write_png, write_table)
from modules.synthdata import ImageBatch
from modules.trainer import Checkpoint


def _checkpoint(variant='VAE', zero_decoder=False, **overrides):
    fields = dict(image_size=6, k=2, encoder_hidden=(5,), decoder_hidden=(5,), coord_embed_dim=4)
    if variant in ('crVAE', 'ssrVAE', 'jrVAE'):
        fields['num_classes'] = 4
    fields.update(overrides)
    cfg = M.make_model_config(variant, **fields)
    params = M.build_params(cfg, seed=1)
    if zero_decoder:
        params['dec.out.W'].data[:] = 0.0
    return Checkpoint(model=cfg, train=TrainConfig(seed=1), payload=params.flatten(), rng_state=(1, 0))


def _batch(n=8, labels=True, seed=0):
    rng = np.random.default_rng(seed)
    return ImageBatch(images=rng.uniform(size=(n, 6, 6)), labels=np.arange(n) % 4 if labels else None,
                      meta=np.column_stack([np.linspace(-90, 90, n), np.zeros(n)]))


class TestDecodedLatentGrid(unittest.TestCase):

    def test_two_steps_decode_the_corners(self):
        ckpt = _checkpoint()
        tiles = decoded_latent_grid(ckpt, LatentGridSpec(steps=2))
        self.assertEqual(tiles.shape, (2, 2, 6, 6))
        params = ckpt.params()
        for r, y in enumerate((-1.5, 1.5)):
            for c, x in enumerate((-1.5, 1.5)):
                with no_grad():
                    expected = M.decode_latents(ckpt.model, params, [[x, y]]).data.reshape(6, 6)
                np.testing.assert_allclose(tiles[r, c], expected, atol=1e-5)

    def test_zero_decoder_gives_constant_mosaic(self):
        tiles = decoded_latent_grid(_checkpoint(zero_decoder=True), LatentGridSpec(steps=3))
        np.testing.assert_allclose(tiles, np.broadcast_to(tiles[0, 0], tiles.shape), atol=1e-7)

    def test_repeated_calls_are_identical(self):
        ckpt = _checkpoint('rVAE')
        spec = LatentGridSpec(steps=4, frozen={1: 0.3}, dims=(0, 1))
        self.assertEqual(decoded_latent_grid(ckpt, spec).tobytes(), decoded_latent_grid(ckpt, spec).tobytes())

    def test_dimension_out_of_range(self):
        with self.assertRaises(DimensionError):
            decoded_latent_grid(_checkpoint(), LatentGridSpec(dims=(0, 2)))
        with self.assertRaises(DimensionError):
            decoded_latent_grid(_checkpoint(), LatentGridSpec(frozen={5: 1.0}))

    def test_class_condition_contract(self):
        with self.assertRaises(UsageError):
            decoded_latent_grid(_checkpoint('crVAE'), LatentGridSpec(steps=2))
        with self.assertRaises(UsageError):
            decoded_latent_grid(_checkpoint(), LatentGridSpec(steps=2, class_condition=1))
        with self.assertRaises(UsageError):
            decoded_latent_grid(_checkpoint('crVAE'), LatentGridSpec(steps=2, class_condition=4))
        self.assertEqual(decoded_latent_grid(_checkpoint('crVAE'), LatentGridSpec(steps=2, class_condition=3)).shape,
                         (2, 2, 6, 6))


class TestTraverseManifold(unittest.TestCase):

    def test_shape(self):
        self.assertEqual(traverse_manifold(_checkpoint('crVAE'), 0, steps=5).shape, (4, 5, 6, 6))
        self.assertEqual(traverse_manifold(_checkpoint('jrVAE'), 1, class_count=2, steps=3).shape, (2, 3, 6, 6))

    def test_zero_column_matches_grid_center(self):
        ckpt = _checkpoint('crVAE')
        tiles = traverse_manifold(ckpt, 0, steps=5)
        for c in range(4):
            center = decoded_latent_grid(ckpt, LatentGridSpec(steps=3, class_condition=c))[1, 1]
            np.testing.assert_allclose(tiles[c, 2], center, atol=1e-5)

    def test_needs_conditional_decoder(self):
        with self.assertRaises(UsageError):
            traverse_manifold(_checkpoint('rVAE'), 0)

    def test_argument_validation(self):
        ckpt = _checkpoint('crVAE')
        with self.assertRaises(DimensionError):
            traverse_manifold(ckpt, 2)
        with self.assertRaises(UsageError):
            traverse_manifold(ckpt, 0, class_count=5)
        with self.assertRaises(UsageError):
            traverse_manifold(ckpt, 0, value_range=(1.0, -1.0))


class TestScatterExport(unittest.TestCase):

    def test_rows_and_columns(self):
        frame = latent_scatter_export(_checkpoint('rVAE'), _batch(7))
        self.assertEqual(len(frame), 7)
        self.assertEqual(list(frame.columns),
                         ['idx', 'z1', 'z2', 'theta', 'dx', 'dy', 'pred', 'label', 'gt_angle', 'gt_shear'])
        self.assertTrue(frame['theta'].notna().all())
        self.assertTrue(frame['pred'].isna().all())

    def test_duplicate_inputs_give_duplicate_rows(self):
        batch = _batch(3)
        doubled = ImageBatch(images=np.concatenate([batch.images, batch.images]))
        frame = latent_scatter_export(_checkpoint(), doubled)
        z = frame[['z1', 'z2']].values
        np.testing.assert_allclose(z[:3], z[3:], atol=1e-6)
        self.assertTrue(frame['theta'].isna().all())

    def test_classifier_predictions(self):
        frame = latent_scatter_export(_checkpoint('ssrVAE'), _batch(5, labels=False))
        self.assertTrue(frame['pred'].between(0, 3).all())
        self.assertTrue(frame['label'].isna().all())

    def test_csv_leaves_absent_fields_empty(self):
        frame = latent_scatter_export(_checkpoint(), _batch(2))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'latents.csv'
            write_table(frame, path)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'idx,z1,z2,theta,dx,dy,pred,label,gt_angle,gt_shear')
        self.assertEqual(lines[1].split(',')[3:7], ['', '', '', ''])

    def test_conditional_encoder_without_labels(self):
        with self.assertRaises(UsageError):
            encode_means(_checkpoint('crVAE'), _batch(2, labels=False))


class TestAngleHistogram(unittest.TestCase):

    def test_all_zero_angles(self):
        counts = theta_histogram(np.zeros(25))['count']
        self.assertEqual(int((counts > 0).sum()), 1)
        self.assertEqual(int(counts.sum()), 25)

    def test_bin_edges(self):
        table = theta_histogram(np.array([0.1]), bins=60)
        np.testing.assert_allclose(table['bin_lo'].values, -np.pi + 2 * np.pi / 60 * np.arange(60))
        self.assertEqual(list(table.columns), ['bin_lo', 'bin_hi', 'count'])

    def test_wrap_around_lands_in_end_bins(self):
        counts = theta_histogram(np.array([np.pi - 1e-9, -np.pi + 1e-9, -np.pi]), bins=60)['count'].values
        self.assertEqual(counts[59], 1)
        self.assertEqual(counts[0], 2)
        self.assertEqual(counts.sum(), 3)

    def test_counts_every_encoded_image(self):
        table = angle_histogram(_checkpoint('rVAE', invariance='rotation'), _batch(9))
        self.assertEqual(int(table['count'].sum()), 9)

    def test_model_without_angle(self):
        with self.assertRaises(UsageError):
            angle_histogram(_checkpoint(), _batch(2))
        with self.assertRaises(UsageError):
            angle_histogram(_checkpoint('rVAE', invariance='translation'), _batch(2))

    def test_modes(self):
        counts = np.ones(60)
        counts[[12, 42]] = 40
        np.testing.assert_array_equal(histogram_modes(counts), [12, 42])
        counts = np.ones(60)
        counts[0] = 30
        np.testing.assert_array_equal(histogram_modes(counts), [0])


class TestAngleRecovery(unittest.TestCase):

    def _frame(self, theta, gt_deg, labels):
        return pd.DataFrame({'theta': theta, 'gt_angle': gt_deg, 'label': pd.array(labels, dtype='Int64')})

    def test_offset_and_handedness_are_ignored(self):
        gt = np.linspace(-100, 100, 20)
        theta = np.concatenate([np.radians(gt[:10]) + 0.7, -np.radians(gt[10:])])
        scores = angle_recovery(self._frame(theta, gt, [0] * 10 + [1] * 10))
        self.assertEqual(sorted(scores), [0, 1])
        self.assertAlmostEqual(scores[0], 1.0, places=6)
        self.assertAlmostEqual(scores[1], 1.0, places=6)

    def test_unrelated_angles_score_low(self):
        rng = np.random.default_rng(4)
        scores = angle_recovery(self._frame(rng.uniform(-np.pi, np.pi, 400), rng.uniform(-120, 120, 400),
                                            [2] * 400))
        self.assertLess(scores[2], 0.2)

    def test_needs_encoded_angles(self):
        with self.assertRaises(UsageError):
            angle_recovery(self._frame([np.nan, np.nan], [1.0, 2.0], [0, 0]))


class TestClusterAccuracy(unittest.TestCase):

    def test_identical_labels(self):
        accuracy, mapping = cluster_accuracy([0, 1, 2, 3, 1], [0, 1, 2, 3, 1])
        self.assertEqual(accuracy, 1.0)
        self.assertEqual(mapping, {0: 0, 1: 1, 2: 2, 3: 3})

    def test_permuted_cluster_ids(self):
        truth = np.random.default_rng(1).integers(0, 4, 200)
        permutation = np.array([2, 0, 3, 1])
        self.assertEqual(cluster_accuracy(permutation[truth], truth)[0], 1.0)
        noisy = truth.copy()
        noisy[::7] = (noisy[::7] + 1) % 4
        self.assertEqual(cluster_accuracy(permutation[noisy], truth)[0], cluster_accuracy(noisy, truth)[0])

    def test_random_predictions_baseline(self):
        rng = np.random.default_rng(3)
        truth = np.repeat(np.arange(4), 2500)
        accuracy, _ = cluster_accuracy(rng.integers(0, 4, truth.size), truth)
        self.assertAlmostEqual(accuracy, 0.25, delta=0.02)

    def test_length_mismatch(self):
        with self.assertRaises(UsageError):
            cluster_accuracy([0, 1], [0])
        with self.assertRaises(UsageError):
            cluster_accuracy([], [])

    def test_kmeans_on_separated_blobs(self):
        rng = np.random.default_rng(0)
        truth = np.repeat(np.arange(4), 30)
        centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]])
        features = centers[truth] + rng.normal(scale=0.5, size=(120, 2))
        purity, _, clusters = kmeans_purity(features, truth, n_clusters=4, seed=0)
        self.assertEqual(purity, 1.0)
        self.assertEqual(len(set(clusters.tolist())), 4)


class TestConfusion(unittest.TestCase):

    def test_perfect_predictions(self):
        report = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
        np.testing.assert_array_equal(report.confusion, np.eye(3))
        self.assertEqual(report.accuracy, 1.0)

    def test_all_first_class(self):
        report = confusion([0, 0, 0, 0], [0, 1, 2, 1], 3)
        np.testing.assert_array_equal(np.asarray(report.confusion)[:, 0], [1.0, 1.0, 1.0])
        self.assertEqual(report.per_class_accuracy, [1.0, 0.0, 0.0])

    def test_matches_direct_counting(self):
        rng = np.random.default_rng(8)
        predicted, truth = rng.integers(0, 4, 500), rng.integers(0, 4, 500)
        report = confusion(predicted, truth, 4)
        matrix = np.asarray(report.confusion)
        for t in range(4):
            rows = truth == t
            for p in range(4):
                self.assertAlmostEqual(matrix[t, p], np.sum(predicted[rows] == p) / rows.sum())
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-6)
        self.assertAlmostEqual(report.accuracy, float(np.mean(predicted == truth)))

    def test_zero_support_row(self):
        report = confusion([0, 1], [0, 1], 3)
        self.assertEqual(report.confusion[2], [0.0, 0.0, 0.0])
        self.assertIsNone(report.per_class_accuracy[2])
        self.assertEqual(report.support, [1, 1, 0])

    def test_labels_out_of_range(self):
        with self.assertRaises(UsageError):
            confusion([0, 3], [0, 1], 3)


class TestEvaluate(unittest.TestCase):

    def test_unsupervised_variant_uses_clusters(self):
        report = evaluate(_checkpoint(), _batch(16))
        self.assertEqual(len(report.confusion), 4)
        self.assertTrue(0.25 <= report.accuracy <= 1.0)
        self.assertTrue(set(report.mapping.values()) <= {0, 1, 2, 3})

    def test_classifier_variant(self):
        report = evaluate(_checkpoint('ssrVAE'), _batch(8))
        self.assertEqual(report.mapping, {0: 0, 1: 1, 2: 2, 3: 3})
        self.assertEqual(sum(report.support), 8)

    def test_needs_labels(self):
        with self.assertRaises(UsageError):
            evaluate(_checkpoint(), _batch(4, labels=False))


class TestImageMetrics(unittest.TestCase):

    def test_nearest_template(self):
        templates = np.random.default_rng(2).uniform(size=(4, 5, 5))
        np.testing.assert_array_equal(nearest_template(templates[[3, 1, 1]] + 0.01, templates), [3, 1, 1])

    def test_psnr(self):
        reference = np.full((2, 4, 4), 0.5)
        self.assertAlmostEqual(psnr(reference, reference + 0.1), 20.0, places=6)
        self.assertAlmostEqual(psnr(reference, reference), 120.0, places=6)
        with self.assertRaises(DimensionError):
            psnr(reference, reference[:, :2])


class TestMosaic(unittest.TestCase):

    def test_size_and_separators(self):
        tiles = np.random.default_rng(0).uniform(size=(12, 12, 32, 32))
        mosaic = compose_mosaic(tiles)
        self.assertEqual(mosaic.shape, (395, 395))
        self.assertEqual(mosaic.dtype, np.uint8)
        self.assertTrue((mosaic[32, :] == 255).all())
        self.assertTrue((mosaic[:, 32] == 255).all())
        np.testing.assert_array_equal(mosaic[33:65, 66:98], np.rint(tiles[1, 2] * 255).astype(np.uint8))

    def test_rejects_flat_input(self):
        with self.assertRaises(DimensionError):
            compose_mosaic(np.zeros((3, 8, 8)))

    def test_png_round_trip(self):
        mosaic = compose_mosaic(np.random.default_rng(1).uniform(size=(2, 3, 4, 4)))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'sub' / 'grid.png'
            write_png(mosaic, path)
            with Image.open(path) as image:
                self.assertEqual(image.mode, 'L')
                np.testing.assert_array_equal(np.asarray(image), mosaic)


if __name__ == '__main__':
    unittest.main()
