"""
Unit tests for the optimizer, schedules, training loop and checkpoints
"""
import struct
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

from config.schemas import TrainConfig
from core import tensor as T
from core.exceptions import (ChecksumError, DataError, FormatError, LengthError, NumericError,
                             ParameterCountError, UsageError, VersionError)
from core.params import ParamStore
from core.tensor import backward
from modules.models import build_params, encode, make_model_config
from modules.synthdata import ImageBatch
from modules.trainer import (METRIC_COLUMNS, AdamState, Checkpoint, TrainingData, adam_step, capacity_schedule,
                             clip_gradients, decode_checkpoint, encode_checkpoint, load_checkpoint,
                             save_checkpoint, train, write_metrics)


def _images(n=8, size=4, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    return ImageBatch(images=rng.uniform(0.0, 1.0, (n, size, size)), labels=np.arange(n) % 2 if labels else None)


def _vae():
    return make_model_config('VAE', image_size=4, k=2, encoder_hidden=(6,), decoder_hidden=(6,))


class TestAdam(unittest.TestCase):

    def setUp(self):
        self.params = ParamStore(seed=1)
        self.params.declare('p', (1,), init='zeros')

    def test_zero_gradient_leaves_parameters(self):
        state = AdamState.for_params(self.params)
        adam_step(self.params, [np.zeros(1)], state, lr=0.1)
        self.assertEqual(self.params['p'].data[0], 0.0)
        state.m[0][:] = 1.0
        adam_step(self.params, [np.zeros(1)], state, lr=0.1)
        self.assertAlmostEqual(float(state.m[0][0]), 0.9)
        self.assertEqual(state.t, 2)

    def test_first_step_moves_by_learning_rate(self):
        state = AdamState.for_params(self.params)
        adam_step(self.params, [np.ones(1)], state, lr=0.01)
        self.assertAlmostEqual(float(self.params['p'].data[0]), -0.01, places=6)

    def test_quadratic_converges(self):
        state = AdamState.for_params(self.params)
        for _ in range(50):
            self.params.zero_grad()
            backward(T.square(self.params['p'] - 3.0).sum())
            adam_step(self.params, self.params.grads(), state, lr=0.1)
        self.assertLess(abs(float(self.params['p'].data[0]) - 3.0), 0.5)

    def test_step_index_starts_at_one(self):
        with self.assertRaises(UsageError):
            adam_step(self.params, [np.ones(1)], AdamState.for_params(self.params), lr=0.1, t=0)

    def test_gradient_count_must_match(self):
        with self.assertRaises(UsageError):
            adam_step(self.params, [], AdamState.for_params(self.params), lr=0.1)


class TestClipGradients(unittest.TestCase):

    def test_rescales_to_max_norm(self):
        clipped, norm = clip_gradients([np.array([3.0]), np.array([4.0])], 1.0)
        self.assertAlmostEqual(norm, 5.0)
        np.testing.assert_allclose(np.concatenate(clipped), [0.6, 0.8])

    def test_small_gradients_untouched(self):
        clipped, _ = clip_gradients([np.array([0.1, 0.2])], 10.0)
        np.testing.assert_array_equal(clipped[0], [0.1, 0.2])


class TestCapacitySchedule(unittest.TestCase):

    def setUp(self):
        self.cfg = TrainConfig(gamma=7.0, cz_start=0.0, cz_end=10.0, cy_start=2.0, cy_end=4.0, ramp_steps=100,
                               temperature_start=1.0, temperature_end=0.5)

    def test_start_values(self):
        self.assertEqual(capacity_schedule(self.cfg, 0, 200), (7.0, 0.0, 2.0, 1.0))

    def test_midpoint_is_mean(self):
        schedule = capacity_schedule(self.cfg, 50, 200)
        self.assertAlmostEqual(schedule.c_z, 5.0)
        self.assertAlmostEqual(schedule.c_y, 3.0)

    def test_constant_after_ramp(self):
        schedule = capacity_schedule(self.cfg, 150, 200)
        self.assertEqual((schedule.c_z, schedule.c_y), (10.0, 4.0))
        self.assertAlmostEqual(schedule.temperature, 0.625)
        self.assertEqual(capacity_schedule(self.cfg, 500, 200).temperature, 0.5)

    def test_zero_ramp_jumps_to_end(self):
        cfg = TrainConfig(cz_start=1.0, cz_end=3.0, ramp_steps=0)
        self.assertEqual(capacity_schedule(cfg, 0).c_z, 3.0)

    def test_negative_step(self):
        with self.assertRaises(UsageError):
            capacity_schedule(self.cfg, -1)


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.model = _vae()
        self.params = build_params(self.model, seed=4)
        self.ckpt = Checkpoint(model=self.model, train=TrainConfig(seed=4), payload=self.params.flatten(),
                               step=12, rng_state=(4, 3))
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_round_trip_gives_identical_forward_pass(self):
        path = Path(self.tmp.name) / 'run' / 'checkpoint.lfck'
        save_checkpoint(self.ckpt, path)
        loaded = load_checkpoint(path)
        self.assertEqual(loaded.model, self.model)
        self.assertEqual((loaded.step, loaded.rng_state, loaded.completed_epochs), (12, (4, 3), 3))
        self.assertEqual(loaded.payload.tobytes(), self.ckpt.payload.tobytes())
        images = _images()
        np.testing.assert_array_equal(encode(self.model, loaded.params(), images).mean.data,
                                      encode(self.model, self.ckpt.params(), images).mean.data)

    def test_prior_lambda_survives(self):
        model = make_model_config('jrVAE', image_size=4, k=1, num_classes=3, encoder_hidden=(2,),
                                  decoder_hidden=(2,), coord_embed_dim=2, lam=(0.5, 0.25, 0.25))
        ckpt = Checkpoint(model=model, train=TrainConfig(), payload=build_params(model).flatten())
        self.assertEqual(decode_checkpoint(encode_checkpoint(ckpt)).model.prior.lam, (0.5, 0.25, 0.25))

    def test_corrupted_payload_byte(self):
        blob = bytearray(encode_checkpoint(self.ckpt))
        blob[-5] ^= 0x10
        with self.assertRaises(ChecksumError):
            decode_checkpoint(bytes(blob))

    def test_bad_magic(self):
        blob = bytearray(encode_checkpoint(self.ckpt))
        blob[:4] = b'NOPE'
        with self.assertRaises(FormatError):
            decode_checkpoint(bytes(blob))

    def test_unsupported_version(self):
        blob = bytearray(encode_checkpoint(self.ckpt))
        blob[4:8] = struct.pack('<I', 9)
        with self.assertRaises(VersionError):
            decode_checkpoint(bytes(blob))

    def test_truncated(self):
        blob = encode_checkpoint(self.ckpt)
        with self.assertRaises(LengthError):
            decode_checkpoint(blob[:-8])
        with self.assertRaises(LengthError):
            decode_checkpoint(blob[:8])

    def test_declared_model_disagrees_with_payload(self):
        wider = make_model_config('VAE', image_size=4, k=3, encoder_hidden=(6,), decoder_hidden=(6,))
        blob = encode_checkpoint(Checkpoint(model=wider, train=TrainConfig(), payload=self.params.flatten()))
        with self.assertRaises(ParameterCountError):
            decode_checkpoint(blob)

    def test_missing_file(self):
        with self.assertRaises(DataError):
            load_checkpoint(Path(self.tmp.name) / 'none.lfck')


class TestTrain(unittest.TestCase):

    def setUp(self):
        self.model = _vae()
        self.data = _images(8)

    def test_zero_epochs_returns_initial_state(self):
        ckpt, log = train(TrainConfig(epochs=0, seed=3), self.model, self.data)
        self.assertEqual(len(log), 0)
        self.assertEqual(list(log.columns), list(METRIC_COLUMNS))
        self.assertEqual(ckpt.step, 0)
        np.testing.assert_array_equal(ckpt.payload, build_params(self.model, seed=3).flatten())

    def test_same_seed_is_bit_identical(self):
        cfg = TrainConfig(epochs=2, batch_size=3, learning_rate=1e-3, seed=5)
        first, log_a = train(cfg, self.model, self.data)
        second, log_b = train(cfg, self.model, self.data)
        self.assertEqual(encode_checkpoint(first), encode_checkpoint(second))
        pd.testing.assert_frame_equal(log_a, log_b)
        self.assertEqual(len(log_a), 6)
        self.assertEqual(log_a['step'].tolist(), [1, 2, 3, 4, 5, 6])
        other, _ = train(cfg.model_copy(update={'seed': 6}), self.model, self.data)
        self.assertNotEqual(other.payload.tobytes(), first.payload.tobytes())

    def test_vanishing_learning_rate_keeps_parameters(self):
        ckpt, _ = train(TrainConfig(epochs=1, batch_size=4, learning_rate=1e-30, seed=2), self.model, self.data)
        np.testing.assert_array_equal(ckpt.payload, build_params(self.model, seed=2).flatten())

    def test_loss_decreases(self):
        model = make_model_config('AE', image_size=4, k=3, encoder_hidden=(12,), decoder_hidden=(12,))
        data = _images(16, seed=9)
        _, log = train(TrainConfig(epochs=60, batch_size=16, learning_rate=1e-2, seed=1), model, data)
        self.assertLess(log['loss'].tail(5).mean(), log['loss'].head(5).mean())

    def test_resume_continues_counters(self):
        cfg = TrainConfig(epochs=1, batch_size=4, learning_rate=1e-3, seed=5)
        first, _ = train(cfg, self.model, self.data)
        resumed, log = train(cfg, self.model, self.data, resume=first)
        self.assertEqual(resumed.step, 4)
        self.assertEqual(resumed.completed_epochs, 2)
        self.assertEqual(log['step'].tolist(), [3, 4])
        untouched, _ = train(cfg.model_copy(update={'epochs': 0}), self.model, self.data, resume=first)
        self.assertEqual(untouched.payload.tobytes(), first.payload.tobytes())

    def test_semi_supervised_pool(self):
        model = make_model_config('ssrVAE', image_size=4, k=1, num_classes=2, encoder_hidden=(3,),
                                  decoder_hidden=(3,), coord_embed_dim=3)
        data = TrainingData(train=_images(4), unlabeled=_images(6, seed=1, labels=False))
        _, log = train(TrainConfig(epochs=1, batch_size=2, seed=0), model, data)
        self.assertEqual(len(log), 2)
        self.assertTrue(log['acc'].notna().all())

    def test_non_finite_term_aborts(self):
        with patch('modules.trainer.model_loss', side_effect=NumericError('inf', term='kl_theta')):
            with self.assertRaises(NumericError) as caught:
                train(TrainConfig(epochs=1), self.model, self.data)
        self.assertEqual(caught.exception.term, 'kl_theta')

    def test_rejects_inconsistent_data(self):
        with self.assertRaises(UsageError):
            train(TrainConfig(epochs=1), self.model, ImageBatch(images=np.zeros((0, 4, 4))))
        with self.assertRaises(UsageError):
            train(TrainConfig(epochs=1), self.model, _images(4, size=5))
        with self.assertRaises(UsageError):
            train(TrainConfig(epochs=1), self.model, TrainingData(train=self.data, unlabeled=self.data))
        cr = make_model_config('crVAE', image_size=4, k=1, num_classes=2, encoder_hidden=(3,),
                               decoder_hidden=(3,), coord_embed_dim=3)
        with self.assertRaises(UsageError):
            train(TrainConfig(epochs=1), cr, _images(4, labels=False))


class TestMetricsFile(unittest.TestCase):

    def test_header_and_empty_cells(self):
        _, log = train(TrainConfig(epochs=1, batch_size=8), _vae(), _images(8))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'metrics.csv'
            write_metrics(log, path)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'step,loss,recon,kl_z,kl_theta,kl_trans,kl_cat,acc')
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[1].endswith(',,,,'))

    def test_unwritable_destination(self):
        log = pd.DataFrame(columns=list(METRIC_COLUMNS))
        with tempfile.TemporaryDirectory() as tmp:
            blocker = Path(tmp) / 'blocker'
            blocker.write_text('not a directory')
            with self.assertRaises(DataError):
                write_metrics(log, blocker / 'metrics.csv')


if __name__ == '__main__':
    unittest.main()
