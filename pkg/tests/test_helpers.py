"""
Unit tests for seed derivation, angle helpers and input validators
"""
import tempfile
import unittest
from pathlib import Path

import numpy as np

from core.exceptions import DataError, ValidationError
from utils.helpers import circular_correlation, circular_mean, derive_seed, format_seconds, make_rng, wrap_angle
from utils.validators import validate_existing_file, validate_hidden, validate_preset, validate_range


class TestSeeds(unittest.TestCase):

    def test_labels_give_independent_streams(self):
        self.assertEqual(derive_seed(5, 'init'), derive_seed(5, 'init'))
        self.assertNotEqual(derive_seed(5, 'init'), derive_seed(5, 'noise'))
        self.assertNotEqual(derive_seed(5, 'init'), derive_seed(6, 'init'))

    def test_generator_is_reproducible(self):
        np.testing.assert_array_equal(make_rng(1, 'a', 2).normal(size=4), make_rng(1, 'a', 2).normal(size=4))


class TestAngles(unittest.TestCase):

    def test_wrap_range(self):
        wrapped = wrap_angle(np.array([0.0, 2.5 * np.pi, -np.pi, np.pi]))
        np.testing.assert_allclose(wrapped, [0.0, 0.5 * np.pi, -np.pi, -np.pi], atol=1e-12)

    def test_circular_mean_crosses_the_seam(self):
        self.assertAlmostEqual(abs(circular_mean(np.array([np.pi - 0.1, -np.pi + 0.1]))), np.pi, places=9)

    def test_correlation_of_shifted_copy(self):
        alpha = np.random.default_rng(0).uniform(-1.0, 1.0, 200)
        self.assertAlmostEqual(circular_correlation(alpha, alpha + 2.0), 1.0, places=9)
        self.assertAlmostEqual(circular_correlation(alpha, -alpha), -1.0, places=9)

    def test_constant_sample_has_no_correlation(self):
        self.assertEqual(circular_correlation(np.zeros(5), np.arange(5.0)), 0.0)

    def test_format_seconds(self):
        self.assertEqual(format_seconds(12.345), "12.35s")
        self.assertEqual(format_seconds(90), "1.5m")
        self.assertEqual(format_seconds(float('nan')), "N/A")


class TestValidators(unittest.TestCase):

    def test_preset_is_normalized(self):
        self.assertEqual(validate_preset(' Cards-III '), 'cards-iii')
        with self.assertRaises(ValidationError):
            validate_preset('cards-v')

    def test_hidden_widths(self):
        self.assertEqual(validate_hidden('256, 256'), (256, 256))
        with self.assertRaises(ValidationError):
            validate_hidden('256,0')
        with self.assertRaises(ValidationError):
            validate_hidden('wide')

    def test_range_order(self):
        self.assertEqual(validate_range(-1, 2), (-1.0, 2.0))
        with self.assertRaises(ValidationError):
            validate_range(1, 1)

    def test_existing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'present.txt'
            path.write_text('x')
            self.assertEqual(validate_existing_file(path), path)
            with self.assertRaises(DataError):
                validate_existing_file(Path(tmp) / 'absent.txt')
        with self.assertRaises(ValidationError):
            validate_existing_file('')


if __name__ == '__main__':
    unittest.main()
