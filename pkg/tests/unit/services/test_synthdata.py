"""Unit tests for the synthetic activation generators."""

import unittest

import numpy as np

from src.services.synthdata import (
    DEFAULT_TAIL_DOF,
    SynthSpec,
    channel_sigmas,
    gen_correlated,
    gen_interchannel,
    gen_powerlaw,
)
from src.utils.validators import ValidationError


def _channel_ranges(x):
    rows = x.reshape(-1, x.shape[-1])
    return rows.max(axis=0) - rows.min(axis=0)


def _kurtosis(x):
    rows = x.reshape(-1, x.shape[-1])
    centered = rows - rows.mean(axis=0)
    return np.mean(centered ** 4, axis=0) / np.mean(centered ** 2, axis=0) ** 2


class TestSynthSpec(unittest.TestCase):
    """Test cases for SynthSpec validation."""

    def test_invalid_values(self):
        """Test out-of-range settings are rejected."""
        for kwargs in ({"channels": 0}, {"range_ratio": 0.5}, {"left_frac": 0.7, "right_frac": 0.7},
                       {"tail_stretch": 0.9}, {"seed": -1}, {"spike_rate": 1.5}):
            with self.assertRaises(ValidationError):
                SynthSpec(**kwargs)

    def test_to_dict(self):
        """Test SynthSpec serializes every field."""
        data = SynthSpec(channels=4, seed=3).to_dict()
        self.assertEqual(data["channels"], 4)
        self.assertEqual(data["seed"], 3)
        self.assertIn("powerlaw_exponent", data)


class TestGenerators(unittest.TestCase):
    """Test cases for gen_interchannel, gen_powerlaw and gen_correlated."""

    def test_interchannel_shape_and_determinism(self):
        """Test fixed seeds give identical data."""
        spec = SynthSpec(channels=6, tokens=5, samples=4, range_ratio=10.0, seed=11)
        a = gen_interchannel(spec)
        self.assertEqual(a.shape, (4, 5, 6))
        np.testing.assert_array_equal(a, gen_interchannel(spec))
        self.assertFalse(np.array_equal(a, gen_interchannel(SynthSpec(channels=6, tokens=5, samples=4,
                                                                      range_ratio=10.0, seed=12))))

    def test_channels_are_independent_streams(self):
        """Test adding channels leaves the existing ones unchanged."""
        small = gen_interchannel(SynthSpec(channels=4, seed=2))
        large = gen_interchannel(SynthSpec(channels=9, seed=2))
        np.testing.assert_array_equal(large[..., :4], small)

    def test_sigmas_in_band(self):
        """Test channel stddevs lie in [sigma, range_ratio * sigma)."""
        sigmas = channel_sigmas(SynthSpec(channels=100, sigma=0.5, range_ratio=8.0))
        self.assertTrue(np.all(sigmas >= 0.5))
        self.assertTrue(np.all(sigmas < 4.0))

    def test_unit_ratio_gives_similar_ranges(self):
        """Test range_ratio=1 makes every channel statistically alike."""
        ranges = _channel_ranges(gen_interchannel(SynthSpec(channels=32, tokens=32, samples=32,
                                                            left_frac=0.0, right_frac=0.0, tail_dof=None,
                                                            seed=4)))
        self.assertLess(ranges.max() / ranges.min(), 1.6)

    def test_range_ratio_band(self):
        """Test a 33x stddev spread gives a 20x to 50x spread of channel ranges."""
        for seed in range(3):
            spec = SynthSpec(channels=384, tokens=16, samples=32, range_ratio=33.0,
                             left_frac=0.0, right_frac=0.0, tail_dof=None, seed=seed)
            ranges = _channel_ranges(gen_interchannel(spec))
            ratio = ranges.max() / ranges.min()
            self.assertGreaterEqual(ratio, 20.0)
            self.assertLessEqual(ratio, 50.0)

    def test_biased_channels(self):
        """Test stretched channels are asymmetric."""
        x = gen_interchannel(SynthSpec(channels=64, tokens=32, samples=32, left_frac=0.5, right_frac=0.5,
                                       tail_stretch=3.0, tail_dof=None, seed=1))
        rows = x.reshape(-1, 64)
        asymmetry = np.abs(rows.max(axis=0) + rows.min(axis=0)) / (rows.max(axis=0) - rows.min(axis=0))
        self.assertGreater(np.median(asymmetry), 0.2)

    def test_heavy_tails_by_default(self):
        """Test the default bulk is heavy-tailed with each channel's nominal stddev."""
        spec = SynthSpec(channels=16, tokens=32, samples=32, left_frac=0.0, right_frac=0.0, seed=7)
        self.assertEqual(spec.tail_dof, DEFAULT_TAIL_DOF)
        x = gen_interchannel(spec)
        self.assertGreater(float(np.mean(_kurtosis(x))), 3.5)
        rows = x.reshape(-1, 16)
        ratio = float(np.median(rows.std(axis=0) / channel_sigmas(spec)))
        self.assertGreater(ratio, 0.8)
        self.assertLess(ratio, 1.2)

    def test_gaussian_bulk(self):
        """Test tail_dof=None gives Gaussian kurtosis."""
        x = gen_interchannel(SynthSpec(channels=16, tokens=32, samples=32, left_frac=0.0, right_frac=0.0,
                                       tail_dof=None, seed=7))
        self.assertLess(float(np.mean(_kurtosis(x))), 3.3)

    def test_powerlaw_rows(self):
        """Test Softmax-like rows."""
        x = gen_powerlaw(SynthSpec(tokens=16, samples=8, seed=0))
        self.assertEqual(x.shape, (8, 16, 16))
        self.assertTrue(np.all(x > 0))
        self.assertTrue(np.all(x <= 1))
        np.testing.assert_allclose(x.sum(axis=-1), 1.0)
        np.testing.assert_array_equal(x, gen_powerlaw(SynthSpec(tokens=16, samples=8, seed=0)))

    def test_powerlaw_large_values_rare(self):
        """Test values above 0.5 are rare by default and common with spikes."""
        fraction = np.mean(gen_powerlaw(SynthSpec(tokens=16, samples=2000, seed=0)) > 0.5)
        self.assertGreater(fraction, 1e-6)
        self.assertLess(fraction, 1e-3)
        spiked = np.mean(gen_powerlaw(SynthSpec(tokens=16, samples=200, spike_rate=0.5, seed=0)) > 0.5)
        self.assertGreater(spiked, 0.01)

    def test_correlated(self):
        """Test the shared component correlates channels."""
        spec = SynthSpec(channels=8, tokens=16, samples=16, seed=5)
        x = gen_correlated(spec, rank=1, strength=10.0).reshape(-1, 8)
        corr = np.corrcoef(x.T)
        off_diagonal = np.abs(corr[~np.eye(8, dtype=bool)])
        self.assertGreater(np.mean(off_diagonal), 0.5)
        with self.assertRaises(ValidationError):
            gen_correlated(spec, rank=0)


if __name__ == '__main__':
    unittest.main()
