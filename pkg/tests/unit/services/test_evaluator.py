"""Unit tests for the end-to-end evaluator."""

import math
import unittest

import numpy as np

from src.models.quant_config import QuantConfig
from src.services.evaluator import ArchitectureMismatchError, cosine_similarity, evaluate
from src.services.pipeline import run_pipeline
from src.services.synthdata import SynthSpec, gen_correlated
from src.services.toymodel import init_model


class TestEvaluator(unittest.TestCase):
    """Test cases for evaluate and cosine_similarity."""

    @classmethod
    def setUpClass(cls):
        """Build a model with calibration and held-out inputs."""
        cls.model = init_model(8, 2, 4, seed=4)
        data = gen_correlated(SynthSpec(channels=8, tokens=4, samples=48, range_ratio=10.0, seed=4))
        cls.calib, cls.heldout = data[:32], data[32:]

    def test_cosine_similarity(self):
        """Test parallel, orthogonal and zero inputs."""
        self.assertAlmostEqual(cosine_similarity(np.array([1.0, 2.0]), np.array([2.0, 4.0])), 1.0)
        self.assertAlmostEqual(cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 3.0])), 0.0)
        self.assertEqual(cosine_similarity(np.zeros(3), np.zeros(3)), 1.0)
        self.assertEqual(cosine_similarity(np.zeros(3), np.ones(3)), 0.0)

    def test_float_passthrough(self):
        """Test a float model compared with itself has no error."""
        metrics = evaluate(self.model, self.model, self.heldout)
        self.assertEqual(metrics["output_mse"], 0.0)
        self.assertAlmostEqual(metrics["cosine_similarity"], 1.0)
        self.assertEqual(metrics["per_layer_sqnr"], {})

    def test_sixteen_bits(self):
        """Test a 16-bit model is nearly identical on held-out inputs."""
        cfg = QuantConfig(weight_bits=16, act_bits=16, softmax_base="uniform", clip_iters=10)
        quantized, _ = run_pipeline(self.model, self.calib, cfg)
        metrics = evaluate(quantized, self.model, self.heldout)
        self.assertGreaterEqual(metrics["cosine_similarity"], 0.9999)
        self.assertEqual(len(metrics["per_layer_sqnr"]), 8)
        self.assertIn("block0.softmax", metrics["per_layer_sqnr"])

    def test_more_bits_less_error(self):
        """Test 6-bit quantization beats 4-bit quantization."""
        cfg = QuantConfig(clip_iters=20)
        mse = {}
        for bits in (4, 6):
            quantized, _ = run_pipeline(self.model, self.calib, cfg.replace(weight_bits=bits, act_bits=bits))
            mse[bits] = evaluate(quantized, self.model, self.heldout)["output_mse"]
        self.assertLessEqual(mse[6], mse[4])

    def test_sqnr_values(self):
        """Test per-site SQNR is finite and positive at 8 bits."""
        quantized, _ = run_pipeline(self.model, self.calib, QuantConfig(weight_bits=8, act_bits=8, clip_iters=10))
        metrics = evaluate(quantized, self.model, self.heldout)
        for key, value in metrics["per_layer_sqnr"].items():
            self.assertTrue(math.isfinite(value), key)
            self.assertGreater(value, 0.0, key)

    def test_architecture_mismatch(self):
        """Test models of different shapes are rejected."""
        other = init_model(8, 4, 4, seed=4)
        with self.assertRaises(ArchitectureMismatchError):
            evaluate(other, self.model, self.heldout)


if __name__ == '__main__':
    unittest.main()
