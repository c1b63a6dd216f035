"""Unit tests for GPTQ weight reconstruction."""

import unittest
from unittest.mock import patch

import numpy as np

from src.models.quant_params import UniformQuantParams
from src.models.transformer import LinearLayerParams
from src.services.gptq import (
    GPTQ,
    GPTQError,
    HessianAccumulator,
    accumulate_hessian,
    gptq_quantize_layer,
    proxy_loss,
    rtn_quantize_layer,
    weight_params,
)
from src.utils.tensor import TensorShapeError


class TestHessian(unittest.TestCase):
    """Test cases for Hessian accumulation."""

    def test_one_hot_row(self):
        """Test a single basis row."""
        acc = accumulate_hessian(HessianAccumulator.empty(3), np.array([[0.0, 1.0, 0.0]]))
        expected = np.zeros((3, 3))
        expected[1, 1] = 2.0
        np.testing.assert_array_equal(acc.hessian, expected)
        self.assertEqual(acc.sample_count, 1)

    def test_additive(self):
        """Test two batches equal one concatenated batch."""
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
        split = accumulate_hessian(accumulate_hessian(HessianAccumulator.empty(4), a), b)
        joint = accumulate_hessian(HessianAccumulator.empty(4), np.vstack([a, b]))
        np.testing.assert_allclose(split.hessian, joint.hessian, atol=1e-10)
        self.assertEqual(split.sample_count, 12)

    def test_outer_product_oracle(self):
        """Test against a sum of outer products, with leading axes flattened."""
        x = np.random.default_rng(1).normal(size=(2, 6, 4))
        acc = accumulate_hessian(HessianAccumulator.empty(4), x)
        expected = sum(2.0 * np.outer(row, row) for row in x.reshape(-1, 4))
        np.testing.assert_allclose(acc.hessian, expected, atol=1e-10)
        np.testing.assert_allclose(acc.hessian, acc.hessian.T, atol=1e-10)

    def test_width_mismatch(self):
        """Test input width must match."""
        with self.assertRaises(TensorShapeError):
            accumulate_hessian(HessianAccumulator.empty(3), np.ones((2, 4)))


class TestGPTQ(unittest.TestCase):
    """Test cases for gptq_quantize_layer and the GPTQ class."""

    def setUp(self):
        """Set up test fixtures."""
        self.rng = np.random.default_rng(2)

    def _layer(self, d_in=16, d_out=8, rows=64):
        weight = self.rng.normal(size=(d_in, d_out))
        mixing = self.rng.normal(size=(d_in, d_in))
        x = self.rng.normal(size=(rows, d_in)) @ mixing
        hessian = accumulate_hessian(HessianAccumulator.empty(d_in), x).hessian
        return weight, hessian

    def test_rank_one_compensation(self):
        """Test the error of the first row moves onto the second."""
        weight = np.array([[0.3], [0.4]])
        hessian = 2.0 * np.ones((2, 2))
        wq = UniformQuantParams(scale=[1.0], zero_point=[2.0], bits=2, granularity="channel")

        rtn_codes, rtn_weight = rtn_quantize_layer(weight, wq)
        np.testing.assert_array_equal(rtn_weight, [[0.0], [0.0]])
        self.assertAlmostEqual(proxy_loss(weight, rtn_weight, hessian), 0.98)

        result = gptq_quantize_layer(weight, hessian, wq)
        np.testing.assert_array_equal(result.dequant_weight, [[0.0], [1.0]])
        np.testing.assert_array_equal(result.codes, [[2.0], [3.0]])
        self.assertAlmostEqual(result.proxy_loss, 0.18)
        self.assertAlmostEqual(result.rtn_proxy_loss, 0.98)

    def test_identity_hessian_equals_rtn(self):
        """Test a scaled identity Hessian reproduces round-to-nearest exactly."""
        weight = self.rng.normal(size=(12, 5))
        wq = weight_params(weight, 4)
        result = gptq_quantize_layer(weight, 3.0 * np.eye(12), wq, block_size=5)
        rtn_codes, rtn_weight = rtn_quantize_layer(weight, wq)
        np.testing.assert_array_equal(result.codes, rtn_codes)
        np.testing.assert_array_equal(result.dequant_weight, rtn_weight)
        self.assertEqual(result.proxy_loss, result.rtn_proxy_loss)

    def test_not_worse_than_rtn(self):
        """Test the proxy loss of GPTQ against round-to-nearest on 100 random layers."""
        wins = 0
        for _ in range(100):
            weight, hessian = self._layer()
            result = gptq_quantize_layer(weight, hessian, weight_params(weight, 4))
            wins += result.proxy_loss <= result.rtn_proxy_loss
        self.assertGreaterEqual(wins, 95)

    def test_codes_on_grid(self):
        """Test codes are integral, in range, and dequantize to the result."""
        weight, hessian = self._layer(d_in=40, rows=80)
        wq = weight_params(weight, 3)
        result = gptq_quantize_layer(weight, hessian, wq, block_size=16)
        self.assertTrue(np.all(result.codes == np.rint(result.codes)))
        self.assertTrue(np.all((result.codes >= 0) & (result.codes <= 7)))
        np.testing.assert_allclose(result.dequant_weight, wq.scale * (result.codes - wq.zero_point))

    def test_dead_inputs(self):
        """Test inputs never seen in calibration get zero weights."""
        weight, hessian = self._layer(d_in=6, d_out=4)
        hessian[2, :] = 0.0
        hessian[:, 2] = 0.0
        wq = weight_params(weight, 4)
        result = gptq_quantize_layer(weight, hessian, wq)
        self.assertIn("dead_inputs=1", result.flags)
        np.testing.assert_array_equal(result.dequant_weight[2], 0.0)
        self.assertFalse(result.cholesky_fallback)

    @patch('numpy.linalg.cholesky')
    def test_cholesky_fallback(self, mock_cholesky):
        """Test factorization failure falls back to round-to-nearest."""
        mock_cholesky.side_effect = np.linalg.LinAlgError("not positive definite")
        weight, hessian = self._layer(d_in=6, d_out=4)
        wq = weight_params(weight, 4)
        result = gptq_quantize_layer(weight, hessian, wq)
        self.assertTrue(result.cholesky_fallback)
        self.assertIn("cholesky_fallback", result.flags)
        np.testing.assert_array_equal(result.codes, rtn_quantize_layer(weight, wq)[0])

    def test_invalid_inputs(self):
        """Test shape and parameter checks."""
        weight, hessian = self._layer(d_in=6, d_out=4)
        with self.assertRaises(TensorShapeError):
            gptq_quantize_layer(weight, hessian[:5, :5], weight_params(weight, 4))
        with self.assertRaises(GPTQError):
            gptq_quantize_layer(weight, hessian, weight_params(weight.T, 4))
        with self.assertRaises(GPTQError):
            gptq_quantize_layer(weight, hessian, weight_params(weight, 4), block_size=0)

    def test_weight_params_channel_wise(self):
        """Test min/max params per output column."""
        weight = np.array([[0.0, -1.0], [3.0, 1.0]])
        wq = weight_params(weight, 2)
        self.assertEqual(wq.granularity, "channel")
        np.testing.assert_allclose(wq.scale, [1.0, 2.0 / 3.0])

    def test_gptq_class(self):
        """Test add_batch then quantize."""
        rng = np.random.default_rng(3)
        layer = LinearLayerParams(weight=rng.normal(size=(8, 4)), bias=np.zeros(4))
        gptq = GPTQ(layer, bits=4, name="block0.wq")
        with self.assertRaises(GPTQError):
            gptq.quantize()
        gptq.add_batch(rng.normal(size=(32, 8)))
        result = gptq.quantize()
        self.assertEqual(gptq.accumulator.sample_count, 32)
        self.assertEqual(result.codes.shape, (8, 4))
        self.assertEqual(result.params.channels, 4)

    @patch('builtins.print')
    def test_verbose_output(self, mock_print):
        """Test progress is printed with the GPTQ tag."""
        layer = LinearLayerParams(weight=np.eye(3), bias=np.zeros(3))
        GPTQ(layer, bits=4, name="block0.wo", verbose=True).quantize(hessian=np.eye(3))
        printed = " ".join(str(call.args[0]) for call in mock_print.call_args_list)
        self.assertIn("[GPTQ] block0.wo", printed)


if __name__ == '__main__':
    unittest.main()
