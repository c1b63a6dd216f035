"""Unit tests for the quantized model and its artifact format."""

import os
import shutil
import tempfile
import unittest

import numpy as np

from src.models.quant_config import QuantConfig
from src.models.quant_params import LogQuantParams, UniformQuantParams
from src.models.quantized_model import ActivationQuantizer, QuantizedModel, WeightRecord
from src.services.pipeline import run_pipeline
from src.services.quantizers import log_fake_quant
from src.services.synthdata import SynthSpec, gen_correlated
from src.services.toymodel import init_model
from src.utils.file_handler import FileHandler, ModelFormatError
from src.utils.validators import ContractError, ValidationError


class TestActivationQuantizer(unittest.TestCase):
    """Test cases for ActivationQuantizer."""

    def test_parity_kind_matches_sqrt2_quantizer(self):
        """Test the shift-based record reproduces the base-sqrt(2) quantizer."""
        params = LogQuantParams(scale=0.9, base="sqrt_two", bits=4)
        quantizer = ActivationQuantizer.from_log(params)
        self.assertEqual(quantizer.kind, "log2_parity")
        x = np.linspace(1e-4, 0.9, 200)
        np.testing.assert_array_equal(quantizer.fake_quant(x), log_fake_quant(x, params))

    def test_hardware_friendly(self):
        """Test only channel-wise uniform quantizers are simulation-only."""
        layer = UniformQuantParams(scale=[0.1], zero_point=[3], bits=4)
        channel = UniformQuantParams(scale=[0.1, 0.2], zero_point=[3, 4], bits=4, granularity="channel")
        self.assertTrue(ActivationQuantizer.from_uniform(layer).hardware_friendly)
        self.assertFalse(ActivationQuantizer.from_uniform(channel).hardware_friendly)
        self.assertTrue(ActivationQuantizer.from_log(LogQuantParams(1.0, "two", 4)).hardware_friendly)

    def test_invalid(self):
        """Test required fields per kind."""
        with self.assertRaises(ValidationError):
            ActivationQuantizer(kind="uniform", bits=4)
        with self.assertRaises(ValidationError):
            ActivationQuantizer(kind="log2", bits=4)
        with self.assertRaises(ValidationError):
            ActivationQuantizer(kind="log10", bits=4, scale=1.0)


class TestWeightRecord(unittest.TestCase):
    """Test cases for WeightRecord."""

    def test_code_dtype(self):
        """Test codes use one byte up to 8 bits and two above."""
        p4 = UniformQuantParams(scale=[0.1, 0.1], zero_point=[8, 8], bits=4, granularity="channel")
        p12 = UniformQuantParams(scale=[0.1, 0.1], zero_point=[8, 8], bits=12, granularity="channel")
        self.assertEqual(WeightRecord(np.zeros((3, 2)), p4, np.zeros(2)).code_dtype, "u8")
        self.assertEqual(WeightRecord(np.zeros((3, 2)), p12, np.zeros(2)).code_dtype, "u16")

    def test_dequantize(self):
        """Test dequantize applies s * (code - z) per output channel."""
        p = UniformQuantParams(scale=[0.5, 2.0], zero_point=[1, 0], bits=4, granularity="channel")
        layer = WeightRecord(np.array([[1.0, 3.0], [3.0, 0.0]]), p, np.array([0.1, 0.2])).dequantize()
        np.testing.assert_array_equal(layer.weight, [[0.0, 6.0], [1.0, 0.0]])
        np.testing.assert_array_equal(layer.bias, [0.1, 0.2])

    def test_shape_mismatch(self):
        """Test codes must match params and bias."""
        p = UniformQuantParams(scale=[0.1, 0.1], zero_point=[0, 0], bits=4, granularity="channel")
        with self.assertRaises(ValidationError):
            WeightRecord(np.zeros((3, 3)), p, np.zeros(3))


class TestQuantizedModel(unittest.TestCase):
    """Test cases for QuantizedModel."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, "quantized.json")
        self.model = init_model(8, 2, 4, seed=3)
        self.calib = gen_correlated(SynthSpec(channels=8, tokens=4, samples=6, range_ratio=5.0, seed=3))
        self.cfg = QuantConfig(clip_iters=10)
        self.quantized, _ = run_pipeline(self.model, self.calib, self.cfg)

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_structure(self):
        """Test every weight has codes and every site a quantizer."""
        block = self.quantized.blocks[0]
        self.assertEqual(set(block.weights), {"wq", "wk", "wv", "wo", "mlp_up", "mlp_down"})
        self.assertEqual(set(block.activations),
                         {"ln1", "q", "k", "softmax", "v", "attn_out", "ln2", "mlp_hidden"})
        self.assertEqual(block.activations["softmax"].kind, "log2_parity")
        for record in block.weights.values():
            self.assertTrue(np.all(record.codes == np.rint(record.codes)))
            self.assertTrue(np.all((record.codes >= 0) & (record.codes <= 15)))
        self.assertEqual(self.quantized.architecture(), self.model.architecture())

    def test_save_and_load_preserve_forward(self):
        """Test a loaded quantized model computes the same outputs."""
        self.quantized.save_to_file(self.path)
        loaded = QuantizedModel.load_from_file(self.path)
        self.assertEqual(loaded.config, self.cfg)
        np.testing.assert_allclose(loaded.forward(self.calib), self.quantized.forward(self.calib),
                                   rtol=1e-5, atol=1e-6)
        self.assertIn("ln1", loaded.blocks[0].reparam)
        np.testing.assert_allclose(loaded.blocks[0].reparam["ln1"]["r1"],
                                   self.quantized.blocks[0].reparam["ln1"]["r1"])

    def test_manifest_contents(self):
        """Test the manifest is versioned and stores codes as u8."""
        self.quantized.save_to_file(self.path)
        manifest = FileHandler.read_json(self.path)
        self.assertEqual(manifest["format_version"], 1)
        self.assertEqual(manifest["kind"], "quantized_model")
        self.assertEqual(manifest["blocks"][0]["weights"]["wq"]["codes"]["dtype"], "u8")
        kinds = {q["kind"] for q in manifest["blocks"][0]["activations"].values()}
        self.assertTrue(kinds <= {"uniform", "log2", "log2_parity"})
        for q in manifest["blocks"][0]["activations"].values():
            if q["kind"] == "uniform":
                self.assertEqual(q["granularity"], "layer")

    def test_check_invariants_rejects_channel_quantizer(self):
        """Test a channel-wise activation quantizer is refused in a deployable model."""
        channel = UniformQuantParams(scale=np.full(8, 0.1), zero_point=np.full(8, 7), bits=4,
                                     granularity="channel")
        self.quantized.blocks[0].activations["ln1"] = ActivationQuantizer.from_uniform(channel)
        with self.assertRaises(ContractError):
            self.quantized.check_invariants()
        with self.assertRaises(ContractError):
            self.quantized.save_to_file(self.path)

    def test_check_invariants_missing_weight(self):
        """Test a missing weight record is reported."""
        del self.quantized.blocks[0].weights["wo"]
        with self.assertRaises(ContractError):
            self.quantized.check_invariants()

    def test_load_malformed(self):
        """Test a manifest with missing fields raises ModelFormatError."""
        self.quantized.save_to_file(self.path)
        manifest = FileHandler.read_json(self.path)
        del manifest["blocks"][0]["weights"]["mlp_up"]["scale"]
        FileHandler.write_json(self.path, manifest)
        with self.assertRaises(ModelFormatError):
            QuantizedModel.load_from_file(self.path)

    def test_load_unknown_quantizer_kind(self):
        """Test an unsupported activation quantizer kind is a format error."""
        self.quantized.save_to_file(self.path)
        manifest = FileHandler.read_json(self.path)
        manifest["blocks"][0]["activations"]["softmax"]["kind"] = "log_sqrt2"
        FileHandler.write_json(self.path, manifest)
        with self.assertRaises(ModelFormatError):
            QuantizedModel.load_from_file(self.path)


if __name__ == '__main__':
    unittest.main()
