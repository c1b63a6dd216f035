"""Integration tests for the full gen -> init-model -> quantize -> eval flow."""

import os
import shutil
import tempfile
import unittest
from unittest.mock import patch

import numpy as np

from src.main import RepQuantCLI
from src.models.dataset import CalibrationDataset
from src.models.quantized_model import QuantizedModel
from src.models.report import QuantizationReport
from src.models.transformer import ToyModel
from src.services.evaluator import evaluate
from src.utils.config import Config


class TestFullPipeline(unittest.TestCase):
    """Integration tests for the complete quantization flow through the CLI."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.output_dir = os.path.join(self.temp_dir, "output")
        self.config_path = os.path.join(self.temp_dir, "config.txt")
        self.cli = RepQuantCLI(Config(config_file=self.config_path))

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def invoke(self, *argv):
        args = self.cli.parse_arguments(list(argv))
        with patch('builtins.print'):
            results = self.cli.run(args)
        self.assertTrue(results["success"], results.get("error"))
        return results

    def prepare(self, blocks=2):
        calib = os.path.join(self.temp_dir, "calib.json")
        heldout = os.path.join(self.temp_dir, "heldout.json")
        model = os.path.join(self.temp_dir, "model.json")
        common = ["--kind", "correlated", "--channels", "16", "--tokens", "8", "--range-ratio", "10"]
        self.invoke("gen", *common, "--samples", "32", "--seed", "5", "-o", calib)
        self.invoke("gen", *common, "--samples", "16", "--seed", "6", "-o", heldout)
        self.invoke("init-model", "--embed-dim", "16", "--heads", "2", "--tokens", "8",
                    "--blocks", str(blocks), "--seed", "5", "-o", model)
        return calib, heldout, model

    def test_full_flow(self):
        """Test a two-block model goes through quantize, eval and report."""
        calib, heldout, model = self.prepare()
        quantized = os.path.join(self.output_dir, "quantized.json")
        results = self.invoke("quantize", "--model", model, "--data", calib, "--clip-iters", "30", "-o", quantized)

        report = QuantizationReport.load_from_file(results["report_file"])
        self.assertEqual(len(report.layers), 28)
        self.assertEqual(report.layers[14].layer_id, "block1.ln1")

        loaded = QuantizedModel.load_from_file(quantized)
        loaded.check_invariants()
        self.assertEqual(len(loaded.blocks), 2)

        metrics = self.invoke("eval", "--model", model, "--quantized", quantized, "--data", heldout,
                              "-o", os.path.join(self.output_dir, "metrics.json"))["metrics"]
        self.assertEqual(len(metrics["per_layer_sqnr"]), 16)
        self.assertGreater(metrics["cosine_similarity"], 0.5)

        out = self.invoke("report", results["report_file"], os.path.join(self.output_dir, "metrics.json"),
                          "-o", os.path.join(self.output_dir, "all.csv"))
        self.assertEqual(out["csv"].count("layer_id,kind,method"), 2)

    def test_eval_matches_library_call(self):
        """Test the CLI metrics equal a direct evaluate call on the loaded files."""
        calib, heldout, model = self.prepare(blocks=1)
        quantized = os.path.join(self.output_dir, "quantized.json")
        self.invoke("quantize", "--model", model, "--data", calib, "--clip-iters", "10", "-o", quantized)
        metrics = self.invoke("eval", "--model", model, "--quantized", quantized, "--data", heldout,
                              "-o", os.path.join(self.output_dir, "metrics.json"))["metrics"]

        direct = evaluate(QuantizedModel.load_from_file(quantized), ToyModel.load_from_file(model),
                          CalibrationDataset.load_from_file(heldout).data)
        self.assertEqual(metrics["output_mse"], direct["output_mse"])
        self.assertEqual(metrics["cosine_similarity"], direct["cosine_similarity"])

    def test_more_bits_lower_error(self):
        """Test W8/A8 beats W4/A4 end to end."""
        calib, heldout, model = self.prepare(blocks=1)
        mse = {}
        for bits in ("4", "8"):
            quantized = os.path.join(self.output_dir, f"w{bits}.json")
            self.invoke("quantize", "--model", model, "--data", calib, "--clip-iters", "10",
                        "--act-bits", bits, "--weight-bits", bits, "-o", quantized)
            mse[bits] = self.invoke("eval", "--model", model, "--quantized", quantized, "--data", heldout,
                                    "-o", os.path.join(self.output_dir, f"m{bits}.json"))["metrics"]["output_mse"]
        self.assertLess(mse["8"], mse["4"])

    def test_config_file_supplies_defaults(self):
        """Test settings from the config file reach the quantizer."""
        with open(self.config_path, 'w', encoding='utf-8') as f:
            f.write("act_bits=6\nsoftmax_base=log2\n")
        with patch.dict(os.environ, {}, clear=False):
            for var in ("REPQUANT_ACT_BITS", "REPQUANT_SOFTMAX_BASE"):
                os.environ.pop(var, None)
            self.cli = RepQuantCLI(Config(config_file=self.config_path))
            calib, _, model = self.prepare(blocks=1)
            results = self.invoke("quantize", "--model", model, "--data", calib, "--clip-iters", "5",
                                  "-o", os.path.join(self.output_dir, "q.json"))
        report = QuantizationReport.load_from_file(results["report_file"])
        self.assertEqual(report.config.act_bits, 6)
        self.assertEqual(report.config.softmax_base, "log2")
        self.assertTrue(np.isfinite(report.layers[0].post_loss))


if __name__ == '__main__':
    unittest.main()
