#!/usr/bin/env python3
"""
Main CLI entry point for the RepQuant toolkit.

Subcommands tie the pieces together for batch use:
gen → init-model → quantize → eval, plus ablate and report.
"""

import argparse
import os
import sys
from typing import List, Optional

# Add the repository root to the path so `src` imports resolve
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.models.dataset import CalibrationDataset
from src.models.quant_config import CLIP_METHODS, LN_GRANULARITIES, PREFIX_MODES, SOFTMAX_BASES, ZERO_POINT_MODES
from src.models.quantized_model import QuantizedModel
from src.models.report import QuantizationReport
from src.models.transformer import ToyModel
from src.services.ablation import ABLATION_SECTIONS, grid_to_csv, run_ablation, select_grid, shipped_benchmark
from src.services.evaluator import evaluate
from src.services.pipeline import run_pipeline
from src.services.synthdata import DEFAULT_TAIL_DOF, SynthSpec, gen_correlated, gen_interchannel, gen_powerlaw
from src.services.toymodel import init_model
from src.utils.config import Config, get_config
from src.utils.file_handler import FileHandler, ModelFormatError
from src.utils.validators import ContractError, validate_file_exists, validate_output_directory

EXIT_OK = 0
EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_CONTRACT = 4
EXIT_USAGE = 64

GENERATORS = ("interchannel", "powerlaw", "correlated")


class RepQuantArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with EXIT_USAGE instead of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code_for(error: BaseException) -> int:
    """Map an exception to its exit-code category."""
    if isinstance(error, ModelFormatError):
        return EXIT_FORMAT
    if isinstance(error, OSError):
        return EXIT_IO
    if isinstance(error, ContractError):
        return EXIT_CONTRACT
    return 1


class RepQuantCLI:
    """Main CLI orchestrator for the quantization toolkit."""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or get_config()

    def _output_path(self, path: Optional[str], default_name: str) -> str:
        path = path or os.path.join(self.config.get_output_directory(), default_name)
        validate_output_directory(os.path.dirname(os.path.abspath(path)))
        return path

    def _quant_config(self, args):
        return self.config.get_quant_config(
            weight_bits=args.weight_bits,
            act_bits=args.act_bits,
            percentile=args.percentile,
            clip_iters=args.clip_iters,
            clip_lr=args.clip_lr,
            clip_init=args.clip_init,
            clip_method=args.clip_method,
            softmax_base=args.softmax_base,
            calib_size=args.calib_size,
            seed=args.seed,
            prefix_mode=args.prefix_mode,
            ln_granularity=args.ln_granularity,
            zero_point_mode=args.zero_point_mode,
            enable_clip=False if args.no_clip else None,
            enable_gptq=False if args.no_gptq else None,
        )

    def gen_dataset(self, args) -> dict:
        spec = SynthSpec(
            channels=args.channels,
            tokens=args.tokens,
            samples=args.samples,
            range_ratio=args.range_ratio,
            left_frac=args.left_frac,
            right_frac=args.right_frac,
            sigma=args.sigma,
            tail_dof=None if args.gaussian else args.tail_dof,
            powerlaw_exponent=args.powerlaw_exponent,
            spike_rate=args.spike_rate,
            seed=args.seed,
        )
        print(f"[GEN] Generating {args.kind} data: {spec.samples} x {spec.tokens} x {spec.channels}")
        if args.kind == "interchannel":
            data = gen_interchannel(spec)
        elif args.kind == "powerlaw":
            data = gen_powerlaw(spec)
        else:
            data = gen_correlated(spec, rank=args.rank)
        params = spec.to_dict()
        if args.kind == "correlated":
            params["rank"] = args.rank
        dataset = CalibrationDataset(data, generator=args.kind, params=params)
        path = self._output_path(args.output, f"{args.kind}.json")
        dataset.save_to_file(path)
        print(f"[SAVE] Dataset saved: {path}")
        return {"dataset_file": path}

    def init_toy_model(self, args) -> dict:
        print(f"[GEN] Initialising model: D={args.embed_dim}, heads={args.heads}, "
              f"N={args.tokens}, blocks={args.blocks}, seed={args.seed}")
        model = init_model(args.embed_dim, args.heads, args.tokens, blocks=args.blocks,
                           seed=args.seed, causal=args.causal)
        path = self._output_path(args.output, "model.json")
        model.save_to_file(path)
        print(f"[SAVE] Model saved: {path}")
        return {"model_file": path}

    def quantize_model(self, args) -> dict:
        validate_file_exists(args.model)
        validate_file_exists(args.data)
        cfg = self._quant_config(args)
        model = ToyModel.load_from_file(args.model)
        dataset = CalibrationDataset.load_from_file(args.data)
        print(f"[PIPELINE] Quantizing {model} on {dataset} with {cfg}")

        quantized, layers = run_pipeline(model, dataset.data, cfg, verbose=args.verbose)
        path = self._output_path(args.output, "quantized.json")
        quantized.save_to_file(path)
        print(f"[SAVE] Quantized model saved: {path}")

        report_path = args.report or os.path.join(
            os.path.dirname(path), f"{FileHandler.get_filename_without_extension(path)}_report.json")
        report = QuantizationReport(cfg, layers, title="quantize")
        report.save_to_file(report_path)
        print(f"[SAVE] Report saved: {report_path}")
        results = {"quantized_file": path, "report_file": report_path}
        if args.csv:
            report.save_csv(args.csv)
            print(f"[SAVE] Layer CSV saved: {args.csv}")
            results["csv_file"] = args.csv
        return results

    def eval_model(self, args) -> dict:
        for path in (args.model, args.quantized, args.data):
            validate_file_exists(path)
        model = ToyModel.load_from_file(args.model)
        quantized = QuantizedModel.load_from_file(args.quantized)
        dataset = CalibrationDataset.load_from_file(args.data)
        print(f"[EVAL] Comparing {quantized} against {model} on {dataset.samples} samples")

        metrics = evaluate(quantized, model, dataset.data)
        print(f"[EVAL] output MSE {metrics['output_mse']:.6g}, cosine similarity {metrics['cosine_similarity']:.6f}")
        path = self._output_path(args.output, "metrics.json")
        QuantizationReport(quantized.config, metrics=metrics, title="eval").save_to_file(path)
        print(f"[SAVE] Metrics saved: {path}")
        return {"metrics_file": path, "metrics": metrics}

    def ablate_grid(self, args) -> dict:
        cfg = self._quant_config(args)
        if args.no_reparam_softmax:
            cfg = cfg.replace(softmax_base="log2")
        grid = select_grid(args.sections, no_clip=args.no_clip, no_gptq=args.no_gptq)
        benchmark = shipped_benchmark(args.benchmark_seed)
        print(f"[PIPELINE] Ablation over {[p.name for p in grid]} on benchmark seed {args.benchmark_seed}")

        rows = run_ablation(benchmark, cfg, workers=args.workers, verbose=args.verbose, grid=grid)
        for row in rows:
            print(f"[EVAL] {row['section']:<14} {row['name']:<16} output MSE {row['output_mse']:.6g}")
        path = self._output_path(args.output, "ablation.json")
        QuantizationReport(cfg, metrics={"grid": rows, "benchmark_seed": args.benchmark_seed},
                           title="ablate").save_to_file(path)
        print(f"[SAVE] Ablation report saved: {path}")
        if args.csv:
            FileHandler.write_text_file(args.csv, grid_to_csv(rows))
            print(f"[SAVE] Ablation CSV saved: {args.csv}")
        return {"report_file": path, "rows": rows}

    def emit_report(self, args) -> dict:
        chunks = []
        for path in args.reports:
            validate_file_exists(path)
            try:
                report = QuantizationReport.load_from_file(path)
            except (KeyError, TypeError) as e:
                raise ModelFormatError(f"{path} is not a report file: missing or invalid {e}")
            if "grid" in report.metrics:
                chunks.append(grid_to_csv(report.metrics["grid"]))
            else:
                chunks.append(report.to_csv())
        csv_text = "".join(chunks)
        if args.output:
            FileHandler.write_text_file(args.output, csv_text)
            print(f"[SAVE] CSV saved: {args.output}")
        else:
            sys.stdout.write(csv_text)
        return {"csv": csv_text}

    def run(self, args) -> dict:
        """
        Run one subcommand.

        Returns:
            Dictionary with the produced files, "success" and "exit_code"
        """
        handlers = {
            "gen": self.gen_dataset,
            "init-model": self.init_toy_model,
            "quantize": self.quantize_model,
            "eval": self.eval_model,
            "ablate": self.ablate_grid,
            "report": self.emit_report,
        }
        try:
            results = handlers[args.command](args)
            results.update({"success": True, "exit_code": EXIT_OK})
            if args.command != "report":
                print(f"\n[SUCCESS] {args.command} completed successfully!")
            return results
        except Exception as e:
            print(f"\n[ERROR] {args.command} failed: {str(e)}", file=sys.stderr)
            return {"error": str(e), "success": False, "exit_code": exit_code_for(e)}

    def parse_arguments(self, argv: Optional[List[str]] = None):
        """Parse command line arguments."""
        parser = RepQuantArgumentParser(
            description="Post-training quantization of toy transformers with scale reparameterization",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
Examples:
  python src/main.py gen --kind correlated --channels 16 --tokens 8 --samples 48 -o out/data.json
  python src/main.py init-model --embed-dim 16 --heads 2 --tokens 8 -o out/model.json
  python src/main.py quantize --model out/model.json --data out/data.json --act-bits 4 --weight-bits 4
  python src/main.py eval --model out/model.json --quantized output/quantized.json --data out/data.json
  python src/main.py ablate --benchmark-seed 0 --sections clip_gptq --csv output/ablation.csv
  python src/main.py report output/quantized_report.json -o output/layers.csv
            """
        )
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose output")
        sub = parser.add_subparsers(dest="command", required=True)

        gen = sub.add_parser("gen", parents=[common], help="Generate a synthetic dataset")
        gen.add_argument("--kind", choices=GENERATORS, default="interchannel", help="Generator (default: interchannel)")
        gen.add_argument("--channels", type=int, default=64, help="Channels D (powerlaw data uses tokens)")
        gen.add_argument("--tokens", type=int, default=16, help="Tokens N")
        gen.add_argument("--samples", type=int, default=32, help="Samples S")
        gen.add_argument("--range-ratio", type=float, default=1.0, help="Inter-channel range ratio")
        gen.add_argument("--left-frac", type=float, default=0.25, help="Fraction of left-biased channels")
        gen.add_argument("--right-frac", type=float, default=0.25, help="Fraction of right-biased channels")
        gen.add_argument("--sigma", type=float, default=1.0, help="Smallest channel stddev")
        gen.add_argument("--tail-dof", type=float, default=DEFAULT_TAIL_DOF,
                         help=f"Student-t degrees of freedom for the bulk (default: {DEFAULT_TAIL_DOF:g})")
        gen.add_argument("--gaussian", action="store_true", help="Gaussian bulk instead of Student-t")
        gen.add_argument("--powerlaw-exponent", type=float, default=2.5, help="Tail index of softmax-like rows")
        gen.add_argument("--spike-rate", type=float, default=0.0, help="Fraction of rows with a dominant entry")
        gen.add_argument("--rank", type=int, default=4, help="Latent rank of correlated data")
        gen.add_argument("--seed", type=int, default=0, help="Random seed")
        gen.add_argument("--output", "-o", default=None, help="Dataset manifest path")

        model = sub.add_parser("init-model", parents=[common], help="Create a random toy model")
        model.add_argument("--embed-dim", type=int, default=16, help="Embedding width D")
        model.add_argument("--heads", type=int, default=2, help="Attention heads")
        model.add_argument("--tokens", type=int, default=8, help="Sequence length N")
        model.add_argument("--blocks", type=int, default=1, help="Transformer blocks")
        model.add_argument("--causal", action="store_true", help="Use a causal attention mask")
        model.add_argument("--seed", type=int, default=0, help="Random seed")
        model.add_argument("--output", "-o", default=None, help="Model manifest path")

        quantize = sub.add_parser("quantize", parents=[common], help="Quantize a model on a calibration dataset")
        quantize.add_argument("--model", required=True, help="Full-precision model manifest")
        quantize.add_argument("--data", required=True, help="Calibration dataset manifest")
        quantize.add_argument("--output", "-o", default=None, help="Quantized model manifest path")
        quantize.add_argument("--report", default=None, help="Report path (default: next to the output)")
        quantize.add_argument("--csv", default=None, help="Also write the per-layer report as CSV")
        self._add_quant_flags(quantize)

        evaluate_cmd = sub.add_parser("eval", parents=[common], help="Compare a quantized model to its source")
        evaluate_cmd.add_argument("--model", required=True, help="Full-precision model manifest")
        evaluate_cmd.add_argument("--quantized", required=True, help="Quantized model manifest")
        evaluate_cmd.add_argument("--data", required=True, help="Held-out dataset manifest")
        evaluate_cmd.add_argument("--output", "-o", default=None, help="Metrics file path")

        ablate = sub.add_parser("ablate", parents=[common], help="Run the ablation grid on the shipped benchmark")
        ablate.add_argument("--benchmark-seed", type=int, default=0, help="Seed of the shipped benchmark")
        ablate.add_argument("--sections", nargs="+", choices=tuple(ABLATION_SECTIONS), default=None,
                            help="Grid sections to run (default: all)")
        ablate.add_argument("--no-reparam-softmax", action="store_true", help="Use log2 instead of log-sqrt(2)")
        ablate.add_argument("--workers", type=int, default=1, help="Grid points run in parallel")
        ablate.add_argument("--output", "-o", default=None, help="Ablation report path")
        ablate.add_argument("--csv", default=None, help="Also write the grid as CSV")
        self._add_quant_flags(ablate)

        report = sub.add_parser("report", parents=[common], help="Convert report files to CSV")
        report.add_argument("reports", nargs="+", help="Report JSON files")
        report.add_argument("--output", "-o", default=None, help="CSV path (default: stdout)")

        return parser.parse_args(argv)

    @staticmethod
    def _add_quant_flags(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--weight-bits", type=int, default=None, help="Weight bit-width (default: 4)")
        parser.add_argument("--act-bits", type=int, default=None, help="Activation bit-width (default: 4)")
        parser.add_argument("--percentile", type=float, default=None, help="Percentile calibration quantile")
        parser.add_argument("--clip-iters", type=int, default=None, help="Adam iterations for clipping")
        parser.add_argument("--clip-lr", type=float, default=None, help="Adam learning rate for clipping")
        parser.add_argument("--clip-init", type=float, default=None, help="Initial clipping logit")
        parser.add_argument("--clip-method", choices=CLIP_METHODS, default=None,
                            help="Fit sigmoid contraction logits or the raw bounds (default: sigmoid)")
        parser.add_argument("--softmax-base", choices=SOFTMAX_BASES, default=None, help="Softmax quantizer")
        parser.add_argument("--calib-size", type=int, default=None, help="Calibration samples used")
        parser.add_argument("--seed", type=int, default=None, help="Run seed")
        parser.add_argument("--prefix-mode", choices=PREFIX_MODES, default=None,
                            help="Collect layer inputs from the quantized or full-precision prefix")
        parser.add_argument("--quantizer-granularity", dest="ln_granularity", choices=LN_GRANULARITIES,
                            default=None, help="LayerNorm activation quantizer (default: reparam)")
        parser.add_argument("--zero-point-mode", choices=ZERO_POINT_MODES, default=None,
                            help="Layer-wise zero-point after reparameterization")
        parser.add_argument("--no-clip", action="store_true", help="Disable dual clipping")
        parser.add_argument("--no-gptq", action="store_true", help="Use round-to-nearest weights")


def main(argv: Optional[List[str]] = None):
    """Main entry point."""
    cli = RepQuantCLI()
    args = cli.parse_arguments(argv)
    results = cli.run(args)
    sys.exit(results["exit_code"])


if __name__ == "__main__":
    main()
