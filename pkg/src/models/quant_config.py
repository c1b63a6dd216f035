"""
Quantization run configuration shared by the pipeline, the CLI and reports.
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict

from src.utils.validators import (
    ValidationError,
    validate_bits,
    validate_choice,
    validate_fraction,
    validate_positive,
)

SOFTMAX_BASES = ("logsqrt2", "log2", "uniform")
PREFIX_MODES = ("quantized", "fp")
LN_GRANULARITIES = ("reparam", "layer", "channel")
SCALE_REDUCTIONS = ("mean", "median", "geomean")
ZERO_POINT_MODES = ("rounded", "exact")
CLIP_METHODS = ("sigmoid", "direct")


@dataclass(frozen=True)
class QuantConfig:
    """
    Settings for one quantization run.

    Properties:
        weight_bits (int): bit-width of weight codes
        act_bits (int): bit-width of activation codes
        percentile (float): quantile used by percentile calibration
        clip_iters (int): Adam iterations of the dual clipping search
        clip_lr (float): Adam learning rate
        clip_init (float): initial value of both clipping logits
        clip_method (str): "sigmoid" fits contraction logits, "direct" fits the raw bounds
        softmax_base (str): logsqrt2, log2 or uniform
        calib_size (int): number of calibration samples used
        seed (int): seed for every random draw of the run
        prefix_mode (str): "quantized" collects layer inputs from the
            quantized prefix, "fp" from the full-precision model
        enable_clip (bool): learn dual clipping bounds on LayerNorm outputs
        enable_gptq (bool): reconstruct weights with GPTQ instead of RTN
        ln_granularity (str): reparam, layer or channel quantizer for LayerNorm outputs
        scale_reduction (str): how channel scales collapse to one (mean, median, geomean)
        gptq_block_size (int): rows per GPTQ block
        gptq_damp (float): relative Hessian damping
        zero_point_mode (str): "rounded" or "exact" layer-wise zero-point
    """

    weight_bits: int = 4
    act_bits: int = 4
    percentile: float = 0.9999
    clip_iters: int = 100
    clip_lr: float = 0.01
    clip_init: float = 4.0
    clip_method: str = "sigmoid"
    softmax_base: str = "logsqrt2"
    calib_size: int = 128
    seed: int = 0
    prefix_mode: str = "quantized"
    enable_clip: bool = True
    enable_gptq: bool = True
    ln_granularity: str = "reparam"
    scale_reduction: str = "mean"
    gptq_block_size: int = 32
    gptq_damp: float = 0.01
    zero_point_mode: str = "rounded"

    def __post_init__(self):
        validate_bits(self.weight_bits, name="weight_bits")
        validate_bits(self.act_bits, name="act_bits")
        validate_fraction(self.percentile, "percentile", 0.5, 1.0)
        if self.percentile == 0.5:
            raise ValidationError("percentile must be greater than 0.5")
        if int(self.clip_iters) != self.clip_iters or self.clip_iters < 0:
            raise ValidationError(f"clip_iters must be a non-negative integer, got {self.clip_iters}")
        validate_positive(self.clip_lr, "clip_lr")
        if not abs(float(self.clip_init)) < float("inf"):
            raise ValidationError("clip_init must be finite")
        validate_choice(self.clip_method, CLIP_METHODS, "clip_method")
        validate_choice(self.softmax_base, SOFTMAX_BASES, "softmax_base")
        if int(self.calib_size) != self.calib_size or self.calib_size < 1:
            raise ValidationError(f"calib_size must be a positive integer, got {self.calib_size}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed}")
        validate_choice(self.prefix_mode, PREFIX_MODES, "prefix_mode")
        validate_choice(self.ln_granularity, LN_GRANULARITIES, "ln_granularity")
        validate_choice(self.scale_reduction, SCALE_REDUCTIONS, "scale_reduction")
        validate_choice(self.zero_point_mode, ZERO_POINT_MODES, "zero_point_mode")
        if int(self.gptq_block_size) != self.gptq_block_size or self.gptq_block_size < 1:
            raise ValidationError(f"gptq_block_size must be a positive integer, got {self.gptq_block_size}")
        validate_positive(self.gptq_damp, "gptq_damp")

    def replace(self, **changes) -> "QuantConfig":
        """Copy with some fields changed (validated again)."""
        data = self.to_dict()
        data.update(changes)
        return QuantConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuantConfig":
        """
        Build a config from a mapping, ignoring nothing silently.

        Raises:
            ValidationError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"Unknown QuantConfig keys: {', '.join(unknown)}")
        return cls(**data)

    def __str__(self) -> str:
        return (f"QuantConfig(W{self.weight_bits}/A{self.act_bits}, softmax={self.softmax_base}, "
                f"clip={'on' if self.enable_clip else 'off'}, gptq={'on' if self.enable_gptq else 'off'}, "
                f"seed={self.seed})")
