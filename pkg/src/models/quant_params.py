"""Quantizer parameter records: uniform, logarithmic and calibration ranges."""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from src.utils.tensor import Tensor
from src.utils.validators import ValidationError, validate_bits, validate_choice

Granularity = Literal["layer", "channel"]
LogBase = Literal["two", "sqrt_two"]

GRANULARITIES = ("layer", "channel")
LOG_BASES = ("two", "sqrt_two")


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64)).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class UniformQuantParams:
    """
    Affine quantizer parameters.

    Properties:
        scale (ndarray): positive step sizes, length 1 (layer) or D (channel)
        zero_point (ndarray): zero-points in [0, 2^b - 1]; integral for
            deployment, fractional values are accepted for calibration-time use
        bits (int): bit-width b
        granularity (str): "layer" or "channel"
    """

    scale: Tensor
    zero_point: Tensor
    bits: int
    granularity: Granularity = "layer"

    def __post_init__(self):
        scale = _as_vector(self.scale, "scale")
        zero_point = _as_vector(self.zero_point, "zero_point")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", zero_point)
        object.__setattr__(self, "bits", validate_bits(self.bits))
        validate_choice(self.granularity, GRANULARITIES, "granularity")

        if scale.shape != zero_point.shape:
            raise ValidationError(
                f"scale and zero_point lengths differ: {scale.shape} vs {zero_point.shape}"
            )
        if self.granularity == "layer" and scale.size != 1:
            raise ValidationError("layer-wise params must hold a single scale and zero-point")
        if np.any(scale <= 0):
            raise ValidationError("scale must be strictly positive")
        if np.any(zero_point < 0) or np.any(zero_point > self.qmax):
            raise ValidationError(f"zero_point must lie in [0, {self.qmax}]")

    @property
    def qmax(self) -> int:
        """Largest code, 2^b - 1."""
        return 2 ** self.bits - 1

    @property
    def channels(self) -> int:
        return int(self.scale.size)

    @property
    def is_integral(self) -> bool:
        return bool(np.all(self.zero_point == np.rint(self.zero_point)))

    def get_metadata(self) -> dict:
        return {
            "kind": "uniform",
            "granularity": self.granularity,
            "bits": self.bits,
            "scale": self.scale.tolist(),
            "zero_point": self.zero_point.tolist(),
        }


@dataclass(frozen=True)
class LogQuantParams:
    """
    Logarithmic quantizer parameters.

    Properties:
        scale (float): positive scale s; code 0 dequantizes to s
        base (str): "two" or "sqrt_two"
        bits (int): bit-width b
    """

    scale: float
    base: LogBase = "sqrt_two"
    bits: int = 4

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "bits", validate_bits(self.bits))
        validate_choice(self.base, LOG_BASES, "base")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValidationError(f"log scale must be positive, got {self.scale}")

    @property
    def qmax(self) -> int:
        return 2 ** self.bits - 1

    @property
    def steps_per_octave(self) -> int:
        """Codes per factor of two: 1 for base two, 2 for base sqrt(2)."""
        return 1 if self.base == "two" else 2

    def get_metadata(self) -> dict:
        return {"kind": "log", "base": self.base, "bits": self.bits, "scale": self.scale}


@dataclass(frozen=True)
class CalibRange:
    """
    Calibrated bounds, per channel (length D) or global (length 1).

    Properties:
        upper (ndarray): upper bounds
        lower (ndarray): lower bounds, lower <= upper elementwise
    """

    upper: Tensor
    lower: Tensor
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        upper = _as_vector(self.upper, "upper")
        lower = _as_vector(self.lower, "lower")
        if upper.shape != lower.shape:
            raise ValidationError(f"upper and lower lengths differ: {upper.shape} vs {lower.shape}")
        if np.any(upper < lower):
            raise ValidationError("upper must be >= lower elementwise")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)

    @property
    def granularity(self) -> Granularity:
        return "layer" if self.upper.size == 1 else "channel"

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower
