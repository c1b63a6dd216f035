"""Uniform and logarithmic quantizers with their calibration routines."""

import math
from typing import Optional

import numpy as np

from src.models.quant_params import CalibRange, Granularity, LogQuantParams, UniformQuantParams
from src.utils.tensor import (
    Tensor,
    TensorDomainError,
    TensorShapeError,
    as_tensor,
    clamp,
    flatten_rows,
    is_integral,
    reduce_max,
    reduce_min,
    round_half_to_even,
)
from src.utils.validators import ContractError, validate_bits, validate_choice, validate_fraction

SQRT2 = math.sqrt(2.0)
DEFAULT_PERCENTILE = 0.9999


class QuantizerError(ContractError):
    """Raised when a quantizer contract is violated."""
    pass


class CalibrationError(QuantizerError):
    """Raised when calibration data cannot produce a valid range."""
    pass


def _channel_params(x: Tensor, p: UniformQuantParams):
    if p.granularity == "channel":
        if x.ndim == 0 or x.shape[-1] != p.channels:
            raise TensorShapeError(
                f"channel-wise params of length {p.channels} do not match input shape {x.shape}"
            )
        return p.scale, p.zero_point
    return p.scale[0], p.zero_point[0]


def widen_degenerate(rng: CalibRange) -> CalibRange:
    """
    Widen channels whose upper bound equals the lower bound.

    Each such channel grows symmetrically by max(1e-8, 1e-6 * |upper|) so
    params_from_range can produce a positive scale.
    """
    width = rng.upper - rng.lower
    degenerate = width <= 0
    if not np.any(degenerate):
        return rng
    pad = np.maximum(1e-8, 1e-6 * np.abs(rng.upper))
    upper = np.where(degenerate, rng.upper + pad, rng.upper)
    lower = np.where(degenerate, rng.lower - pad, rng.lower)
    flags = tuple(rng.flags) + (f"degenerate_channels={int(np.sum(degenerate))}",)
    return CalibRange(upper=upper, lower=lower, flags=flags)


def params_from_range(rng: CalibRange, bits: int,
                      granularity: Optional[Granularity] = None,
                      round_zero_point: bool = True) -> UniformQuantParams:
    """
    Derive scale and zero-point from calibrated bounds.

    s = (upper - lower) / (2^b - 1); z = round(-lower / s) clamped to the
    code range. With round_zero_point=False the zero-point stays continuous.

    Raises:
        CalibrationError: If any channel has upper == lower
    """
    bits = validate_bits(bits)
    qmax = 2 ** bits - 1
    width = rng.upper - rng.lower
    if np.any(width <= 0):
        raise CalibrationError(
            f"degenerate calibration range on {int(np.sum(width <= 0))} channel(s); widen first"
        )
    scale = width / qmax
    zero_point = -rng.lower / scale
    if round_zero_point:
        zero_point = round_half_to_even(zero_point)
    zero_point = clamp(zero_point, 0, qmax)
    return UniformQuantParams(
        scale=scale,
        zero_point=zero_point,
        bits=bits,
        granularity=granularity or rng.granularity,
    )


def uniform_quant(x: Tensor, p: UniformQuantParams) -> Tensor:
    """Integer codes clip(round(x / s + z), 0, 2^b - 1), stored as floats."""
    x = as_tensor(x)
    scale, zero_point = _channel_params(x, p)
    return clamp(round_half_to_even(x / scale + zero_point), 0, p.qmax)


def uniform_dequant(codes: Tensor, p: UniformQuantParams) -> Tensor:
    """
    Map codes back to reals: s * (code - z).

    Raises:
        QuantizerError: If codes are not integral or out of range
    """
    codes = as_tensor(codes)
    if not is_integral(codes):
        raise QuantizerError("uniform_dequant: codes must be integral")
    if np.any(codes < 0) or np.any(codes > p.qmax):
        raise QuantizerError(f"uniform_dequant: codes must lie in [0, {p.qmax}]")
    scale, zero_point = _channel_params(codes, p)
    return scale * (codes - zero_point)


def uniform_fake_quant(x: Tensor, p: UniformQuantParams) -> Tensor:
    return uniform_dequant(uniform_quant(x, p), p)


def log_floor(p: LogQuantParams) -> float:
    """Smallest representable magnitude, the dequantized value of the largest code."""
    return p.scale * 2.0 ** (-p.qmax / p.steps_per_octave)


def log_quant(x: Tensor, p: LogQuantParams) -> Tensor:
    """
    Logarithmic codes clip(round(-m * log2(x / s)), 0, 2^b - 1).

    m is 1 for base two and 2 for base sqrt(2). Exact zeros and underflowed
    values are lifted to the smallest representable magnitude so they map
    to the largest code.

    Raises:
        TensorDomainError: If any input is negative or NaN
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise TensorDomainError("log_quant: input must be non-negative")
    x = np.maximum(x, log_floor(p))
    with np.errstate(divide="ignore"):
        exponent = -p.steps_per_octave * np.log2(x / p.scale)
    return clamp(round_half_to_even(exponent), 0, p.qmax)


def log_dequant(codes: Tensor, p: LogQuantParams) -> Tensor:
    """
    Map log codes back to reals: s * 2^-code or s * sqrt(2)^-code.

    The sqrt(2) branch is evaluated as (s * [sqrt(2) if odd]) * 2^floor(-code/2)
    so it is bit-identical to the reparameterized log2 path.

    Raises:
        QuantizerError: If codes are not integral or out of range
    """
    codes = as_tensor(codes)
    if not is_integral(codes):
        raise QuantizerError("log_dequant: codes must be integral")
    if np.any(codes < 0) or np.any(codes > p.qmax):
        raise QuantizerError(f"log_dequant: codes must lie in [0, {p.qmax}]")
    icodes = codes.astype(np.int64)
    if p.base == "two":
        return np.ldexp(np.full(codes.shape, p.scale), -icodes)
    odd = icodes % 2
    mantissa = p.scale * np.where(odd == 1, SQRT2, 1.0)
    return np.ldexp(mantissa, np.floor_divide(-icodes, 2))


def log_fake_quant(x: Tensor, p: LogQuantParams) -> Tensor:
    return log_dequant(log_quant(x, p), p)


def _samples_2d(samples: Tensor, granularity: Granularity) -> Tensor:
    validate_choice(granularity, ("layer", "channel"), "granularity")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise CalibrationError("calibration set is empty")
    if granularity == "layer":
        return samples.reshape(-1, 1)
    return flatten_rows(samples)


def calibrate_minmax(samples: Tensor, granularity: Granularity = "channel") -> CalibRange:
    """
    Per-channel (last axis) or global max/min over all calibration samples.

    Raises:
        CalibrationError: If samples is empty
    """
    rows = _samples_2d(samples, granularity)
    return CalibRange(upper=reduce_max(rows, axis=0), lower=reduce_min(rows, axis=0))


def calibrate_percentile(samples: Tensor, granularity: Granularity = "channel",
                         q: float = DEFAULT_PERCENTILE) -> CalibRange:
    """
    Bounds at the q and 1-q quantiles, linear interpolation between order statistics.

    Raises:
        CalibrationError: If samples is empty
        ValidationError: If q is outside (0.5, 1]
    """
    validate_fraction(q, "percentile", 0.5, 1.0)
    if q == 0.5:
        raise CalibrationError("percentile must be greater than 0.5")
    rows = _samples_2d(samples, granularity)
    upper = np.quantile(rows, q, axis=0)
    lower = np.quantile(rows, 1.0 - q, axis=0)
    return CalibRange(upper=upper, lower=np.minimum(lower, upper))


def quant_mse(x: Tensor, x_hat: Tensor) -> float:
    """Mean squared reconstruction error."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean((x - np.asarray(x_hat, dtype=np.float64)) ** 2))
