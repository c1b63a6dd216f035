"""
Scale reparameterization: exact rewrites that let calibration-time quantizers
run as hardware-style quantizers at inference time.

LayerNorm: a channel-wise quantizer (s, z) on the LayerNorm output becomes a
layer-wise one (s~, z~). The per-channel factors r1 = s / s~ and r2 = z - z~
move into the LayerNorm affine factors and into the weights and biases of
every layer that consumes the LayerNorm output.

Softmax: a base-sqrt(2) log quantizer is executed as a base-2 one whose scale
depends on the parity of the code.
"""

from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np

from src.models.quant_params import LogQuantParams, UniformQuantParams
from src.models.transformer import LayerNormParams, LinearLayerParams
from src.services.quantizers import SQRT2
from src.utils.tensor import Tensor, add, as_tensor, div, is_integral, mul, round_half_to_even
from src.utils.validators import ContractError, validate_choice

ScaleReduction = Literal["mean", "median", "geomean"]
ZeroPointMode = Literal["rounded", "exact"]


class ReparamError(ContractError):
    """Raised when a reparameterization precondition does not hold."""
    pass


@dataclass(frozen=True)
class ReparamResult:
    """
    Outcome of a LayerNorm reparameterization.

    Properties:
        new_quant (UniformQuantParams): layer-wise deployment quantizer, integral zero-point
        new_ln (LayerNormParams): adjusted affine factors
        new_linear (LinearLayerParams): adjusted first consumer layer
        r1 (ndarray): s / s~, strictly positive
        r2 (ndarray): z - z~, integral in "rounded" mode
        shift (ndarray): s * r2, the per-channel activation shift
        z_tilde (float): mean zero-point before rounding
        zero_point_mode (str): "rounded" or "exact"
    """

    new_quant: UniformQuantParams
    new_ln: LayerNormParams
    new_linear: LinearLayerParams
    r1: Tensor
    r2: Tensor
    shift: Tensor
    z_tilde: float
    zero_point_mode: ZeroPointMode = "rounded"

    @property
    def zero_point_residual(self) -> float:
        """Deployed zero-point minus the exact mean zero-point."""
        return float(self.new_quant.zero_point[0] - self.z_tilde)

    @property
    def calibration_quant(self) -> UniformQuantParams:
        """Layer-wise params with the zero-point r2 was computed against."""
        if self.zero_point_mode == "rounded":
            return self.new_quant
        return UniformQuantParams(
            scale=self.new_quant.scale,
            zero_point=[self.z_tilde],
            bits=self.new_quant.bits,
            granularity="layer",
        )

    def get_metadata(self) -> dict:
        return {
            "r1": self.r1.tolist(),
            "r2": self.r2.tolist(),
            "z_tilde": self.z_tilde,
            "zero_point_mode": self.zero_point_mode,
            "zero_point_residual": self.zero_point_residual,
        }


def reduce_scale(scale: Tensor, reduction: ScaleReduction = "mean") -> float:
    """Collapse channel scales into one layer scale."""
    validate_choice(reduction, ("mean", "median", "geomean"), "scale_reduction")
    if reduction == "mean":
        return float(np.mean(scale))
    if reduction == "median":
        return float(np.median(scale))
    return float(np.exp(np.mean(np.log(scale))))


def compensate_linear(linear: LinearLayerParams, r1: Tensor, shift: Tensor) -> LinearLayerParams:
    """
    Rewrite a consumer of the shifted activation.

    The consumer now receives (x + shift) / r1 instead of x, so
    W~ = diag(r1) W and b~ = b - shift @ W keep its output unchanged.
    """
    r1 = np.asarray(r1, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if r1.shape != (linear.in_features,) or shift.shape != (linear.in_features,):
        raise ReparamError(
            f"variation factors of length {r1.shape} / {shift.shape} do not match "
            f"a layer with {linear.in_features} inputs"
        )
    return LinearLayerParams(weight=r1[:, None] * linear.weight, bias=linear.bias - shift @ linear.weight)


def reparam_layernorm(cw: UniformQuantParams, ln: LayerNormParams, next_layer: LinearLayerParams,
                      reduction: ScaleReduction = "mean",
                      zero_point_mode: ZeroPointMode = "rounded") -> ReparamResult:
    """
    Replace a channel-wise LayerNorm-output quantizer by a layer-wise one.

    s~ is the reduced channel scale and z~ the mean zero-point (rounded first
    in "rounded" mode, kept fractional in "exact" mode). Then r1 = s / s~,
    r2 = z - z~, gamma~ = gamma / r1, beta~ = (beta + s * r2) / r1 and the next
    layer is compensated with compensate_linear.

    Args:
        cw: Channel-wise params calibrated on the LayerNorm output
        ln: LayerNorm producing that output
        next_layer: Layer consuming it
        reduction: mean, median or geomean of the channel scales
        zero_point_mode: rounded or exact

    Returns:
        ReparamResult

    Raises:
        ReparamError: On granularity or length mismatch, or a zero layer scale
    """
    validate_choice(zero_point_mode, ("rounded", "exact"), "zero_point_mode")
    if cw.granularity != "channel":
        raise ReparamError("reparam_layernorm needs channel-wise params")
    d = ln.dim
    if cw.channels != d or next_layer.in_features != d:
        raise ReparamError(
            f"length mismatch: params {cw.channels}, LayerNorm {d}, next layer inputs {next_layer.in_features}"
        )

    s_tilde = reduce_scale(cw.scale, reduction)
    if not s_tilde > 0:
        raise ReparamError("layer scale must be positive")
    z_mean = float(np.mean(cw.zero_point))
    z_deploy = float(np.clip(round_half_to_even(z_mean), 0, cw.qmax))
    z_tilde = z_deploy if zero_point_mode == "rounded" else z_mean

    r1 = cw.scale / s_tilde
    r2 = cw.zero_point - z_tilde
    shift = cw.scale * r2

    new_ln = LayerNormParams(gamma=ln.gamma / r1, beta=(ln.beta + shift) / r1, eps=ln.eps)
    new_quant = UniformQuantParams(scale=[s_tilde], zero_point=[z_deploy], bits=cw.bits, granularity="layer")
    return ReparamResult(
        new_quant=new_quant,
        new_ln=new_ln,
        new_linear=compensate_linear(next_layer, r1, shift),
        r1=r1,
        r2=r2,
        shift=shift,
        z_tilde=z_mean,
        zero_point_mode=zero_point_mode,
    )


def shifted_activation(x_prime: Tensor, r1: Tensor, r2: Tensor, s: Tensor) -> Tensor:
    """(X' + s * r2) / r1, broadcast over rows."""
    return div(add(as_tensor(x_prime), mul(s, r2)), np.asarray(r1, dtype=np.float64))


def reparam_log_sqrt2(codes: Tensor, p: LogQuantParams) -> Tuple[Tensor, Tensor]:
    """
    Dequantize base-sqrt(2) codes with a base-2 shift and a parity-dependent scale.

    s~ = s * (parity(code) * (sqrt(2) - 1) + 1) and value = s~ * 2^floor(-code / 2).

    Returns:
        Tuple of (dequantized values, per-element scale s~)

    Raises:
        ReparamError: If p is not base sqrt(2) or codes are invalid
    """
    if p.base != "sqrt_two":
        raise ReparamError("reparam_log_sqrt2 expects base sqrt_two params")
    codes = as_tensor(codes)
    if not is_integral(codes):
        raise ReparamError("log codes must be integral")
    if np.any(codes < 0) or np.any(codes > p.qmax):
        raise ReparamError(f"log codes must lie in [0, {p.qmax}]")
    icodes = codes.astype(np.int64)
    parity = icodes % 2
    s_tilde = p.scale * (parity * (SQRT2 - 1.0) + 1.0)
    return np.ldexp(s_tilde, np.floor_divide(-icodes, 2)), s_tilde
