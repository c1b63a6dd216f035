"""
GPTQ weight reconstruction for one linear layer.

Weights are laid out [D_in x D_out] (y = x @ W + b), so each row belongs to
one input dimension. Rows are quantized in natural order with a channel-wise
quantizer over the output dimension; the error of every quantized row is
spread over the rows not yet quantized through the upper Cholesky factor of
the damped inverse Hessian H = sum 2 X^T X.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from src.models.quant_params import UniformQuantParams
from src.models.transformer import LinearLayerParams
from src.services.quantizers import (
    calibrate_minmax,
    params_from_range,
    uniform_dequant,
    uniform_quant,
    widen_degenerate,
)
from src.utils.tensor import Tensor, TensorShapeError, as_tensor, flatten_rows
from src.utils.validators import ContractError, validate_positive

DEFAULT_BLOCK_SIZE = 32
DEFAULT_DAMP = 0.01


class GPTQError(ContractError):
    """Raised when GPTQ inputs are inconsistent."""
    pass


@dataclass(frozen=True)
class HessianAccumulator:
    """
    Running sum of 2 X^T X over calibration rows.

    Properties:
        hessian (ndarray): [D x D] symmetric positive semi-definite
        sample_count (int): rows accumulated so far
    """

    hessian: Tensor
    sample_count: int = 0

    @classmethod
    def empty(cls, dim: int) -> "HessianAccumulator":
        return cls(hessian=np.zeros((dim, dim)), sample_count=0)

    @property
    def dim(self) -> int:
        return int(self.hessian.shape[0])


@dataclass(frozen=True)
class GPTQResult:
    """
    Quantized layer weights.

    Properties:
        codes (ndarray): integer codes, same shape as the weight
        dequant_weight (ndarray): dequantized weight, on the grid of params
        params (UniformQuantParams): channel-wise params over the output dimension
        proxy_loss (float): tr(dW^T H dW) of the result
        rtn_proxy_loss (float): the same loss for round-to-nearest
        cholesky_fallback (bool): factorization failed and RTN was used
    """

    codes: Tensor
    dequant_weight: Tensor
    params: UniformQuantParams
    proxy_loss: float
    rtn_proxy_loss: float
    cholesky_fallback: bool = False
    flags: Tuple[str, ...] = field(default=())


def accumulate_hessian(acc: HessianAccumulator, x_batch: Tensor) -> HessianAccumulator:
    """
    Add 2 X^T X of a batch.

    Args:
        acc: Current accumulator
        x_batch: [N x D] inputs (leading axes are flattened)

    Raises:
        TensorShapeError: If the input width differs from the accumulator
    """
    rows = flatten_rows(as_tensor(x_batch))
    if rows.shape[1] != acc.dim:
        raise TensorShapeError(f"accumulate_hessian: input width {rows.shape[1]} != {acc.dim}")
    update = 2.0 * rows.T @ rows
    return HessianAccumulator(hessian=acc.hessian + update, sample_count=acc.sample_count + rows.shape[0])


def weight_params(weight: Tensor, bits: int) -> UniformQuantParams:
    """Min-max asymmetric params, one per output channel (column)."""
    return params_from_range(widen_degenerate(calibrate_minmax(weight, "channel")), bits, "channel")


def proxy_loss(weight: Tensor, dequant_weight: Tensor, hessian: Tensor) -> float:
    """tr((W - W_hat)^T H (W - W_hat))."""
    delta = np.asarray(weight, dtype=np.float64) - np.asarray(dequant_weight, dtype=np.float64)
    return float(np.sum(delta * (hessian @ delta)))


def rtn_quantize_layer(weight: Tensor, wq: UniformQuantParams) -> Tuple[Tensor, Tensor]:
    """Round-to-nearest baseline: (codes, dequant_weight)."""
    codes = uniform_quant(weight, wq)
    return codes, uniform_dequant(codes, wq)


def _upper_inverse_factor(hessian: Tensor) -> Tensor:
    lower = np.linalg.cholesky(hessian)
    lower_inv = np.linalg.inv(lower)
    return np.linalg.cholesky(lower_inv.T @ lower_inv).T


def gptq_quantize_layer(weight: Tensor, hessian: Tensor, wq: UniformQuantParams,
                        block_size: int = DEFAULT_BLOCK_SIZE, damp: float = DEFAULT_DAMP) -> GPTQResult:
    """
    Quantize a weight matrix row by row with Hessian-based error compensation.

    Dead inputs (zero Hessian diagonal) get a unit diagonal and zero weights.
    The Hessian is damped by damp * mean(diag(H)) before factorization; if the
    factorization still fails the layer falls back to round-to-nearest and
    the result carries cholesky_fallback=True.

    Args:
        weight: [D_in x D_out]
        hessian: [D_in x D_in]
        wq: Channel-wise params over D_out
        block_size: Rows per block
        damp: Relative diagonal damping

    Returns:
        GPTQResult
    """
    weight = as_tensor(weight)
    hessian = as_tensor(hessian)
    d_in, d_out = weight.shape
    if hessian.shape != (d_in, d_in):
        raise TensorShapeError(f"Hessian shape {hessian.shape} does not match weight shape {weight.shape}")
    if wq.granularity != "channel" or wq.channels != d_out:
        raise GPTQError(f"weight params must be channel-wise over {d_out} outputs")
    if block_size < 1:
        raise GPTQError(f"block_size must be positive, got {block_size}")
    validate_positive(damp, "damp")

    rtn_codes, rtn_weight = rtn_quantize_layer(weight, wq)
    rtn_loss = proxy_loss(weight, rtn_weight, hessian)

    work = weight.copy()
    damped = hessian.copy()
    dead = np.diag(damped) == 0
    damped[dead, dead] = 1.0
    work[dead, :] = 0.0
    damped[np.diag_indices(d_in)] += damp * np.mean(np.diag(damped))

    try:
        hinv = _upper_inverse_factor(damped)
    except np.linalg.LinAlgError:
        return GPTQResult(
            codes=rtn_codes,
            dequant_weight=rtn_weight,
            params=wq,
            proxy_loss=rtn_loss,
            rtn_proxy_loss=rtn_loss,
            cholesky_fallback=True,
            flags=("cholesky_fallback",),
        )

    codes = np.zeros_like(work)
    for i1 in range(0, d_in, block_size):
        i2 = min(i1 + block_size, d_in)
        block = work[i1:i2].copy()
        errors = np.zeros_like(block)
        hinv_block = hinv[i1:i2, i1:i2]

        for i in range(i2 - i1):
            row = block[i]
            row_codes = uniform_quant(row, wq)
            q = uniform_dequant(row_codes, wq)
            codes[i1 + i] = row_codes
            err = (row - q) / hinv_block[i, i]
            block[i:] -= np.outer(hinv_block[i, i:], err)
            errors[i] = err

        if i2 < d_in:
            work[i2:] -= hinv[i1:i2, i2:].T @ errors

    dequant = uniform_dequant(codes, wq)
    flags = (f"dead_inputs={int(np.sum(dead))}",) if np.any(dead) else ()
    return GPTQResult(
        codes=codes,
        dequant_weight=dequant,
        params=wq,
        proxy_loss=proxy_loss(weight, dequant, hessian),
        rtn_proxy_loss=rtn_loss,
        flags=flags,
    )


class GPTQ:
    """
    GPTQ quantizer for a single linear layer.

    Accumulates the Hessian from calibration inputs with add_batch, then
    quantize() reconstructs the weight.
    """

    def __init__(self, layer: LinearLayerParams, bits: int, block_size: int = DEFAULT_BLOCK_SIZE,
                 damp: float = DEFAULT_DAMP, name: str = "layer", verbose: bool = False):
        self.layer = layer
        self.bits = bits
        self.block_size = block_size
        self.damp = damp
        self.name = name
        self.verbose = verbose
        self.accumulator = HessianAccumulator.empty(layer.in_features)

    def add_batch(self, inputs: Tensor) -> None:
        self.accumulator = accumulate_hessian(self.accumulator, inputs)

    def quantize(self, hessian: Optional[Tensor] = None) -> GPTQResult:
        """
        Quantize the layer weight.

        Args:
            hessian: Use this Hessian instead of the accumulated one

        Raises:
            GPTQError: If no calibration rows were added and no Hessian given
        """
        if hessian is None:
            if self.accumulator.sample_count == 0:
                raise GPTQError(f"{self.name}: no calibration inputs were added")
            hessian = self.accumulator.hessian
        wq = weight_params(self.layer.weight, self.bits)
        result = gptq_quantize_layer(self.layer.weight, hessian, wq, self.block_size, self.damp)
        if self.verbose:
            if result.cholesky_fallback:
                print(f"[WARNING] {self.name}: Cholesky factorization failed, using round-to-nearest")
            print(f"[GPTQ] {self.name}: proxy loss {result.rtn_proxy_loss:.6g} (RTN) -> {result.proxy_loss:.6g}")
        return result
