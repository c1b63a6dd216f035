"""
Dense tensor helpers shared by the whole toolkit.

A Tensor is a float64 numpy array. The functions below add the shape and
domain checks the quantization code relies on; they never build an autodiff
graph, gradients are derived by hand where the toolkit needs them.
"""

from typing import Optional, Union

import numpy as np
import numpy.typing as npt

from src.utils.validators import ContractError

Tensor = npt.NDArray[np.float64]
Operand = Union[Tensor, float, int]


class TensorShapeError(ContractError):
    """Raised when operand shapes are incompatible."""
    pass


class TensorDomainError(ContractError):
    """Raised when an operation leaves its mathematical domain."""
    pass


def as_tensor(data, allow_nonfinite: bool = False) -> Tensor:
    """
    Convert array-like data to a float64 tensor.

    Args:
        data: Array-like input
        allow_nonfinite: Skip the NaN/Inf check

    Returns:
        A float64 numpy array (a copy is made only when needed)

    Raises:
        TensorDomainError: If the data contains NaN or Inf
    """
    arr = np.asarray(data, dtype=np.float64)
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise TensorDomainError("Tensor contains non-finite values")
    return arr


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return
    if a.ndim == 1 and b.ndim >= 1 and a.shape[0] == b.shape[-1]:
        return
    raise TensorShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of a [M x K] and b [K x N].

    Raises:
        TensorShapeError: If either operand is not 2-D or inner dims differ
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def add(a: Operand, b: Operand) -> Tensor:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_broadcast(a, b, "add")
    return a + b


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_broadcast(a, b, "sub")
    return a - b


def mul(a: Operand, b: Operand) -> Tensor:
    """Hadamard product, with row-vector broadcasting over the last axis."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_broadcast(a, b, "mul")
    return a * b


def div(a: Operand, b: Operand) -> Tensor:
    """
    Elementwise division.

    Raises:
        TensorDomainError: If any divisor is zero
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_broadcast(a, b, "div")
    if np.any(b == 0):
        raise TensorDomainError("div: division by zero")
    return a / b


def exp(x: Operand) -> Tensor:
    return np.exp(np.asarray(x, dtype=np.float64))


def log2(x: Operand) -> Tensor:
    """
    Elementwise base-2 logarithm.

    Raises:
        TensorDomainError: If any element is not strictly positive
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise TensorDomainError("log2: input must be strictly positive")
    return np.log2(x)


def round_half_to_even(x: Operand) -> Tensor:
    """Round to nearest integer, ties to even (0.5 -> 0, 1.5 -> 2)."""
    return np.rint(np.asarray(x, dtype=np.float64))


def clamp(x: Operand, lo: Operand, hi: Operand) -> Tensor:
    return np.clip(np.asarray(x, dtype=np.float64), lo, hi)


def _check_axis(x: Tensor, axis: Optional[int], op: str) -> None:
    if x.size == 0:
        raise TensorShapeError(f"{op}: empty tensor")
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise TensorShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")


def reduce_min(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    _check_axis(x, axis, "reduce_min")
    return np.min(x, axis=axis, keepdims=keepdims)


def reduce_max(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    _check_axis(x, axis, "reduce_max")
    return np.max(x, axis=axis, keepdims=keepdims)


def reduce_mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    _check_axis(x, axis, "reduce_mean")
    return np.mean(x, axis=axis, keepdims=keepdims)


def reduce_var(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by the reduced length)."""
    x = np.asarray(x, dtype=np.float64)
    _check_axis(x, axis, "reduce_var")
    return np.var(x, axis=axis, keepdims=keepdims, ddof=0)


def is_integral(x: Operand) -> bool:
    """Check that every element holds an integer value."""
    x = np.asarray(x, dtype=np.float64)
    return bool(np.all(np.isfinite(x)) and np.all(x == np.rint(x)))


def flatten_rows(x: Tensor) -> Tensor:
    """Collapse all leading axes so the result is [rows x last_axis]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        raise TensorShapeError("flatten_rows: scalar has no channel axis")
    return x.reshape(-1, x.shape[-1])
