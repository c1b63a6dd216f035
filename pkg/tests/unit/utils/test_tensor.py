"""Unit tests for the tensor helpers."""

import unittest

import numpy as np

from src.utils.tensor import (
    TensorDomainError,
    TensorShapeError,
    add,
    as_tensor,
    clamp,
    div,
    flatten_rows,
    is_integral,
    log2,
    matmul,
    mul,
    reduce_max,
    reduce_mean,
    reduce_min,
    reduce_var,
    round_half_to_even,
    sub,
)
from src.utils.validators import ContractError


class TestTensor(unittest.TestCase):
    """Test cases for tensor-core operations."""

    def test_as_tensor_converts_to_float64(self):
        """Test as_tensor returns a float64 array."""
        x = as_tensor([[1, 2], [3, 4]])
        self.assertEqual(x.dtype, np.float64)
        self.assertEqual(x.shape, (2, 2))

    def test_as_tensor_rejects_nan(self):
        """Test as_tensor rejects non-finite values unless allowed."""
        with self.assertRaises(TensorDomainError):
            as_tensor([1.0, float("nan")])
        self.assertTrue(np.isinf(as_tensor([float("inf")], allow_nonfinite=True)[0]))

    def test_matmul_shapes(self):
        """Test matmul of [2 x 3] by [3 x 1]."""
        a = np.arange(6.0).reshape(2, 3)
        b = np.ones((3, 1))
        np.testing.assert_array_equal(matmul(a, b), [[3.0], [12.0]])

    def test_matmul_mismatch(self):
        """Test matmul raises on inner dimension mismatch."""
        with self.assertRaises(TensorShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_matmul_rejects_non_matrix(self):
        """Test matmul raises for 1-D operands."""
        with self.assertRaises(TensorShapeError):
            matmul(np.ones(3), np.ones((3, 1)))

    def test_row_vector_broadcast(self):
        """Test elementwise ops broadcast a row vector over the last axis."""
        x = np.ones((4, 3))
        out = mul(x, np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out[2], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(add(x, 1.0), 2.0 * x)

    def test_sub(self):
        """Test elementwise subtraction with scalar and row-vector operands."""
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(sub(x, x), np.zeros((2, 3)))
        np.testing.assert_array_equal(sub(x, np.array([0.0, 1.0, 2.0])), [[0.0, 0.0, 0.0], [3.0, 3.0, 3.0]])
        np.testing.assert_array_equal(sub(1.0, x)[0], [1.0, 0.0, -1.0])
        self.assertEqual(sub(x, 1.0).dtype, np.float64)
        with self.assertRaises(TensorShapeError):
            sub(x, np.ones(2))

    def test_broadcast_mismatch(self):
        """Test incompatible shapes raise TensorShapeError."""
        with self.assertRaises(TensorShapeError):
            add(np.ones((4, 3)), np.ones(4))

    def test_div_by_zero(self):
        """Test div raises on a zero divisor."""
        with self.assertRaises(TensorDomainError):
            div(np.ones(3), np.array([1.0, 0.0, 2.0]))

    def test_log2_domain(self):
        """Test log2 requires strictly positive input."""
        self.assertEqual(log2(8.0), 3.0)
        with self.assertRaises(TensorDomainError):
            log2(np.array([1.0, 0.0]))
        with self.assertRaises(TensorDomainError):
            log2(np.array([-1.0]))

    def test_round_half_to_even(self):
        """Test ties round to the even neighbour."""
        np.testing.assert_array_equal(
            round_half_to_even([0.5, 1.5, 2.5, -0.5, -1.5, 2.4]),
            [0.0, 2.0, 2.0, -0.0, -2.0, 2.0],
        )

    def test_clamp(self):
        """Test clamp limits values to the range."""
        np.testing.assert_array_equal(clamp([-3.0, 5.0, 20.0], 0, 15), [0.0, 5.0, 15.0])

    def test_reductions(self):
        """Test reductions along an axis."""
        x = np.array([[1.0, 4.0], [3.0, 2.0]])
        np.testing.assert_array_equal(reduce_min(x, axis=0), [1.0, 2.0])
        np.testing.assert_array_equal(reduce_max(x, axis=0), [3.0, 4.0])
        np.testing.assert_array_equal(reduce_mean(x, axis=1), [2.5, 2.5])
        np.testing.assert_array_equal(reduce_var(x, axis=0), [1.0, 1.0])

    def test_reduction_errors(self):
        """Test empty tensors and bad axes raise."""
        with self.assertRaises(TensorShapeError):
            reduce_min(np.array([]))
        with self.assertRaises(TensorShapeError):
            reduce_max(np.ones((2, 2)), axis=2)

    def test_is_integral(self):
        """Test integral detection."""
        self.assertTrue(is_integral([0.0, 3.0, -2.0]))
        self.assertFalse(is_integral([0.5]))

    def test_flatten_rows(self):
        """Test leading axes are collapsed."""
        self.assertEqual(flatten_rows(np.zeros((2, 3, 4))).shape, (6, 4))
        with self.assertRaises(TensorShapeError):
            flatten_rows(np.float64(1.0))

    def test_errors_are_contract_errors(self):
        """Test tensor errors share the contract error base."""
        self.assertTrue(issubclass(TensorShapeError, ContractError))
        self.assertTrue(issubclass(TensorDomainError, ContractError))


if __name__ == '__main__':
    unittest.main()
