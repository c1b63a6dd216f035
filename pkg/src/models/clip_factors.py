"""
State carried by the dual clipping search: the clipping logits and Adam moments.
"""

from dataclasses import dataclass, field

import numpy as np

from src.utils.tensor import Tensor
from src.utils.validators import ValidationError


def sigmoid(x) -> Tensor:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ClipFactors:
    """
    Per-channel clipping logits.

    Properties:
        alpha1 (ndarray): upper-bound logits, upper = max * sigmoid(alpha1)
        alpha2 (ndarray): lower-bound logits, lower = min * sigmoid(alpha2)
    """

    alpha1: Tensor
    alpha2: Tensor

    def __post_init__(self):
        a1 = np.atleast_1d(np.asarray(self.alpha1, dtype=np.float64)).copy()
        a2 = np.atleast_1d(np.asarray(self.alpha2, dtype=np.float64)).copy()
        if a1.ndim != 1 or a1.shape != a2.shape:
            raise ValidationError(f"alpha1 and alpha2 must be vectors of equal length, got {a1.shape} and {a2.shape}")
        if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
            raise ValidationError("clipping logits must be finite")
        a1.flags.writeable = False
        a2.flags.writeable = False
        object.__setattr__(self, "alpha1", a1)
        object.__setattr__(self, "alpha2", a2)

    @classmethod
    def initial(cls, channels: int, init: float = 4.0) -> "ClipFactors":
        return cls(np.full(channels, float(init)), np.full(channels, float(init)))

    @property
    def channels(self) -> int:
        return int(self.alpha1.size)

    def contraction(self):
        """Return (sigmoid(alpha1), sigmoid(alpha2))."""
        return sigmoid(self.alpha1), sigmoid(self.alpha2)

    def get_metadata(self) -> dict:
        up, low = self.contraction()
        return {
            "channels": self.channels,
            "upper_contraction_mean": float(np.mean(up)),
            "lower_contraction_mean": float(np.mean(low)),
        }


@dataclass
class AdamState:
    """
    Adam optimizer state for one parameter vector.

    Properties:
        step (int): number of updates applied so far
        m (ndarray): first-moment estimate
        v (ndarray): second-moment estimate
    """

    size: int
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Tensor = field(default=None)
    v: Tensor = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise ValidationError("Adam moments must match the parameter length")
        if self.step < 0:
            raise ValidationError("Adam step count must be non-negative")

    def update(self, params: Tensor, grad: Tensor) -> Tensor:
        """
        Apply one bias-corrected Adam step and return the new parameters.

        Args:
            params: Current parameter vector
            grad: Gradient of the loss at params

        Returns:
            Updated parameter vector (params is not modified)
        """
        grad = np.asarray(grad, dtype=np.float64)
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step)
        v_hat = self.v / (1.0 - self.beta2 ** self.step)
        return np.asarray(params, dtype=np.float64) - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
