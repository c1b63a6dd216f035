"""
Learnable per-channel dual clipping of LayerNorm activations.

Bounds are contracted from the raw per-channel extremes by sigmoid factors,
upper = max * sigmoid(alpha1) and lower = min * sigmoid(alpha2), and the
logits are fitted with Adam to minimise the quantization-space error
||X - Q(X)||^2 of a channel-wise uniform quantizer spanning [lower, upper].

During the search the quantizer grid is continuous: u = (x - lower) / s,
q = clip(round(u), 0, 2^b - 1), x_hat = s * q + lower, s = (upper - lower) / (2^b - 1).
Gradients use the straight-through estimator: rounding passes the gradient,
clipped elements hold their code fixed.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.models.clip_factors import AdamState, ClipFactors
from src.models.quant_params import CalibRange
from src.services.quantizers import calibrate_minmax, widen_degenerate
from src.utils.tensor import Tensor, TensorShapeError, as_tensor, clamp, flatten_rows, round_half_to_even
from src.utils.validators import ContractError, validate_bits, validate_positive

DEFAULT_ITERS = 100
DEFAULT_LR = 0.01
DEFAULT_INIT = 4.0
CLIP_INIT_GRID = (40.0, 6.0, 3.0, 2.5, 2.0, 1.5, 1.0, 0.5, 0.0)


class ClippingError(ContractError):
    """Raised when clipping factors produce an empty range."""
    pass


@dataclass(frozen=True)
class ClipResult:
    """
    Outcome of one clipping search.

    Properties:
        factors (ClipFactors): best logits found
        bounds (CalibRange): bounds produced by those logits
        initial_loss (float): loss at the initial logits
        best_loss (float): lowest recorded loss, <= initial_loss
        minmax_loss (float): loss with unclipped min/max bounds
        best_iteration (int): 0 for the initial point, t for the t-th Adam step
        history (tuple): loss after every step
        flags (tuple): notes such as degenerate or positive-minimum channels
    """

    factors: ClipFactors
    bounds: CalibRange
    initial_loss: float
    best_loss: float
    minmax_loss: float
    best_iteration: int
    history: Tuple[float, ...] = ()
    flags: Tuple[str, ...] = field(default=())

    def get_metadata(self) -> dict:
        return {
            "initial_loss": self.initial_loss,
            "best_loss": self.best_loss,
            "minmax_loss": self.minmax_loss,
            "best_iteration": self.best_iteration,
            "iterations": len(self.history),
            "flags": list(self.flags),
        }


class _ClipProblem:
    """Calibration rows with their raw per-channel extremes."""

    def __init__(self, samples: Tensor, bits: int):
        self.qmax = 2 ** validate_bits(bits) - 1
        self.rows = flatten_rows(as_tensor(samples))
        raw = widen_degenerate(calibrate_minmax(self.rows, "channel"))
        self.mx = raw.upper
        self.mn = raw.lower
        self.flags = tuple(raw.flags)
        positive_min = int(np.sum(self.mn > 0))
        if positive_min:
            self.flags += (f"positive_min_channels={positive_min}",)

    @property
    def channels(self) -> int:
        return int(self.mx.size)

    def check(self, f: ClipFactors) -> None:
        if f.channels != self.channels:
            raise TensorShapeError(f"clip factors have {f.channels} channels, samples have {self.channels}")

    def bounds(self, f: ClipFactors):
        s1, s2 = f.contraction()
        return self.mx * s1, self.mn * s2

    def forward(self, upper: Tensor, lower: Tensor):
        """Return (scale, u, round(u), codes, x_hat)."""
        scale = (upper - lower) / self.qmax
        u = (self.rows - lower) / scale
        r = round_half_to_even(u)
        codes = clamp(r, 0, self.qmax)
        return scale, u, r, codes, scale * codes + lower

    def loss(self, upper: Tensor, lower: Tensor) -> float:
        return float(np.sum(self.channel_losses(upper, lower)))

    def channel_losses(self, upper: Tensor, lower: Tensor) -> Tensor:
        x_hat = self.forward(upper, lower)[-1]
        return np.sum((self.rows - x_hat) ** 2, axis=0)

    def start(self, init: float, grid: Optional[Sequence[float]]) -> Tensor:
        """
        Initial logits [alpha1, alpha2].

        Without a grid every logit equals init. With a grid each channel takes
        the (alpha1, alpha2) pair of candidates with the lowest loss; channels
        are independent so the search is one sweep over the candidate pairs.
        """
        d = self.channels
        if not grid:
            return np.full(2 * d, float(init))
        candidates = sorted(set(float(a) for a in grid) | {float(init)}, reverse=True)
        best = np.full(d, np.inf)
        params = np.full(2 * d, float(init))
        for a1 in candidates:
            for a2 in candidates:
                upper, lower = self.bounds(ClipFactors(np.full(d, a1), np.full(d, a2)))
                ok = upper > lower
                if not np.any(ok):
                    continue
                losses = np.where(ok, self.channel_losses(np.where(ok, upper, self.mx), np.where(ok, lower, self.mn)),
                                  np.inf)
                better = losses < best
                best[better] = losses[better]
                params[:d][better] = a1
                params[d:][better] = a2
        return params

    def bound_grads(self, upper: Tensor, lower: Tensor) -> Tuple[Tensor, Tensor]:
        """STE gradient of the loss with respect to (upper, lower)."""
        scale, u, r, codes, x_hat = self.forward(upper, lower)
        inside = (r >= 0) & (r <= self.qmax)
        d_out = -2.0 * (self.rows - x_hat)
        dx_ds = np.where(inside, r - u, codes)
        dx_dlow = np.where(inside, 0.0, 1.0)
        g_scale = np.sum(d_out * dx_ds, axis=0)
        g_low = np.sum(d_out * dx_dlow, axis=0)
        return g_scale / self.qmax, g_low - g_scale / self.qmax

    def alpha_grads(self, f: ClipFactors) -> Tuple[Tensor, Tensor]:
        s1, s2 = f.contraction()
        g_up, g_low = self.bound_grads(self.mx * s1, self.mn * s2)
        return g_up * self.mx * s1 * (1.0 - s1), g_low * self.mn * s2 * (1.0 - s2)


def clipped_bounds(samples: Tensor, f: ClipFactors) -> CalibRange:
    """
    upper = channel max * sigmoid(alpha1), lower = channel min * sigmoid(alpha2).

    Raises:
        ClippingError: If a channel ends up with upper <= lower
    """
    problem = _ClipProblem(samples, 8)
    problem.check(f)
    upper, lower = problem.bounds(f)
    bad = upper <= lower
    if np.any(bad):
        raise ClippingError(f"clipping factors give an empty range on channels {np.nonzero(bad)[0].tolist()}")
    return CalibRange(upper=upper, lower=lower, flags=problem.flags)


def clip_loss(samples: Tensor, f: ClipFactors, bits: int) -> float:
    """Squared Frobenius norm of X - x_hat for the clipped channel-wise quantizer."""
    problem = _ClipProblem(samples, bits)
    problem.check(f)
    return problem.loss(*problem.bounds(f))


def clip_loss_grad(samples: Tensor, f: ClipFactors, bits: int) -> Tuple[Tensor, Tensor]:
    """
    Straight-through gradient of clip_loss with respect to (alpha1, alpha2).

    Inside the code range d x_hat / d s = round(u) - u and d x_hat / d lower = 0;
    clipped elements give d x_hat / d s = code and d x_hat / d lower = 1. The
    bounds are differentiated through s = (upper - lower) / (2^b - 1) and the
    sigmoid contraction.
    """
    problem = _ClipProblem(samples, bits)
    problem.check(f)
    return problem.alpha_grads(f)


def ste_surrogate_loss(samples: Tensor, f: ClipFactors, bits: int, anchor: ClipFactors) -> float:
    """
    Detached form of clip_loss around `anchor`.

    The rounding residual round(u) - u, the in-range mask and the codes of
    clipped elements are frozen at the anchor; everything else follows f.
    Equals clip_loss at f == anchor and its exact derivative at the anchor is
    clip_loss_grad.
    """
    problem = _ClipProblem(samples, bits)
    problem.check(f)
    problem.check(anchor)
    _, u0, r0, codes0, _ = problem.forward(*problem.bounds(anchor))
    residual = r0 - u0
    inside = (r0 >= 0) & (r0 <= problem.qmax)

    upper, lower = problem.bounds(f)
    scale = (upper - lower) / problem.qmax
    u = (problem.rows - lower) / scale
    x_hat = np.where(inside, scale * (u + residual) + lower, scale * codes0 + lower)
    return float(np.sum((problem.rows - x_hat) ** 2))


def _revert_infeasible(problem: _ClipProblem, old: Tensor, new: Tensor) -> Tensor:
    d = problem.channels
    candidate = ClipFactors(new[:d], new[d:])
    upper, lower = problem.bounds(candidate)
    bad = upper <= lower
    if np.any(bad):
        new = new.copy()
        new[:d][bad] = old[:d][bad]
        new[d:][bad] = old[d:][bad]
    return new


def optimize_clip(samples: Tensor, bits: int, iters: int = DEFAULT_ITERS, lr: float = DEFAULT_LR,
                  init: float = DEFAULT_INIT, verbose: bool = False,
                  init_grid: Optional[Sequence[float]] = None) -> ClipResult:
    """
    Fit the clipping logits with full-batch Adam.

    Args:
        samples: Calibration activations [..., D]
        bits: Activation bit-width
        iters: Adam steps
        lr: Learning rate
        init: Initial value of every logit
        verbose: Print progress
        init_grid: Candidate logits; when given each channel starts from its best
            candidate pair instead of init

    Returns:
        ClipResult holding the iterate with the lowest loss (the initial point included)
    """
    validate_positive(lr, "lr")
    problem = _ClipProblem(samples, bits)
    d = problem.channels
    params = problem.start(init, init_grid)
    adam = AdamState(size=2 * d, lr=lr)

    minmax_loss = problem.loss(problem.mx, problem.mn)
    initial_loss = problem.loss(*problem.bounds(ClipFactors(params[:d], params[d:])))
    best_loss, best_params, best_iteration = initial_loss, params.copy(), 0
    history: List[float] = []

    for step in range(1, iters + 1):
        g1, g2 = problem.alpha_grads(ClipFactors(params[:d], params[d:]))
        new = adam.update(params, np.concatenate([g1, g2]))
        params = _revert_infeasible(problem, params, new)
        loss = problem.loss(*problem.bounds(ClipFactors(params[:d], params[d:])))
        history.append(loss)
        if loss < best_loss:
            best_loss, best_params, best_iteration = loss, params.copy(), step

    factors = ClipFactors(best_params[:d], best_params[d:])
    upper, lower = problem.bounds(factors)
    if verbose:
        print(f"[CLIP] {d} channels, loss {initial_loss:.6g} -> {best_loss:.6g} "
              f"(min-max {minmax_loss:.6g}, best step {best_iteration}/{iters})")
    return ClipResult(
        factors=factors,
        bounds=CalibRange(upper=upper, lower=lower, flags=problem.flags),
        initial_loss=initial_loss,
        best_loss=best_loss,
        minmax_loss=minmax_loss,
        best_iteration=best_iteration,
        history=tuple(history),
        flags=problem.flags,
    )


def optimize_clip_direct(samples: Tensor, bits: int, iters: int = DEFAULT_ITERS, lr: float = DEFAULT_LR,
                         init: float = DEFAULT_INIT,
                         init_grid: Optional[Sequence[float]] = None) -> Tuple[CalibRange, float]:
    """
    Baseline that optimises the raw bound values instead of sigmoid logits.

    Starts from the same bounds as optimize_clip and uses the same Adam
    settings; steps that would empty a channel's range are reverted.

    Returns:
        Tuple of (best bounds, best loss)
    """
    validate_positive(lr, "lr")
    problem = _ClipProblem(samples, bits)
    d = problem.channels
    start = problem.start(init, init_grid)
    upper, lower = problem.bounds(ClipFactors(start[:d], start[d:]))
    params = np.concatenate([upper, lower])
    adam = AdamState(size=2 * d, lr=lr)
    best_loss, best_params = problem.loss(upper, lower), params.copy()

    for _ in range(iters):
        g_up, g_low = problem.bound_grads(params[:d], params[d:])
        new = adam.update(params, np.concatenate([g_up, g_low]))
        bad = new[:d] <= new[d:]
        new[:d][bad] = params[:d][bad]
        new[d:][bad] = params[d:][bad]
        params = new
        loss = problem.loss(params[:d], params[d:])
        if loss < best_loss:
            best_loss, best_params = loss, params.copy()

    return CalibRange(upper=best_params[:d], lower=best_params[d:]), best_loss

