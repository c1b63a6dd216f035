"""
Synthetic activation generators.

The data mimic the activation pathologies the quantizers are designed for:
large range differences between LayerNorm output channels, one-sided channel
distributions, and power-law Softmax probabilities. Every channel (or sample)
draws from its own PCG64 stream keyed by (seed, stream, index), so adding
channels or samples never reshuffles the existing ones.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from src.utils.tensor import Tensor
from src.utils.validators import ValidationError, validate_fraction, validate_positive

STREAM_INTERCHANNEL = 1
STREAM_POWERLAW = 2
STREAM_LATENT = 3
STREAM_MODEL_INIT = 4

DEFAULT_TAIL_DOF = 4.0


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (seed, stream, index...) key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


@dataclass(frozen=True)
class SynthSpec:
    """
    Parameters of the synthetic generators.

    Properties:
        channels (int): D
        tokens (int): N
        samples (int): S
        range_ratio (float): spread of per-channel stddev, sigma_c in [sigma, range_ratio * sigma]
        left_frac (float): fraction of channels with a stretched negative side
        right_frac (float): fraction of channels with a stretched positive side
        sigma (float): smallest channel stddev
        tail_stretch (float): stretch applied to the biased side of a channel
        tail_dof (float): Student-t degrees of freedom for the bulk, Gaussian when None
        powerlaw_exponent (float): tail index of the Softmax numerators
        spike_rate (float): probability that a Softmax row gets a dominant entry
        seed (int): root seed
    """

    channels: int = 64
    tokens: int = 16
    samples: int = 32
    range_ratio: float = 1.0
    left_frac: float = 0.25
    right_frac: float = 0.25
    sigma: float = 1.0
    tail_stretch: float = 1.3
    tail_dof: Optional[float] = DEFAULT_TAIL_DOF
    powerlaw_exponent: float = 2.5
    spike_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("channels", "tokens", "samples"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.range_ratio < 1:
            raise ValidationError(f"range_ratio must be >= 1, got {self.range_ratio}")
        validate_fraction(self.left_frac, "left_frac")
        validate_fraction(self.right_frac, "right_frac")
        if self.left_frac + self.right_frac > 1:
            raise ValidationError("left_frac + right_frac must not exceed 1")
        validate_positive(self.sigma, "sigma")
        if self.tail_stretch < 1:
            raise ValidationError(f"tail_stretch must be >= 1, got {self.tail_stretch}")
        if self.tail_dof is not None:
            validate_positive(self.tail_dof, "tail_dof")
        validate_positive(self.powerlaw_exponent, "powerlaw_exponent")
        validate_fraction(self.spike_rate, "spike_rate")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)


def channel_sigmas(spec: SynthSpec) -> Tensor:
    """Per-channel stddev sigma * range_ratio^u with u ~ U[0, 1) from each channel's stream."""
    u = np.array([stream_rng(spec.seed, STREAM_INTERCHANNEL, c, 0).random() for c in range(spec.channels)])
    return spec.sigma * spec.range_ratio ** u


def gen_interchannel(spec: SynthSpec) -> Tensor:
    """
    LayerNorm-like activations with inter-channel range variation.

    Each channel c is an independent stream. Its stddev is log-uniform in
    [sigma, range_ratio * sigma]; channels drawn as left- or right-biased have
    that side stretched by tail_stretch (split-normal), the rest are
    symmetric. The bulk is Student-t with tail_dof degrees of freedom, rescaled
    to unit variance when tail_dof > 2, or Gaussian when tail_dof is None.

    Returns:
        Tensor [S x N x D]
    """
    rows = spec.samples * spec.tokens
    out = np.empty((rows, spec.channels))
    sigmas = channel_sigmas(spec)
    for c in range(spec.channels):
        rng = stream_rng(spec.seed, STREAM_INTERCHANNEL, c, 1)
        side = rng.random()
        if spec.tail_dof is None:
            bulk = rng.standard_normal(rows)
        else:
            bulk = rng.standard_t(spec.tail_dof, rows)
            if spec.tail_dof > 2:
                bulk *= np.sqrt((spec.tail_dof - 2.0) / spec.tail_dof)
        if side < spec.left_frac:
            bulk = np.where(bulk < 0, bulk * spec.tail_stretch, bulk)
        elif side < spec.left_frac + spec.right_frac:
            bulk = np.where(bulk > 0, bulk * spec.tail_stretch, bulk)
        out[:, c] = sigmas[c] * bulk
    return out.reshape(spec.samples, spec.tokens, spec.channels)


def gen_powerlaw(spec: SynthSpec) -> Tensor:
    """
    Softmax-like attention probabilities [S x N x N].

    Row numerators are Pareto distributed, U^(-1/a) with tail index
    a = powerlaw_exponent, so rows are dominated by a few large entries and
    values above 0.5 are rare. With spike_rate > 0 the selected rows get one
    entry raised above the sum of the others, which pushes it past 0.5.
    All values are strictly positive and every row sums to one.
    """
    n = spec.tokens
    out = np.empty((spec.samples, n, n))
    for s in range(spec.samples):
        rng = stream_rng(spec.seed, STREAM_POWERLAW, s)
        numer = (1.0 - rng.random((n, n))) ** (-1.0 / spec.powerlaw_exponent)
        spike_draw = rng.random(n)
        spike_col = rng.integers(0, n, size=n)
        spike_gain = 1.0 + 2.0 * rng.random(n)
        for r in np.nonzero(spike_draw < spec.spike_rate)[0]:
            rest = np.sum(numer[r]) - numer[r, spike_col[r]]
            numer[r, spike_col[r]] = rest * spike_gain[r]
        out[s] = numer / np.sum(numer, axis=-1, keepdims=True)
    return out


def gen_correlated(spec: SynthSpec, rank: int = 4, strength: float = 1.0) -> Tensor:
    """
    Inter-channel data plus a shared low-rank component.

    Adds Z @ A with Z [S*N x rank] and A [rank x D] Gaussian, scaled by
    strength times each channel's sigma, so channels are correlated and
    weight reconstruction has cross terms to exploit.
    """
    if rank < 1:
        raise ValidationError(f"rank must be positive, got {rank}")
    base = gen_interchannel(spec)
    rng = stream_rng(spec.seed, STREAM_LATENT)
    latent = rng.standard_normal((spec.samples * spec.tokens, rank))
    mixing = rng.standard_normal((rank, spec.channels)) / np.sqrt(rank)
    shared = (latent @ mixing) * (strength * channel_sigmas(spec))
    return base + shared.reshape(base.shape)
