"""
Forward execution of the toy transformer with quantization hooks.

Every matmul input in a block passes through a named site so hooks can
record it or replace it with its fake-quantized value:

    ln1         LayerNorm-1 output, input of the Q/K/V projections
    q, k        operands of Q @ K^T
    softmax     attention probabilities, left operand of A @ V
    v           right operand of A @ V
    attn_out    merged head outputs, input of the output projection
    ln2         LayerNorm-2 output, input of the MLP up projection
    mlp_hidden  GELU output, input of the MLP down projection
"""

import math
from collections import defaultdict
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from src.models.transformer import LayerNormParams, LinearLayerParams, ToyModel, TransformerBlock
from src.services.synthdata import STREAM_MODEL_INIT, stream_rng
from src.utils.tensor import Tensor, TensorShapeError, as_tensor, flatten_rows, matmul
from src.utils.validators import validate_dims

SITES = ("ln1", "q", "k", "softmax", "v", "attn_out", "ln2", "mlp_hidden")
SiteKey = Tuple[int, str]
FakeQuant = Callable[[Tensor], Tensor]


class ForwardHooks:
    """Identity hook: every site passes its tensor through unchanged."""

    def __call__(self, block_index: int, site: str, x: Tensor) -> Tensor:
        return x


class QuantHooks(ForwardHooks):
    """
    Applies fake quantization at selected sites and optionally records tensors.

    Args:
        quantizers: Map (block_index, site) -> quant/dequant function
        record: Sites whose input (pre-quant) and output (post-quant) are kept
        track_error: Accumulate signal and noise energy for SQNR
    """

    def __init__(self, quantizers: Optional[Dict[SiteKey, FakeQuant]] = None,
                 record: Iterable[SiteKey] = (), track_error: bool = False):
        self.quantizers = dict(quantizers or {})
        self.record = set(record)
        self.track_error = track_error
        self.inputs = defaultdict(list)
        self.outputs = defaultdict(list)
        self.error_stats = defaultdict(lambda: [0.0, 0.0])

    def __call__(self, block_index: int, site: str, x: Tensor) -> Tensor:
        key = (block_index, site)
        fake_quant = self.quantizers.get(key)
        y = fake_quant(x) if fake_quant is not None else x
        if key in self.record:
            self.inputs[key].append(np.array(x, copy=True))
            self.outputs[key].append(np.array(y, copy=True))
        if self.track_error and fake_quant is not None:
            stats = self.error_stats[key]
            stats[0] += float(np.sum(x * x))
            stats[1] += float(np.sum((x - y) ** 2))
        return y

    def collected(self, key: SiteKey, quantized: bool = False) -> Tensor:
        """Concatenate everything recorded at a site along the batch axis."""
        chunks = (self.outputs if quantized else self.inputs).get(key)
        if not chunks:
            raise KeyError(f"nothing recorded at site {key}")
        if chunks[0].ndim <= 2:
            return np.stack(chunks) if len(chunks) > 1 else chunks[0]
        return np.concatenate(chunks, axis=0)

    def sqnr_db(self, key: SiteKey) -> float:
        """Signal-to-quantization-noise ratio at a site in dB (inf when lossless)."""
        signal, noise = self.error_stats[key]
        if noise == 0.0:
            return float("inf")
        if signal == 0.0:
            return float("-inf")
        return 10.0 * math.log10(signal / noise)


class RecordingHooks(QuantHooks):
    """Records site tensors without quantizing anything."""

    def __init__(self, record: Iterable[SiteKey]):
        super().__init__(quantizers=None, record=record)


def _check_width(x: Tensor, width: int, op: str) -> None:
    if x.ndim < 2 or x.shape[-1] != width:
        raise TensorShapeError(f"{op}: expected [..., N, {width}] input, got shape {x.shape}")


def layernorm_forward(x: Tensor, p: LayerNormParams) -> Tensor:
    """(x - mean) / sqrt(var + eps) * gamma + beta over the last axis, population variance."""
    x = as_tensor(x)
    if x.shape[-1] != p.dim:
        raise TensorShapeError(f"layernorm_forward: input width {x.shape[-1]} != {p.dim}")
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + p.eps) * p.gamma + p.beta


def linear_forward(x: Tensor, p: LinearLayerParams) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    rows = matmul(flatten_rows(x), p.weight) + p.bias
    return rows.reshape(x.shape[:-1] + (p.out_features,))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def softmax(scores: Tensor) -> Tensor:
    """Row softmax over the last axis with max subtraction."""
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return np.swapaxes(x.reshape(*lead, n, heads, d // heads), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return np.swapaxes(x, -3, -2).reshape(*lead, n, h * dh)


def attention_forward(x_prime: Tensor, block: TransformerBlock,
                      hooks: Optional[ForwardHooks] = None,
                      block_index: int = 0) -> Tuple[Tensor, Tensor]:
    """
    Multi-head self-attention on LayerNorm output.

    Scores are scaled by sqrt(D / heads).

    Args:
        x_prime: [N x D] or [S x N x D]
        block: Block holding the projections
        hooks: Site hooks (identity when None)
        block_index: Index passed to hooks

    Returns:
        Tuple of (projected output with the input's shape, softmax
        probabilities [(S x) h x N x N] before any softmax hook)
    """
    hooks = hooks or ForwardHooks()
    x_prime = as_tensor(x_prime)
    _check_width(x_prime, block.embed_dim, "attention_forward")

    q = hooks(block_index, "q", linear_forward(x_prime, block.wq))
    k = hooks(block_index, "k", linear_forward(x_prime, block.wk))
    v = hooks(block_index, "v", linear_forward(x_prime, block.wv))

    qh, kh, vh = (_split_heads(t, block.heads) for t in (q, k, v))
    scores = qh @ np.swapaxes(kh, -1, -2) / math.sqrt(block.head_dim)
    if block.causal:
        n = scores.shape[-1]
        scores = np.where(np.tril(np.ones((n, n), dtype=bool)), scores, -np.inf)
    probs = softmax(scores)

    context = _merge_heads(hooks(block_index, "softmax", probs) @ vh)
    context = hooks(block_index, "attn_out", context)
    return linear_forward(context, block.wo), probs


def block_forward(x: Tensor, block: TransformerBlock,
                  hooks: Optional[ForwardHooks] = None, block_index: int = 0) -> Tensor:
    """y = x + MSA(LN1(x)); out = y + MLP(LN2(y))."""
    hooks = hooks or ForwardHooks()
    x = as_tensor(x)
    _check_width(x, block.embed_dim, "block_forward")

    h = hooks(block_index, "ln1", layernorm_forward(x, block.ln1))
    attn, _ = attention_forward(h, block, hooks, block_index)
    y = x + attn

    h = hooks(block_index, "ln2", layernorm_forward(y, block.ln2))
    hidden = hooks(block_index, "mlp_hidden", gelu(linear_forward(h, block.mlp_up)))
    return y + linear_forward(hidden, block.mlp_down)


def model_forward(x: Tensor, model: ToyModel, hooks: Optional[ForwardHooks] = None,
                  stop_after: Optional[int] = None) -> Tensor:
    """
    Run the blocks in order.

    Args:
        x: [N x D] or [S x N x D]
        model: Model to run
        hooks: Site hooks shared by all blocks
        stop_after: Index of the last block to run (all blocks when None)
    """
    x = as_tensor(x)
    _check_width(x, model.embed_dim, "model_forward")
    last = len(model.blocks) - 1 if stop_after is None else stop_after
    for i, block in enumerate(model.blocks[: last + 1]):
        x = block_forward(x, block, hooks, i)
    return x


def _linear(rng: np.random.Generator, d_in: int, d_out: int) -> LinearLayerParams:
    weight = rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)
    bias = 0.02 * rng.standard_normal(d_out)
    return LinearLayerParams(weight=_f32(weight), bias=_f32(bias))


def _f32(values) -> np.ndarray:
    # parameters are kept float32-representable so artifacts round-trip exactly
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def _layernorm(rng: np.random.Generator, d: int, gamma_ratio: float) -> LayerNormParams:
    gamma = np.exp(rng.uniform(0.0, math.log(gamma_ratio), size=d)) / math.sqrt(gamma_ratio)
    beta = 0.5 * gamma * rng.standard_normal(d)
    return LayerNormParams(gamma=_f32(gamma), beta=_f32(beta))


def init_model(embed_dim: int, heads: int, tokens: int, blocks: int = 1, seed: int = 0,
               mlp_ratio: int = 4, gamma_ratio: float = 30.0, causal: bool = False) -> ToyModel:
    """
    Build a randomly initialised model.

    LayerNorm gamma is log-uniform over a gamma_ratio-wide span so LayerNorm
    outputs show strong inter-channel variation; beta is Gaussian scaled by
    gamma; weights are Gaussian with 1/sqrt(fan_in) spread.
    """
    validate_dims(embed_dim, heads, tokens)
    hidden = mlp_ratio * embed_dim
    built = []
    for b in range(blocks):
        rng = stream_rng(seed, STREAM_MODEL_INIT, b)
        built.append(TransformerBlock(
            ln1=_layernorm(rng, embed_dim, gamma_ratio),
            wq=_linear(rng, embed_dim, embed_dim),
            wk=_linear(rng, embed_dim, embed_dim),
            wv=_linear(rng, embed_dim, embed_dim),
            wo=_linear(rng, embed_dim, embed_dim),
            ln2=_layernorm(rng, embed_dim, gamma_ratio),
            mlp_up=_linear(rng, embed_dim, hidden),
            mlp_down=_linear(rng, hidden, embed_dim),
            heads=heads,
            causal=causal,
        ))
    return ToyModel(built, tokens)
