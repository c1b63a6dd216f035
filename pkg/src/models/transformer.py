"""
Transformer parameter containers: LayerNorm, linear layers, blocks and the toy model.
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, List, Tuple

import numpy as np

from src.utils.file_handler import (
    BlobReader,
    BlobWriter,
    FileHandler,
    ModelFormatError,
    decode_vector,
    encode_vector,
)
from src.utils.tensor import Tensor
from src.utils.validators import ValidationError, validate_dims

LINEAR_NAMES = ("wq", "wk", "wv", "wo", "mlp_up", "mlp_down")
LAYERNORM_NAMES = ("ln1", "ln2")
MODEL_KIND = "toy_model"


def _frozen(values, name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LayerNormParams:
    """
    LayerNorm affine factors.

    Properties:
        gamma (ndarray): per-channel scale, length D
        beta (ndarray): per-channel shift, length D
        eps (float): variance floor, > 0
    """

    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    def __post_init__(self):
        gamma = _frozen(self.gamma, "gamma", 1)
        beta = _frozen(self.beta, "beta", 1)
        if gamma.shape != beta.shape:
            raise ValidationError(f"gamma and beta lengths differ: {gamma.shape} vs {beta.shape}")
        if not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def dim(self) -> int:
        return int(self.gamma.size)


@dataclass(frozen=True)
class LinearLayerParams:
    """
    Linear layer y = x @ weight + bias.

    Properties:
        weight (ndarray): [D_in x D_out]
        bias (ndarray): length D_out
    """

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        weight = _frozen(self.weight, "weight", 2)
        bias = _frozen(self.bias, "bias", 1)
        if weight.shape[1] != bias.size:
            raise ValidationError(f"bias length {bias.size} does not match weight shape {weight.shape}")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_features(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_features(self) -> int:
        return int(self.weight.shape[1])


@dataclass(frozen=True)
class TransformerBlock:
    """
    Pre-norm block: x + MSA(LN1(x)), then y + MLP(LN2(y)).

    Properties:
        ln1, ln2 (LayerNormParams): normalizations in front of each sublayer
        wq, wk, wv, wo (LinearLayerParams): D -> D attention projections
        mlp_up (LinearLayerParams): D -> 4D
        mlp_down (LinearLayerParams): 4D -> D
        heads (int): number of attention heads, divides D
        causal (bool): mask future tokens in attention
    """

    ln1: LayerNormParams
    wq: LinearLayerParams
    wk: LinearLayerParams
    wv: LinearLayerParams
    wo: LinearLayerParams
    ln2: LayerNormParams
    mlp_up: LinearLayerParams
    mlp_down: LinearLayerParams
    heads: int = 1
    causal: bool = False

    def __post_init__(self):
        d = self.ln1.dim
        validate_dims(d, self.heads)
        if self.ln2.dim != d:
            raise ValidationError("ln1 and ln2 must have the same width")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).weight.shape != (d, d):
                raise ValidationError(f"{name} must be {d}x{d}, got {getattr(self, name).weight.shape}")
        if self.mlp_up.in_features != d:
            raise ValidationError(f"mlp_up must take {d} inputs")
        if self.mlp_down.weight.shape != (self.mlp_up.out_features, d):
            raise ValidationError(
                f"mlp_down must be {self.mlp_up.out_features}x{d}, got {self.mlp_down.weight.shape}"
            )

    @property
    def embed_dim(self) -> int:
        return self.ln1.dim

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def hidden_dim(self) -> int:
        return self.mlp_up.out_features

    def with_updates(self, **changes) -> "TransformerBlock":
        return replace(self, **changes)


class ToyModel:
    """
    A stack of transformer blocks sharing one embedding width.

    Properties:
        blocks (list): ordered TransformerBlock instances
        embed_dim (int): D
        tokens (int): N, the sequence length the model was built for
    """

    def __init__(self, blocks: List[TransformerBlock], tokens: int):
        if not blocks:
            raise ValidationError("a model needs at least one block")
        dims = {b.embed_dim for b in blocks}
        if len(dims) != 1:
            raise ValidationError(f"blocks disagree on embed_dim: {sorted(dims)}")
        if tokens < 1:
            raise ValidationError(f"tokens must be positive, got {tokens}")
        self.blocks = list(blocks)
        self.embed_dim = dims.pop()
        self.tokens = int(tokens)

    def architecture(self) -> Tuple:
        """Hashable description used to check two models are comparable."""
        return (self.embed_dim, tuple((b.heads, b.hidden_dim, b.causal) for b in self.blocks))

    def get_metadata(self) -> Dict[str, Any]:
        return {
            "embed_dim": self.embed_dim,
            "tokens": self.tokens,
            "blocks": len(self.blocks),
            "heads": [b.heads for b in self.blocks],
        }

    def to_manifest(self, blob: BlobWriter) -> Dict[str, Any]:
        """Describe the model, putting its tensors into blob."""
        return {
            "kind": MODEL_KIND,
            "embed_dim": self.embed_dim,
            "tokens": self.tokens,
            "blocks": [block_to_manifest(b, blob) for b in self.blocks],
        }

    @classmethod
    def from_manifest(cls, manifest: Dict[str, Any], blob: BlobReader) -> "ToyModel":
        try:
            blocks = [block_from_manifest(entry, blob) for entry in manifest["blocks"]]
            model = cls(blocks, int(manifest["tokens"]))
        except (KeyError, TypeError) as e:
            raise ModelFormatError(f"Malformed model manifest: missing or invalid {e}")
        except ValidationError as e:
            raise ModelFormatError(f"Inconsistent model manifest: {e}")
        if model.embed_dim != manifest.get("embed_dim"):
            raise ModelFormatError("embed_dim in manifest does not match the stored tensors")
        return model

    def save_to_file(self, path: str) -> None:
        """
        Save the model as a manifest plus blob.

        Args:
            path: Manifest path; the blob goes next to it with a .bin suffix
        """
        blob = BlobWriter()
        FileHandler.write_artifact(path, self.to_manifest(blob), blob)

    @classmethod
    def load_from_file(cls, path: str) -> "ToyModel":
        """
        Load a model written by save_to_file.

        Raises:
            OSError: If the files cannot be read
            ModelFormatError: If the content is malformed
        """
        manifest, blob = FileHandler.read_artifact(path, expected_kind=MODEL_KIND)
        return cls.from_manifest(manifest, blob)

    def __str__(self) -> str:
        return f"ToyModel(blocks={len(self.blocks)}, embed_dim={self.embed_dim}, tokens={self.tokens})"


def block_to_manifest(block: TransformerBlock, blob: BlobWriter) -> Dict[str, Any]:
    entry: Dict[str, Any] = {"heads": block.heads, "causal": block.causal}
    for name in LAYERNORM_NAMES:
        ln = getattr(block, name)
        entry[name] = {
            "gamma": encode_vector(ln.gamma, blob),
            "beta": encode_vector(ln.beta, blob),
            "eps": ln.eps,
        }
    for name in LINEAR_NAMES:
        lin = getattr(block, name)
        entry[name] = {"weight": blob.add(lin.weight, "f32"), "bias": encode_vector(lin.bias, blob)}
    return entry


def block_from_manifest(entry: Dict[str, Any], blob: BlobReader) -> TransformerBlock:
    parts: Dict[str, Any] = {}
    for name in LAYERNORM_NAMES:
        ln = entry[name]
        parts[name] = LayerNormParams(
            gamma=decode_vector(ln["gamma"], blob),
            beta=decode_vector(ln["beta"], blob),
            eps=float(ln["eps"]),
        )
    for name in LINEAR_NAMES:
        lin = entry[name]
        parts[name] = LinearLayerParams(weight=blob.get(lin["weight"]), bias=decode_vector(lin["bias"], blob))
    return TransformerBlock(heads=int(entry["heads"]), causal=bool(entry.get("causal", False)), **parts)
