"""
Inference-side quantized model: integer weight codes, activation quantizer
records and the reparameterization audit trail, with its artifact format.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.models.quant_config import QuantConfig
from src.models.quant_params import LogQuantParams, UniformQuantParams
from src.models.transformer import (
    LAYERNORM_NAMES,
    LINEAR_NAMES,
    LayerNormParams,
    LinearLayerParams,
    ToyModel,
    TransformerBlock,
)
from src.services.quantizers import log_fake_quant, log_quant, uniform_dequant, uniform_fake_quant
from src.services.reparam import reparam_log_sqrt2
from src.services.toymodel import QuantHooks, model_forward
from src.utils.file_handler import (
    BlobReader,
    BlobWriter,
    FileHandler,
    ModelFormatError,
    decode_vector,
    encode_vector,
)
from src.utils.tensor import Tensor
from src.utils.validators import ContractError, ValidationError

QUANTIZED_KIND = "quantized_model"
ACTIVATION_KINDS = ("uniform", "log2", "log2_parity")


@dataclass(frozen=True)
class ActivationQuantizer:
    """
    Quantizer applied to one activation site at inference time.

    Properties:
        kind (str): "uniform", "log2", or "log2_parity" (a base-sqrt(2) grid
            executed as base-2 shifts with a parity-dependent scale)
        uniform (UniformQuantParams): params of a uniform quantizer
        scale (float): scale of a logarithmic quantizer
        bits (int): bit-width
    """

    kind: str
    bits: int
    uniform: Optional[UniformQuantParams] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValidationError(f"unknown activation quantizer kind {self.kind!r}")
        if self.kind == "uniform" and self.uniform is None:
            raise ValidationError("uniform activation quantizer needs params")
        if self.kind != "uniform" and self.scale is None:
            raise ValidationError(f"{self.kind} activation quantizer needs a scale")

    @classmethod
    def from_uniform(cls, params: UniformQuantParams) -> "ActivationQuantizer":
        return cls(kind="uniform", bits=params.bits, uniform=params)

    @classmethod
    def from_log(cls, params: LogQuantParams) -> "ActivationQuantizer":
        kind = "log2" if params.base == "two" else "log2_parity"
        return cls(kind=kind, bits=params.bits, scale=params.scale)

    @property
    def log_params(self) -> LogQuantParams:
        base = "two" if self.kind == "log2" else "sqrt_two"
        return LogQuantParams(scale=self.scale, base=base, bits=self.bits)

    @property
    def hardware_friendly(self) -> bool:
        return self.kind != "uniform" or self.uniform.granularity == "layer"

    def fake_quant(self, x: Tensor) -> Tensor:
        if self.kind == "uniform":
            return uniform_fake_quant(x, self.uniform)
        if self.kind == "log2":
            return log_fake_quant(x, self.log_params)
        return reparam_log_sqrt2(log_quant(x, self.log_params), self.log_params)[0]

    def to_manifest(self, blob: BlobWriter) -> Dict[str, Any]:
        if self.kind == "uniform":
            p = self.uniform
            return {
                "kind": "uniform",
                "granularity": p.granularity,
                "bits": p.bits,
                "scale": encode_vector(p.scale, blob),
                "zero_point": encode_vector(p.zero_point, blob),
            }
        return {"kind": self.kind, "bits": self.bits, "scale": self.scale}

    @classmethod
    def from_manifest(cls, entry: Dict[str, Any], blob: BlobReader) -> "ActivationQuantizer":
        kind = entry.get("kind")
        if kind not in ACTIVATION_KINDS:
            raise ModelFormatError(f"unsupported activation quantizer kind {kind!r}")
        if kind == "uniform":
            params = UniformQuantParams(
                scale=decode_vector(entry["scale"], blob),
                zero_point=decode_vector(entry["zero_point"], blob),
                bits=int(entry["bits"]),
                granularity=entry["granularity"],
            )
            return cls.from_uniform(params)
        return cls(kind=kind, bits=int(entry["bits"]), scale=float(entry["scale"]))


@dataclass(frozen=True)
class WeightRecord:
    """
    Quantized linear layer: integer codes with channel-wise params and float bias.

    Properties:
        codes (ndarray): [D_in x D_out] integral values
        params (UniformQuantParams): channel-wise over D_out
        bias (ndarray): length D_out
    """

    codes: Tensor
    params: UniformQuantParams
    bias: Tensor

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[1] != self.params.channels or codes.shape[1] != np.size(self.bias):
            raise ValidationError(
                f"weight codes {codes.shape} do not match {self.params.channels} channel params "
                f"and bias of length {np.size(self.bias)}"
            )

    @property
    def code_dtype(self) -> str:
        return "u8" if self.params.bits <= 8 else "u16"

    def dequantize(self) -> LinearLayerParams:
        return LinearLayerParams(weight=uniform_dequant(self.codes, self.params), bias=self.bias)

    def to_manifest(self, blob: BlobWriter) -> Dict[str, Any]:
        return {
            "codes": blob.add(self.codes, self.code_dtype),
            "bits": self.params.bits,
            "scale": encode_vector(self.params.scale, blob),
            "zero_point": encode_vector(self.params.zero_point, blob),
            "bias": encode_vector(self.bias, blob),
        }

    @classmethod
    def from_manifest(cls, entry: Dict[str, Any], blob: BlobReader) -> "WeightRecord":
        params = UniformQuantParams(
            scale=decode_vector(entry["scale"], blob),
            zero_point=decode_vector(entry["zero_point"], blob),
            bits=int(entry["bits"]),
            granularity="channel",
        )
        return cls(codes=blob.get(entry["codes"]), params=params, bias=decode_vector(entry["bias"], blob))


@dataclass
class QuantizedBlock:
    """Per-block contents of a quantized model."""

    ln1: LayerNormParams
    ln2: LayerNormParams
    heads: int
    causal: bool = False
    weights: Dict[str, WeightRecord] = field(default_factory=dict)
    activations: Dict[str, ActivationQuantizer] = field(default_factory=dict)
    reparam: Dict[str, Dict[str, Any]] = field(default_factory=dict)


class QuantizedModel:
    """
    Fully quantized toy model.

    Properties:
        blocks (list): QuantizedBlock per transformer block
        embed_dim (int): D
        tokens (int): N
        config (QuantConfig): settings the model was produced with
    """

    def __init__(self, blocks, embed_dim: int, tokens: int, config: QuantConfig):
        self.blocks = list(blocks)
        self.embed_dim = int(embed_dim)
        self.tokens = int(tokens)
        self.config = config

    def check_invariants(self) -> None:
        """
        Verify every layer is quantized and inference quantizers are hardware friendly.

        Channel-wise activation quantizers are accepted only when the model was
        produced with ln_granularity="channel" (a simulation-only setting).

        Raises:
            ContractError: On a missing weight record or a forbidden quantizer
        """
        allow_channel = self.config.ln_granularity == "channel"
        for i, block in enumerate(self.blocks):
            missing = [name for name in LINEAR_NAMES if name not in block.weights]
            if missing:
                raise ContractError(f"block {i}: missing weight records {missing}")
            for site, quantizer in block.activations.items():
                if not quantizer.hardware_friendly and not allow_channel:
                    raise ContractError(f"block {i} site {site}: channel-wise activation quantizer in artifact")

    def to_simulated_model(self) -> ToyModel:
        """Floating-point model whose weights are the dequantized codes."""
        built = []
        for block in self.blocks:
            linears = {name: block.weights[name].dequantize() for name in LINEAR_NAMES}
            built.append(TransformerBlock(ln1=block.ln1, ln2=block.ln2, heads=block.heads,
                                          causal=block.causal, **linears))
        return ToyModel(built, self.tokens)

    def architecture(self) -> Tuple:
        return self.to_simulated_model().architecture()

    def hooks(self, track_error: bool = False) -> QuantHooks:
        quantizers = {}
        for i, block in enumerate(self.blocks):
            for site, quantizer in block.activations.items():
                quantizers[(i, site)] = quantizer.fake_quant
        return QuantHooks(quantizers, track_error=track_error)

    def forward(self, x: Tensor, hooks: Optional[QuantHooks] = None) -> Tensor:
        """Fake-quantized forward pass."""
        return model_forward(x, self.to_simulated_model(), hooks or self.hooks())

    def get_metadata(self) -> Dict[str, Any]:
        return {
            "embed_dim": self.embed_dim,
            "tokens": self.tokens,
            "blocks": len(self.blocks),
            "config": self.config.to_dict(),
        }

    def to_manifest(self, blob: BlobWriter) -> Dict[str, Any]:
        blocks = []
        for block in self.blocks:
            entry: Dict[str, Any] = {"heads": block.heads, "causal": block.causal}
            for name in LAYERNORM_NAMES:
                ln = getattr(block, name)
                entry[name] = {
                    "gamma": encode_vector(ln.gamma, blob),
                    "beta": encode_vector(ln.beta, blob),
                    "eps": ln.eps,
                }
            entry["weights"] = {name: block.weights[name].to_manifest(blob) for name in LINEAR_NAMES}
            entry["activations"] = {site: q.to_manifest(blob) for site, q in sorted(block.activations.items())}
            entry["reparam"] = {
                name: {key: (encode_vector(v, blob) if isinstance(v, np.ndarray) else v)
                       for key, v in sorted(audit.items())}
                for name, audit in sorted(block.reparam.items())
            }
            blocks.append(entry)
        return {
            "kind": QUANTIZED_KIND,
            "embed_dim": self.embed_dim,
            "tokens": self.tokens,
            "config": self.config.to_dict(),
            "blocks": blocks,
        }

    def save_to_file(self, path: str) -> None:
        """
        Save the quantized model as a manifest plus blob.

        Args:
            path: Manifest path
        """
        self.check_invariants()
        blob = BlobWriter()
        FileHandler.write_artifact(path, self.to_manifest(blob), blob)

    @classmethod
    def load_from_file(cls, path: str) -> "QuantizedModel":
        """
        Load a model written by save_to_file.

        Raises:
            OSError: If the files cannot be read
            ModelFormatError: If the content is malformed
        """
        manifest, blob = FileHandler.read_artifact(path, expected_kind=QUANTIZED_KIND)
        try:
            config = QuantConfig.from_dict(manifest["config"])
            blocks = []
            for entry in manifest["blocks"]:
                lns = {
                    name: LayerNormParams(
                        gamma=decode_vector(entry[name]["gamma"], blob),
                        beta=decode_vector(entry[name]["beta"], blob),
                        eps=float(entry[name]["eps"]),
                    )
                    for name in LAYERNORM_NAMES
                }
                blocks.append(QuantizedBlock(
                    heads=int(entry["heads"]),
                    causal=bool(entry.get("causal", False)),
                    weights={name: WeightRecord.from_manifest(entry["weights"][name], blob)
                             for name in LINEAR_NAMES},
                    activations={site: ActivationQuantizer.from_manifest(q, blob)
                                 for site, q in entry.get("activations", {}).items()},
                    reparam={name: {key: (decode_vector(v, blob) if isinstance(v, (list, dict)) else v)
                                    for key, v in audit.items()}
                             for name, audit in entry.get("reparam", {}).items()},
                    **lns,
                ))
            model = cls(blocks, int(manifest["embed_dim"]), int(manifest["tokens"]), config)
            model.to_simulated_model()
        except (KeyError, TypeError) as e:
            raise ModelFormatError(f"Malformed quantized model manifest: missing or invalid {e}")
        except ValidationError as e:
            raise ModelFormatError(f"Inconsistent quantized model manifest: {e}")
        return model

    def __str__(self) -> str:
        return (f"QuantizedModel(blocks={len(self.blocks)}, embed_dim={self.embed_dim}, "
                f"W{self.config.weight_bits}/A{self.config.act_bits})")
