"""
End-to-end comparison of a quantized model against its full-precision source.
"""

from typing import Any, Dict, Union

import numpy as np

from src.models.quantized_model import QuantizedModel
from src.models.transformer import ToyModel
from src.services.toymodel import SITES, QuantHooks, model_forward
from src.utils.tensor import Tensor, as_tensor
from src.utils.validators import ContractError


class ArchitectureMismatchError(ContractError):
    """Raised when the two models do not share an architecture."""
    pass


def cosine_similarity(a: Tensor, b: Tensor) -> float:
    """Cosine of the flattened tensors; 1.0 when both are zero."""
    a = np.ravel(a)
    b = np.ravel(b)
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 1.0 if not np.any(a) and not np.any(b) else 0.0
    return float(np.dot(a, b) / norm)


def evaluate(modelq: Union[QuantizedModel, ToyModel], model_fp: ToyModel, inputs: Tensor) -> Dict[str, Any]:
    """
    Run both models on held-out inputs and compare.

    A ToyModel passed as modelq runs without activation quantization, so
    evaluate(model, model, x) reports zero error.

    Args:
        modelq: Quantized model (or a float model)
        model_fp: Full-precision reference
        inputs: [S x N x D] held-out inputs

    Returns:
        Dictionary with output_mse, cosine_similarity and per_layer_sqnr
        (dB per activation site, keyed "block{i}.{site}")

    Raises:
        ArchitectureMismatchError: If the architectures differ
    """
    inputs = as_tensor(inputs)
    if modelq.architecture() != model_fp.architecture():
        raise ArchitectureMismatchError(
            f"architecture mismatch: {modelq.architecture()} vs {model_fp.architecture()}"
        )

    reference = model_forward(inputs, model_fp)
    if isinstance(modelq, QuantizedModel):
        hooks = modelq.hooks(track_error=True)
        output = modelq.forward(inputs, hooks)
    else:
        hooks = QuantHooks(track_error=True)
        output = model_forward(inputs, modelq, hooks)

    per_layer = {}
    for i in range(len(model_fp.blocks)):
        for site in SITES:
            if (i, site) in hooks.quantizers:
                per_layer[f"block{i}.{site}"] = hooks.sqnr_db((i, site))

    return {
        "output_mse": float(np.mean((output - reference) ** 2)),
        "cosine_similarity": cosine_similarity(output, reference),
        "per_layer_sqnr": per_layer,
    }
