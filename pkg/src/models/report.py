"""
Per-layer quantization reports and the report files written next to artifacts.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from src.models.quant_config import QuantConfig
from src.utils.file_handler import FileHandler
from src.utils.validators import ValidationError

REPORT_KINDS = ("layernorm-act", "softmax-act", "generic-act", "weight")
CSV_COLUMNS = ("layer_id", "kind", "method", "pre_loss", "post_loss", "flags")


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


@dataclass(frozen=True)
class LayerReport:
    """
    What the pipeline did at one activation site or weight.

    Properties:
        layer_id (str): "block{i}.{site or weight name}"
        kind (str): layernorm-act, softmax-act, generic-act or weight
        method (str): quantizer used for the site
        pre_loss (float): reconstruction error of the baseline quantizer
        post_loss (float): reconstruction error of the chosen quantizer
        clip_stats (dict): clipping search summary, empty when not clipped
        flags (tuple): degenerate channels, positive minima, Cholesky fallback
    """

    layer_id: str
    kind: str
    method: str
    pre_loss: float
    post_loss: float
    clip_stats: Dict[str, Any] = field(default_factory=dict)
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in REPORT_KINDS:
            raise ValidationError(f"unknown report kind {self.kind!r}")
        if self.pre_loss < 0 or self.post_loss < 0:
            raise ValidationError(f"{self.layer_id}: losses must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer_id": self.layer_id,
            "kind": self.kind,
            "method": self.method,
            "pre_loss": self.pre_loss,
            "post_loss": self.post_loss,
            "clip_stats": self.clip_stats,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerReport":
        return cls(
            layer_id=data["layer_id"],
            kind=data["kind"],
            method=data.get("method", ""),
            pre_loss=float(data["pre_loss"]),
            post_loss=float(data["post_loss"]),
            clip_stats=dict(data.get("clip_stats", {})),
            flags=tuple(data.get("flags", ())),
        )


class QuantizationReport:
    """
    Self-describing report: the QuantConfig, per-layer entries and metrics.

    Properties:
        config (QuantConfig): settings of the run
        layers (list): LayerReport entries in pipeline order
        metrics (dict): evaluation metrics, empty until evaluated
        title (str): what produced the report (quantize, eval, ablate)
    """

    def __init__(self, config: QuantConfig, layers: Optional[List[LayerReport]] = None,
                 metrics: Optional[Dict[str, Any]] = None, title: str = "quantize"):
        self.config = config
        self.layers = list(layers or [])
        self.metrics = dict(metrics or {})
        self.title = title

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report": self.title,
            "config": self.config.to_dict(),
            "layers": [layer.to_dict() for layer in self.layers],
            "metrics": _json_safe(self.metrics),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuantizationReport":
        return cls(
            config=QuantConfig.from_dict(data["config"]),
            layers=[LayerReport.from_dict(entry) for entry in data.get("layers", [])],
            metrics=data.get("metrics", {}),
            title=data.get("report", "quantize"),
        )

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for layer in self.layers:
            writer.writerow([layer.layer_id, layer.kind, layer.method, repr(layer.pre_loss),
                             repr(layer.post_loss), ";".join(layer.flags)])
        return buffer.getvalue()

    def save_to_file(self, path: str) -> None:
        """
        Save the report as JSON.

        Args:
            path: JSON file path
        """
        FileHandler.write_json(path, self.to_dict())

    def save_csv(self, path: str) -> None:
        FileHandler.write_text_file(path, self.to_csv())

    @classmethod
    def load_from_file(cls, path: str) -> "QuantizationReport":
        return cls.from_dict(FileHandler.read_json(path))

    def __str__(self) -> str:
        return f"QuantizationReport({self.title}, layers={len(self.layers)}, config={self.config})"


def _json_safe(value):
    """Replace non-finite floats (e.g. lossless SQNR) with None so the JSON stays standard."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float):
        return _finite_or_none(value)
    return value
