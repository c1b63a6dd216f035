"""
Calibration / evaluation dataset stored in the artifact container.
"""

from typing import Any, Dict, Optional

import numpy as np

from src.utils.file_handler import BlobWriter, FileHandler, ModelFormatError
from src.utils.tensor import Tensor, as_tensor

DATASET_KIND = "dataset"


class CalibrationDataset:
    """
    A batch of activations plus a description of how it was produced.

    Properties:
        data (ndarray): [S x N x D] samples (or [S x N x N] for Softmax-like data)
        generator (str): name of the generator that produced the data
        params (dict): generator parameters, JSON-compatible
    """

    def __init__(self, data: Tensor, generator: str = "external", params: Optional[Dict[str, Any]] = None):
        self.data = as_tensor(data)
        if self.data.ndim != 3:
            raise ModelFormatError(f"dataset must be 3-D [S x N x D], got shape {self.data.shape}")
        self.generator = generator
        self.params = dict(params or {})

    @property
    def samples(self) -> int:
        return int(self.data.shape[0])

    def split(self, first: int):
        """Return (first `first` samples, remaining samples) as new datasets."""
        head = CalibrationDataset(self.data[:first], self.generator, self.params)
        tail = CalibrationDataset(self.data[first:], self.generator, self.params)
        return head, tail

    def get_metadata(self) -> Dict[str, Any]:
        return {"generator": self.generator, "params": self.params, "shape": list(self.data.shape)}

    def save_to_file(self, path: str) -> None:
        """
        Save the dataset as a manifest plus float32 blob.

        Args:
            path: Manifest path
        """
        blob = BlobWriter()
        manifest = {
            "kind": DATASET_KIND,
            "generator": self.generator,
            "params": self.params,
            "data": blob.add(self.data, "f32"),
        }
        FileHandler.write_artifact(path, manifest, blob)

    @classmethod
    def load_from_file(cls, path: str) -> "CalibrationDataset":
        """
        Load a dataset written by save_to_file.

        Raises:
            OSError: If the files cannot be read
            ModelFormatError: If the content is malformed
        """
        manifest, blob = FileHandler.read_artifact(path, expected_kind=DATASET_KIND)
        if "data" not in manifest:
            raise ModelFormatError(f"{path} has no data tensor")
        return cls(blob.get(manifest["data"]), manifest.get("generator", "external"), manifest.get("params"))

    def __str__(self) -> str:
        return f"CalibrationDataset(shape={tuple(self.data.shape)}, generator={self.generator})"

    def __eq__(self, other) -> bool:
        return isinstance(other, CalibrationDataset) and np.array_equal(self.data, other.data)

    __hash__ = None
