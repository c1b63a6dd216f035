"""File handler utility for consistent file I/O and the artifact container format.

An artifact is a JSON manifest (``name.json``) next to a little-endian binary
blob (``name.bin``). Tensors in the manifest are references
``{"offset", "length", "dtype", "shape"}`` into the blob; small vectors are
stored inline as JSON lists.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

FORMAT_VERSION = 1
INLINE_LIMIT = 64

_DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
}


class ModelFormatError(Exception):
    """Raised when an artifact is malformed or has an unsupported version."""
    pass


class BlobWriter:
    """Accumulates tensors into a byte buffer and hands out references."""

    def __init__(self):
        self._chunks: List[bytes] = []
        self._size = 0

    def add(self, array, dtype: str = "f32") -> Dict[str, Any]:
        """Append an array and return its manifest reference.

        Args:
            array: Array-like data
            dtype: Storage dtype, one of f32, u8, u16

        Returns:
            Reference dict with offset (bytes), length (elements), dtype and shape
        """
        if dtype not in _DTYPES:
            raise ModelFormatError(f"Unsupported blob dtype: {dtype}")
        arr = np.asarray(array)
        if dtype != "f32" and arr.size and (arr.min() < 0 or arr.max() > np.iinfo(_DTYPES[dtype]).max):
            raise ModelFormatError(f"Values do not fit into {dtype}")
        # 4-byte alignment keeps f32 tensors aligned for readers that map the file
        pad = (-self._size) % 4
        if pad:
            self._chunks.append(b"\x00" * pad)
            self._size += pad
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        ref = {
            "offset": self._size,
            "length": int(arr.size),
            "dtype": dtype,
            "shape": [int(d) for d in arr.shape],
        }
        self._chunks.append(data)
        self._size += len(data)
        return ref

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


class BlobReader:
    """Resolves manifest references against a loaded blob."""

    def __init__(self, data: bytes):
        self._data = data

    def get(self, ref: Dict[str, Any]) -> np.ndarray:
        """Return the referenced tensor as float64.

        Raises:
            ModelFormatError: If the reference is malformed or out of bounds
        """
        try:
            dtype = _DTYPES[ref["dtype"]]
            offset, length = int(ref["offset"]), int(ref["length"])
            shape = tuple(int(d) for d in ref["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"Malformed tensor reference {ref!r}: {e}")
        end = offset + length * dtype.itemsize
        if offset < 0 or end > len(self._data):
            raise ModelFormatError(f"Tensor reference {ref!r} exceeds blob size {len(self._data)}")
        if int(np.prod(shape, dtype=np.int64)) != length:
            raise ModelFormatError(f"Tensor reference shape {shape} does not match length {length}")
        arr = np.frombuffer(self._data, dtype=dtype, count=length, offset=offset)
        return arr.astype(np.float64).reshape(shape)


def encode_vector(values, blob: BlobWriter) -> Union[List[float], Dict[str, Any]]:
    """Inline short vectors, spill longer ones into the blob."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size <= INLINE_LIMIT:
        return [float(v) for v in arr]
    return blob.add(arr, "f32")


def decode_vector(obj, blob: BlobReader) -> np.ndarray:
    if isinstance(obj, list):
        return np.asarray(obj, dtype=np.float64)
    if isinstance(obj, dict):
        return blob.get(obj).ravel()
    raise ModelFormatError(f"Expected an inline list or tensor reference, got {type(obj).__name__}")


class FileHandler:
    """Utility class for consistent file I/O operations."""

    @staticmethod
    def ensure_directory_exists(directory_path: str) -> bool:
        """Ensure a directory exists, creating it if necessary.

        Args:
            directory_path: Path to the directory

        Returns:
            True if directory exists or was created, False if creation failed
        """
        try:
            Path(directory_path).mkdir(parents=True, exist_ok=True)
            return True
        except (OSError, PermissionError):
            return False

    @staticmethod
    def write_text_file(file_path: str, content: str, encoding: str = 'utf-8') -> None:
        """Write text content to a file, creating parent directories.

        Raises:
            OSError: If the file cannot be written
        """
        parent_dir = os.path.dirname(file_path)
        if parent_dir and not FileHandler.ensure_directory_exists(parent_dir):
            raise OSError(f"Cannot create directory: {parent_dir}")
        with open(file_path, 'w', encoding=encoding, newline='\n') as f:
            f.write(content)

    @staticmethod
    def write_json(file_path: str, payload: Dict[str, Any]) -> None:
        """Write a JSON document with a stable key order."""
        FileHandler.write_text_file(file_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @staticmethod
    def read_json(file_path: str) -> Dict[str, Any]:
        """Read a JSON document.

        Raises:
            OSError: If the file cannot be read
            ModelFormatError: If the content is not a JSON object
        """
        with open(file_path, 'r', encoding='utf-8') as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise ModelFormatError(f"{file_path} is not valid JSON: {e}")
        if not isinstance(payload, dict):
            raise ModelFormatError(f"{file_path} must contain a JSON object")
        return payload

    @staticmethod
    def blob_path_for(manifest_path: str) -> str:
        """Blob file sitting next to a manifest: model.json -> model.bin."""
        return str(Path(manifest_path).with_suffix(".bin"))

    @staticmethod
    def write_artifact(manifest_path: str, manifest: Dict[str, Any], blob: BlobWriter) -> Tuple[str, str]:
        """Write a manifest and its blob.

        Args:
            manifest_path: Destination of the JSON manifest
            manifest: Manifest content; format_version and blob name are added
            blob: Writer holding the referenced tensors

        Returns:
            Tuple of (manifest_path, blob_path)
        """
        blob_path = FileHandler.blob_path_for(manifest_path)
        payload = dict(manifest)
        payload["format_version"] = FORMAT_VERSION
        payload["blob"] = os.path.basename(blob_path)
        FileHandler.write_json(manifest_path, payload)
        with open(blob_path, 'wb') as f:
            f.write(blob.getvalue())
        return manifest_path, blob_path

    @staticmethod
    def read_artifact(manifest_path: str, expected_kind: Optional[str] = None) -> Tuple[Dict[str, Any], BlobReader]:
        """Read a manifest and its blob.

        Raises:
            OSError: If either file is missing or unreadable
            ModelFormatError: On version mismatch, wrong kind or bad content
        """
        manifest = FileHandler.read_json(manifest_path)
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(
                f"Unsupported format_version {version!r} in {manifest_path} (expected {FORMAT_VERSION})"
            )
        if expected_kind is not None and manifest.get("kind") != expected_kind:
            raise ModelFormatError(
                f"{manifest_path} holds a {manifest.get('kind')!r} artifact, expected {expected_kind!r}"
            )
        blob_name = manifest.get("blob")
        if not isinstance(blob_name, str):
            raise ModelFormatError(f"{manifest_path} does not name its blob file")
        blob_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), blob_name)
        with open(blob_path, 'rb') as f:
            data = f.read()
        return manifest, BlobReader(data)

    @staticmethod
    def get_filename_without_extension(file_path: str) -> str:
        """Get the filename without extension from a file path.

        Args:
            file_path: Path to the file

        Returns:
            Filename without extension
        """
        return Path(file_path).stem
