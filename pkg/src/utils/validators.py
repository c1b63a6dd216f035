"""
Input validation utilities for the RepQuant toolkit.
"""

import os
from pathlib import Path
from typing import Iterable, Optional


class ContractError(Exception):
    """Base exception for math and contract violations."""
    pass


class ValidationError(ContractError):
    """Custom exception for validation errors."""
    pass


def validate_file_exists(file_path: str) -> None:
    """
    Validate that a file exists at the given path.

    Args:
        file_path: Path to the file to validate

    Raises:
        FileNotFoundError: If file does not exist or path is invalid
    """
    if not file_path:
        raise FileNotFoundError("File path cannot be empty")

    if not os.path.exists(file_path):
        raise FileNotFoundError(f"File does not exist: {file_path}")

    if not os.path.isfile(file_path):
        raise FileNotFoundError(f"Path is not a file: {file_path}")


def validate_output_directory(output_path: str) -> None:
    """
    Validate that the output directory exists and is writable.

    Args:
        output_path: Path to the output directory

    Raises:
        OSError: If directory validation fails
    """
    if not output_path:
        raise OSError("Output path cannot be empty")

    output_dir = Path(output_path)

    # Create directory if it doesn't exist
    output_dir.mkdir(parents=True, exist_ok=True)

    if not os.access(output_dir, os.W_OK):
        raise OSError(f"Output directory is not writable: {output_path}")


def validate_bits(bits: int, low: int = 2, high: int = 16, name: str = "bits") -> int:
    """
    Validate a quantization bit-width.

    Args:
        bits: Bit-width to check
        low: Smallest accepted value
        high: Largest accepted value
        name: Name used in the error message

    Returns:
        The bit-width as an int

    Raises:
        ValidationError: If bits is not an integer in [low, high]
    """
    if isinstance(bits, bool) or int(bits) != bits:
        raise ValidationError(f"{name} must be an integer, got {bits!r}")
    if not low <= int(bits) <= high:
        raise ValidationError(f"{name} must be in [{low}, {high}], got {bits}")
    return int(bits)


def validate_fraction(value: float, name: str, low: float = 0.0, high: float = 1.0,
                      inclusive: bool = True) -> float:
    """
    Validate that a value is a fraction inside the given interval.

    Raises:
        ValidationError: If value falls outside the interval
    """
    value = float(value)
    inside = (low <= value <= high) if inclusive else (low < value < high)
    if not inside:
        bracket = "[]" if inclusive else "()"
        raise ValidationError(
            f"{name} must be in {bracket[0]}{low}, {high}{bracket[1]}, got {value}"
        )
    return value


def validate_positive(value: float, name: str) -> float:
    """
    Validate that a number is strictly positive and finite.

    Raises:
        ValidationError: If value <= 0 or not finite
    """
    value = float(value)
    if not value > 0 or value == float("inf"):
        raise ValidationError(f"{name} must be a positive finite number, got {value}")
    return value


def validate_choice(value: str, choices: Iterable[str], name: str) -> str:
    """
    Validate that a string is one of the accepted choices.

    Raises:
        ValidationError: If value is not in choices
    """
    choices = list(choices)
    if value not in choices:
        raise ValidationError(f"{name} must be one of {', '.join(choices)}, got {value!r}")
    return value


def validate_dims(embed_dim: int, heads: int, tokens: Optional[int] = None) -> None:
    """
    Validate transformer dimensions.

    Raises:
        ValidationError: If the head count does not divide the embedding size
    """
    if embed_dim < 1:
        raise ValidationError(f"embed_dim must be positive, got {embed_dim}")
    if heads < 1:
        raise ValidationError(f"heads must be at least 1, got {heads}")
    if embed_dim % heads != 0:
        raise ValidationError(f"heads ({heads}) must divide embed_dim ({embed_dim})")
    if tokens is not None and tokens < 1:
        raise ValidationError(f"tokens must be positive, got {tokens}")
