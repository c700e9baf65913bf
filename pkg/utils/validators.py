"""
Input Validation for LatentForge
Validates command-line values: presets, ranges, layer widths and paths
"""
from pathlib import Path
from typing import Any, Sequence, Tuple, Union

from core.exceptions import DataError, ValidationError

DATASET_PRESETS = ('cards-i', 'cards-ii', 'cards-iii', 'cards-iv', 'rotated-mnist', 'honeycomb')


def validate_preset(name: str) -> str:
    """
    Validate and normalize a dataset preset name

    Raises:
        ValidationError: If the preset is unknown
    """
    if not name:
        raise ValidationError("Preset name cannot be empty")

    name = str(name).strip().lower()
    if name not in DATASET_PRESETS:
        raise ValidationError(f"Unknown preset '{name}'. Must be one of {list(DATASET_PRESETS)}")

    return name


def validate_hidden(spec: Union[str, Sequence[int]]) -> Tuple[int, ...]:
    """
    Parse hidden layer widths such as '256,256'

    Returns:
        tuple: Layer widths

    Raises:
        ValidationError: If any width is not a positive integer
    """
    if isinstance(spec, str):
        parts = [p for p in spec.replace(' ', '').split(',') if p]
    else:
        parts = list(spec)

    try:
        widths = tuple(int(p) for p in parts)
    except (TypeError, ValueError):
        raise ValidationError(f"Hidden widths must be integers, got '{spec}'")

    if any(w < 1 for w in widths):
        raise ValidationError(f"Hidden widths must be positive, got {widths}")

    return widths


def validate_range(lo: Any, hi: Any) -> Tuple[float, float]:
    """
    Validate a sweep range

    Raises:
        ValidationError: If lo >= hi or either end is not numeric
    """
    lo = validate_numerical_input(lo)
    hi = validate_numerical_input(hi)

    if not lo < hi:
        raise ValidationError(f"Range [{lo}, {hi}] must satisfy lo < hi")

    return lo, hi


def validate_numerical_input(
    value: Any,
    min_value: float = None,
    max_value: float = None,
    allow_none: bool = False
) -> float:
    """
    Validate numerical input with optional bounds

    Args:
        value: Value to validate
        min_value: Minimum allowed value
        max_value: Maximum allowed value
        allow_none: Whether to allow None values

    Returns:
        float: Validated value

    Raises:
        ValidationError: If value is invalid
    """
    if value is None:
        if allow_none:
            return None
        raise ValidationError("Value cannot be None")

    try:
        num_value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"Value must be numeric, got {type(value)}")

    if min_value is not None and num_value < min_value:
        raise ValidationError(f"Value {num_value} must be >= {min_value}")

    if max_value is not None and num_value > max_value:
        raise ValidationError(f"Value {num_value} must be <= {max_value}")

    return num_value


def validate_existing_file(path: Union[str, Path], what: str = "File") -> Path:
    """
    Check that an input file exists

    Raises:
        ValidationError: If no path is given
        DataError: If the path does not name a file
    """
    if not path:
        raise ValidationError(f"{what} path cannot be empty")

    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")

    return path
