"""
Shared validation utilities and the package exception hierarchy.

Provides common validation functions for:
- Probabilities and probability vectors
- Row-stochastic matrices
- Required keys in JSON documents
- Standardized error messages
"""

from typing import Any, Dict, List, Optional, Sequence

import numpy as np


class EecapError(Exception):
    """Base class for all errors raised by eecap."""


class DomainError(EecapError, ValueError):
    """An input violates a model, policy or chain invariant."""


class PolicyError(DomainError):
    """Policy dimensions or zero-energy constraints do not match the model."""


class ChainError(DomainError):
    """A transition matrix or state reference is invalid."""


class RateError(DomainError):
    """A codebook rate exceeds its per-state entropy."""


class ConvergenceError(EecapError, RuntimeError):
    """An iterative computation stopped at its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


def standardize_error_message(
    error_type: str,
    field_name: str,
    details: Optional[str] = None
) -> str:
    """Generate standardized error messages.

    Args:
        error_type: Type of error (e.g., "missing", "invalid", "out_of_range")
        field_name: Name of the field
        details: Additional details (optional)

    Returns:
        Standardized error message string
    """
    error_templates = {
        "missing": f"Required field '{field_name}' is missing",
        "invalid": f"Invalid value for '{field_name}'",
        "out_of_range": f"Value for '{field_name}' is out of allowed range",
        "type_error": f"'{field_name}' has incorrect type",
        "dimension": f"'{field_name}' has incorrect dimensions",
        "constraint": f"'{field_name}' violates a zero-energy constraint",
        "not_stochastic": f"'{field_name}' is not stochastic",
    }

    base_message = error_templates.get(error_type, f"Error with '{field_name}'")

    if details:
        return f"{base_message}: {details}"

    return base_message


def validate_probability(value: Any, field_name: str) -> Dict[str, Any]:
    """Validate a single probability.

    Args:
        value: Value to validate
        field_name: Name of the field (for error messages)

    Returns:
        Dict with:
        - valid: bool
        - error: str (if invalid)
        - normalized_value: float (if valid)
    """
    if isinstance(value, bool):
        return {
            "valid": False,
            "error": standardize_error_message("type_error", field_name, "booleans are not probabilities"),
        }
    try:
        num_value = float(value)
    except (ValueError, TypeError):
        return {
            "valid": False,
            "error": standardize_error_message("type_error", field_name, f"got {value!r}"),
        }

    if np.isnan(num_value):
        return {
            "valid": False,
            "error": standardize_error_message("invalid", field_name, "NaN is not a probability"),
        }

    if not 0.0 <= num_value <= 1.0:
        return {
            "valid": False,
            "error": standardize_error_message("out_of_range", field_name, f"{num_value} not in [0, 1]"),
        }

    return {
        "valid": True,
        "normalized_value": num_value,
    }


def require_probability(value: Any, field_name: str) -> float:
    """Return ``value`` as a float probability or raise ``ValueError``."""
    result = validate_probability(value, field_name)
    if not result["valid"]:
        raise ValueError(result["error"])
    return result["normalized_value"]


def validate_distribution(
    values: Sequence[float],
    field_name: str,
    tol: float = 1e-12,
) -> Dict[str, Any]:
    """Validate that ``values`` is a probability vector summing to one within ``tol``."""
    errors: List[str] = []
    for k, v in enumerate(values):
        result = validate_probability(v, f"{field_name}[{k}]")
        if not result["valid"]:
            errors.append(result["error"])
    if errors:
        return {"valid": False, "errors": errors}

    total = float(np.sum(values))
    if abs(total - 1.0) > tol:
        return {
            "valid": False,
            "errors": [standardize_error_message("not_stochastic", field_name, f"sums to {total!r}")],
        }
    return {"valid": True, "errors": []}


def validate_stochastic_rows(matrix: np.ndarray, field_name: str, tol: float) -> Dict[str, Any]:
    """Check that ``matrix`` is square, non-negative and row-stochastic within ``tol``."""
    errors: List[str] = []
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        errors.append(standardize_error_message("dimension", field_name, f"shape {matrix.shape}"))
        return {"valid": False, "errors": errors}
    if not np.all(np.isfinite(matrix)):
        errors.append(standardize_error_message("invalid", field_name, "non-finite entries"))
    elif matrix.min() < -tol:
        errors.append(standardize_error_message("not_stochastic", field_name, "negative entries"))
    else:
        deviation = np.abs(matrix.sum(axis=1) - 1.0)
        worst = int(np.argmax(deviation)) if deviation.size else 0
        if deviation.size and deviation[worst] > tol:
            errors.append(
                standardize_error_message(
                    "not_stochastic", field_name,
                    f"row {worst} sums to {1.0 + deviation[worst]:.12g}",
                )
            )
    return {"valid": not errors, "errors": errors}


def validate_required_fields(
    data: Dict[str, Any],
    required_fields: List[str],
    context: str = "input"
) -> Dict[str, Any]:
    """Validate that all required fields are present in structured input.

    Args:
        data: Dictionary to validate
        required_fields: List of required field names
        context: Context description (for error messages)

    Returns:
        Dict with:
        - valid: bool
        - errors: List[str] (missing fields)
    """
    if not isinstance(data, dict):
        return {
            "valid": False,
            "errors": [f"{context} must be a JSON object, got: {type(data).__name__}"],
        }

    errors = [
        standardize_error_message("missing", field, f"in {context}")
        for field in required_fields
        if field not in data
    ]
    return {
        "valid": len(errors) == 0,
        "errors": errors,
    }
