"""Small argument checkers shared by the estimators and functional API."""

from __future__ import annotations

import math
from numbers import Integral, Real

import numpy as np

from .exceptions import ParameterError


def check_positive(value, name: str) -> float:
    if not isinstance(value, Real) or not math.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


def check_non_negative(value, name: str, allow_inf: bool = False) -> float:
    if not isinstance(value, Real) or math.isnan(value) or value < 0:
        raise ParameterError(f"{name} must be >= 0, got {value!r}")
    if math.isinf(value) and not allow_inf:
        raise ParameterError(f"{name} must be finite, got {value!r}")
    return float(value)


def check_int(value, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_image(array, name: str = "image", shape: tuple[int, int] | None = None) -> np.ndarray:
    """Return ``array`` as a finite 2-D float64 array, optionally checking its shape."""
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ParameterError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, Integral) or not 0 <= seed < 2**64:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)
