"""Input validation helpers shared by the estimators and free functions.

scikit-learn's ``check_array`` rejects complex input, so the complex-valued
paths go through these instead.
"""
from __future__ import annotations

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def check_power_of_two(n, name: str = "size") -> int:
    if int(n) != n or not is_power_of_two(int(n)):
        raise ValueError(f"{name} must be a power of two, got {n!r}")
    return int(n)


def check_complex_vector(y, name: str = "y", length: int | None = None) -> np.ndarray:
    """Return ``y`` as a 1-D complex128 array, validating shape and finiteness."""
    arr = np.asarray(y, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_sign_matrix(q, name: str = "sensing matrix", n_cols: int | None = None) -> np.ndarray:
    """Return ``q`` as a 2-D int8 array whose entries are all +1 or -1."""
    arr = np.asarray(q)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isin(arr, (-1, 1))):
        raise ValueError(f"{name} entries must be +1 or -1")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ValueError(f"{name} has {arr.shape[1]} columns, expected {n_cols}")
    return arr.astype(np.int8)


def check_bits(beta, length: int | None = None) -> np.ndarray:
    arr = np.asarray(beta)
    if arr.ndim != 1:
        raise ValueError(f"phase bits must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isin(arr, (0, 1))):
        raise ValueError("phase bits must be 0 or 1")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"phase bit vector has length {arr.shape[0]}, expected {length}")
    return arr.astype(np.uint8)


def check_nonnegative(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def check_fraction(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def round_half_away(x):
    """Round to nearest integer, ties away from zero (platform independent)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
