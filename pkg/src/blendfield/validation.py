"""Input validation helpers, in the spirit of sklearn's check_array.

Every public entry point funnels array-like inputs through these so error
messages name the offending field instead of surfacing numpy internals.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError


def as_float_array(x, name: str, dtype=np.float32) -> np.ndarray:
    """Convert to a contiguous float array, rejecting non-finite entries."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_coefficients(w, k: int, name: str = "coefficients") -> np.ndarray:
    """Validate an expression coefficient vector of length k.

    No range restriction is applied: out-of-range coefficients are legal
    (extrapolation is allowed, if visually risky) and callers that care
    report them instead of rejecting.
    """
    arr = as_float_array(w, name)
    if arr.ndim != 1 or arr.shape[0] != k:
        raise ShapeError(f"{name} must have length {k}, got shape {arr.shape}")
    return arr


def check_coefficient_rows(rows, k: int, name: str = "coefficients") -> np.ndarray:
    """Validate a (n, k) stack of coefficient vectors."""
    arr = as_float_array(rows, name)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != k:
        raise ShapeError(f"{name} must be (n, {k}), got shape {arr.shape}")
    return arr


def check_point3(x, name: str = "point") -> np.ndarray:
    arr = as_float_array(x, name, dtype=np.float64)
    if arr.shape != (3,):
        raise ShapeError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


def check_unit_vector(d, name: str = "direction", tol: float = 1e-3):
    """Return a unit 3-vector; normalize quietly within tol, reject beyond."""
    arr = as_float_array(d, name, dtype=np.float64)
    if arr.shape != (3,):
        raise ShapeError(f"{name} must be a 3-vector, got shape {arr.shape}")
    n = float(np.linalg.norm(arr))
    if abs(n - 1.0) > tol:
        raise DomainError(f"{name} is not unit length (|d| = {n:.6f})")
    return arr / n


def check_box(box, name: str = "bounding_box") -> np.ndarray:
    """Validate an axis-aligned box given as (min_xyz, max_xyz)."""
    arr = as_float_array(box, name, dtype=np.float64).reshape(2, 3)
    if not np.all(arr[1] > arr[0]):
        raise DomainError(f"{name} must have positive extent on every axis")
    return arr


def check_rotation(rot, name: str = "rotation", tol: float = 1e-5) -> np.ndarray:
    arr = as_float_array(rot, name, dtype=np.float64)
    if arr.shape != (3, 3):
        raise ShapeError(f"{name} must be 3x3, got shape {arr.shape}")
    err = float(np.abs(arr @ arr.T - np.eye(3)).max())
    if err > tol:
        raise DomainError(f"{name} is not orthonormal (max deviation {err:.2e})")
    return arr


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) float image in [0, 1]."""
    arr = as_float_array(img, name)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must be (H, W, 3), got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str):
    if a.shape != b.shape:
        raise ShapeError(
            f"{name_a} and {name_b} must have identical shapes, "
            f"got {a.shape} vs {b.shape}"
        )
