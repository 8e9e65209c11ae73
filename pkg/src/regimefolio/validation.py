"""Input validation helpers used throughout the estimator layer."""

from __future__ import annotations

import numpy as np

from .errors import DataError, NumericalError


def as_float_array(x, name: str = "array", ndim: int | None = None) -> np.ndarray:
    """Convert to a C-contiguous float64 array and check finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains non-finite entries")
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_square(S: np.ndarray, name: str = "matrix") -> np.ndarray:
    S = as_float_array(S, name, ndim=2)
    if S.shape[0] != S.shape[1]:
        raise DataError(f"{name} must be square, got shape {S.shape}")
    return S


def check_symmetric(S, tol: float = 1e-8, name: str = "matrix") -> np.ndarray:
    """Check symmetry within `tol` (scaled by the matrix magnitude), return (S+S')/2."""
    S = check_square(S, name)
    scale = max(1.0, float(np.abs(S).max())) if S.size else 1.0
    if np.abs(S - S.T).max(initial=0.0) > tol * scale:
        raise NumericalError(f"{name} is not symmetric within tolerance {tol}")
    return 0.5 * (S + S.T)


def check_simplex(p, tol: float = 1e-8, name: str = "probabilities") -> np.ndarray:
    p = as_float_array(p, name, ndim=1)
    if p.min(initial=0.0) < -tol:
        raise DataError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise DataError(f"{name} does not sum to 1 (sum={p.sum():.3e})")
    return p


def check_matching_dim(a: np.ndarray, b: np.ndarray, name: str = "inputs") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DataError(f"{name} dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
