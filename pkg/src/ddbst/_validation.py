"""Input validation helpers shared by every module.

All public entry points funnel raw arrays through these checks, in the
spirit of ``sklearn.utils.check_array``: they return validated objects and
raise instead of repairing bad input.
"""

from __future__ import annotations

import numbers

import numpy as np

# Algebraic identities are held to ATOL_ALGEBRAIC; quantities assembled from
# statistical or long floating sums to ATOL_STATISTICAL.
ATOL_HERMITIAN = 1e-12
ATOL_TRACE = 1e-10
ATOL_PSD = 1e-10
ATOL_ALGEBRAIC = 1e-10
ATOL_STATISTICAL = 1e-8

MAX_DIM = 4096


class InvariantViolation(ValueError):
    """Raised when an object breaks one of its documented invariants."""


def check_dim(d, *, max_dim: int | None = None) -> int:
    """Validate a Hilbert-space dimension and return it as ``int``."""
    if isinstance(d, bool) or not isinstance(d, numbers.Integral):
        raise TypeError(f"dimension must be an integer, got {type(d).__name__}")
    d = int(d)
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got {d}")
    cap = MAX_DIM if max_dim is None else max_dim
    if d > cap:
        raise ValueError(f"dimension {d} exceeds the configured cap {cap}")
    return d


def check_square(a, *, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite square complex128 array."""
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_hermitian(a, *, name: str = "matrix", atol: float = ATOL_HERMITIAN) -> np.ndarray:
    arr = check_square(a, name=name)
    dev = np.max(np.abs(arr - arr.conj().T))
    if dev > atol:
        raise InvariantViolation(f"{name} is not Hermitian (max deviation {dev:.3e})")
    return arr


def check_same_dim(a: int, b: int, what: str = "operands") -> None:
    if a != b:
        raise ValueError(f"incompatible {what}: dimension {a} vs {b}")


def check_probability(p, *, name: str = "p", open_interval: bool = False) -> float:
    p = float(p)
    if open_interval:
        ok = 0.0 < p < 1.0
    else:
        ok = 0.0 <= p <= 1.0
    if not ok or np.isnan(p):
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {p}")
    return p


def check_positive_int(x, *, name: str) -> int:
    if isinstance(x, bool) or not isinstance(x, numbers.Integral) or x < 1:
        raise ValueError(f"{name} must be a positive integer, got {x!r}")
    return int(x)
