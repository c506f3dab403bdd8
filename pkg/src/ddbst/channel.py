"""The DDB measurement channel, its inverse, and constant-time single-shot estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import ATOL_TRACE, InvariantViolation, check_dim, check_hermitian, check_square
from .ensemble import SnapshotId, SnapshotKind, decode_codes, snapshot_projector
from .linalg import DensityMatrix, HermitianObservable

__all__ = [
    "ObservableEntryAccessor",
    "SingleShotEstimate",
    "channel_apply",
    "inverse_channel_apply",
    "inverse_snapshot_dense",
    "single_shot_estimate",
    "single_shot_values",
]


def _mat(x) -> np.ndarray:
    if isinstance(x, (DensityMatrix, HermitianObservable)):
        return x.matrix
    return check_square(x)


def channel_apply(rho) -> np.ndarray:
    """``M(rho) = [rho + tr(rho) I + (d - 1) diag(rho)] / (2d)``."""
    r = _mat(rho)
    d = r.shape[0]
    out = r + np.trace(r) * np.eye(d)
    out[np.diag_indices(d)] += (d - 1) * r.diagonal()
    return out / (2 * d)


def inverse_channel_apply(x) -> np.ndarray:
    """``M^-1(X) = 2d [X - (d-1)/d diag(X)] - tr(X) I / d``."""
    x = _mat(x)
    d = x.shape[0]
    out = 2 * d * x
    out[np.diag_indices(d)] -= 2 * (d - 1) * x.diagonal()
    out[np.diag_indices(d)] -= np.trace(x) / d
    return out


def inverse_snapshot_dense(s: SnapshotId, d: int) -> np.ndarray:
    """Dense ``M^-1(s)`` from the closed forms (testing aid)."""
    d = check_dim(d)
    s.check(d)
    out = -np.eye(d, dtype=np.complex128) / d
    if s.kind is SnapshotKind.COMP:
        out[s.j, s.j] += 2.0
        return out
    m, n = s.j, s.k
    out[m, m] += 1.0
    out[n, n] += 1.0
    if s.kind is SnapshotKind.REAL_PLUS:
        out[m, n] += d
        out[n, m] += d
    elif s.kind is SnapshotKind.REAL_MINUS:
        out[m, n] -= d
        out[n, m] -= d
    elif s.kind is SnapshotKind.IMAG_PLUS:
        out[n, m] += 1j * d
        out[m, n] -= 1j * d
    else:
        out[n, m] -= 1j * d
        out[m, n] += 1j * d
    return out


class ObservableEntryAccessor:
    """O(1) access to the entries ``O_mn`` and the known trace of an observable.

    Use :meth:`from_dense` for a materialised matrix, or :meth:`from_function`
    when entries are computed on demand so ``O`` never needs to be stored.

    Parameters
    ----------
    dim : int
        Hilbert-space dimension.
    entry_fn : callable
        ``entry_fn(rows, cols)`` returning the complex entries for integer
        index arrays of equal shape.
    trace : float
        ``tr(O)``; it is trusted as given for function-backed accessors.
    diag : ndarray, optional
        Cached real diagonal; lets the estimator skip two lookups per shot.
    hs_norm_sq : float, optional
        ``tr(O^2)`` when known, used for shot planning and error bounds.
    """

    def __init__(self, dim: int, entry_fn: Callable, trace: float, *,
                 diag: np.ndarray | None = None, hs_norm_sq: float | None = None):
        self.dim = check_dim(dim)
        self._fn = entry_fn
        self.trace = float(trace)
        self.diag = None if diag is None else np.asarray(diag, dtype=np.float64)
        self.hs_norm_sq = None if hs_norm_sq is None else float(hs_norm_sq)
        # per-shot constants, computed once
        self.shift = self.trace / self.dim
        self.two_d = 2.0 * self.dim
        self.matrix: np.ndarray | None = None

    @classmethod
    def from_dense(cls, o) -> "ObservableEntryAccessor":
        if isinstance(o, HermitianObservable):
            mat = o.matrix
        else:
            mat = check_hermitian(o, name="observable")
        diag = mat.diagonal().real.copy()
        tr = float(diag.sum())
        if abs(np.trace(mat) - tr) > ATOL_TRACE:
            raise InvariantViolation("observable trace inconsistent with its diagonal")

        def fn(rows, cols, _m=mat):
            return _m[rows, cols]

        acc = cls(mat.shape[0], fn, tr, diag=diag,
                  hs_norm_sq=float(np.sum(np.abs(mat) ** 2)))
        acc.matrix = mat
        return acc

    @classmethod
    def from_function(cls, dim: int, fn: Callable, trace: float, *, vectorized: bool = True,
                      hs_norm_sq: float | None = None) -> "ObservableEntryAccessor":
        if not vectorized:
            scalar = fn

            def fn(rows, cols):
                rows, cols = np.broadcast_arrays(rows, cols)
                out = np.empty(rows.shape, dtype=np.complex128)
                for idx in np.ndindex(rows.shape):
                    out[idx] = scalar(int(rows[idx]), int(cols[idx]))
                return out

        return cls(dim, fn, trace, hs_norm_sq=hs_norm_sq)

    def entry(self, m: int, n: int) -> complex:
        if not (0 <= m < self.dim and 0 <= n < self.dim):
            raise IndexError(f"entry ({m}, {n}) outside a {self.dim}-dimensional observable")
        return complex(np.asarray(self._fn(np.array([m]), np.array([n])))[0])

    def entries(self, rows, cols) -> np.ndarray:
        return np.asarray(self._fn(np.asarray(rows), np.asarray(cols)), dtype=np.complex128)

    def diagonal(self, idx) -> np.ndarray:
        if self.diag is not None:
            return self.diag[idx]
        idx = np.asarray(idx)
        return self.entries(idx, idx).real

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        i, j = np.indices((self.dim, self.dim))
        return self.entries(i, j)


@dataclass(frozen=True)
class SingleShotEstimate:
    value: float
    snapshot: SnapshotId
    ops_count: int


def single_shot_estimate(s: SnapshotId, o: ObservableEntryAccessor) -> SingleShotEstimate:
    """``tr(M^-1(s) O)`` from at most three entries of ``O``.

    ``ops_count`` tallies the floating-point operations done for this shot;
    ``2d`` and ``tr(O)/d`` are per-observable constants held by the accessor.
    """
    s.check(o.dim)
    if s.kind is SnapshotKind.COMP:
        val = 2.0 * o.entry(s.j, s.j).real - o.shift
        return SingleShotEstimate(val, s, 2)
    m, n = s.j, s.k
    omn = o.entry(m, n)
    diag = o.entry(m, m).real + o.entry(n, n).real
    if s.kind is SnapshotKind.REAL_PLUS:
        off = o.two_d * omn.real
    elif s.kind is SnapshotKind.REAL_MINUS:
        off = -o.two_d * omn.real
    elif s.kind is SnapshotKind.IMAG_PLUS:
        off = -o.two_d * omn.imag
    else:
        off = o.two_d * omn.imag
    # sign flips are free; add, mul, add, sub
    return SingleShotEstimate(diag + off - o.shift, s, 4)


# coefficient on Re(O_mn) and Im(O_mn) per kind, times 2d
_RE_COEF = np.array([0.0, 1.0, -1.0, 0.0, 0.0])
_IM_COEF = np.array([0.0, 0.0, 0.0, -1.0, 1.0])


def single_shot_values(codes, o: ObservableEntryAccessor) -> np.ndarray:
    """Vectorised :func:`single_shot_estimate` over snapshot codes."""
    kind, m, n = decode_codes(codes, o.dim)
    out = o.diagonal(m) + o.diagonal(n) - o.shift
    pair = kind > 0
    if np.any(pair):
        omn = o.entries(m[pair], n[pair])
        k = kind[pair]
        out[pair] += o.two_d * (_RE_COEF[k] * omn.real + _IM_COEF[k] * omn.imag)
    return out


def dense_shadow_value(s: SnapshotId, o) -> float:
    """Reference ``tr(M^-1(P_s) O)`` by dense matrix algebra."""
    mat = _mat(o)
    d = mat.shape[0]
    return float(np.sum(inverse_channel_apply(snapshot_projector(s, d)) * mat.T).real)
