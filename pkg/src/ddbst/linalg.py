"""Dense matrix foundation: state/observable types, samplers and noise models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    ATOL_PSD,
    ATOL_TRACE,
    InvariantViolation,
    check_dim,
    check_hermitian,
    check_probability,
    check_same_dim,
    check_square,
)

__all__ = [
    "DensityMatrix",
    "HermitianObservable",
    "random_stream",
    "trace_inner",
    "haar_random_pure",
    "haar_random_unitary",
    "hs_random_mixed",
    "random_observable",
    "depolarize",
    "make_rho_a",
    "check_density_matrix",
    "check_observable",
]


def random_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream_id)``.

    The stream id goes into the ``SeedSequence`` spawn key, so distinct ids give
    statistically independent streams while equal pairs replay bit-identically.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(int(stream_id) & (2**64 - 1),))
    return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated ``d x d`` density matrix (Hermitian, unit trace, PSD)."""

    matrix: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.validate:
            arr = check_hermitian(self.matrix, name="density matrix")
            tr = np.trace(arr).real
            if abs(tr - 1.0) > ATOL_TRACE:
                raise InvariantViolation(f"density matrix trace is {tr!r}, expected 1")
            lam = np.linalg.eigvalsh(arr)[0]
            if lam < -ATOL_PSD:
                raise InvariantViolation(f"density matrix is not PSD (min eigenvalue {lam:.3e})")
        else:
            arr = np.asarray(self.matrix, dtype=np.complex128)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "matrix", arr)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @classmethod
    def from_vector(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=np.complex128).ravel()
        nrm = np.linalg.norm(psi)
        if not np.isfinite(nrm) or nrm == 0:
            raise ValueError("state vector has zero or non-finite norm")
        if abs(nrm - 1.0) > 1e-10:
            raise InvariantViolation(f"state vector norm is {nrm!r}, expected 1")
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, d: int) -> "DensityMatrix":
        d = check_dim(d)
        return cls(np.eye(d, dtype=np.complex128) / d, validate=False)


@dataclass(frozen=True, eq=False)
class HermitianObservable:
    """A validated Hermitian observable with cached ``tr(O)`` and ``tr(O^2)``."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = check_hermitian(self.matrix, name="observable").copy()
        # Exact Hermitian symmetrisation; the check above bounds the change.
        arr = 0.5 * (arr + arr.conj().T)
        arr.setflags(write=False)
        object.__setattr__(self, "matrix", arr)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @property
    def hs_norm_sq(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    def traceless_part(self) -> np.ndarray:
        """``O_0 = O - tr(O) I / d``."""
        d = self.dim
        return self.matrix - (self.trace / d) * np.eye(d)

    def traceless_hs_norm_sq(self) -> float:
        d = self.dim
        return max(self.hs_norm_sq - self.trace**2 / d, 0.0)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def check_density_matrix(rho) -> DensityMatrix:
    """Coerce ``rho`` to :class:`DensityMatrix`, validating raw arrays."""
    if isinstance(rho, DensityMatrix):
        return rho
    return DensityMatrix(np.asarray(rho))


def check_observable(o) -> HermitianObservable:
    if isinstance(o, HermitianObservable):
        return o
    return HermitianObservable(np.asarray(o))


def _raw(x) -> np.ndarray:
    if isinstance(x, (DensityMatrix, HermitianObservable)):
        return x.matrix
    return check_square(x)


def trace_inner(a, b) -> complex:
    """``tr(AB) = sum_jk a_jk b_kj`` for two square matrices of equal size.

    When ``b`` is a validated Hermitian type, ``b_kj = conj(b_jk)`` and the
    sum runs over contiguous memory instead of a strided transpose.
    """
    hermitian_b = isinstance(b, (DensityMatrix, HermitianObservable))
    a, b = _raw(a), _raw(b)
    check_same_dim(a.shape[0], b.shape[0])
    if hermitian_b:
        return complex(np.vdot(b, a))
    return complex(np.sum(a * b.T))


def haar_random_pure(d: int, rng) -> DensityMatrix:
    """Rank-one state ``|psi><psi|`` with ``|psi>`` Haar distributed.

    A normalised complex Gaussian vector is exactly Haar on the unit sphere.
    """
    d = check_dim(d)
    rng = _as_generator(rng)
    psi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    psi /= np.linalg.norm(psi)
    return DensityMatrix(np.outer(psi, psi.conj()), validate=False)


def haar_random_unitary(d: int, rng) -> np.ndarray:
    """Haar unitary from the QR factorisation of a Ginibre matrix.

    The phases of ``diag(R)`` are divided out so the law is exactly Haar
    rather than biased by the QR sign convention.
    """
    d = check_dim(d)
    rng = _as_generator(rng)
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph


def hs_random_mixed(d: int, rng) -> DensityMatrix:
    """Density matrix from the Hilbert-Schmidt measure, ``G G^dag / tr(G G^dag)``."""
    d = check_dim(d)
    rng = _as_generator(rng)
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    w = g @ g.conj().T
    w = 0.5 * (w + w.conj().T)
    return DensityMatrix(w / np.trace(w).real, validate=False)


def random_observable(d: int, rng, *, hs_norm_sq: float = 1.0, traceless: bool = False,
                      offdiagonal: bool = False) -> HermitianObservable:
    """Random Hermitian observable rescaled so that ``tr(O^2) = hs_norm_sq``.

    ``offdiagonal=True`` zeroes the diagonal (hence also traceless).
    """
    d = check_dim(d)
    rng = _as_generator(rng)
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = 0.5 * (g + g.conj().T)
    if offdiagonal:
        np.fill_diagonal(h, 0.0)
    elif traceless:
        h -= np.trace(h).real / d * np.eye(d)
    nrm = np.sum(np.abs(h) ** 2)
    if hs_norm_sq > 0:
        h *= np.sqrt(hs_norm_sq / nrm)
    else:
        h[:] = 0.0
    return HermitianObservable(h)


def depolarize(rho, p: float) -> DensityMatrix:
    """Depolarising channel ``(1 - p) rho + p I / d``."""
    p = check_probability(p, name="p")
    rho = check_density_matrix(rho)
    d = rho.dim
    out = (1.0 - p) * rho.matrix + p * np.eye(d) / d
    return DensityMatrix(out, validate=False)


def make_rho_a(d: int, offdiag_bound: float, rng, *, max_tries: int = 100) -> DensityMatrix:
    """Sample ``I/d + sum_{j != k} rho_jk |j><k|`` with ``|rho_jk| < offdiag_bound``.

    Off-diagonals are drawn uniformly in the open disc of radius
    ``offdiag_bound``; samples that are not PSD are redrawn up to
    ``max_tries`` times.
    """
    d = check_dim(d)
    if offdiag_bound < 0:
        raise ValueError("offdiag_bound must be non-negative")
    rng = _as_generator(rng)
    base = np.eye(d, dtype=np.complex128) / d
    if offdiag_bound == 0:
        return DensityMatrix(base, validate=False)
    iu = np.triu_indices(d, 1)
    for _ in range(max_tries):
        # U in [0, 1) keeps the radius strictly below the bound
        rad = offdiag_bound * np.sqrt(rng.random(iu[0].size))
        phase = np.exp(2j * np.pi * rng.random(iu[0].size))
        m = base.copy()
        m[iu] = rad * phase
        m[iu[1], iu[0]] = np.conj(m[iu])
        if np.linalg.eigvalsh(m)[0] >= -ATOL_PSD:
            return DensityMatrix(m, validate=False)
    raise InvariantViolation(
        f"no PSD rho_A sample within {max_tries} tries (d={d}, bound={offdiag_bound}); "
        "lower offdiag_bound")
