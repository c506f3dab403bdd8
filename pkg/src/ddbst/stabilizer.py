"""Affine-form stabilizer states and block-reduced DDB estimation.

A state of rank ``r`` on ``n`` qubits is a uniform superposition over the
affine subspace ``{R u + t}`` with fourth-root-of-unity phases. Bit vectors
are read MSB first: qubit 0 is the most significant bit of an index.

An invertible affine index map sends the support onto the last ``r`` qubits,
so the state becomes ``|0...0> (x) |Phi_r>``. Estimating ``tr(|Psi><Psi| O)``
then needs only an ``r``-qubit DDB shadow and on-demand entries of ``O``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import ATOL_ALGEBRAIC, InvariantViolation
from .channel import ObservableEntryAccessor, single_shot_values
from .ensemble import SnapshotId, all_overlaps, build_ensemble, decode
from .estimator import EstimationConfig, aggregate, as_accessor, plan_shots, simulate_shots
from .linalg import DensityMatrix

__all__ = [
    "AffineStabilizerState",
    "AffineIndexMap",
    "StabilizerEstimateReport",
    "OverlapAudit",
    "L2_MODES",
    "amplitudes",
    "random_affine_stabilizer",
    "max_ddb_overlap",
    "overlap_audit",
    "reduce_to_block",
    "conjugated_entry",
    "block_accessor",
    "l2_exact",
    "block_reduction_check",
    "plan_stabilizer_shots",
    "stabilizer_estimate",
    "gf2_rank",
    "gf2_inverse",
]

DEFAULT_CAP = 12
L2_MODES = ("neglect", "exact", "bound_report")
_PHASES = ("1", "i", "-1", "-i")


# --------------------------------------------------------------------- GF(2)

def _bin(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("binary matrix entries must be 0 or 1")
    return arr.astype(np.uint8)


def _echelon(a: np.ndarray) -> tuple[np.ndarray, list[int]]:
    m = a.copy()
    rows, cols = m.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        hit = np.flatnonzero(m[r:, c])
        if hit.size == 0:
            continue
        p = r + hit[0]
        if p != r:
            m[[r, p]] = m[[p, r]]
        below = np.flatnonzero(m[:, c])
        below = below[below != r]
        m[below] ^= m[r]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    return m, pivots


def gf2_rank(a) -> int:
    a = _bin(a)
    if a.size == 0:
        return 0
    return len(_echelon(a)[1])


def gf2_inverse(a) -> np.ndarray:
    """Inverse of a square binary matrix; raises if singular."""
    a = _bin(a)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    red, piv = _echelon(np.hstack([a, np.eye(n, dtype=np.uint8)]))
    if piv[:n] != list(range(n)):
        raise InvariantViolation("binary matrix is singular")
    return red[:, n:].copy()


def _extend_to_basis(R: np.ndarray) -> np.ndarray:
    """Append unit columns to ``R`` until it spans the whole space."""
    n, r = R.shape
    cols = [R[:, i] for i in range(r)]
    rank = r
    for q in range(n):
        if rank == n:
            break
        e = np.zeros(n, dtype=np.uint8)
        e[q] = 1
        if gf2_rank(np.column_stack(cols + [e])) > rank:
            cols.append(e)
            rank += 1
    return np.column_stack(cols) if cols else np.zeros((n, 0), dtype=np.uint8)


def _bits(x, n: int) -> np.ndarray:
    """Integers to MSB-first bit rows, shape ``x.shape + (n,)``."""
    x = np.asarray(x, dtype=np.int64)
    return ((x[..., None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)


def _ints(bits: np.ndarray) -> np.ndarray:
    n = bits.shape[-1]
    return bits.astype(np.int64) @ (np.int64(1) << np.arange(n - 1, -1, -1, dtype=np.int64))


# ------------------------------------------------------------------- states

@dataclass(frozen=True, eq=False)
class AffineStabilizerState:
    """``global_phase * i^(lin.u + 2 u^T quad u) / sqrt(2^r)`` at index ``R u + t``.

    Parameters
    ----------
    R : (n, r) binary array of full column rank
    t : (n,) binary array
    lin : (r,) integers mod 4
    quad : (r, r) strictly upper-triangular binary array
    global_phase : int
        Power of ``i``, taken mod 4.
    """

    R: np.ndarray
    t: np.ndarray
    lin: np.ndarray
    quad: np.ndarray
    global_phase: int = 0
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        R = _bin(self.R)
        if R.ndim != 2:
            R = R.reshape(len(np.asarray(self.t)), -1)
        n, r = R.shape
        t = _bin(self.t).reshape(n)
        lin = (np.asarray(self.lin, dtype=np.int64) % 4).reshape(r)
        quad = _bin(self.quad).reshape(r, r)
        for name, val in (("R", R), ("t", t), ("lin", lin), ("quad", quad)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "global_phase", int(self.global_phase) % 4)
        if self.validate:
            self.check()

    def check(self) -> None:
        if np.any(np.tril(self.quad)):
            raise InvariantViolation("quad must be strictly upper triangular")
        if gf2_rank(self.R) != self.r:
            raise InvariantViolation(f"R has GF(2) rank below its {self.r} columns")

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def r(self) -> int:
        return self.R.shape[1]

    def phases(self) -> np.ndarray:
        """Exponent of ``i`` for every ``u`` in ``0..2^r-1``."""
        U = _bits(np.arange(2**self.r), self.r).astype(np.int64)
        q = U @ self.lin + 2 * np.sum((U @ self.quad) * U, axis=1)
        return (q + self.global_phase) % 4

    def support(self) -> np.ndarray:
        """Indices ``R u + t`` ordered by ``u``."""
        U = _bits(np.arange(2**self.r), self.r)
        return _ints((U.astype(np.int64) @ self.R.T.astype(np.int64) + self.t) % 2)

    def to_dict(self) -> dict:
        def rows(m):
            return ["".join(map(str, row)) for row in m.tolist()]

        return {
            "n": self.n,
            "r": self.r,
            "R": rows(self.R),
            "t": "".join(map(str, self.t.tolist())),
            "lin": self.lin.tolist(),
            "quad": rows(self.quad),
            "global_phase": _PHASES[self.global_phase],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "AffineStabilizerState":
        n, r = int(data["n"]), int(data["r"])

        def parse(rows, shape):
            out = np.array([[int(ch) for ch in row] for row in rows], dtype=np.uint8)
            return out.reshape(shape)

        phase = data.get("global_phase", "1")
        if phase not in _PHASES:
            raise ValueError(f"global_phase must be one of {_PHASES}")
        return cls(parse(data["R"], (n, r)), parse([data["t"]], (n,)),
                   np.asarray(data["lin"], dtype=np.int64).reshape(r),
                   parse(data["quad"], (r, r)), _PHASES.index(phase))

    @classmethod
    def from_json(cls, text: str) -> "AffineStabilizerState":
        return cls.from_dict(json.loads(text))


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise ValueError(f"n={n} exceeds the dense cap of {cap} qubits")


def amplitudes(psi: AffineStabilizerState, *, cap: int = DEFAULT_CAP) -> np.ndarray:
    _check_cap(psi.n, cap)
    out = np.zeros(2**psi.n, dtype=np.complex128)
    out[psi.support()] = (1j ** psi.phases()) / math.sqrt(2**psi.r)
    return out


def random_affine_stabilizer(n: int, r: int, rng, *, cap: int = DEFAULT_CAP) -> AffineStabilizerState:
    """Uniform ``R`` of full column rank (by rejection), uniform ``t``, phases."""
    if not 0 <= r <= n:
        raise ValueError(f"need 0 <= r <= n, got r={r}, n={n}")
    _check_cap(n, cap)
    while True:
        R = rng.integers(0, 2, size=(n, r), dtype=np.uint8)
        if gf2_rank(R) == r:
            break
    t = rng.integers(0, 2, size=n, dtype=np.uint8)
    lin = rng.integers(0, 4, size=r)
    quad = np.triu(rng.integers(0, 2, size=(r, r), dtype=np.uint8), 1)
    return AffineStabilizerState(R, t, lin, quad, int(rng.integers(0, 4)))


def max_ddb_overlap(psi: AffineStabilizerState, *, cap: int = DEFAULT_CAP) -> tuple[float, SnapshotId]:
    """Largest ``<s|Psi><Psi|s>`` over every DDB snapshot, and where it is attained."""
    a = amplitudes(psi, cap=cap)
    ov = all_overlaps(np.outer(a, a.conj()))
    k = int(np.argmax(ov))
    return float(ov[k]), decode(k, a.size)


@dataclass(frozen=True)
class OverlapAudit:
    max_overlap: float
    snapshot: str
    r: int
    within_one_over: bool
    within_two_over: bool


def overlap_audit(psi: AffineStabilizerState, *, tol: float = ATOL_ALGEBRAIC) -> OverlapAudit:
    """Compare the max overlap with both ``1/2^r`` and ``2/2^r``."""
    m, s = max_ddb_overlap(psi)
    base = 1.0 / 2**psi.r
    return OverlapAudit(m, str(s), psi.r, m <= base + tol, m <= 2 * base + tol)


# --------------------------------------------------------------- reduction

class AffineIndexMap:
    """Bijection ``x -> M x + c`` on ``n``-bit indices, MSB first.

    Both directions cost ``O(n)`` per index: ``M x`` is the XOR of the
    columns of ``M`` selected by the bits of ``x``.
    """

    def __init__(self, M, c):
        self.M = _bin(M)
        n = self.M.shape[0]
        self.c = _bin(c).reshape(n)
        self.n = n
        self.Minv = gf2_inverse(self.M)
        self._cols = _ints(self.M.T)
        self._inv_cols = _ints(self.Minv.T)
        self._c = int(_ints(self.c))
        self._inv_c = int(_ints((self.Minv.astype(np.int64) @ self.c) % 2))

    def _mul(self, cols: np.ndarray, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        out = np.zeros_like(x)
        for q in range(self.n):
            bit = (x >> (self.n - 1 - q)) & 1
            out ^= bit * cols[q]
        return out

    def __call__(self, x):
        y = self._mul(self._cols, x) ^ self._c
        return int(y) if np.ndim(y) == 0 else y

    def inverse(self, y):
        x = self._mul(self._inv_cols, y) ^ self._inv_c
        return int(x) if np.ndim(x) == 0 else x

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.M, np.eye(self.n, dtype=np.uint8)) and not self.c.any())


def reduce_to_block(psi: AffineStabilizerState) -> tuple[AffineIndexMap, AffineStabilizerState]:
    """Index map sending ``R u + t`` to ``(0^(n-r), u)`` and the ``r``-qubit state.

    ``R`` is extended to a basis ``B = [R | E]``; with ``P`` moving the first
    ``r`` coordinates to the end, ``M = P B^-1`` and ``c = M t``.
    """
    n, r = psi.n, psi.r
    if gf2_rank(psi.R) != r:
        raise InvariantViolation("R is rank deficient; cannot reduce")
    B = _extend_to_basis(psi.R)
    Binv = gf2_inverse(B)
    perm = np.r_[np.arange(r, n), np.arange(r)]
    M = Binv[perm]
    c = (M.astype(np.int64) @ psi.t) % 2
    reduced = AffineStabilizerState(np.eye(r, dtype=np.uint8), np.zeros(r, dtype=np.uint8),
                                    psi.lin, psi.quad, psi.global_phase)
    return AffineIndexMap(M, c), reduced


def conjugated_entry(pi: AffineIndexMap, o: ObservableEntryAccessor, i: int, j: int) -> complex:
    """Entry ``(i, j)`` of ``T O T^dagger`` for the permutation ``T`` induced by ``pi``."""
    return o.entry(pi.inverse(int(i)), pi.inverse(int(j)))


def block_accessor(pi: AffineIndexMap, o: ObservableEntryAccessor, r: int, *,
                   trace: float | None = None) -> ObservableEntryAccessor:
    """The top-left ``2^r`` block of ``T O T^dagger`` as a lazy accessor.

    ``trace`` defaults to the true block trace; pass ``0`` to drop the
    ``tr/d`` shift from single-shot values.
    """
    def fn(rows, cols):
        return o.entries(pi.inverse(rows), pi.inverse(cols))

    if trace is None:
        trace = 2**r * l2_exact(pi, o, r)
    return ObservableEntryAccessor.from_function(2**r, fn, trace)


def l2_exact(pi: AffineIndexMap, o: ObservableEntryAccessor, r: int) -> float:
    """Mean of ``O_ii`` over the ``2^r`` indices mapped into the block."""
    idx = pi.inverse(np.arange(2**r))
    return float(np.mean(o.diagonal(np.atleast_1d(idx))))


def block_reduction_check(psi: AffineStabilizerState, o) -> tuple[float, float]:
    """``(tr(|Psi><Psi| O), tr(|Phi_r><Phi_r| B))`` with ``B`` the conjugated block."""
    acc = as_accessor(o)
    a = amplitudes(psi)
    full = np.real(a.conj() @ acc.to_dense() @ a)
    pi, red = reduce_to_block(psi)
    idx = pi.inverse(np.arange(2**red.r))
    b = acc.entries(idx[:, None], idx[None, :])
    phi = amplitudes(red)
    return float(full), float(np.real(phi.conj() @ b @ phi))


# --------------------------------------------------------------- estimation

@dataclass
class StabilizerEstimateReport:
    l1_estimate: float
    l2_value: float | None
    l2_bound: float
    final_estimate: float
    r_used: int
    shots: int
    epsilon: float
    mode: str = "neglect"
    method: str = "ddbst"
    std_error: float | None = None
    l2_cs_bound: float | None = None
    reduction_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def plan_stabilizer_shots(hs_norm_sq: float, epsilon: float, sigma: float) -> int:
    """Shots for the block estimate, using ``4 tr(O^2)`` as the variance bound.

    The reduced state has every DDB overlap in ``[0, 2/2^r]``, which caps the
    single-shot second moment at ``4 tr(B_0^2) <= 4 tr(O^2)``.
    """
    return plan_shots(1, sigma, epsilon, 4.0 * hs_norm_sq)


def _hs_norm_sq(acc: ObservableEntryAccessor) -> float:
    if acc.hs_norm_sq is None:
        raise ValueError("observable accessor must carry hs_norm_sq for the L2 bound")
    return acc.hs_norm_sq


def stabilizer_estimate(psi: AffineStabilizerState, o, cfg: EstimationConfig,
                        l2_mode: str = "neglect", *, r_direct: int = 10) -> StabilizerEstimateReport:
    """Estimate ``tr(|Psi><Psi| O)`` via the block reduction.

    With ``r <= r_direct`` the ``4^r`` support entries are summed exactly and
    no shots are taken. Otherwise ``L1`` is estimated with ``cfg.shots`` DDB
    shots on the reduced state, using single-shot values of the block with
    its trace set to zero, and ``L2`` is the block trace over ``2^r``.

    ``l2_mode`` picks the final value: ``exact`` returns ``L1 - L2``;
    ``neglect`` and ``bound_report`` return ``L1``, the latter also
    reporting ``L2``.
    """
    if l2_mode not in L2_MODES:
        raise ValueError(f"l2_mode must be one of {L2_MODES}, got {l2_mode!r}")
    if not isinstance(cfg, EstimationConfig):
        raise TypeError("cfg must be an EstimationConfig")
    if r_direct < 0:
        raise ValueError("r_direct must be >= 0")
    acc = as_accessor(o)
    if acc.dim != 2**psi.n:
        raise ValueError(f"observable dim {acc.dim} does not match 2^{psi.n}")
    hs = _hs_norm_sq(acc)
    r = psi.r
    scale = math.sqrt(2**r)

    t0 = time.perf_counter()
    pi, red = reduce_to_block(psi)
    red_time = time.perf_counter() - t0
    l2 = l2_exact(pi, acc, r)
    common = dict(l2_bound=hs / scale, r_used=r, epsilon=cfg.epsilon, mode=l2_mode,
                  l2_cs_bound=math.sqrt(hs) / scale, reduction_seconds=red_time)

    if r <= r_direct:
        idx = psi.support()
        a = (1j ** psi.phases()) / scale
        val = float(np.real(a.conj() @ acc.entries(idx[:, None], idx[None, :]) @ a))
        return StabilizerEstimateReport(l1_estimate=val + l2, l2_value=l2, final_estimate=val,
                                        shots=0, method="direct", std_error=0.0, **common)

    phi = amplitudes(red)
    rho = DensityMatrix(np.outer(phi, phi.conj()), validate=False)
    codes = simulate_shots(rho, build_ensemble(2**r), cfg.shots, seed=cfg.seed,
                           workers=cfg.workers)
    values = single_shot_values(codes, block_accessor(pi, acc, r, trace=0.0))
    l1, se = aggregate(values, cfg.strategy, cfg.n_batches)
    final = l1 - l2 if l2_mode == "exact" else l1
    return StabilizerEstimateReport(l1_estimate=l1, l2_value=None if l2_mode == "neglect" else l2,
                                    final_estimate=final, shots=int(codes.size), std_error=se, **common)
