"""Dense dual bases: snapshot enumeration, pair partitions, ensemble and sampling.

Snapshots are addressed two ways. :class:`SnapshotId` is the readable tagged
form; the integer *code* is the dense index used by vectorised paths and the
shadow log:

* ``Comp(t)`` has code ``t``;
* a pair snapshot on ``(j, k)`` with variant ``v`` (``RealPlus``,
  ``RealMinus``, ``ImagPlus``, ``ImagMinus`` = 0..3) has code
  ``d + 4 * p + v`` where ``p`` is the row-major rank of ``(j, k)`` among the
  pairs ``j < k``.

Codes therefore run over ``range(2 d^2 - d)``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from ._validation import InvariantViolation, check_dim
from .linalg import DensityMatrix, check_density_matrix

__all__ = [
    "SnapshotKind",
    "SnapshotId",
    "PairPartition",
    "DDBasis",
    "DDBEnsemble",
    "num_snapshots",
    "enumerate_snapshots",
    "build_partitions",
    "build_ensemble",
    "snapshot_vector",
    "snapshot_projector",
    "snapshot_overlap",
    "all_overlaps",
    "draw_random_snapshot",
    "draw_random_codes",
    "snapshot_prior",
    "encode",
    "decode",
    "decode_codes",
    "pair_rank",
]

_SQRT1_2 = 1.0 / np.sqrt(2.0)


class SnapshotKind(enum.IntEnum):
    COMP = 0
    REAL_PLUS = 1
    REAL_MINUS = 2
    IMAG_PLUS = 3
    IMAG_MINUS = 4

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "SnapshotKind":
        try:
            return _FROM_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown snapshot kind {label!r}") from None


_LABELS = {
    SnapshotKind.COMP: "Comp",
    SnapshotKind.REAL_PLUS: "RealPlus",
    SnapshotKind.REAL_MINUS: "RealMinus",
    SnapshotKind.IMAG_PLUS: "ImagPlus",
    SnapshotKind.IMAG_MINUS: "ImagMinus",
}
_FROM_LABEL = {v: k for k, v in _LABELS.items()}


@dataclass(frozen=True, order=True)
class SnapshotId:
    """One of the ``2 d^2 - d`` rank-one DDB projectors.

    ``Comp`` snapshots use ``j`` only (``k`` is ``None``); pair snapshots
    require ``j < k``.
    """

    kind: SnapshotKind
    j: int
    k: int | None = None

    def __post_init__(self):
        kind = SnapshotKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is SnapshotKind.COMP:
            if self.k is not None:
                raise ValueError("Comp snapshot takes a single index")
            if self.j < 0:
                raise ValueError(f"negative index {self.j}")
        else:
            if self.k is None or not (0 <= self.j < self.k):
                raise ValueError(f"pair snapshot needs 0 <= j < k, got ({self.j}, {self.k})")

    @classmethod
    def comp(cls, t: int) -> "SnapshotId":
        return cls(SnapshotKind.COMP, int(t))

    @classmethod
    def pair(cls, kind, j: int, k: int) -> "SnapshotId":
        if isinstance(kind, str):
            kind = SnapshotKind.from_label(kind)
        return cls(SnapshotKind(kind), int(j), int(k))

    @property
    def indices(self) -> tuple[int, ...]:
        return (self.j,) if self.k is None else (self.j, self.k)

    def check(self, d: int) -> None:
        top = self.j if self.k is None else self.k
        if top >= d:
            raise ValueError(f"snapshot {self} is out of range for d={d}")

    def __str__(self) -> str:
        return f"{self.kind.label}({', '.join(map(str, self.indices))})"


def num_snapshots(d: int) -> int:
    return 2 * d * d - d


def pair_rank(j, k, d):
    """Row-major rank of ``(j, k)``, ``j < k``, among the ``C(d, 2)`` pairs."""
    return j * (2 * d - j - 1) // 2 + (k - j - 1)


def _unrank_pairs(p: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.int64)
    b = 2 * d - 1
    j = np.floor((b - np.sqrt(np.maximum(b * b - 8.0 * p, 0.0))) / 2).astype(np.int64)
    j = np.clip(j, 0, d - 2)
    # float rounding can land one row off either way
    start = j * (2 * d - j - 1) // 2
    j = np.where(start > p, j - 1, j)
    start = j * (2 * d - j - 1) // 2
    nxt = (j + 1) * (2 * d - j - 2) // 2
    j = np.where(p >= nxt, j + 1, j)
    start = j * (2 * d - j - 1) // 2
    k = p - start + j + 1
    return j, k


def encode(s: SnapshotId, d: int) -> int:
    s.check(d)
    if s.kind is SnapshotKind.COMP:
        return s.j
    return d + 4 * pair_rank(s.j, s.k, d) + (int(s.kind) - 1)


def decode(code: int, d: int) -> SnapshotId:
    code = int(code)
    if not 0 <= code < num_snapshots(d):
        raise ValueError(f"snapshot code {code} out of range for d={d}")
    if code < d:
        return SnapshotId.comp(code)
    p, v = divmod(code - d, 4)
    j, k = _unrank_pairs(np.array([p]), d)
    return SnapshotId(SnapshotKind(v + 1), int(j[0]), int(k[0]))


def decode_codes(codes, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised decode into ``(kind, m, n)``; ``n == m`` for ``Comp``."""
    codes = np.asarray(codes, dtype=np.int64)
    kind = np.zeros(codes.shape, dtype=np.int8)
    m = codes.copy()
    n = codes.copy()
    pair = codes >= d
    if np.any(pair):
        p, v = np.divmod(codes[pair] - d, 4)
        j, k = _unrank_pairs(p, d)
        kind[pair] = v + 1
        m[pair] = j
        n[pair] = k
    return kind, m, n


def enumerate_snapshots(d: int) -> list[SnapshotId]:
    """All ``2 d^2 - d`` snapshots, in code order."""
    d = check_dim(d)
    out = [SnapshotId.comp(t) for t in range(d)]
    kinds = (SnapshotKind.REAL_PLUS, SnapshotKind.REAL_MINUS,
             SnapshotKind.IMAG_PLUS, SnapshotKind.IMAG_MINUS)
    for j in range(d):
        for k in range(j + 1, d):
            out.extend(SnapshotId(kd, j, k) for kd in kinds)
    return out


@dataclass(frozen=True)
class PairPartition:
    """Disjoint pairs covering ``{0..d-1}``, except one ``leftover`` when ``d`` is odd."""

    pairs: tuple[tuple[int, int], ...]
    leftover: int | None = None

    def check(self, d: int) -> None:
        seen = [x for pr in self.pairs for x in pr]
        if any(j >= k for j, k in self.pairs):
            raise InvariantViolation("pairs must satisfy j < k")
        if len(set(seen)) != len(seen):
            raise InvariantViolation("pairs are not disjoint")
        if d % 2 == 0:
            if self.leftover is not None or len(seen) != d:
                raise InvariantViolation("even d requires a perfect matching")
        else:
            if self.leftover is None or len(seen) != d - 1 or self.leftover in seen:
                raise InvariantViolation("odd d requires exactly one leftover element")


@lru_cache(maxsize=64)
def _partitions_cached(d: int) -> tuple[PairPartition, ...]:
    # Round-robin on an even number of seats; odd d gets a bye seat whose
    # partner is the leftover of that round.
    n_even = d if d % 2 == 0 else d + 1
    m = n_even - 1
    special = n_even - 1
    half = (m + 1) // 2  # inverse of 2 modulo the odd m
    rounds = []
    for r in list(range(1, m)) + [0]:
        x = (r * half) % m
        prs = [(x, special)]
        for a in range(m):
            b = (r - a) % m
            if a < b:
                prs.append((a, b))
        rounds.append(prs)
    # Relabel so the first round reads (0,1), (2,3), ... with the special
    # seat's pair last; the bye seat then maps to label d (odd) or d-1 (even).
    first = sorted(rounds[0][1:]) + [rounds[0][0]]
    relabel = {}
    for a, b in first:
        for v in (a, b):
            if v != special:
                relabel[v] = len(relabel)
    relabel[special] = len(relabel)
    out = []
    for prs in rounds:
        mapped = []
        leftover = None
        for a, b in prs:
            a, b = relabel[a], relabel[b]
            a, b = min(a, b), max(a, b)
            if b == d:  # bye seat (odd d only)
                leftover = a
            else:
                mapped.append((a, b))
        out.append(PairPartition(tuple(sorted(mapped)), leftover))
    return tuple(out)


def build_partitions(d: int) -> list[PairPartition]:
    """Near one-factorisation of ``K_d``: ``d - 1`` perfect matchings for even ``d``,
    ``d`` matchings with one leftover each for odd ``d``."""
    d = check_dim(d)
    return list(_partitions_cached(d))


@dataclass(frozen=True)
class DDBasis:
    """An orthonormal basis of ``d`` snapshots with its sampling weight."""

    members: tuple[SnapshotId, ...]
    weight: Fraction
    label: str = ""

    def codes(self, d: int) -> np.ndarray:
        return np.array([encode(s, d) for s in self.members], dtype=np.int64)

    def vectors(self, d: int) -> np.ndarray:
        """Columns are the member snapshot vectors."""
        return np.stack([snapshot_vector(s, d) for s in self.members], axis=1)


@dataclass(frozen=True, eq=False)
class DDBEnsemble:
    dim: int
    bases: tuple[DDBasis, ...]
    partitions: tuple[PairPartition, ...]

    @property
    def num_bases(self) -> int:
        return len(self.bases)

    @property
    def weights(self) -> np.ndarray:
        return np.array([float(b.weight) for b in self.bases])

    @cached_property
    def member_codes(self) -> np.ndarray:
        """``(num_bases, d)`` array of snapshot codes, one row per basis."""
        arr = np.stack([b.codes(self.dim) for b in self.bases])
        arr.setflags(write=False)
        return arr

    def validate(self, atol: float = 1e-12) -> None:
        d = self.dim
        if sum(b.weight for b in self.bases) != 1:
            raise InvariantViolation("basis weights do not sum to 1")
        expected = 2 * d if d % 2 else 2 * d - 1
        if self.num_bases != expected:
            raise InvariantViolation(f"expected {expected} bases, got {self.num_bases}")
        eye = np.eye(d)
        for b in self.bases:
            v = b.vectors(d)
            if np.max(np.abs(v.conj().T @ v - eye)) > atol:
                raise InvariantViolation(f"basis {b.label} is not orthonormal")
        counts = np.zeros(num_snapshots(d), dtype=int)
        for row in self.member_codes:
            counts[row] += 1
        if np.any(counts[d:] != 1):
            raise InvariantViolation("a pair snapshot is not in exactly one basis")
        if np.any(counts[:d] < 1):
            raise InvariantViolation("a computational snapshot is uncovered")

    def summary(self) -> dict:
        return {
            "dim": self.dim,
            "num_bases": self.num_bases,
            "weights": [str(b.weight) for b in self.bases],
            "partitions": [
                {"pairs": [list(p) for p in part.pairs], "leftover": part.leftover}
                for part in self.partitions
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.summary(), **kw)


@lru_cache(maxsize=32)
def _ensemble_cached(d: int) -> DDBEnsemble:
    parts = _partitions_cached(d)
    bases = []
    if d % 2 == 0:
        comp = tuple(SnapshotId.comp(t) for t in range(d))
        bases.append(DDBasis(comp, Fraction(2, 2 * d), "computational"))
    w = Fraction(1, 2 * d)
    for i, part in enumerate(parts):
        extra = () if part.leftover is None else (SnapshotId.comp(part.leftover),)
        phi = tuple(SnapshotId(kd, j, k) for j, k in part.pairs
                    for kd in (SnapshotKind.REAL_PLUS, SnapshotKind.REAL_MINUS))
        psi = tuple(SnapshotId(kd, j, k) for j, k in part.pairs
                    for kd in (SnapshotKind.IMAG_PLUS, SnapshotKind.IMAG_MINUS))
        bases.append(DDBasis(phi + extra, w, f"phi[{i}]"))
        bases.append(DDBasis(psi + extra, w, f"psi[{i}]"))
    return DDBEnsemble(d, tuple(bases), parts)


def build_ensemble(d: int) -> DDBEnsemble:
    """The ``f(d)`` dense dual bases with their sampling weights.

    Even ``d``: the computational basis (weight ``2/(2d)``) plus a real and an
    imaginary basis per perfect matching (``1/(2d)`` each), ``2d - 1`` in total.
    Odd ``d``: a real and an imaginary basis per matching, each completed by the
    matching's leftover basis state, ``2d`` bases of weight ``1/(2d)``.
    """
    d = check_dim(d)
    return _ensemble_cached(d)


def snapshot_vector(s: SnapshotId, d: int) -> np.ndarray:
    s.check(d)
    v = np.zeros(d, dtype=np.complex128)
    if s.kind is SnapshotKind.COMP:
        v[s.j] = 1.0
        return v
    v[s.j] = _SQRT1_2
    v[s.k] = {
        SnapshotKind.REAL_PLUS: _SQRT1_2,
        SnapshotKind.REAL_MINUS: -_SQRT1_2,
        SnapshotKind.IMAG_PLUS: 1j * _SQRT1_2,
        SnapshotKind.IMAG_MINUS: -1j * _SQRT1_2,
    }[s.kind]
    return v


def snapshot_projector(s: SnapshotId, d: int) -> np.ndarray:
    v = snapshot_vector(s, d)
    return np.outer(v, v.conj())


def _entries(rho):
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return check_density_matrix(rho).matrix


def snapshot_overlap(rho, s: SnapshotId) -> float:
    """``tr(rho s)`` from at most three entries of ``rho``."""
    r = _entries(rho)
    d = r.shape[0]
    s.check(d)
    if s.kind is SnapshotKind.COMP:
        return float(r[s.j, s.j].real)
    j, k = s.j, s.k
    half = 0.5 * (r[j, j].real + r[k, k].real)
    c = r[j, k]
    if s.kind is SnapshotKind.REAL_PLUS:
        return float(half + c.real)
    if s.kind is SnapshotKind.REAL_MINUS:
        return float(half - c.real)
    if s.kind is SnapshotKind.IMAG_PLUS:
        return float(half - c.imag)
    return float(half + c.imag)


def all_overlaps(rho) -> np.ndarray:
    """``tr(rho s)`` for every snapshot, indexed by code."""
    # raw ndarrays are trusted (internal fast path); anything else is validated
    r = rho if isinstance(rho, np.ndarray) else _entries(rho)
    d = r.shape[0]
    diag = r.diagonal().real
    jj, kk = np.triu_indices(d, 1)
    half = 0.5 * (diag[jj] + diag[kk])
    c = r[jj, kk]
    out = np.empty(num_snapshots(d))
    out[:d] = diag
    pairs = out[d:].reshape(-1, 4)
    pairs[:, 0] = half + c.real
    pairs[:, 1] = half - c.real
    pairs[:, 2] = half - c.imag
    pairs[:, 3] = half + c.imag
    return out


def snapshot_prior(d: int) -> np.ndarray:
    """Marginal draw probability of each code: ``1/d^2`` computational, ``1/(2 d^2)`` pairs."""
    p = np.full(num_snapshots(d), 1.0 / (2 * d * d))
    p[:d] = 1.0 / (d * d)
    return p


def draw_random_snapshot(d: int, rng) -> SnapshotId:
    """Draw one snapshot in O(1) with the two-branch scheme.

    With probability ``1/d`` pick a uniform computational state; otherwise a
    uniform pair ``m < n`` and one of its four superpositions uniformly.
    """
    d = check_dim(d)
    if rng.random() < 1.0 / d:
        return SnapshotId.comp(int(rng.integers(d)))
    m = int(rng.integers(d))
    n = int(rng.integers(d - 1))
    n += n >= m
    if m > n:
        m, n = n, m
    return SnapshotId(SnapshotKind(int(rng.integers(4)) + 1), m, n)


def draw_random_codes(d: int, rng, size: int) -> np.ndarray:
    """Vectorised :func:`draw_random_snapshot`, returning snapshot codes."""
    d = check_dim(d)
    comp = rng.random(size) < 1.0 / d
    t = rng.integers(d, size=size)
    m = rng.integers(d, size=size)
    n = rng.integers(d - 1, size=size)
    n = n + (n >= m)
    lo, hi = np.minimum(m, n), np.maximum(m, n)
    v = rng.integers(4, size=size)
    pair_codes = d + 4 * pair_rank(lo, hi, d) + v
    return np.where(comp, t, pair_codes).astype(np.int64)
