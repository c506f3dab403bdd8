"""Simulated DDB shadow measurements and ``tr(rho O)`` estimation."""

from __future__ import annotations

import csv
import math
import struct
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_probability, check_positive_int, check_same_dim
from .channel import ObservableEntryAccessor, single_shot_values
from .ensemble import (
    DDBEnsemble,
    SnapshotId,
    all_overlaps,
    build_ensemble,
    decode,
    encode,
    enumerate_snapshots,
    num_snapshots,
)
from .linalg import DensityMatrix, HermitianObservable, check_density_matrix, random_stream

__all__ = [
    "EstimationConfig",
    "EstimationReport",
    "ShotRecord",
    "ShadowLog",
    "ShadowFormatError",
    "DDBShadowEstimator",
    "PLANNER_CONSTANT",
    "exact_snapshot_distribution",
    "snapshot_probabilities",
    "simulate_shot",
    "simulate_shots",
    "aggregate",
    "estimate",
    "plan_shots",
    "plan_batches",
    "serialize_shadow",
    "deserialize_shadow",
    "as_accessor",
]

# Absolute constant in N = C ln(2L/sigma) V / eps^2; not fixed by the theory.
PLANNER_CONSTANT = 34.0
STRATEGIES = ("mean", "median_of_means")


@dataclass(frozen=True)
class ShotRecord:
    snapshot: SnapshotId
    shot_index: int


@dataclass(frozen=True)
class EstimationConfig:
    """Shot budget and aggregation settings.

    ``batches=None`` with ``median_of_means`` uses ``ceil(2 ln(2/sigma))``.
    """

    shots: int = 10_000
    strategy: str = "mean"
    batches: int | None = None
    seed: int = 0
    epsilon: float = 0.1
    sigma: float = 0.05
    workers: int = 1
    keep_log: bool = False

    def __post_init__(self):
        check_positive_int(self.shots, name="shots")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.batches is not None:
            check_positive_int(self.batches, name="batches")
            if self.batches > self.shots:
                raise ValueError("batches cannot exceed shots")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        check_probability(self.sigma, name="sigma", open_interval=True)
        check_positive_int(self.workers, name="workers")

    @property
    def n_batches(self) -> int:
        if self.strategy == "mean":
            return 1
        k = self.batches if self.batches is not None else plan_batches(1, self.sigma)
        return min(k, self.shots)


class ShadowFormatError(ValueError):
    def __init__(self, msg: str, record_index: int | None = None):
        super().__init__(msg if record_index is None else f"{msg} (record {record_index})")
        self.record_index = record_index


class ShadowLog(Sequence):
    """Compact classical shadow: one snapshot code per shot.

    Behaves as a sequence of :class:`ShotRecord`; the codes stay in a single
    integer array so million-shot logs are cheap.
    """

    def __init__(self, dim: int, codes, start: int = 0):
        self.dim = int(dim)
        codes = np.asarray(codes, dtype=np.int64).ravel()
        if codes.size and (codes.min() < 0 or codes.max() >= num_snapshots(self.dim)):
            raise ValueError("snapshot code out of range for dimension")
        codes.setflags(write=False)
        self.codes = codes
        self.start = int(start)

    @classmethod
    def from_records(cls, records: Sequence[ShotRecord], dim: int) -> "ShadowLog":
        if not records:
            raise ValueError("empty shadow log")
        start = records[0].shot_index
        for i, rec in enumerate(records):
            if rec.shot_index != start + i:
                raise ValueError("shot indices must be consecutive")
        return cls(dim, [encode(r.snapshot, dim) for r in records], start)

    def __len__(self) -> int:
        return self.codes.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = range(len(self))[i]
            return [self[j] for j in idx]
        if i < 0:
            i += len(self)
        return ShotRecord(decode(self.codes[i], self.dim), self.start + i)

    def __eq__(self, other):
        if isinstance(other, ShadowLog):
            return (self.dim == other.dim and self.start == other.start
                    and np.array_equal(self.codes, other.codes))
        return NotImplemented

    @property
    def bits_per_record(self) -> int:
        return max(1, (num_snapshots(self.dim) - 1).bit_length())

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["shot_index", "kind", "i", "j"])
        for rec in self:
            s = rec.snapshot
            w.writerow([rec.shot_index, s.kind.label, s.j, "" if s.k is None else s.k])


_MAGIC = b"DDBSHAD1"
_HEADER = struct.Struct("<8sIQQ")  # magic, dim, shot count, first shot index


def serialize_shadow(log, dim: int | None = None) -> bytes:
    """Pack a shadow log: fixed header then ``ceil(log2(2d^2-d))`` bits per shot."""
    if not isinstance(log, ShadowLog):
        if dim is None:
            raise ValueError("dim is required when serialising a list of ShotRecord")
        log = ShadowLog.from_records(list(log), dim)
    if len(log) == 0:
        raise ValueError("empty shadow log")
    w = log.bits_per_record
    shifts = np.arange(w - 1, -1, -1, dtype=np.int64)
    bits = ((log.codes[:, None] >> shifts) & 1).astype(np.uint8)
    payload = np.packbits(bits.ravel()).tobytes()
    return _HEADER.pack(_MAGIC, log.dim, len(log), log.start) + payload


def deserialize_shadow(data: bytes) -> ShadowLog:
    if len(data) < _HEADER.size:
        raise ShadowFormatError("stream shorter than header", 0)
    magic, dim, count, start = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ShadowFormatError("bad magic header")
    if dim < 2:
        raise ShadowFormatError(f"invalid dimension {dim}")
    w = max(1, (num_snapshots(dim) - 1).bit_length())
    payload = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    need = (count * w + 7) // 8
    if payload.size < need:
        raise ShadowFormatError("truncated payload", (payload.size * 8) // w)
    if payload.size > need:
        raise ShadowFormatError("trailing bytes after last record", count)
    bits = np.unpackbits(payload)[: count * w].reshape(count, w).astype(np.int64)
    codes = bits @ (1 << np.arange(w - 1, -1, -1, dtype=np.int64))
    bad = np.flatnonzero(codes >= num_snapshots(dim))
    if bad.size:
        raise ShadowFormatError("snapshot code out of range", int(bad[0]))
    return ShadowLog(dim, codes, start)


@dataclass
class EstimationReport:
    estimate: float
    std_error: float
    shots_used: int
    strategy: str
    batches: int
    config: dict = field(default_factory=dict)
    shadow_log: ShadowLog | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready fields; the shadow log is persisted separately."""
        return {
            "estimate": self.estimate,
            "std_error": self.std_error if math.isfinite(self.std_error) else None,
            "shots_used": self.shots_used,
            "strategy": self.strategy,
            "batches": self.batches,
            "config": dict(self.config),
        }


def as_accessor(o) -> ObservableEntryAccessor:
    if isinstance(o, ObservableEntryAccessor):
        return o
    return ObservableEntryAccessor.from_dense(o)


def snapshot_probabilities(rho, ensemble: DDBEnsemble) -> np.ndarray:
    """Exact outcome law indexed by snapshot code.

    Every pair snapshot sits in one basis of weight ``1/(2d)``; each
    computational state carries total weight ``1/d`` for both parities.
    """
    rho = check_density_matrix(rho)
    check_same_dim(rho.dim, ensemble.dim, "state and ensemble")
    d = ensemble.dim
    weight = np.zeros(num_snapshots(d))
    for b, row in zip(ensemble.bases, ensemble.member_codes):
        weight[row] += float(b.weight)
    return weight * all_overlaps(rho.matrix)


def exact_snapshot_distribution(rho, ensemble: DDBEnsemble) -> dict[SnapshotId, float]:
    p = snapshot_probabilities(rho, ensemble)
    return dict(zip(enumerate_snapshots(ensemble.dim), p.tolist()))


def simulate_shot(rho, ensemble: DDBEnsemble, rng) -> ShotRecord:
    """One measurement: draw a basis by weight, then an outcome by the Born rule."""
    rho = check_density_matrix(rho)
    check_same_dim(rho.dim, ensemble.dim, "state and ensemble")
    b = int(rng.choice(ensemble.num_bases, p=ensemble.weights))
    row = ensemble.member_codes[b]
    born = np.clip(all_overlaps(rho.matrix)[row], 0.0, None)
    k = int(rng.choice(ensemble.dim, p=born / born.sum()))
    return ShotRecord(decode(row[k], ensemble.dim), 0)


class _BornTable:
    """Flattened per-basis Born CDFs for vectorised inverse-CDF sampling."""

    def __init__(self, rho: DensityMatrix, ensemble: DDBEnsemble):
        codes = ensemble.member_codes
        born = np.clip(all_overlaps(rho.matrix)[codes], 0.0, None)
        born /= born.sum(axis=1, keepdims=True)
        cdf = np.cumsum(born, axis=1)
        cdf[:, -1] = 1.0
        nb, d = codes.shape
        self.flat_cdf = (cdf + np.arange(nb)[:, None]).ravel()
        self.flat_codes = codes.ravel()
        self.weights = ensemble.weights
        self.nb, self.d = nb, d

    def draw(self, rng, size: int) -> np.ndarray:
        basis = rng.choice(self.nb, size=size, p=self.weights)
        key = basis + rng.random(size)
        idx = np.searchsorted(self.flat_cdf, key, side="right")
        idx = np.minimum(idx, basis * self.d + self.d - 1)
        return self.flat_codes[idx]


def simulate_shots(rho, ensemble: DDBEnsemble, shots: int, *, seed: int = 0,
                   workers: int = 1) -> np.ndarray:
    """Snapshot codes for ``shots`` independent measurements.

    Worker ``w`` draws its contiguous share from stream ``(seed, w)`` and the
    chunks are concatenated in worker order, so the result depends only on
    ``(seed, workers)``.
    """
    rho = check_density_matrix(rho)
    check_same_dim(rho.dim, ensemble.dim, "state and ensemble")
    table = _BornTable(rho, ensemble)
    sizes = [len(c) for c in np.array_split(np.arange(shots), workers)]
    if workers == 1:
        return table.draw(random_stream(seed, 0), shots)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda w: table.draw(random_stream(seed, w), sizes[w]),
                              range(workers)))
    return np.concatenate(parts)


def aggregate(values: np.ndarray, strategy: str = "mean", batches: int = 1) -> tuple[float, float]:
    """Point estimate and standard error from per-shot values.

    ``median_of_means`` returns the median of ``batches`` contiguous batch
    means; its standard error is the spread of the batch means over
    ``sqrt(batches)``, a heuristic since the median has no closed-form error.
    """
    values = np.asarray(values, dtype=np.float64)
    m = values.size
    if m == 0:
        raise ValueError("no shots to aggregate")
    if strategy == "mean" or batches == 1:
        est = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
        return est, se
    if strategy != "median_of_means":
        raise ValueError(f"unknown strategy {strategy!r}")
    means = np.array([c.mean() for c in np.array_split(values, batches)])
    return float(np.median(means)), float(means.std(ddof=1) / math.sqrt(batches))


def estimate(rho, o, ensemble: DDBEnsemble | None, cfg: EstimationConfig) -> EstimationReport:
    """Estimate ``tr(rho O)`` from ``cfg.shots`` simulated DDB measurements."""
    if not isinstance(cfg, EstimationConfig):
        raise TypeError("cfg must be an EstimationConfig")
    rho = check_density_matrix(rho)
    acc = as_accessor(o)
    ensemble = build_ensemble(rho.dim) if ensemble is None else ensemble
    check_same_dim(rho.dim, acc.dim, "state and observable")
    codes = simulate_shots(rho, ensemble, cfg.shots, seed=cfg.seed, workers=cfg.workers)
    return report_from_codes(codes, acc, cfg, dim=rho.dim)


def report_from_codes(codes: np.ndarray, acc: ObservableEntryAccessor, cfg: EstimationConfig,
                      *, dim: int) -> EstimationReport:
    values = single_shot_values(codes, acc)
    k = cfg.n_batches
    est, se = aggregate(values, cfg.strategy, k)
    echo = asdict(cfg)
    echo.update(planner_constant=PLANNER_CONSTANT, batch_rule="ceil(2 ln(2L/sigma))",
                dim=dim)
    log = ShadowLog(dim, codes) if cfg.keep_log else None
    return EstimationReport(est, se, int(codes.size), cfg.strategy, k, echo, log)


def plan_shots(num_observables: int, sigma: float, epsilon: float, variance_bound: float,
               *, constant: float = PLANNER_CONSTANT) -> int:
    """Total shots ``ceil(C ln(2L/sigma) V / eps^2)`` for ``L`` observables."""
    check_positive_int(num_observables, name="num_observables")
    check_probability(sigma, name="sigma", open_interval=True)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if variance_bound < 0:
        raise ValueError("variance_bound must be non-negative")
    raw = constant * math.log(2 * num_observables / sigma) / epsilon**2 * variance_bound
    return int(math.ceil(raw))


def plan_batches(num_observables: int, sigma: float) -> int:
    """Median-of-means batch count ``ceil(2 ln(2L/sigma))``."""
    return max(1, int(math.ceil(2 * math.log(2 * num_observables / sigma))))


class DDBShadowEstimator(BaseEstimator):
    """Scikit-learn style front end for DDB classical shadows.

    ``fit`` acquires a shadow, either by simulating ``shots`` measurements of a
    known density matrix or by adopting a recorded :class:`ShadowLog`.
    ``predict`` then returns ``tr(rho O)`` estimates for any number of
    observables, reusing the same shots.

    Parameters
    ----------
    shots : int, default=10000
        Number of simulated measurements.
    strategy : {"mean", "median_of_means"}, default="mean"
    n_batches : int or None, default=None
        Median-of-means batch count; ``None`` derives it from ``sigma``.
    sigma : float, default=0.05
        Failure probability used when deriving ``n_batches``.
    random_state : int, default=0
    workers : int, default=1

    Attributes
    ----------
    shadow_ : ShadowLog
    dim_ : int
    n_shots_ : int
    """

    def __init__(self, shots=10_000, strategy="mean", n_batches=None, sigma=0.05,
                 random_state=0, workers=1):
        self.shots = shots
        self.strategy = strategy
        self.n_batches = n_batches
        self.sigma = sigma
        self.random_state = random_state
        self.workers = workers

    def _config(self) -> EstimationConfig:
        return EstimationConfig(shots=self.shots, strategy=self.strategy, batches=self.n_batches,
                                seed=int(self.random_state or 0), sigma=self.sigma,
                                workers=self.workers)

    def fit(self, X, y=None):
        cfg = self._config()
        if isinstance(X, ShadowLog):
            self.shadow_ = X
        else:
            rho = check_density_matrix(X)
            codes = simulate_shots(rho, build_ensemble(rho.dim), cfg.shots, seed=cfg.seed,
                                   workers=cfg.workers)
            self.shadow_ = ShadowLog(rho.dim, codes)
        self.dim_ = self.shadow_.dim
        self.n_shots_ = len(self.shadow_)
        return self

    def _cfg_for_log(self) -> EstimationConfig:
        cfg = self._config()
        if cfg.shots != self.n_shots_:
            cfg = EstimationConfig(**{**asdict(cfg), "shots": self.n_shots_})
        return cfg

    def report(self, observable) -> EstimationReport:
        check_is_fitted(self, "shadow_")
        acc = as_accessor(observable)
        check_same_dim(acc.dim, self.dim_, "observable and shadow")
        return report_from_codes(self.shadow_.codes, acc, self._cfg_for_log(), dim=self.dim_)

    def predict(self, observables) -> np.ndarray:
        """Estimates for one observable or a sequence of them."""
        single = isinstance(observables, (ObservableEntryAccessor, HermitianObservable)) or (
            isinstance(observables, np.ndarray) and observables.ndim == 2)
        obs = [observables] if single else list(observables)
        return np.array([self.report(o).estimate for o in obs])

    def score(self, X, observables) -> float:
        """Negative mean absolute error against exact ``tr(X O)`` (higher is better)."""
        rho = check_density_matrix(X)
        obs = list(observables)
        exact = np.array([np.sum(rho.matrix * as_accessor(o).to_dense().T).real for o in obs])
        return -float(np.mean(np.abs(self.predict(obs) - exact)))
