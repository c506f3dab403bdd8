"""Approximately DDB-average states: classification, proportion study, variance audit."""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import ATOL_STATISTICAL, MAX_DIM, check_same_dim
from .ensemble import DDBEnsemble, all_overlaps
from .linalg import check_density_matrix, check_observable, random_stream
from .variance import BoundViolation, variance_exact

__all__ = [
    "AverageStudyConfig",
    "ProportionTable",
    "Threshold",
    "max_deviation",
    "classify",
    "run_proportion_study",
    "average_variance_audit",
]


def max_deviation(rho, ensemble: DDBEnsemble | None = None) -> float:
    """``max_s |tr(rho s) - 1/d|`` over every DDB snapshot."""
    r = check_density_matrix(rho)
    if ensemble is not None:
        check_same_dim(r.dim, ensemble.dim, "state and ensemble")
    return float(np.max(np.abs(all_overlaps(r.matrix) - 1.0 / r.dim)))


def classify(rho, s: float, ensemble: DDBEnsemble | None = None) -> bool:
    """True iff every snapshot overlap lies within ``s/d`` of ``1/d`` (ties count)."""
    if not s > 0:
        raise ValueError(f"threshold must be positive, got {s}")
    r = check_density_matrix(rho)
    return r.dim * max_deviation(r, ensemble) <= s


def _batch_max_deviation(rhos: np.ndarray) -> np.ndarray:
    """Max deviation for a stack ``(B, d, d)`` of density matrices."""
    d = rhos.shape[-1]
    diag = np.real(np.diagonal(rhos, axis1=1, axis2=2))
    j, k = np.triu_indices(d, 1)
    half = 0.5 * (diag[:, j] + diag[:, k]) - 1.0 / d
    c = rhos[:, j, k]
    pair = np.abs(half) + np.maximum(np.abs(c.real), np.abs(c.imag))
    return np.maximum(np.abs(diag - 1.0 / d).max(axis=1), pair.max(axis=1))


_THRESH = re.compile(r"^\s*(?P<coef>\d+(\.\d*)?)?\s*\*?\s*(?P<n>n)(\s*(\^|\*\*)\s*(?P<pow>\d+))?\s*$")


@dataclass(frozen=True)
class Threshold:
    """A threshold ``s`` either fixed or a monomial in the qubit count, e.g. ``2n``, ``n^2``."""

    label: str

    def __call__(self, n: int) -> float:
        lab = self.label.strip()
        try:
            val = float(lab)
        except ValueError:
            m = _THRESH.match(lab)
            if not m:
                raise ValueError(f"cannot parse threshold {self.label!r}") from None
            coef = float(m.group("coef") or 1)
            power = int(m.group("pow") or 1)
            val = coef * n**power
        if not val > 0:
            raise ValueError(f"threshold {self.label!r} is not positive at n={n}")
        return val


FAMILIES = ("haar_pure", "hs_mixed")


@dataclass(frozen=True)
class AverageStudyConfig:
    qubit_range: tuple[int, ...] = tuple(range(2, 9))
    trials_per_dim: int = 1000
    thresholds: tuple[str, ...] = ("4", "2n", "n^2")
    seed: int = 0
    state_family: str = "haar_pure"
    max_dim: int = MAX_DIM
    workers: int = 1

    def __post_init__(self):
        if self.trials_per_dim < 1:
            raise ValueError("trials_per_dim must be >= 1")
        if self.state_family not in FAMILIES:
            raise ValueError(f"state_family must be one of {FAMILIES}")
        if not self.thresholds:
            raise ValueError("at least one threshold is required")
        for n in self.qubit_range:
            if n < 1 or 2**n > self.max_dim:
                raise ValueError(f"n={n} gives d={2**n} outside [2, {self.max_dim}]")
            for t in self.thresholds:
                Threshold(str(t))(n)


@dataclass
class ProportionTable:
    rows: list[dict] = field(default_factory=list)

    def fractions(self, threshold: str) -> dict[int, float]:
        return {r["n"]: r["fraction"] for r in self.rows if r["threshold"] == threshold}

    def to_csv(self, fh, *, comment: str | None = None) -> None:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=["n", "d", "threshold", "s", "fraction", "trials"])
        w.writeheader()
        w.writerows(self.rows)

    def to_series(self) -> dict:
        """Plot-ready series keyed by threshold label."""
        out: dict[str, dict] = {}
        for r in self.rows:
            ser = out.setdefault(r["threshold"], {"n": [], "d": [], "s": [], "fraction": []})
            for key in ("n", "d", "s", "fraction"):
                ser[key].append(r[key])
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_series(), **kw)


def _sample_devs(n: int, cfg: AverageStudyConfig) -> np.ndarray:
    d = 2**n
    rng = random_stream(cfg.seed, n)
    out = np.empty(cfg.trials_per_dim)
    chunk = max(1, 2**22 // (d * d))
    for start in range(0, cfg.trials_per_dim, chunk):
        b = min(chunk, cfg.trials_per_dim - start)
        if cfg.state_family == "haar_pure":
            psi = rng.standard_normal((b, d)) + 1j * rng.standard_normal((b, d))
            psi /= np.linalg.norm(psi, axis=1, keepdims=True)
            rhos = psi[:, :, None] * psi.conj()[:, None, :]
        else:
            g = rng.standard_normal((b, d, d)) + 1j * rng.standard_normal((b, d, d))
            rhos = g @ np.conj(np.swapaxes(g, 1, 2))
            rhos /= np.real(np.trace(rhos, axis1=1, axis2=2))[:, None, None]
        out[start:start + b] = _batch_max_deviation(rhos)
    return out


def run_proportion_study(cfg: AverageStudyConfig) -> ProportionTable:
    """Fraction of sampled states classified DDB-average, per ``(n, threshold)``.

    Each ``n`` draws from its own stream ``(seed, n)``, and every threshold is
    applied to the same sampled states, so the table is reproducible and
    monotone in the threshold regardless of ``workers``.
    """
    ns = list(cfg.qubit_range)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            devs = list(pool.map(lambda n: _sample_devs(n, cfg), ns))
    else:
        devs = [_sample_devs(n, cfg) for n in ns]
    table = ProportionTable()
    for n, dev in zip(ns, devs):
        d = 2**n
        for lab in cfg.thresholds:
            s = Threshold(str(lab))(n)
            frac = float(np.mean(d * dev <= s))
            table.rows.append({"n": n, "d": d, "threshold": str(lab), "s": s,
                               "fraction": frac, "trials": cfg.trials_per_dim})
    return table


def average_variance_audit(states, o_obs, s: float, *, tol: float = ATOL_STATISTICAL) -> list[dict]:
    """Check ``variance <= 2 (s + 1) tr(O_0^2)`` for states classified at threshold ``s``.

    Every overlap of such a state is at most ``(s + 1)/d``; substituting that
    into the exact variance gives the bound.
    """
    obs = check_observable(o_obs)
    t0 = obs.traceless_hs_norm_sq()
    bound = 2 * (s + 1) * t0
    rows = []
    for i, st in enumerate(states):
        st = check_density_matrix(st)
        dev = max_deviation(st)
        if st.dim * dev > s:
            raise ValueError(f"state {i} is not DDB-average at s={s} (d*dev={st.dim * dev})")
        var = variance_exact(st, obs).variance_exact
        if var > bound + tol:
            raise BoundViolation(f"state {i}: variance {var} exceeds 2(s+1) tr(O_0^2) = {bound}",
                                 st.matrix)
        rows.append({"state_id": i, "max_deviation": dev, "variance_exact": var,
                     "bound": bound, "ratio": var / t0 if t0 else 0.0})
    return rows
