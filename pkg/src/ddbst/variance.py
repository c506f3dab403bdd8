"""Exact single-shot variance of the DDB estimator and its bounds.

All quantities refer to the traceless part ``O_0 = O - tr(O) I / d`` and the
auxiliary operator ``o`` with ``M^-1(O_0) = 2d o``: ``o`` equals ``O_0`` off
the diagonal and ``diag(O_0) / d`` on it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import ATOL_ALGEBRAIC, ATOL_STATISTICAL, InvariantViolation, check_same_dim
from .channel import single_shot_values
from .ensemble import build_ensemble, num_snapshots
from .estimator import as_accessor, snapshot_probabilities
from .linalg import check_density_matrix, check_observable

__all__ = [
    "VarianceReport",
    "BoundViolation",
    "o_operator",
    "v_diag",
    "diag_term",
    "variance_exact",
    "variance_by_snapshots",
    "t_value",
    "check_bounds",
    "write_audit_csv",
]


class BoundViolation(InvariantViolation):
    def __init__(self, msg: str, state: np.ndarray | None = None):
        super().__init__(msg)
        self.state = state

    def state_json(self) -> str:
        s = self.state
        return json.dumps({"real": s.real.tolist(), "imag": s.imag.tolist()})


@dataclass(frozen=True)
class VarianceReport:
    """Per-state variance terms for one observable.

    ``variance_exact`` is the second moment of the traceless single-shot
    estimator, ``diag_term + v_diag``. ``shot_variance`` subtracts the
    squared mean, giving the spread of raw per-shot values around ``tr(rho O)``.
    """

    variance_exact: float
    v_diag: float
    diag_term: float
    worst_bound: float
    avg_bound: float
    shot_variance: float
    traceless_hs_sq: float
    mub_avg_constant: float

    @property
    def ratio(self) -> float:
        """``variance_exact / tr(O_0^2)`` (0 when ``O`` is a multiple of ``I``)."""
        if self.traceless_hs_sq == 0:
            return 0.0
        return self.variance_exact / self.traceless_hs_sq


def o_operator(o_obs) -> np.ndarray:
    obs = check_observable(o_obs)
    o = obs.traceless_part()
    d = obs.dim
    o[np.diag_indices(d)] /= d
    return o


def _real(x: complex, what: str) -> float:
    if abs(x.imag) > ATOL_ALGEBRAIC * max(1.0, abs(x.real)):
        raise InvariantViolation(f"{what} has imaginary residue {x.imag:.3e}")
    return float(x.real)


def v_diag(sigma, o_obs) -> float:
    """Pair-snapshot part of the variance in O(d^2) closed form."""
    s = check_density_matrix(sigma).matrix
    o = o_operator(o_obs)
    check_same_dim(s.shape[0], o.shape[0], "state and observable")
    return _v_diag(s, o)


def _v_diag(s: np.ndarray, o: np.ndarray) -> float:
    d = s.shape[0]
    j, k = np.triu_indices(d, 1)
    sd, od = s.diagonal(), o.diagonal()
    a = sd[j] + sd[k]
    b = od[j] + od[k]
    sjk, skj = s[j, k], s[k, j]
    ojk, okj = o[j, k], o[k, j]
    terms = (a * b**2 + (sjk + skj) * b * (ojk + okj) - (sjk - skj) * b * (ojk - okj)
             + 2 * a * ojk * okj)
    return _real(d * terms.sum(), "v_diag")


def _diag_term(s: np.ndarray, o: np.ndarray) -> float:
    d = s.shape[0]
    return float(4 * d * np.sum(s.diagonal().real * o.diagonal().real ** 2))


def diag_term(sigma, o_obs) -> float:
    """Computational-basis part ``4d sum_k tr(sigma P_k) tr^2(o P_k)``."""
    s = check_density_matrix(sigma).matrix
    o = o_operator(o_obs)
    check_same_dim(s.shape[0], o.shape[0], "state and observable")
    return _diag_term(s, o)


def variance_exact(sigma, o_obs, *, verify: bool = False) -> VarianceReport:
    """Exact variance terms for state ``sigma``; ``verify`` cross-checks by snapshot sum."""
    sig = check_density_matrix(sigma)
    obs = check_observable(o_obs)
    check_same_dim(sig.dim, obs.dim, "state and observable")
    d = sig.dim
    o = o_operator(obs)
    vd = _v_diag(sig.matrix, o)
    dt = _diag_term(sig.matrix, o)
    total = vd + dt
    t0 = obs.traceless_hs_norm_sq()
    mean0 = float(np.sum(sig.matrix * obs.traceless_part().T).real)
    rep = VarianceReport(
        variance_exact=total,
        v_diag=vd,
        diag_term=dt,
        worst_bound=2 * d * t0,
        avg_bound=2 * t0,
        shot_variance=total - mean0**2,
        traceless_hs_sq=t0,
        mub_avg_constant=(1 + 1 / d) * t0,
    )
    if verify:
        second, _ = variance_by_snapshots(sig, obs)
        if abs(second - total) > ATOL_STATISTICAL * max(1.0, abs(total)):
            raise InvariantViolation(
                f"closed form {total!r} disagrees with snapshot sum {second!r}")
    return rep


def variance_by_snapshots(sigma, o_obs) -> tuple[float, float]:
    """Brute-force ``(second moment, variance)`` over all ``2d^2 - d`` outcomes.

    The second moment is taken of the single-shot estimates of ``O_0``; the
    variance is that of the raw estimates of ``O``.
    """
    sig = check_density_matrix(sigma)
    obs = check_observable(o_obs)
    d = sig.dim
    p = snapshot_probabilities(sig, build_ensemble(d))
    vals = single_shot_values(np.arange(num_snapshots(d)), as_accessor(obs))
    mean = float(p @ vals)
    centred = vals - obs.trace / d
    return float(p @ centred**2), float(p @ vals**2 - mean**2)


def t_value(o_obs) -> float:
    """``T = 2 sum_k o_kk^2 + sum_{j<k} [(o_jj + o_kk)^2 + 2 |o_jk|^2]``, with ``T <= tr(O_0^2)``."""
    o = o_operator(o_obs)
    d = o.shape[0]
    od = o.diagonal().real
    j, k = np.triu_indices(d, 1)
    return float(2 * np.sum(od**2) + np.sum((od[j] + od[k]) ** 2 + 2 * np.abs(o[j, k]) ** 2))


def check_bounds(o_obs, states, *, ids=None, tol: float = ATOL_STATISTICAL) -> list[dict]:
    """Audit worst-case and maximally-mixed bounds over ``states``.

    Returns one row per state; raises :class:`BoundViolation` carrying the
    offending state on the first failure. Rows for ``I/d`` are also held to
    the average bound ``2 tr(O_0^2)``.
    """
    obs = check_observable(o_obs)
    d = obs.dim
    rows = []
    ids = list(ids) if ids is not None else list(range(len(states)))
    for sid, st in zip(ids, states):
        st = check_density_matrix(st)
        rep = variance_exact(st, obs)
        if rep.variance_exact > rep.worst_bound + tol:
            raise BoundViolation(
                f"state {sid}: variance {rep.variance_exact} exceeds 2d tr(O_0^2) = "
                f"{rep.worst_bound}", st.matrix)
        mixed = np.allclose(st.matrix, np.eye(d) / d, atol=1e-12)
        if mixed and rep.variance_exact > rep.avg_bound + tol:
            raise BoundViolation(
                f"state {sid}: maximally mixed variance {rep.variance_exact} exceeds "
                f"2 tr(O_0^2) = {rep.avg_bound}", st.matrix)
        row = {"state_id": sid, **asdict(rep), "ratio": rep.ratio}
        rows.append(row)
    return rows


AUDIT_COLUMNS = ["state_id", "variance_exact", "v_diag", "worst_bound", "avg_bound", "ratio"]


def write_audit_csv(rows, fh, *, comment: str | None = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    w = csv.DictWriter(fh, fieldnames=AUDIT_COLUMNS + ["diag_term", "shot_variance",
                                                       "mub_avg_constant"],
                       extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
