"""Shared fixtures and independent reference implementations.

The reference helpers here are written from the definitions (explicit
vectors, dense projectors, double loops) and share no code with the package
beyond its public types, so they can serve as oracles.
"""

import itertools

import numpy as np
import pytest

from ddbst.linalg import random_stream

SQ2 = np.sqrt(2.0)

# filled by the acceptance tests, echoed after the run
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return random_stream(20240607)


def ref_vector(kind: str, j: int, k, d: int) -> np.ndarray:
    """Snapshot state vector written out from its definition."""
    v = np.zeros(d, dtype=np.complex128)
    if kind == "Comp":
        v[j] = 1.0
        return v
    v[j] = 1 / SQ2
    v[k] = {"RealPlus": 1, "RealMinus": -1, "ImagPlus": 1j, "ImagMinus": -1j}[kind] / SQ2
    return v


def ref_snapshots(d: int):
    """All ``(kind, j, k)`` labels, enumerated independently of the package."""
    out = [("Comp", t, None) for t in range(d)]
    for j, k in itertools.combinations(range(d), 2):
        for kind in ("RealPlus", "RealMinus", "ImagPlus", "ImagMinus"):
            out.append((kind, j, k))
    return out


def ref_probability(rho: np.ndarray, kind: str, j: int, k) -> float:
    """Outcome probability: ``tr(rho P)/d`` for computational, ``/(2d)`` for pairs."""
    d = rho.shape[0]
    v = ref_vector(kind, j, k, d)
    ov = float(np.real(v.conj() @ rho @ v))
    return ov / d if kind == "Comp" else ov / (2 * d)


def ref_inverse_channel(x: np.ndarray) -> np.ndarray:
    """Dense inverse channel from a double loop over entries."""
    d = x.shape[0]
    tr = np.trace(x)
    out = np.zeros_like(x, dtype=np.complex128)
    for a in range(d):
        for b in range(d):
            if a == b:
                out[a, b] = 2 * x[a, a] - tr / d
            else:
                out[a, b] = 2 * d * x[a, b]
    return out


def ref_trace(a: np.ndarray, b: np.ndarray) -> complex:
    d = a.shape[0]
    total = 0j
    for j in range(d):
        for k in range(d):
            total += a[j, k] * b[k, j]
    return total


def rand_herm(d: int, rng, scale: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = (g + g.conj().T) / 2
    return scale * h / np.linalg.norm(h)


def rand_rho(d: int, rng) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    r = g @ g.conj().T
    return r / np.trace(r).real
