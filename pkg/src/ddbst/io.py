"""File formats for observables and states.

Observable JSON holds the upper triangle, ``{"dim": d, "entries": [[row, col,
re, im], ...]}``, and is completed Hermitian on load. State JSON holds the
dense matrix as ``{"dim": d, "real": [[...]], "imag": [[...]]}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .linalg import DensityMatrix, HermitianObservable

__all__ = [
    "ParseError",
    "load_observable",
    "dump_observable",
    "load_state",
    "dump_state",
]


class ParseError(ValueError):
    """Malformed input file."""


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict) or "dim" not in data:
        raise ParseError(f"{path}: expected an object with a 'dim' field")
    return data


def _dim(data, path) -> int:
    d = data["dim"]
    if not isinstance(d, int) or d < 2:
        raise ParseError(f"{path}: dim must be an integer >= 2, got {d!r}")
    return d


def observable_from_dict(data: dict, path="<observable>") -> HermitianObservable:
    d = _dim(data, path)
    mat = np.zeros((d, d), dtype=np.complex128)
    seen = set()
    for k, item in enumerate(data.get("entries", [])):
        try:
            row, col, re, im = item
            row, col, re, im = int(row), int(col), float(re), float(im)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: entry {k} is not [row, col, re, im]") from exc
        if not (0 <= row <= col < d):
            raise ParseError(f"{path}: entry {k} at ({row}, {col}) is not in the upper triangle")
        if (row, col) in seen:
            raise ParseError(f"{path}: entry {k} repeats ({row}, {col})")
        if row == col and im != 0.0:
            raise ParseError(f"{path}: diagonal entry {k} has nonzero imaginary part")
        seen.add((row, col))
        mat[row, col] = re + 1j * im
        mat[col, row] = re - 1j * im
    return HermitianObservable(mat)


def load_observable(path) -> HermitianObservable:
    return observable_from_dict(_read_json(path), path)


def observable_to_dict(o) -> dict:
    mat = o.matrix if isinstance(o, HermitianObservable) else np.asarray(o)
    d = mat.shape[0]
    rows, cols = np.triu_indices(d)
    keep = mat[rows, cols] != 0
    entries = [[int(i), int(j), float(mat[i, j].real), float(mat[i, j].imag)]
               for i, j in zip(rows[keep], cols[keep])]
    return {"dim": int(d), "entries": entries}


def dump_observable(o, path) -> None:
    Path(path).write_text(json.dumps(observable_to_dict(o)))


def load_state(path) -> DensityMatrix:
    """Read a state file; physical validation errors propagate unchanged."""
    data = _read_json(path)
    d = _dim(data, path)
    try:
        re = np.asarray(data["real"], dtype=np.float64)
        im = np.asarray(data.get("imag", np.zeros((d, d))), dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad matrix data ({exc})") from exc
    if re.shape != (d, d) or im.shape != (d, d):
        raise ParseError(f"{path}: real/imag must be {d}x{d}")
    return DensityMatrix(re + 1j * im)


def dump_state(rho, path) -> None:
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    Path(path).write_text(json.dumps({"dim": int(mat.shape[0]), "real": mat.real.tolist(),
                                      "imag": mat.imag.tolist()}))
