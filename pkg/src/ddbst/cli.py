"""Command-line driver: ``ddbst {estimate,variance,proportions,stabilizer,bench}``.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable input
file, 4 invariant violation. Each run writes its outputs to ``--out`` and a
``run_manifest.json`` last, listing every output with its sha256.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import InvariantViolation
from .average_study import AverageStudyConfig, run_proportion_study
from .channel import ObservableEntryAccessor, single_shot_values
from .ensemble import SnapshotId, SnapshotKind, build_ensemble, draw_random_codes, snapshot_projector
from .estimator import (
    EstimationConfig,
    STRATEGIES,
    ShadowFormatError,
    estimate,
    serialize_shadow,
)
from .io import ParseError, load_observable, load_state
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    haar_random_pure,
    hs_random_mixed,
    make_rho_a,
    random_observable,
    random_stream,
    trace_inner,
)
from .stabilizer import (
    L2_MODES,
    AffineStabilizerState,
    amplitudes,
    plan_stabilizer_shots,
    random_affine_stabilizer,
    reduce_to_block,
    stabilizer_estimate,
)
from .variance import BoundViolation, check_bounds, write_audit_csv

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_INVARIANT = 0, 2, 3, 4
SEED_ENV = "DDB_SHADOW_SEED"
ORACLE_MAX_QUBITS = 12
ORACLE_FIT_MIN_DIM = 1024


class UsageError(ValueError):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


class Run:
    """Tracks outputs of one command and writes the manifest last."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs: list[Path] = []

    @property
    def comment(self) -> str:
        return f"ddbst {__version__} seed={self.args.seed}"

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return p

    def finish(self) -> None:
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.command,
            "config": config,
            "seed": self.args.seed,
            "version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": [{"path": p.name,
                         "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
                        for p in self.outputs],
        }
        (self.out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# ------------------------------------------------------------------ helpers

def _parse_n_range(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(x) for x in text.split(","))


def _make_state(kind: str, d: int, rng, args) -> DensityMatrix:
    if kind == "maximally-mixed":
        return DensityMatrix.maximally_mixed(d)
    if kind == "haar":
        return haar_random_pure(d, rng)
    if kind == "hs":
        return hs_random_mixed(d, rng)
    if kind == "rho-a":
        bound = args.rho_a_bound if args.rho_a_bound is not None else 0.5 * d**-1.5
        return make_rho_a(d, bound, rng)
    if kind == "file":
        if not args.state_file:
            raise UsageError("--state file needs --state-file")
        return load_state(args.state_file)
    raise UsageError(f"unknown state kind {kind!r}")


def _p01_plus(d: int) -> np.ndarray:
    return snapshot_projector(SnapshotId.pair(SnapshotKind.REAL_PLUS, 0, 1), d)


# ----------------------------------------------------------------- commands

def cmd_estimate(args) -> int:
    run = Run("estimate", args)
    obs = load_observable(args.observable)
    d = args.dim if args.dim is not None else obs.dim
    if obs.dim != d:
        raise UsageError(f"--dim {d} does not match observable dim {obs.dim}")
    rho = _make_state(args.state, d, random_stream(args.seed, 1), args)
    if rho.dim != d:
        raise UsageError(f"state dim {rho.dim} does not match {d}")
    cfg = EstimationConfig(shots=args.shots, strategy=args.strategy, batches=args.batches,
                           seed=args.seed, sigma=args.sigma, workers=args.workers,
                           keep_log=bool(args.shadow_log))
    rep = estimate(rho, obs, build_ensemble(d), cfg)
    out = rep.to_dict()
    if args.oracle:
        exact = float(trace_inner(rho, obs).real)
        out["oracle"] = exact
        out["abs_error"] = abs(rep.estimate - exact)
    run.write_json("estimate.json", out)
    if args.shadow_log:
        run.path("shadow.bin").write_bytes(serialize_shadow(rep.shadow_log))
    run.finish()
    print(json.dumps({"estimate": rep.estimate, "std_error": out["std_error"]}))
    return EXIT_OK


def cmd_variance(args) -> int:
    run = Run("variance", args)
    d = args.dim
    states, ids = [], []
    if args.worst_case:
        obs = HermitianObservable(_p01_plus(d))
        states.append(DensityMatrix(_p01_plus(d)))
        ids.append("p01_plus")
    elif args.observable:
        obs = load_observable(args.observable)
    elif args.identity:
        obs = HermitianObservable(np.eye(d, dtype=np.complex128))
    else:
        obs = random_observable(d, random_stream(args.seed, 0), hs_norm_sq=1.0)
    if obs.dim != d:
        raise UsageError(f"--dim {d} does not match observable dim {obs.dim}")
    states.append(DensityMatrix.maximally_mixed(d))
    ids.append("maximally_mixed")
    rng = random_stream(args.seed, 1)
    for i in range(args.states):
        states.append(_make_state(args.family, d, rng, args))
        ids.append(str(i))
    try:
        rows = check_bounds(obs, states, ids=ids)
    except BoundViolation as exc:
        run.path("violation_state.json").write_text(exc.state_json())
        run.finish()
        raise
    with open(run.path("variance_audit.csv"), "w", newline="") as fh:
        write_audit_csv(rows, fh, comment=run.comment)
    run.finish()
    return EXIT_OK


def cmd_proportions(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    run = Run("proportions", args)
    family = {"haar": "haar_pure", "hs": "hs_mixed"}[args.family]
    cfg = AverageStudyConfig(qubit_range=_parse_n_range(args.n_range), trials_per_dim=args.trials,
                             thresholds=tuple(t.strip() for t in args.thresholds.split(",")),
                             seed=args.seed, state_family=family, workers=args.workers)
    table = run_proportion_study(cfg)
    with open(run.path("proportions.csv"), "w", newline="") as fh:
        table.to_csv(fh, comment=run.comment)
    run.path("proportions.json").write_text(table.to_json(indent=2) + "\n")
    run.finish()
    return EXIT_OK


def cmd_stabilizer(args) -> int:
    run = Run("stabilizer", args)
    rng = random_stream(args.seed, 0)
    if args.state:
        try:
            psi = AffineStabilizerState.from_json(Path(args.state).read_text())
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            if isinstance(exc, InvariantViolation):
                raise
            raise ParseError(f"{args.state}: {exc}") from exc
    else:
        if args.n is None or args.r is None:
            raise UsageError("give --state or both --n and --r")
        psi = random_affine_stabilizer(args.n, args.r, rng, cap=max(args.n, 12))
    d = 2**psi.n
    if args.observable:
        obs = load_observable(args.observable)
        if obs.dim != d:
            raise UsageError(f"observable dim {obs.dim} does not match 2^{psi.n}")
    else:
        obs = random_observable(d, random_stream(args.seed, 1), hs_norm_sq=args.obs_hs,
                                traceless=args.traceless_offdiag,
                                offdiagonal=args.traceless_offdiag)
    acc = ObservableEntryAccessor.from_dense(obs)
    shots = args.shots or plan_stabilizer_shots(acc.hs_norm_sq, args.epsilon, args.sigma)
    cfg = EstimationConfig(shots=shots, seed=args.seed, epsilon=args.epsilon, sigma=args.sigma,
                           workers=args.workers)
    rep = stabilizer_estimate(psi, acc, cfg, args.l2_mode, r_direct=args.r_direct)
    out = {"report": rep.to_dict(), "state": psi.to_dict()}
    if psi.n <= ORACLE_MAX_QUBITS:
        a = amplitudes(psi, cap=ORACLE_MAX_QUBITS)
        exact = float(np.real(a.conj() @ obs.matrix @ a))
        out.update(oracle=exact, abs_error=abs(rep.final_estimate - exact))
    run.write_json("stabilizer_estimate.json", out)
    run.finish()
    print(json.dumps({"final_estimate": rep.final_estimate, "l2_bound": rep.l2_bound}))
    return EXIT_OK


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def cmd_bench(args) -> int:
    run = Run("bench", args)
    dims = [int(x) for x in args.dims.split(",")]
    rows = []
    for d in dims:
        rng = random_stream(args.seed, d)
        acc = ObservableEntryAccessor.from_dense(random_observable(d, rng))
        codes = draw_random_codes(d, rng, args.shots)
        best = min(_timed(lambda: single_shot_values(codes, acc)) for _ in range(args.repeats))
        rows.append({"kind": "per_shot", "size": d, "seconds": best / args.shots})
        a, b = haar_random_pure(d, rng), random_observable(d, rng)
        best = min(_timed(lambda: trace_inner(a, b)) for _ in range(args.repeats))
        rows.append({"kind": "dense_oracle", "size": d, "seconds": best})
    for n in _parse_n_range(args.n_range):
        psi = random_affine_stabilizer(n, n // 2, random_stream(args.seed, 1000 + n), cap=n)
        best = min(_timed(lambda: reduce_to_block(psi)) for _ in range(args.repeats))
        rows.append({"kind": "reduction", "size": n, "seconds": best})
    with open(run.path("bench.csv"), "w", newline="") as fh:
        fh.write(f"# {run.comment}\n")
        w = csv.DictWriter(fh, fieldnames=["kind", "size", "seconds"])
        w.writeheader()
        w.writerows(rows)

    def series(kind):
        pts = [(r["size"], r["seconds"]) for r in rows if r["kind"] == kind]
        return [p[0] for p in pts], [p[1] for p in pts]

    xs, ys = series("per_shot")
    summary = {"per_shot_ratio_max_over_min_dim": ys[-1] / ys[0] if len(ys) > 1 else 1.0}
    xo, yo = series("dense_oracle")
    # below ~1024 the matrices sit in cache and the fit mixes two regimes
    big = [i for i, x in enumerate(xo) if x >= ORACLE_FIT_MIN_DIM]
    if len(big) >= 2:
        summary["dense_oracle_loglog_slope"] = _slope([xo[i] for i in big], [yo[i] for i in big])
    xr, yr = series("reduction")
    if len(xr) >= 2:
        summary["reduction_loglog_slope"] = _slope(xr, yr)
    run.write_json("bench_summary.json", summary)
    run.finish()
    print(json.dumps(summary))
    return EXIT_OK


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddbst", description="DDB classical shadow tools")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out):
        sp.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default: ${SEED_ENV} or 0)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", default=out)

    e = sub.add_parser("estimate", help="estimate tr(rho O) from simulated shots")
    common(e, "out/estimate")
    e.add_argument("--dim", type=int)
    e.add_argument("--state", default="maximally-mixed",
                   choices=["maximally-mixed", "haar", "hs", "rho-a", "file"])
    e.add_argument("--state-file")
    e.add_argument("--rho-a-bound", type=float,
                   help="off-diagonal magnitude bound (default 0.5 d^-1.5, which stays PSD)")
    e.add_argument("--observable", required=True)
    e.add_argument("--shots", type=int, default=10_000)
    e.add_argument("--strategy", choices=STRATEGIES, default="mean")
    e.add_argument("--batches", type=int)
    e.add_argument("--sigma", type=float, default=0.05)
    e.add_argument("--oracle", action="store_true", help="add the exact value and error")
    e.add_argument("--shadow-log", action="store_true", help="also write shadow.bin")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("variance", help="audit the exact variance against its bounds")
    common(v, "out/variance")
    v.add_argument("--dim", type=int, required=True)
    g = v.add_mutually_exclusive_group()
    g.add_argument("--observable")
    g.add_argument("--identity", action="store_true", help="use O = I")
    g.add_argument("--worst-case", action="store_true",
                   help="sigma = O = projector on (|0>+|1>)/sqrt(2)")
    v.add_argument("--states", type=int, default=0, help="number of random states")
    v.add_argument("--family", default="haar", choices=["haar", "hs", "rho-a"])
    v.add_argument("--rho-a-bound", type=float)
    v.set_defaults(func=cmd_variance)

    f = sub.add_parser("proportions", help="fraction of approximately DDB-average states")
    common(f, "out/proportions")
    f.add_argument("--n-range", default="2..8")
    f.add_argument("--trials", type=int, default=1000)
    f.add_argument("--thresholds", default="4,2n,n^2")
    f.add_argument("--family", choices=["haar", "hs"], default="haar")
    f.set_defaults(func=cmd_proportions)

    s = sub.add_parser("stabilizer", help="block-reduced estimate on a stabilizer state")
    common(s, "out/stabilizer")
    s.add_argument("--n", type=int)
    s.add_argument("--r", type=int)
    s.add_argument("--state", help="stabilizer state JSON")
    s.add_argument("--observable")
    s.add_argument("--obs-hs", type=float, default=4.0, help="tr(O^2) of a random observable")
    s.add_argument("--traceless-offdiag", action="store_true",
                   help="random observable with zero diagonal")
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--sigma", type=float, default=0.05)
    s.add_argument("--shots", type=int, help="override the planned shot count")
    s.add_argument("--l2-mode", choices=L2_MODES, default="neglect")
    s.add_argument("--r-direct", type=int, default=10)
    s.set_defaults(func=cmd_stabilizer)

    b = sub.add_parser("bench", help="timing of per-shot work, dense oracle, reduction")
    common(b, "out/bench")
    b.add_argument("--dims", default="16,64,256,1024,2048,4096")
    b.add_argument("--shots", type=int, default=1_000_000)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--n-range", default="8,16,32,64,128")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is None:
            args.seed = _default_seed()
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except (ParseError, ShadowFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (UsageError, ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
