"""Classical shadow tomography with dense dual bases (DDB)."""

__version__ = "0.1.0"

from ._validation import InvariantViolation
from .average_study import (
    AverageStudyConfig,
    ProportionTable,
    classify,
    average_variance_audit,
    max_deviation,
    run_proportion_study,
)
from .channel import (
    ObservableEntryAccessor,
    SingleShotEstimate,
    channel_apply,
    inverse_channel_apply,
    single_shot_estimate,
    single_shot_values,
)
from .ensemble import (
    DDBEnsemble,
    SnapshotId,
    SnapshotKind,
    build_ensemble,
    draw_random_snapshot,
    enumerate_snapshots,
    snapshot_overlap,
)
from .estimator import (
    DDBShadowEstimator,
    EstimationConfig,
    EstimationReport,
    ShadowLog,
    estimate,
    plan_shots,
    simulate_shots,
)
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
    AffineIndexMap,
    AffineStabilizerState,
    StabilizerEstimateReport,
    amplitudes,
    max_ddb_overlap,
    random_affine_stabilizer,
    reduce_to_block,
    stabilizer_estimate,
)
from .variance import BoundViolation, VarianceReport, check_bounds, variance_exact

__all__ = [
    "__version__",
    "InvariantViolation",
    "BoundViolation",
    "AverageStudyConfig",
    "ProportionTable",
    "classify",
    "average_variance_audit",
    "max_deviation",
    "run_proportion_study",
    "ObservableEntryAccessor",
    "SingleShotEstimate",
    "channel_apply",
    "inverse_channel_apply",
    "single_shot_estimate",
    "single_shot_values",
    "DDBEnsemble",
    "SnapshotId",
    "SnapshotKind",
    "build_ensemble",
    "draw_random_snapshot",
    "enumerate_snapshots",
    "snapshot_overlap",
    "DDBShadowEstimator",
    "EstimationConfig",
    "EstimationReport",
    "ShadowLog",
    "estimate",
    "plan_shots",
    "simulate_shots",
    "DensityMatrix",
    "HermitianObservable",
    "haar_random_pure",
    "hs_random_mixed",
    "make_rho_a",
    "random_observable",
    "random_stream",
    "trace_inner",
    "AffineIndexMap",
    "AffineStabilizerState",
    "StabilizerEstimateReport",
    "amplitudes",
    "max_ddb_overlap",
    "random_affine_stabilizer",
    "reduce_to_block",
    "stabilizer_estimate",
    "VarianceReport",
    "check_bounds",
    "variance_exact",
]
