import io
import json

import numpy as np
import pytest

from conftest import rand_herm, rand_rho, ref_snapshots, ref_vector
from ddbst.average_study import (
    AverageStudyConfig,
    Threshold,
    _batch_max_deviation,
    average_variance_audit,
    classify,
    max_deviation,
    run_proportion_study,
)
from ddbst.linalg import haar_random_pure, make_rho_a
from ddbst.variance import BoundViolation


def ref_max_deviation(rho):
    d = rho.shape[0]
    return max(abs(np.real(v.conj() @ rho @ v) - 1 / d)
               for v in (ref_vector(*lab, d) for lab in ref_snapshots(d)))


class TestMaxDeviation:
    def test_maximally_mixed(self):
        assert max_deviation(np.eye(8) / 8) == pytest.approx(0, abs=1e-15)

    def test_basis_state(self):
        d = 4
        rho = np.zeros((d, d))
        rho[0, 0] = 1
        assert max_deviation(rho) == pytest.approx(1 - 1 / d)

    def test_rho_a(self, rng):
        d, b = 16, 0.5 * 16**-1.5
        assert max_deviation(make_rho_a(d, b, rng)) <= b + 1e-15

    @pytest.mark.parametrize("d", [2, 3, 5, 8])
    def test_against_reference(self, d, rng):
        for _ in range(5):
            rho = rand_rho(d, rng)
            assert max_deviation(rho) == pytest.approx(ref_max_deviation(rho), abs=1e-13)

    def test_batch_matches_single(self, rng):
        rhos = np.stack([rand_rho(6, rng) for _ in range(10)])
        got = _batch_max_deviation(rhos)
        assert np.allclose(got, [max_deviation(r) for r in rhos], atol=1e-14)

    def test_permutation_invariant(self, rng):
        rho = rand_rho(6, rng)
        perm = rng.permutation(6)
        assert max_deviation(rho[np.ix_(perm, perm)]) == pytest.approx(max_deviation(rho))


class TestClassify:
    def test_boundary_tie_counts(self):
        # qubit |0>: deviation 1/2, so d * dev = 1 exactly
        rho = np.diag([1.0, 0.0])
        assert classify(rho, 1.0)
        assert not classify(rho, 0.999)

    def test_monotone_in_threshold(self, rng):
        rho = haar_random_pure(8, rng)
        flags = [classify(rho, s) for s in (0.5, 1, 2, 4, 8, 16, 64)]
        assert flags == sorted(flags)

    def test_nonpositive_threshold(self):
        with pytest.raises(ValueError):
            classify(np.eye(2) / 2, 0)


class TestThreshold:
    @pytest.mark.parametrize("label,n,val", [("4", 3, 4.0), ("2n", 3, 6.0), ("n^2", 3, 9.0),
                                             ("n**2", 4, 16.0), ("n", 5, 5.0), ("0.5n", 4, 2.0)])
    def test_parse(self, label, n, val):
        assert Threshold(label)(n) == val

    @pytest.mark.parametrize("label", ["", "x", "n^", "-1", "0"])
    def test_bad(self, label):
        with pytest.raises(ValueError):
            Threshold(label)(3)


class TestStudy:
    def test_config_errors(self):
        with pytest.raises(ValueError):
            AverageStudyConfig(trials_per_dim=0)
        with pytest.raises(ValueError):
            AverageStudyConfig(state_family="gaussian")
        with pytest.raises(ValueError):
            AverageStudyConfig(qubit_range=(13,))
        with pytest.raises(ValueError):
            AverageStudyConfig(thresholds=())

    def test_deterministic_across_workers(self):
        base = dict(qubit_range=(2, 3, 4), trials_per_dim=50, seed=5)
        a = run_proportion_study(AverageStudyConfig(**base, workers=1))
        b = run_proportion_study(AverageStudyConfig(**base, workers=3))
        assert a.rows == b.rows

    def test_monotone_fractions(self):
        cfg = AverageStudyConfig(qubit_range=(2, 3, 4, 5), trials_per_dim=100,
                                 thresholds=("1", "4", "n^2", "100"), seed=1)
        t = run_proportion_study(cfg)
        for n in cfg.qubit_range:
            fr = [t.fractions(lab)[n] for lab in cfg.thresholds]
            assert fr == sorted(fr)
        assert all(v == 1.0 for v in t.fractions("100").values())

    def test_outputs(self):
        t = run_proportion_study(AverageStudyConfig(qubit_range=(2, 3), trials_per_dim=10,
                                                    state_family="hs_mixed"))
        buf = io.StringIO()
        t.to_csv(buf, comment="c")
        lines = buf.getvalue().splitlines()
        assert lines[:2] == ["# c", "n,d,threshold,s,fraction,trials"]
        assert len(lines) == 2 + 2 * 3
        series = json.loads(t.to_json())
        assert set(series) == {"4", "2n", "n^2"} and series["2n"]["s"] == [4.0, 6.0]


class TestAudit:
    def test_rho_a(self, rng):
        d = 64
        states = [make_rho_a(d, 0.5 * d**-1.5, rng) for _ in range(5)] + [np.eye(d) / d]
        o = rand_herm(d, rng)
        rows = average_variance_audit(states, o, 2.0)
        assert len(rows) == 6
        assert all(r["variance_exact"] <= r["bound"] for r in rows)

    def test_rejects_unclassified(self):
        with pytest.raises(ValueError):
            average_variance_audit([np.diag([1.0, 0, 0, 0])], np.eye(4), 1.0)

    def test_violation(self, rng):
        with pytest.raises(BoundViolation):
            average_variance_audit([np.eye(4) / 4], rand_herm(4, rng), 1.0, tol=-10.0)
