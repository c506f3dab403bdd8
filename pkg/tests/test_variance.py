import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rand_herm, rand_rho, ref_inverse_channel, ref_probability, ref_snapshots, ref_vector
from ddbst.channel import inverse_channel_apply
from ddbst.linalg import haar_random_pure, random_stream
from ddbst.variance import (
    AUDIT_COLUMNS,
    BoundViolation,
    check_bounds,
    diag_term,
    o_operator,
    t_value,
    v_diag,
    variance_by_snapshots,
    variance_exact,
    write_audit_csv,
)


def ref_moments(rho, o):
    """Dense ``(second moment of traceless estimate, comp part, pair part)``."""
    d = rho.shape[0]
    o0 = o - np.trace(o) / d * np.eye(d)
    comp = pair = 0.0
    for kind, j, k in ref_snapshots(d):
        v = ref_vector(kind, j, k, d)
        x = np.real(np.trace(ref_inverse_channel(np.outer(v, v.conj())) @ o0))
        term = ref_probability(rho, kind, j, k) * x**2
        if kind == "Comp":
            comp += term
        else:
            pair += term
    return comp + pair, comp, pair


def traceless_sq(o):
    d = o.shape[0]
    o0 = o - np.trace(o) / d * np.eye(d)
    return float(np.sum(np.abs(o0) ** 2))


class TestOOperator:
    def test_qubit_example(self):
        o = np.array([[1.0, 2.0], [2.0, -1.0]])
        assert np.allclose(o_operator(o), [[0.5, 2.0], [2.0, -0.5]])

    def test_identity_gives_zero(self):
        assert np.allclose(o_operator(np.eye(4)), 0)

    @pytest.mark.parametrize("d", [2, 3, 6])
    def test_inverse_channel_relation(self, d, rng):
        o = rand_herm(d, rng)
        o0 = o - np.trace(o) / d * np.eye(d)
        assert np.allclose(2 * d * o_operator(o), inverse_channel_apply(o0), atol=1e-12)


class TestClosedForms:
    @pytest.mark.parametrize("d", range(2, 13))
    def test_against_dense_oracle(self, d, rng):
        for _ in range(3):
            rho, o = rand_rho(d, rng), rand_herm(d, rng, scale=2.0)
            total, comp, pair = ref_moments(rho, o)
            rep = variance_exact(rho, o, verify=True)
            assert rep.variance_exact == pytest.approx(total, rel=1e-9, abs=1e-12)
            assert rep.diag_term == pytest.approx(comp, rel=1e-9, abs=1e-12)
            assert rep.v_diag == pytest.approx(pair, rel=1e-9, abs=1e-12)
            assert diag_term(rho, o) == rep.diag_term and v_diag(rho, o) == rep.v_diag

    @pytest.mark.parametrize("d", [3, 5, 8])
    def test_snapshot_sum_agrees(self, d, rng):
        rho, o = rand_rho(d, rng), rand_herm(d, rng)
        second, var = variance_by_snapshots(rho, o)
        rep = variance_exact(rho, o)
        assert second == pytest.approx(rep.variance_exact, rel=1e-10)
        assert var == pytest.approx(rep.shot_variance, rel=1e-9, abs=1e-12)

    def test_offdiagonal_formula(self, rng):
        # with a purely off-diagonal o, v_diag reduces to 2d sum (s_jj+s_kk)|o_jk|^2
        d = 6
        o = rand_herm(d, rng)
        o[np.diag_indices(d)] = 0
        rho = rand_rho(d, rng)
        j, k = np.triu_indices(d, 1)
        want = 2 * d * np.sum((rho[j, j] + rho[k, k]).real * np.abs(o[j, k]) ** 2)
        assert v_diag(rho, o) == pytest.approx(want, rel=1e-12)
        assert diag_term(rho, o) == 0

    def test_multiple_of_identity(self, rng):
        rep = variance_exact(rand_rho(4, rng), 3 * np.eye(4))
        assert rep.variance_exact == 0 and rep.ratio == 0

    @pytest.mark.parametrize("d", [2, 4, 8, 16])
    def test_maximally_mixed_ratio(self, d, rng):
        for _ in range(20):
            rep = variance_exact(np.eye(d) / d, rand_herm(d, rng))
            assert rep.ratio <= 2 + 1e-12
            assert rep.variance_exact <= rep.avg_bound + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(d=st.integers(2, 8), seed=st.integers(0, 2**32), c=st.floats(0.1, 10))
    def test_scaling(self, d, seed, c):
        gen = random_stream(seed)
        rho, o = rand_rho(d, gen), rand_herm(d, gen)
        a = variance_exact(rho, o).variance_exact
        b = variance_exact(rho, c * o).variance_exact
        assert b == pytest.approx(c**2 * a, rel=1e-9, abs=1e-14)

    def test_diag_term_bound(self, rng):
        for d in (3, 8):
            for _ in range(20):
                rho, o = rand_rho(d, rng), rand_herm(d, rng)
                assert diag_term(rho, o) <= 4 * traceless_sq(o) / d + 1e-12

    def test_t_value_bound(self, rng):
        for d in (2, 5, 9):
            o = rand_herm(d, rng)
            assert t_value(o) <= traceless_sq(o) + 1e-12

    def test_mismatched_dims(self):
        with pytest.raises(ValueError):
            variance_exact(np.eye(3) / 3, np.eye(4))


class TestWorstCase:
    def test_pure_states_below_worst_bound(self, rng):
        d = 8
        for _ in range(200):
            rho, o = haar_random_pure(d, rng), rand_herm(d, rng)
            rep = variance_exact(rho, o)
            assert rep.variance_exact <= rep.worst_bound + 1e-10

    @pytest.mark.parametrize("d", [4, 8, 16, 32])
    def test_pair_state_variance_grows(self, d):
        # sigma = O = |+_{01}><+_{01}| concentrates the pair term
        v = np.zeros(d)
        v[[0, 1]] = 1 / np.sqrt(2)
        p = np.outer(v, v)
        rep = variance_exact(p, p)
        assert rep.v_diag == pytest.approx(ref_moments(p, p)[2], rel=1e-9)
        assert rep.v_diag > d / 2

    def test_check_bounds_rows(self, rng):
        states = [np.eye(4) / 4, rand_rho(4, rng)]
        rows = check_bounds(rand_herm(4, rng), states, ids=["mixed", "r"])
        assert [r["state_id"] for r in rows] == ["mixed", "r"]
        assert all(set(AUDIT_COLUMNS) <= set(r) for r in rows)

    def test_violation_carries_state(self, rng):
        rho = rand_rho(3, rng)
        with pytest.raises(BoundViolation) as exc:
            check_bounds(rand_herm(3, rng), [rho], tol=-1e3)
        assert np.allclose(np.array(json.loads(exc.value.state_json())["real"]), rho.real)

    def test_csv(self, rng):
        rows = check_bounds(rand_herm(3, rng), [np.eye(3) / 3])
        buf = io.StringIO()
        write_audit_csv(rows, buf, comment="test")
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# test"
        assert lines[1].split(",")[:6] == AUDIT_COLUMNS
