import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rand_herm, rand_rho, ref_trace
from ddbst._validation import InvariantViolation
from ddbst.ensemble import all_overlaps
from ddbst.linalg import (
    DensityMatrix,
    HermitianObservable,
    depolarize,
    haar_random_pure,
    haar_random_unitary,
    hs_random_mixed,
    make_rho_a,
    random_observable,
    random_stream,
    trace_inner,
)


class TestTraceInner:
    def test_maximally_mixed(self, rng):
        o = rand_herm(5, rng)
        assert trace_inner(np.eye(5) / 5, o) == pytest.approx(np.trace(o) / 5, abs=1e-14)

    def test_projector_idempotent(self):
        p = np.zeros((3, 3))
        p[0, 0] = 1
        assert trace_inner(p, p) == 1

    def test_against_double_loop(self, rng):
        a, b = rand_herm(4, rng), rand_herm(4, rng)
        assert abs(trace_inner(a, b) - ref_trace(a, b)) < 1e-12

    def test_non_hermitian_double_loop(self, rng):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        assert abs(trace_inner(a, b) - ref_trace(a, b)) < 1e-12

    def test_typed_fast_path_matches(self, rng):
        rho, o = rand_rho(6, rng), rand_herm(6, rng)
        fast = trace_inner(DensityMatrix(rho), HermitianObservable(o))
        assert abs(fast - ref_trace(rho, o)) < 1e-12

    def test_hermitian_inputs_real(self, rng):
        a, b = rand_herm(6, rng), rand_herm(6, rng)
        val = trace_inner(a, b)
        assert abs(val.imag) <= 1e-10
        assert abs(val - np.conj(trace_inner(b, a))) < 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            trace_inner(np.eye(2), np.eye(3))


class TestTypes:
    def test_density_rejects_bad_trace(self):
        with pytest.raises(InvariantViolation):
            DensityMatrix(np.eye(2))

    def test_density_rejects_non_psd(self):
        with pytest.raises(InvariantViolation):
            DensityMatrix(np.diag([1.5, -0.5]))

    def test_density_rejects_non_hermitian(self):
        with pytest.raises(InvariantViolation):
            DensityMatrix(np.array([[0.5, 0.1], [0.0, 0.5]]))

    def test_observable_caches(self, rng):
        m = rand_herm(5, rng, scale=3.0)
        o = HermitianObservable(m)
        assert o.trace == pytest.approx(np.trace(m).real, abs=1e-12)
        assert o.hs_norm_sq == pytest.approx(np.sum(np.abs(m) ** 2), abs=1e-10)
        o0 = o.traceless_part()
        assert abs(np.trace(o0)) < 1e-12
        assert o.traceless_hs_norm_sq() == pytest.approx(np.sum(np.abs(o0) ** 2), abs=1e-10)

    def test_immutable(self, rng):
        rho = DensityMatrix(rand_rho(3, rng))
        with pytest.raises(ValueError):
            rho.matrix[0, 0] = 1

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            HermitianObservable(np.array([[np.nan, 0], [0, 1]]))


class TestRandomStream:
    def test_replay(self):
        a = random_stream(5, 3).random(10)
        b = random_stream(5, 3).random(10)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(random_stream(5, 0).random(10), random_stream(5, 1).random(10))


class TestSamplers:
    def test_haar_pure(self, rng):
        rho = haar_random_pure(6, rng)
        assert np.trace(rho.matrix).real == pytest.approx(1, abs=1e-10)
        assert rho.purity() == pytest.approx(1, abs=1e-10)

    def test_haar_deterministic(self):
        a = haar_random_pure(4, random_stream(9)).matrix
        b = haar_random_pure(4, random_stream(9)).matrix
        assert np.array_equal(a, b)

    def test_haar_mean_is_mixed(self):
        gen = random_stream(11)
        d, n = 3, 100_000
        psi = gen.standard_normal((n, d)) + 1j * gen.standard_normal((n, d))
        # same construction as the sampler, vectorised for speed
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        mean = np.einsum("ni,nj->ij", psi, psi.conj()) / n
        assert np.max(np.abs(mean - np.eye(d) / d)) <= 5 / np.sqrt(n)

    def test_haar_sampler_moment(self):
        gen = random_stream(12)
        d, n = 3, 4000
        m = rand_herm(d, gen)
        vals = np.array([trace_inner(haar_random_pure(d, gen), m).real for _ in range(n)])
        sem = vals.std(ddof=1) / np.sqrt(n)
        assert abs(vals.mean() - np.trace(m).real / d) < 5 * sem

    def test_haar_unitary(self, rng):
        u = haar_random_unitary(5, rng)
        assert np.allclose(u @ u.conj().T, np.eye(5), atol=1e-12)

    def test_hs_mixed(self, rng):
        rho = hs_random_mixed(4, rng)
        assert np.trace(rho.matrix).real == pytest.approx(1, abs=1e-10)
        assert np.linalg.eigvalsh(rho.matrix)[0] >= -1e-10
        assert rho.purity() < 1 - 1e-6

    def test_hs_mean(self):
        gen = random_stream(13)
        n = 20_000
        mean = sum(hs_random_mixed(2, gen).matrix for _ in range(n)) / n
        assert np.max(np.abs(mean - np.eye(2) / 2)) < 5 / np.sqrt(n)

    @pytest.mark.parametrize("d", [1, 0])
    def test_bad_dim(self, rng, d):
        with pytest.raises(ValueError):
            haar_random_pure(d, rng)
        with pytest.raises(ValueError):
            hs_random_mixed(d, rng)

    def test_random_observable_options(self, rng):
        o = random_observable(6, rng, hs_norm_sq=4.0, traceless=True, offdiagonal=True)
        assert o.hs_norm_sq == pytest.approx(4.0)
        assert np.allclose(np.diag(o.matrix), 0)


class TestDepolarize:
    def test_full(self, rng):
        rho = rand_rho(3, rng)
        assert np.allclose(depolarize(rho, 1).matrix, np.eye(3) / 3)

    def test_none(self, rng):
        rho = rand_rho(3, rng)
        assert np.allclose(depolarize(rho, 0).matrix, rho)

    def test_half_qubit(self):
        out = depolarize(np.diag([1.0, 0.0]), 0.5).matrix
        assert np.allclose(out, np.diag([0.75, 0.25]))

    @pytest.mark.parametrize("p", [-0.1, 1.1])
    def test_bad_p(self, p):
        with pytest.raises(ValueError):
            depolarize(np.eye(2) / 2, p)

    @settings(max_examples=30, deadline=None)
    @given(p=st.floats(0, 1), seed=st.integers(0, 2**32))
    def test_preserves_state(self, p, seed):
        rho = depolarize(rand_rho(3, random_stream(seed)), p).matrix
        assert np.allclose(rho, rho.conj().T, atol=1e-12)
        assert abs(np.trace(rho) - 1) < 1e-10
        assert np.linalg.eigvalsh(rho)[0] >= -1e-10


class TestRhoA:
    def test_zero_bound(self, rng):
        assert np.array_equal(make_rho_a(4, 0, rng).matrix, np.eye(4) / 4)

    @pytest.mark.parametrize("d", [4, 8, 16])
    def test_properties(self, rng, d):
        b = 0.5 * d**-1.5
        rho = make_rho_a(d, b, rng).matrix
        assert np.allclose(np.diag(rho), 1 / d, atol=0)
        off = rho[~np.eye(d, dtype=bool)]
        assert np.max(np.abs(off)) < b
        assert np.max(np.abs(all_overlaps(rho) - 1 / d)) <= b + 1e-15
        o = rand_herm(d, rng)
        bound = b * np.sum(np.abs(o[~np.eye(d, dtype=bool)]))
        assert abs(trace_inner(rho, o).real - np.trace(o).real / d) <= bound + 1e-12

    def test_unattainable_bound_raises(self, rng):
        with pytest.raises(InvariantViolation):
            make_rho_a(32, 0.5, rng, max_tries=3)
