import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idealmeas import operators as ops
from idealmeas.rng import substream


def rng(seed=0):
    return substream(seed, "test")


class TestTensor:
    def test_identities(self):
        np.testing.assert_array_equal(ops.tensor(np.eye(2), np.eye(3)), np.eye(6))

    def test_diagonal_composition(self):
        out = ops.tensor(np.diag([1, -1]), np.eye(2))
        np.testing.assert_array_equal(out, np.diag([1, 1, -1, -1]))

    def test_trace_factorizes(self):
        r = rng()
        a = r.standard_normal((3, 3)) + 1j * r.standard_normal((3, 3))
        b = r.standard_normal((3, 3)) + 1j * r.standard_normal((3, 3))
        assert abs(np.trace(ops.tensor(a, b)) - np.trace(a) * np.trace(b)) < 1e-12

    def test_associative(self):
        r = rng(1)
        a, b, c = (ops.random_hermitian(d, r) for d in (2, 3, 2))
        left = ops.tensor(ops.tensor(a, b), c)
        right = ops.tensor(a, ops.tensor(b, c))
        assert left.shape == (12, 12)
        assert ops.max_abs(left - right) <= 1e-12


class TestPartialTrace:
    def test_product_state(self):
        r = rng(2)
        a, b = ops.random_density(2, r), ops.random_density(3, r)
        D = ops.tensor(a, b)
        np.testing.assert_allclose(ops.partial_trace(D, (2, 3), "S"), a, atol=1e-14)
        np.testing.assert_allclose(ops.partial_trace(D, (2, 3), "A"), b, atol=1e-14)

    def test_bell_state(self):
        bell = ops.ket([1, 0, 0, 1])
        r = ops.partial_trace(ops.projector(bell), (2, 2), "S")
        np.testing.assert_allclose(r, np.eye(2) / 2, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ops.partial_trace(np.eye(6) / 6, (2, 2))

    def test_bad_keep(self):
        with pytest.raises(ValueError):
            ops.partial_trace(np.eye(4) / 4, (2, 2), keep="B")


class TestEvolution:
    def test_zero_hamiltonian(self):
        O = ops.random_hermitian(3, rng(3))
        np.testing.assert_allclose(ops.evolve_unitary(O, np.zeros((3, 3)), 2.7), O, atol=1e-14)

    def test_commuting(self):
        H = np.diag([0.3, -1.2, 2.0])
        O = np.diag([1.0, 2.0, 3.0])
        np.testing.assert_allclose(ops.evolve_unitary(O, H, 5.0), O, atol=1e-14)

    def test_spin_rotation(self):
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        out = ops.evolve_unitary(sx, np.diag([1.0, -1.0]), np.pi / 2)
        np.testing.assert_allclose(out, -sx, atol=1e-14)

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValueError):
            ops.evolve_unitary(np.eye(2), np.array([[0, 1], [0, 0]]), 1.0)

    def test_propagator_matches_dense_path(self):
        r = rng(4)
        H = ops.random_hermitian(5, r)
        D = ops.random_density(5, r)
        p = ops.Propagator(H)
        U = p.unitary(0.8)
        np.testing.assert_allclose(p.evolve(D, 0.8), U @ D @ U.conj().T, atol=1e-12)
        psi = ops.ket(r.standard_normal(5))
        np.testing.assert_allclose(p.evolve_vector(psi, 0.8), U @ psi, atol=1e-12)


class TestEntropy:
    def test_pure(self):
        assert abs(ops.von_neumann_entropy(ops.projector(ops.ket([1, 1j])))) < 1e-12

    def test_maximally_mixed(self):
        assert ops.von_neumann_entropy(np.eye(4) / 4) == pytest.approx(np.log(4), abs=1e-12)

    def test_two_level(self):
        # -0.25 ln 0.25 - 0.75 ln 0.75
        assert ops.von_neumann_entropy(np.diag([0.25, 0.75])) == pytest.approx(0.562335, abs=1e-6)

    def test_negative_eigenvalue(self):
        with pytest.raises(ops.DensityError):
            ops.von_neumann_entropy(np.diag([1.5, -0.5]))


class TestTraceDistance:
    def test_self(self):
        D = ops.random_density(4, rng(5))
        assert ops.trace_distance(D, D) == pytest.approx(0.0, abs=1e-14)

    def test_orthogonal(self):
        assert ops.trace_distance(np.diag([1, 0]), np.diag([0, 1])) == pytest.approx(1.0)

    def test_diagonal_pair(self):
        assert ops.trace_distance(np.diag([1, 0]), np.diag([0.6, 0.4])) == pytest.approx(0.4, abs=1e-14)

    def test_symmetric_and_dense_path(self):
        r = rng(6)
        a, b = ops.random_density(4, r), ops.random_density(4, r)
        d = ops.trace_distance(a, b)
        assert d == pytest.approx(ops.trace_distance(b, a), abs=1e-14)
        assert d == pytest.approx(0.5 * np.sum(np.linalg.svd(a - b, compute_uv=False)), abs=1e-12)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            ops.trace_distance(np.eye(2) / 2, np.eye(3) / 3)


class TestCheckDensity:
    def test_pass(self):
        assert ops.check_density(np.eye(2) / 2).passed

    def test_negative(self):
        diag = ops.check_density(np.diag([1.5, -0.5]))
        assert not diag.passed
        assert "negative eigenvalue" in diag.failures

    def test_non_hermitian(self):
        diag = ops.check_density(np.array([[0.5, 0.3], [0.0, 0.5]]))
        assert not diag.passed
        assert "hermiticity" in diag.failures

    def test_trace(self):
        diag = ops.check_density(np.eye(2))
        assert diag.failures == ("trace",)


class TestHelpers:
    def test_gibbs_ground_state(self):
        g = ops.gibbs(np.diag([0.0, 1.0, 3.0]), 50.0)
        assert ops.max_abs(g - np.diag([1, 0, 0])) < 1e-10

    def test_random_hermitian_scale(self):
        H = ops.random_hermitian(200, rng(7), scale=0.5)
        assert ops.is_hermitian(H)
        assert np.mean(np.abs(H) ** 2) == pytest.approx(0.25, rel=0.05)

    def test_haar_unitary(self):
        U = ops.haar_unitary(6, rng(8))
        assert ops.max_abs(U @ U.conj().T - np.eye(6)) < 1e-12

    def test_is_diagonal(self):
        assert ops.is_diagonal(np.diag([1.0, 2.0, 3.0]))
        m = np.diag([1.0, 2.0, 3.0])
        m[2, 0] = 1e-300
        assert not ops.is_diagonal(m)


@st.composite
def hermitian_and_density(draw, max_dim=5):
    d = draw(st.integers(1, max_dim))
    seed = draw(st.integers(0, 2**32 - 1))
    r = substream(seed, "hyp")
    return ops.random_hermitian(d, r), ops.random_density(d, r)


@settings(max_examples=40, deadline=None)
@given(hermitian_and_density(), st.floats(-20, 20))
def test_evolution_preserves_spectrum(pair, t):
    H, D = pair
    out = ops.evolve_unitary(D, H, t)
    assert abs(np.trace(out) - 1) <= 1e-10
    assert ops.is_hermitian(out, 1e-10)
    np.testing.assert_allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(D), atol=1e-10)
    assert abs(ops.von_neumann_entropy(out) - ops.von_neumann_entropy(D)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 10))
def test_uncoupled_factorization(seed, t):
    r = substream(seed, "factorization")
    H_S, H_A = ops.random_hermitian(2, r), ops.random_hermitian(3, r)
    r0, R0 = ops.random_density(2, r), ops.random_density(3, r)
    H = ops.tensor(H_S, np.eye(3)) + ops.tensor(np.eye(2), H_A)
    D_t = ops.evolve_unitary(ops.tensor(r0, R0), H, t)
    lhs = ops.partial_trace(D_t, (2, 3), "S")
    assert ops.max_abs(lhs - ops.evolve_unitary(r0, H_S, t)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_partial_trace_preserves_trace(seed):
    r = substream(seed, "pt")
    D = ops.random_density(6, r)
    for keep in ("S", "A"):
        assert abs(np.trace(ops.partial_trace(D, (2, 3), keep)) - 1) <= 1e-12
