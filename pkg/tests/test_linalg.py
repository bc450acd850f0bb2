import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedbias import linalg


def random_spd(rng, d, lo=0.5, hi=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q @ np.diag(rng.uniform(lo, hi, d)) @ q.T


def random_sym(rng, d):
    m = rng.standard_normal((d, d))
    return 0.5 * (m + m.T)


class TestJacobiEigh:
    def test_matches_numpy_eigh(self):
        rng = np.random.default_rng(0)
        for d in (1, 2, 3, 5, 8, 13):
            a = random_sym(rng, d)
            w, v = linalg.eigh_jacobi(a)
            w_np, _ = np.linalg.eigh(a)
            assert np.allclose(w, w_np, atol=1e-10)
            assert np.allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)
            assert np.allclose(v.T @ v, np.eye(d), atol=1e-10)

    def test_zero_matrix(self):
        w, v = linalg.eigh_jacobi(np.zeros((3, 3)))
        assert np.all(w == 0) and np.allclose(v, np.eye(3))


class TestSolveLyapunov:
    def test_identity_pair(self):
        # h = I, c = I: eigenvalue sums are all 2
        x = linalg.solve_lyapunov(np.eye(2), np.eye(2))
        assert np.allclose(x, np.eye(2) / 2, atol=1e-12)

    def test_diagonal_case(self):
        # entrywise c_ij / (lambda_i + lambda_j), frozen by hand
        h = np.diag([1.0, 2.0])
        c = np.ones((2, 2))
        x = linalg.solve_lyapunov(h, c)
        assert np.allclose(x, [[0.5, 1 / 3], [1 / 3, 0.25]], atol=1e-12)

    def test_residual_random_spd(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            h = random_spd(rng, 5)
            c = random_sym(rng, 5)
            x = linalg.solve_lyapunov(h, c)
            res = np.linalg.norm(h @ x + x @ h - c)
            assert res <= 1e-10 * np.linalg.norm(c)
            assert np.allclose(x, x.T)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(linalg.ContractViolationError):
            linalg.solve_lyapunov(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))

    def test_rejects_indefinite(self):
        with pytest.raises(linalg.SingularOperatorError):
            linalg.solve_lyapunov(np.diag([1.0, -1.0]), np.eye(2))


class TestContract3:
    def test_zero_tensor(self):
        assert np.allclose(linalg.contract3(np.zeros((3, 3, 3)), np.eye(3)), 0.0)

    def test_scalar_case(self):
        out = linalg.contract3(np.full((1, 1, 1), 2.0), np.full((1, 1), 0.3))
        assert np.allclose(out, [0.6])

    def test_linearity(self):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((4, 4, 4))
        t = (t + t.transpose(0, 2, 1) + t.transpose(1, 0, 2) + t.transpose(1, 2, 0)
             + t.transpose(2, 0, 1) + t.transpose(2, 1, 0)) / 6
        m1, m2 = random_sym(rng, 4), random_sym(rng, 4)
        a, b = 0.7, -1.3
        lhs = linalg.contract3(t, a * m1 + b * m2)
        rhs = a * linalg.contract3(t, m1) + b * linalg.contract3(t, m2)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(linalg.ContractViolationError):
            linalg.contract3(np.zeros((3, 3, 3)), np.eye(2))


class TestMatrixPower:
    def test_identity(self):
        assert np.allclose(linalg.matrix_power(np.eye(4), 7), np.eye(4))

    def test_scalar_power(self):
        out = linalg.matrix_power(np.array([[0.9]]), 10)
        assert np.allclose(out, 0.9**10)
        assert abs(out[0, 0] - 0.34867844010000004) < 1e-15

    def test_triple_product(self):
        rng = np.random.default_rng(3)
        m = random_sym(rng, 2)
        assert np.allclose(linalg.matrix_power(m, 3), m @ m @ m, atol=1e-12)

    def test_zero_exponent(self):
        rng = np.random.default_rng(4)
        assert np.allclose(linalg.matrix_power(rng.standard_normal((3, 3)), 0), np.eye(3))

    @given(j=st.integers(0, 6), k=st.integers(0, 6), seed=st.integers(0, 500))
    @settings(max_examples=40, deadline=None)
    def test_power_additivity(self, j, k, seed):
        rng = np.random.default_rng(seed)
        m = 0.5 * random_sym(rng, 3)
        lhs = linalg.matrix_power(m, j + k)
        rhs = linalg.matrix_power(m, j) @ linalg.matrix_power(m, k)
        scale = max(np.linalg.norm(lhs), 1.0)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * scale


class TestSolveLinear:
    def test_identity(self):
        v = np.array([1.0, -2.0, 3.0])
        assert np.allclose(linalg.solve_linear(np.eye(3), v), v)

    def test_diagonal(self):
        assert np.allclose(linalg.solve_linear(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])

    def test_residual_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.standard_normal((6, 6)) + 6 * np.eye(6)
            b = rng.standard_normal(6)
            x = linalg.solve_linear(a, b)
            assert np.linalg.norm(a @ x - b) < 1e-10 * np.linalg.norm(b)

    def test_singular_raises(self):
        a = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(linalg.SingularOperatorError):
            linalg.solve_linear(a, np.ones(2))

    def test_needs_pivoting(self):
        # zero leading pivot is fine with row exchange
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.allclose(linalg.solve_linear(a, [2.0, 3.0]), [3.0, 2.0])


class TestTelescoping:
    @given(k=st.integers(1, 6), d=st.integers(1, 4), seed=st.integers(0, 1000))
    @settings(max_examples=60, deadline=None)
    def test_product_difference_identity(self, k, d, seed):
        # prod_{l=1..K} M_l (larger index applied on the left) minus the primed
        # product equals the sum of sandwiched single-factor differences
        rng = np.random.default_rng(seed)
        ms = rng.standard_normal((k, d, d))
        mps = rng.standard_normal((k, d, d))

        def prod(seq):
            out = np.eye(d)
            for a in seq:
                out = a @ out
            return out

        lhs = prod(ms) - prod(mps)
        rhs = np.zeros((d, d))
        for i in range(k):
            rhs += prod(ms[i + 1 :]) @ (ms[i] - mps[i]) @ prod(mps[:i])
        scale = max(np.linalg.norm(lhs), 1.0)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * scale


class TestValidation:
    def test_vector_rejects_nonfinite(self):
        with pytest.raises(linalg.ContractViolationError):
            linalg.as_vector([1.0, np.nan])

    def test_vector_rejects_empty(self):
        with pytest.raises(linalg.ContractViolationError):
            linalg.as_vector([])

    def test_matrix_rejects_nonsquare(self):
        with pytest.raises(linalg.ContractViolationError):
            linalg.as_matrix(np.zeros((2, 3)))

    def test_tensor_symmetry_enforced(self):
        t = np.zeros((2, 2, 2))
        t[0, 0, 1] = 1.0  # asymmetric
        with pytest.raises(linalg.ContractViolationError):
            linalg.as_sym_tensor3(t)
