"""Tests for the non-negative matrix validator and spectral operations."""

import numpy as np
import pytest

from nmfsem import (
    ConvergenceError,
    DimensionError,
    InstabilityError,
    ValidationError,
    as_nonneg,
    neumann_inverse,
    op_norm_1,
    solve_i_minus,
    spectral_radius,
)

# Oracle for the 2x2 used across this file: eigenvalues of
# [[0.2, 0.1], [0.3, 0.4]] solve lam^2 - 0.6 lam + 0.05 = 0, so the
# dominant root is (0.6 + sqrt(0.36 - 0.20)) / 2 = 0.5.
A22 = np.array([[0.2, 0.1], [0.3, 0.4]])
A22_RHO = (0.6 + np.sqrt(0.16)) / 2.0
# (I - A22) = [[0.8, -0.1], [-0.3, 0.6]] has determinant 0.45, so its
# inverse is adj / det with adj = [[0.6, 0.1], [0.3, 0.8]].
A22_INV_I_MINUS = np.array([[0.6, 0.1], [0.3, 0.8]]) / 0.45


class TestAsNonneg:
    def test_returns_readonly_float64_copy(self):
        src = [[1, 2], [3, 0]]
        arr = as_nonneg(src)
        assert arr.dtype == np.float64
        assert arr.flags["C_CONTIGUOUS"]
        assert not arr.flags.writeable
        with pytest.raises(ValueError):
            arr[0, 0] = 5.0

    def test_copy_detached_from_source(self):
        src = np.ones((2, 2))
        arr = as_nonneg(src)
        src[0, 0] = 7.0
        assert arr[0, 0] == 1.0

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            as_nonneg([[1.0, -1e-9], [0.0, 2.0]])

    def test_rejects_nan_and_inf(self):
        with pytest.raises(ValidationError):
            as_nonneg([[np.nan, 1.0], [0.0, 2.0]])
        with pytest.raises(ValidationError):
            as_nonneg([[np.inf, 1.0], [0.0, 2.0]])

    def test_rejects_wrong_ndim_and_empty(self):
        with pytest.raises(ValidationError):
            as_nonneg([1.0, 2.0])
        with pytest.raises(ValidationError):
            as_nonneg(np.empty((0, 3)))

    def test_error_message_names_input(self):
        with pytest.raises(ValidationError, match="basis"):
            as_nonneg([[-1.0]], name="basis")


class TestSpectralRadius:
    def test_zero_matrix(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    def test_diagonal(self):
        assert abs(spectral_radius(0.5 * np.eye(4)) - 0.5) < 1e-10

    def test_frozen_2x2(self):
        assert abs(spectral_radius(A22) - A22_RHO) < 1e-8

    def test_matches_dense_eigensolver(self):
        rng = np.random.default_rng(42)
        for trial in range(40):
            n = int(rng.integers(2, 9))
            a = rng.uniform(0.0, 1.0, (n, n))
            a *= 0.9 / max(op_norm_1(a), 1e-12)
            oracle = float(np.max(np.abs(np.linalg.eigvals(a))))
            assert abs(spectral_radius(a) - oracle) < 1e-8

    def test_bounded_by_op_norm(self):
        rng = np.random.default_rng(7)
        for trial in range(30):
            n = int(rng.integers(1, 7))
            a = rng.uniform(0.0, 2.0, (n, n))
            assert spectral_radius(a) <= op_norm_1(a) + 1e-10

    def test_scaling_linearity(self):
        rho = spectral_radius(A22)
        assert abs(spectral_radius(3.0 * A22) - 3.0 * rho) < 1e-8

    def test_non_square_raises(self):
        with pytest.raises(DimensionError):
            spectral_radius(np.ones((2, 3)))

    def test_warns_when_budget_exhausted(self):
        a = np.random.default_rng(1).uniform(0.0, 1.0, (5, 5))
        with pytest.warns(UserWarning, match="power iteration"):
            spectral_radius(a, tol=0.0, max_iter=5)


class TestOpNorm1:
    def test_frozen_values(self):
        assert op_norm_1(A22) == 0.5
        assert op_norm_1(np.zeros((2, 2))) == 0.0
        assert op_norm_1([[2.0]]) == 2.0

    def test_uses_absolute_values(self):
        assert op_norm_1([[-2.0, 1.0], [1.0, -1.0]]) == 3.0

    def test_rejects_wrong_ndim(self):
        with pytest.raises(DimensionError):
            op_norm_1([1.0, 2.0])


class TestNeumannInverse:
    def test_zero_matrix_gives_identity(self):
        assert np.array_equal(neumann_inverse(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent_terminates_exactly(self):
        a = np.array([[0.0, 0.5], [0.0, 0.0]])
        assert np.array_equal(neumann_inverse(a), np.eye(2) + a)

    def test_frozen_2x2(self):
        got = neumann_inverse(A22, tol=1e-14)
        assert np.max(np.abs(got - A22_INV_I_MINUS)) < 1e-10

    def test_agrees_with_direct_solve(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            n = int(rng.integers(1, 8))
            a = rng.uniform(0.0, 1.0, (n, n))
            a *= rng.uniform(0.1, 0.9) / max(op_norm_1(a), 1e-12)
            direct = solve_i_minus(a, np.eye(n))
            series = neumann_inverse(a, tol=1e-13)
            assert np.max(np.abs(series - direct)) < 1e-8

    def test_dominates_identity_entrywise(self):
        rng = np.random.default_rng(11)
        a = rng.uniform(0.0, 0.2, (4, 4))
        got = neumann_inverse(a)
        assert np.all(got - np.eye(4) >= 0.0)

    def test_unstable_raises(self):
        with pytest.raises(InstabilityError):
            neumann_inverse(np.array([[1.2]]))
        with pytest.raises(InstabilityError):
            neumann_inverse(np.eye(2))

    def test_term_budget_carries_partial_sum(self):
        a = np.array([[0.99]])
        with pytest.raises(ConvergenceError) as info:
            neumann_inverse(a, tol=1e-12, max_terms=100)
        partial = info.value.partial
        expected = (1.0 - 0.99 ** 101) / 0.01
        assert abs(partial[0, 0] - expected) < 1e-9


class TestSolveIMinus:
    def test_zero_matrix_returns_rhs(self):
        b = np.arange(6.0).reshape(3, 2)
        assert np.allclose(solve_i_minus(np.zeros((3, 3)), b), b)

    def test_frozen_2x2(self):
        got = solve_i_minus(A22, np.eye(2))
        assert np.max(np.abs(got - A22_INV_I_MINUS)) < 1e-12

    def test_residual_small(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0.0, 1.0, (6, 6))
        a *= 0.8 / op_norm_1(a)
        b = rng.uniform(0.0, 1.0, (6, 4))
        z = solve_i_minus(a, b)
        assert np.max(np.abs((np.eye(6) - a) @ z - b)) < 1e-10

    def test_singular_raises(self):
        with pytest.raises(InstabilityError):
            solve_i_minus(np.eye(2), np.ones((2, 1)))

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            solve_i_minus(np.zeros((2, 2)), np.ones((3, 1)))
        with pytest.raises(DimensionError):
            solve_i_minus(np.zeros((2, 3)), np.ones((2, 1)))
