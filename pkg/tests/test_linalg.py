"""
Unit tests for the dense linear-algebra primitives.
"""

import numpy as np
import pytest

from src.exceptions import NonFiniteError, NotPositiveDefiniteError, RankTooLargeError
from src.linalg import cholesky, logdet_spd, solve_spd, sqrtm_psd, sym_eig, truncated_svd


class TestTruncatedSvd:
    """Tests for truncated_svd."""

    def test_identity(self):
        """Test the identity has unit singular values."""
        svd = truncated_svd(np.eye(3), 3)

        np.testing.assert_allclose(svd.s, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(svd.u @ svd.v.T, np.eye(3), atol=1e-12)

    def test_outer_product(self):
        """Test the singular value of a b^T is ||a|| ||b||."""
        a = np.array([2.0, 0.0])
        b = np.array([0.0, 3.0, 0.0])
        svd = truncated_svd(np.outer(a, b), 1)

        assert svd.s[0] == pytest.approx(6.0)

    def test_full_rank_reconstruction(self, rng):
        """Test exact reconstruction and agreement with the Gram eigenvalues."""
        a = rng.standard_normal((8, 5))
        svd = truncated_svd(a, 5)
        gram_values = np.sort(np.linalg.eigvalsh(a.T @ a))[::-1]

        assert np.linalg.norm(a - svd.reconstruct()) < 1e-10
        np.testing.assert_allclose(svd.s ** 2, gram_values, rtol=1e-10)

    def test_orthonormal_columns(self, rng):
        """Test u^T u = I and v^T v = I."""
        svd = truncated_svd(rng.standard_normal((10, 7)), 4)

        np.testing.assert_allclose(svd.u.T @ svd.u, np.eye(4), atol=1e-8)
        np.testing.assert_allclose(svd.v.T @ svd.v, np.eye(4), atol=1e-8)

    def test_best_rank_k(self, rng):
        """Test the truncated SVD beats random rank-k matrices."""
        a = rng.standard_normal((12, 9))
        error = np.linalg.norm(a - truncated_svd(a, 3).reconstruct())
        for _ in range(100):
            b = rng.standard_normal((12, 3)) @ rng.standard_normal((3, 9))
            assert error <= np.linalg.norm(a - b)

    def test_deterministic_signs(self, rng):
        """Test repeat calls agree bitwise and signs are canonical."""
        a = rng.standard_normal((9, 6))
        first, second = truncated_svd(a, 3), truncated_svd(a, 3)

        assert np.array_equal(first.s, second.s)
        assert np.array_equal(first.v, second.v)
        pivots = np.argmax(np.abs(first.v), axis=0)
        assert np.all(first.v[pivots, np.arange(3)] > 0)

    def test_rank_too_large(self):
        """Test k > min(n, p) is rejected."""
        with pytest.raises(RankTooLargeError):
            truncated_svd(np.ones((3, 2)), 3)

    def test_non_finite(self):
        """Test NaN input is rejected."""
        with pytest.raises(NonFiniteError):
            truncated_svd(np.array([[1.0, np.nan], [0.0, 1.0]]), 1)


class TestCholesky:
    """Tests for cholesky and SPD helpers."""

    def test_identity(self):
        """Test the factor of I is I."""
        np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))

    def test_two_by_two(self):
        """Test a hand-computed factor."""
        low = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))

        np.testing.assert_allclose(low, [[2.0, 0.0], [1.0, np.sqrt(2.0)]])

    def test_indefinite(self):
        """Test an indefinite matrix is rejected."""
        with pytest.raises(NotPositiveDefiniteError):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_reproduces_product(self, rng):
        """Test cholesky(L L^T) recovers the product."""
        low = np.tril(rng.standard_normal((6, 6)))
        np.fill_diagonal(low, np.abs(np.diag(low)) + 0.5)
        a = low @ low.T
        factor = cholesky(a)

        assert np.linalg.norm(factor @ factor.T - a) <= 1e-8 * np.linalg.norm(a)
        assert np.allclose(factor, np.tril(factor))

    def test_logdet(self):
        """Test the log-determinant of a diagonal matrix."""
        assert logdet_spd(np.diag([2.0, 3.0])) == pytest.approx(np.log(6.0))


class TestSolveSpd:
    """Tests for solve_spd."""

    def test_identity(self, rng):
        """Test solving against I returns b."""
        b = rng.standard_normal((4, 2))
        np.testing.assert_allclose(solve_spd(np.eye(4), b), b)

    def test_diagonal(self):
        """Test a diagonal system."""
        np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1.0, 1.0])

    def test_residual(self, random_spd, rng):
        """Test the relative residual on a random SPD system."""
        a = random_spd(6, seed=1)
        b = rng.standard_normal(6)
        x = solve_spd(a, b)

        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-10

    def test_not_spd(self):
        """Test an indefinite system is rejected."""
        with pytest.raises(NotPositiveDefiniteError):
            solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))


class TestSymEig:
    """Tests for sym_eig."""

    def test_diagonal_sorted(self):
        """Test values come back nonincreasing."""
        values, _ = sym_eig(np.diag([3.0, 1.0, 2.0]))

        np.testing.assert_allclose(values, [3.0, 2.0, 1.0])

    def test_swap_matrix(self):
        """Test the 2 x 2 swap matrix."""
        values, vectors = sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))

        np.testing.assert_allclose(values, [1.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(np.abs(vectors), np.full((2, 2), 1 / np.sqrt(2)), atol=1e-12)

    def test_trace_and_eigen_equation(self, rng):
        """Test trace invariance and A V = V diag(values)."""
        g = rng.standard_normal((5, 5))
        a = (g + g.T) / 2
        values, vectors = sym_eig(a)

        assert np.sum(values) == pytest.approx(np.trace(a), abs=1e-10)
        np.testing.assert_allclose(a @ vectors, vectors * values, atol=1e-8)
        np.testing.assert_allclose(vectors.T @ vectors, np.eye(5), atol=1e-8)

    def test_sqrtm(self, random_spd):
        """Test the square root squares back."""
        a = random_spd(4, seed=2)
        root = sqrtm_psd(a)

        np.testing.assert_allclose(root @ root, a, rtol=1e-8, atol=1e-8)
