"""
Unit tests for the maximum regularized likelihood fit, PCA baseline and GPCA.
"""

import numpy as np
import pytest

import src.mrl as mrl
from src.config import TOLERANCES
from src.exceptions import NonFiniteError, PowerIterationStalledError, RankTooLargeError
from src.linalg import sqrtm_psd, truncated_svd
from src.models import Algorithm, MrlConfig
from src.mrl import (
    fit_mrl,
    fit_pca,
    gpca_postprocess,
    mahalanobis_distance,
    mahalanobis_reconstruction_error,
    neg_log_likelihood,
    penalized_objective,
    update_factors_als,
    update_precisions,
)
from src.synthdata import gen_swiss_roll


def low_rank(n: int, p: int, r: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, r)) @ rng.standard_normal((r, p))


class TestObjective:
    """Tests for the objective helpers."""

    def test_identity_precisions(self, rng):
        """Test the objective is half the squared Frobenius norm with identity precisions."""
        resid = rng.standard_normal((5, 4))

        value = penalized_objective(resid, np.eye(5), np.eye(4), 0.0, 0.0)

        assert value == pytest.approx(0.5 * np.sum(resid ** 2))

    def test_penalty_terms(self):
        """Test the penalty weights n lambda1 and p lambda2."""
        resid = np.zeros((3, 2))

        value = penalized_objective(resid, np.eye(3), np.eye(2), 0.5, 0.25)

        # n * lambda1 * 3 + p * lambda2 * 2
        assert value == pytest.approx(3 * 0.5 * 3 + 2 * 0.25 * 2)

    def test_mahalanobis_matches_trace(self, rng, random_spd):
        """Test the distance against an explicit trace."""
        resid = rng.standard_normal((4, 3))
        omega_inv, sigma_inv = random_spd(4, seed=1), random_spd(3, seed=2)

        expected = np.trace(sigma_inv @ resid.T @ omega_inv @ resid)

        assert mahalanobis_distance(resid, omega_inv, sigma_inv) == pytest.approx(expected)

    def test_log_determinant_terms(self):
        """Test the log terms for scaled identity precisions."""
        value = penalized_objective(np.zeros((2, 3)), 2 * np.eye(2), np.eye(3), 0.0, 0.0)

        # -p/2 log|2 I_2| = -3/2 * 2 log 2
        assert value == pytest.approx(-3.0 * np.log(2.0))


class TestAls:
    """Tests for update_factors_als."""

    def test_svd_is_fixed_point(self, rng):
        """Test that SVD factors stay optimal under identity precisions."""
        y = rng.standard_normal((12, 8))
        svd = truncated_svd(y, 3)
        x, w, trace = update_factors_als(y, svd.u * svd.s, svd.v, np.eye(12), np.eye(8), epsilon=0.0)

        np.testing.assert_allclose(x @ w.T, svd.reconstruct(), atol=1e-8)
        assert trace[-1] == pytest.approx(trace[0], rel=1e-10)

    def test_scores_from_orthonormal_loadings(self, rng):
        """Test X = Y W after one sweep when W is orthonormal."""
        y = rng.standard_normal((10, 6))
        w, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        x, _, _ = update_factors_als(y, np.zeros((10, 2)), w, np.eye(10), np.eye(6), epsilon=0.0, max_iter=1)

        np.testing.assert_allclose(x, y @ w, atol=1e-10)

    def test_fit_decreases(self, rng, random_spd):
        """Test the weighted fit never increases across sweeps."""
        y = rng.standard_normal((15, 9))
        x0 = rng.standard_normal((15, 2))
        w0 = rng.standard_normal((9, 2))
        _, _, trace = update_factors_als(y, x0, w0, random_spd(15, seed=3), random_spd(9, seed=4), epsilon=1e-10)

        diffs = np.diff(trace)
        assert np.all(diffs <= 1e-8 * abs(trace[0]))
        assert trace[-1] < trace[0]


class TestUpdatePrecisions:
    """Tests for update_precisions."""

    def test_zero_residual_skips(self):
        """Test that an exact fit leaves both precisions unchanged."""
        omega_inv, sigma_inv = 2 * np.eye(4), 3 * np.eye(3)

        new_omega, new_sigma, flags = update_precisions(np.zeros((4, 3)), omega_inv, sigma_inv, 0.1, 0.1)

        np.testing.assert_array_equal(new_omega, omega_inv)
        np.testing.assert_array_equal(new_sigma, sigma_inv)
        assert "zero_residual_rows" in flags
        assert "zero_residual_cols" in flags

    def test_singular_unpenalized_gets_jitter(self, rng):
        """Test rho = 0 on a rank-deficient covariance adds jitter."""
        resid = rng.standard_normal((6, 2))

        omega_inv, _, flags = update_precisions(resid, np.eye(6), np.eye(2), 0.0, 0.1)

        assert "jitter_rows" in flags
        assert np.linalg.eigvalsh(omega_inv).min() > 0

    def test_precisions_positive_definite(self, rng):
        """Test updated precisions are SPD."""
        resid = rng.standard_normal((20, 8))

        omega_inv, sigma_inv, _ = update_precisions(resid, np.eye(20), np.eye(8), 0.2, 0.2)

        assert np.linalg.eigvalsh(omega_inv).min() > 0
        assert np.linalg.eigvalsh(sigma_inv).min() > 0

    def test_guard_can_reject(self, rng):
        """Test a rejecting guard keeps both previous precisions."""
        resid = rng.standard_normal((20, 8))
        seen = []

        def reject(block, omega_inv, sigma_inv):
            seen.append(block)
            return False

        omega_inv, sigma_inv, _ = update_precisions(resid, np.eye(20), np.eye(8), 0.2, 0.2, accept=reject)

        assert seen == ["rows", "cols"]
        np.testing.assert_array_equal(omega_inv, np.eye(20))
        np.testing.assert_array_equal(sigma_inv, np.eye(8))

    def test_rank_deficient_row_covariance(self, rng):
        """Test a 60 x 3 residual (rank-3 row covariance) still yields SPD precisions."""
        resid = rng.standard_normal((60, 3))

        omega_inv, sigma_inv, _ = update_precisions(resid, np.eye(60), np.eye(3), 0.05, 0.05)

        assert np.linalg.eigvalsh(omega_inv).min() > 0
        assert np.linalg.eigvalsh(sigma_inv).min() > 0


class TestGpca:
    """Tests for gpca_postprocess."""

    def test_identity_matches_svd(self):
        """Test identity precisions reproduce the truncated SVD."""
        y = low_rank(10, 7, 3, seed=1)
        svd = truncated_svd(y, 3)
        factors = gpca_postprocess(y, np.eye(10), np.eye(7), 3)

        np.testing.assert_allclose(factors.d, svd.s, rtol=1e-8)
        np.testing.assert_allclose(np.abs(factors.v), np.abs(svd.v), atol=1e-6)

    def test_weighted_orthonormality(self, random_spd):
        """Test u^T Q u = I and v^T R v = I."""
        y = low_rank(10, 6, 2, seed=2)
        q, r = random_spd(10, seed=5), random_spd(6, seed=6)
        factors = gpca_postprocess(y, q, r, 2)

        np.testing.assert_allclose(factors.u.T @ q @ factors.u, np.eye(2), atol=1e-6)
        np.testing.assert_allclose(factors.v.T @ r @ factors.v, np.eye(2), atol=1e-6)
        assert factors.d[0] >= factors.d[1]

    def test_reconstructs_low_rank(self, random_spd):
        """Test u diag(d) v^T recovers a rank-r input."""
        y = low_rank(9, 6, 2, seed=3)
        factors = gpca_postprocess(y, random_spd(9, seed=7), random_spd(6, seed=8), 2)

        np.testing.assert_allclose((factors.u * factors.d) @ factors.v.T, y, atol=1e-6)

    def test_top_value_is_weighted_singular_value(self, rng, random_spd):
        """Test d_1 equals the top singular value of Q^1/2 Y R^1/2."""
        y = low_rank(8, 5, 1, seed=4) + 0.01 * rng.standard_normal((8, 5))
        q, r = random_spd(8, seed=9), random_spd(5, seed=10)
        factors = gpca_postprocess(y, q, r, 1)
        expected = np.linalg.svd(sqrtm_psd(q) @ y @ sqrtm_psd(r), compute_uv=False)[0]

        assert factors.d[0] == pytest.approx(expected, rel=1e-6)

    def test_rank_out_of_range(self):
        """Test r > min(n, p) is rejected."""
        with pytest.raises(RankTooLargeError):
            gpca_postprocess(np.ones((3, 2)), np.eye(3), np.eye(2), 3)

    def test_exhausted_residual_stalls(self):
        """Test asking for more components than the input rank raises."""
        y = np.zeros((4, 3))
        y[0, 0] = 2.0

        with pytest.raises(PowerIterationStalledError) as info:
            gpca_postprocess(y, np.eye(4), np.eye(3), 2)
        assert info.value.component == 1

    def test_iteration_budget_stalls(self, rng):
        """Test a one-iteration budget cannot settle."""
        y = rng.standard_normal((8, 6))

        with pytest.raises(PowerIterationStalledError):
            gpca_postprocess(y, np.eye(8), np.eye(6), 1, max_iter=1)


class TestFitPca:
    """Tests for the PCA baseline."""

    def test_best_rank_r(self, rng):
        """Test the estimate is the centered truncated SVD plus means."""
        y = rng.standard_normal((20, 10)) + 5.0
        model = fit_pca(y, 2)
        yc = y - y.mean(axis=0)

        np.testing.assert_allclose(model.low_rank_estimate(), truncated_svd(yc, 2).reconstruct() + y.mean(axis=0))
        assert model.algorithm == Algorithm.PCA
        assert model.omega_inv.nnz_offdiag == 0

    def test_rank_too_large(self):
        """Test the rank bound."""
        with pytest.raises(RankTooLargeError):
            fit_pca(np.ones((3, 5)), 4)

    def test_non_finite(self):
        """Test NaN input is rejected."""
        with pytest.raises(NonFiniteError):
            fit_pca(np.array([[1.0, np.inf], [0.0, 1.0]]), 1)


class TestFitMrl:
    """Tests for fit_mrl."""

    def test_fixed_precisions_reduce_to_pca(self, rng):
        """Test that without precision updates the fit matches PCA."""
        y = rng.standard_normal((25, 12))
        pca = fit_pca(y, 2)
        model = fit_mrl(y, MrlConfig(rank=2, update_precisions=False, epsilon=1e-12))

        difference = np.linalg.norm(model.low_rank_estimate() - pca.low_rank_estimate())
        assert difference <= 1e-6 * np.linalg.norm(pca.low_rank_estimate())

    def test_objective_monotone(self, small_instance):
        """Test the recorded objective never increases."""
        model = fit_mrl(small_instance.y, MrlConfig(rank=2, max_outer=8))
        trace = np.asarray(model.objective_trace)

        assert np.all(np.diff(trace) <= TOLERANCES.monotone_slack * np.abs(trace[:-1]))
        assert model.iterations == len(trace) - 1

    def test_auto_penalty_conversion(self, small_instance):
        """Test the recorded penalties satisfy rho1 = 2 n lambda1 / p and rho2 = 2 p lambda2 / n."""
        n, p = small_instance.y.shape
        model = fit_mrl(small_instance.y, MrlConfig(rank=2, max_outer=2))

        assert model.hyper["rho1"] == pytest.approx(2 * n * model.hyper["lambda1"] / p)
        assert model.hyper["rho2"] == pytest.approx(2 * p * model.hyper["lambda2"] / n)

    def test_numeric_penalties_and_outputs(self, small_instance):
        """Test shapes, SPD precisions and the recorded objective."""
        y = small_instance.y
        model = fit_mrl(y, MrlConfig(rank=2, lambda1=0.05, lambda2=0.05, max_outer=5))

        assert model.x.shape == (60, 2)
        assert model.w.shape == (40, 2)
        assert np.linalg.eigvalsh(model.omega_inv.to_dense()).min() > 0
        assert np.linalg.eigvalsh(model.sigma_inv.to_dense()).min() > 0
        assert neg_log_likelihood(y, model) == pytest.approx(model.objective_trace[-1], rel=1e-8)
        assert mahalanobis_reconstruction_error(y, model) >= 0

    def test_gpca_scores_attached(self, small_instance):
        """Test post-processing produces weighted-orthonormal scores."""
        model = fit_mrl(small_instance.y, MrlConfig(rank=2, lambda1=0.05, lambda2=0.05, max_outer=3))

        assert model.gpca is not None
        q = model.omega_inv.to_dense()
        np.testing.assert_allclose(model.gpca.u.T @ q @ model.gpca.u, np.eye(2), atol=1e-6)
        assert model.projection().shape == (60, 2)

    def test_deterministic(self, small_instance):
        """Test two fits on the same input agree bitwise."""
        cfg = MrlConfig(rank=2, lambda1=0.05, lambda2=0.05, max_outer=3)
        first, second = fit_mrl(small_instance.y, cfg), fit_mrl(small_instance.y, cfg)

        assert np.array_equal(first.x, second.x)
        assert first.objective_trace == second.objective_trace

    def test_stalled_gpca_is_flagged(self, small_instance, monkeypatch):
        """Test a stalled post-processing leaves the ALS factors and a flag."""
        def stall(*args, **kwargs):
            raise PowerIterationStalledError(0, 1.0)

        monkeypatch.setattr(mrl, "gpca_postprocess", stall)
        model = fit_mrl(small_instance.y, MrlConfig(rank=2, lambda1=0.05, lambda2=0.05, max_outer=2))

        assert model.gpca is None
        assert "gpca_stalled" in model.flags

    def test_swiss_roll_fits(self):
        """Test three-column data with a rank-deficient row covariance fits without error."""
        roll = gen_swiss_roll(100, seed=0)
        model = fit_mrl(roll.points, MrlConfig(rank=2, max_outer=5))

        assert np.all(np.isfinite(model.x))
        assert np.linalg.eigvalsh(model.omega_inv.to_dense()).min() > 0
        assert model.projection().shape == (200, 2)
