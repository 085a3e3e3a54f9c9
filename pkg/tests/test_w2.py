"""
Unit tests for the Wasserstein fit.
"""

import numpy as np
import pytest
from pydantic import ValidationError

import src.w2 as w2
from src.exceptions import IllConditionedTransformError, NotPositiveDefiniteError, RankTooLargeError
from src.models import Algorithm, W2Config, W2Transforms
from src.w2 import balance_transforms, fit_w2, gaussian_w2_squared, w2_gradient, w2_objective


def near_identity(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.eye(dim) + 0.2 * rng.standard_normal((dim, dim))


def numeric_gradient(f, m: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(m)
    for index in np.ndindex(m.shape):
        up, down = m.copy(), m.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (f(up) - f(down)) / (2 * h)
    return grad


class TestGaussianW2:
    """Tests for the closed-form Gaussian distance."""

    def test_identical(self):
        """Test the distance of a Gaussian to itself is zero."""
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])

        assert gaussian_w2_squared(np.zeros(2), cov, np.zeros(2), cov) == pytest.approx(0.0, abs=1e-10)

    def test_mean_shift(self):
        """Test equal covariances leave only the mean term."""
        assert gaussian_w2_squared([0.0, 0.0], np.eye(2), [3.0, 4.0], np.eye(2)) == pytest.approx(25.0)

    def test_scalar_variances(self):
        """Test N(0, 1) against N(0, 4) gives (1 - 2)^2."""
        assert gaussian_w2_squared([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(1.0)

    def test_not_spd(self):
        """Test an indefinite covariance is rejected."""
        with pytest.raises(NotPositiveDefiniteError):
            gaussian_w2_squared(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2), np.eye(2))


class TestObjective:
    """Tests for w2_objective and w2_gradient."""

    def test_identity_transforms(self, rng):
        """Test the unpenalized value a ||E||_F^2 - b ||E||_* at Q = R = I."""
        e = rng.standard_normal((6, 5))
        cfg = W2Config(rank=1, lambda1=0.0, lambda2=0.0, sigma_noise=1.5)
        t = W2Transforms(q=np.eye(6), r=np.eye(5))
        a, b = 1 / np.sqrt(30), 2 * 1.5 / 30 ** 0.25
        s = np.linalg.svd(e, compute_uv=False)

        assert w2_objective(e, t, cfg) == pytest.approx(a * np.sum(s ** 2) - b * np.sum(s))

    def test_penalty_terms(self):
        """Test the l1 penalties on Q^T Q and R^T R."""
        cfg = W2Config(rank=1, lambda1=0.5, lambda2=0.25)
        t = W2Transforms(q=np.eye(3), r=2 * np.eye(2))

        assert w2_objective(np.zeros((3, 2)), t, cfg) == pytest.approx(0.5 * 3 + 0.25 * 8)

    @pytest.mark.parametrize("penalty", [0.0, 0.1])
    def test_gradient_matches_finite_differences(self, rng, penalty):
        """Test both gradients against central differences."""
        e = rng.standard_normal((6, 5))
        q, r = near_identity(6, 1), near_identity(5, 2)
        cfg = W2Config(rank=1, lambda1=penalty, lambda2=penalty)
        grad_q, grad_r = w2_gradient(e, W2Transforms(q=q, r=r), cfg)

        numeric_q = numeric_gradient(lambda m: w2_objective(e, W2Transforms(q=m, r=r), cfg), q)
        numeric_r = numeric_gradient(lambda m: w2_objective(e, W2Transforms(q=q, r=m), cfg), r)

        np.testing.assert_allclose(grad_q, numeric_q, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(grad_r, numeric_r, rtol=1e-4, atol=1e-6)

    def test_l1_gradient_with_positive_gram(self):
        """Test the penalty gradient 2 lambda Q 1 1^T when Q^T Q is entrywise positive."""
        q = np.array([[1.0, 0.5], [0.5, 1.0]])
        cfg = W2Config(rank=1, lambda1=0.3, lambda2=0.0)
        grad_q, _ = w2_gradient(np.zeros((2, 2)), W2Transforms(q=q, r=np.eye(2)), cfg)

        np.testing.assert_allclose(grad_q, 2 * 0.3 * q @ np.ones((2, 2)))


class TestBalance:
    """Tests for balance_transforms."""

    def test_scaled_identities(self):
        """Test Q = 2I, R = I/2 balance to identities."""
        t = balance_transforms(W2Transforms(q=2 * np.eye(3), r=0.5 * np.eye(2)))

        np.testing.assert_allclose(t.q, np.eye(3))
        np.testing.assert_allclose(t.r, np.eye(2))
        assert t.balance_log == [pytest.approx((1.0, 1.0))]

    def test_whitened_residual_unchanged(self, rng):
        """Test Q E R is invariant under balancing."""
        e = rng.standard_normal((4, 3))
        t = W2Transforms(q=near_identity(4, 3) * 5, r=near_identity(3, 4))
        balanced = balance_transforms(t)

        np.testing.assert_allclose(balanced.q @ e @ balanced.r, t.q @ e @ t.r, rtol=1e-12, atol=1e-12)
        assert np.mean(np.linalg.svd(balanced.q, compute_uv=False)) == pytest.approx(
            np.mean(np.linalg.svd(balanced.r, compute_uv=False))
        )


class TestFitW2:
    """Tests for fit_w2."""

    def test_outputs(self, small_instance):
        """Test shapes, exported precisions and the transforms."""
        model = fit_w2(small_instance.y, W2Config(rank=2, max_iter=5))

        assert model.algorithm == Algorithm.W2
        assert model.x.shape == (60, 2)
        assert model.w.shape == (40, 2)
        assert model.transforms is not None
        assert len(model.transforms.balance_log) == model.iterations
        assert len(model.objective_trace) == model.iterations + 2
        q = model.transforms.q
        dense = model.omega_inv.to_dense()
        assert np.all((dense == 0) | np.isclose(dense, q.T @ q))

    def test_trace_starts_at_identity(self, small_instance):
        """Test the first trace entry is the objective of the PCA residual at Q = R = I."""
        y = small_instance.y
        cfg = W2Config(rank=2, max_iter=2)
        model = fit_w2(y, cfg)
        yc = y - y.mean(axis=0)
        u, s, vt = np.linalg.svd(yc, full_matrices=False)
        e = yc - (u[:, :2] * s[:2]) @ vt[:2]
        identity = W2Transforms(q=np.eye(60), r=np.eye(40))

        assert model.objective_trace[0] == pytest.approx(w2_objective(e, identity, cfg), rel=1e-8)

    def test_rescale_improves_on_identity(self, small_instance):
        """Test the scaled-identity update lowers the objective."""
        model = fit_w2(small_instance.y, W2Config(rank=2, max_iter=1))

        assert model.objective_trace[1] < model.objective_trace[0]

    def test_trace_decreases_overall(self, small_instance):
        """Test the final objective is below the initial one."""
        model = fit_w2(small_instance.y, W2Config(rank=2, max_iter=10))

        assert model.objective_trace[-1] < model.objective_trace[0]

    def test_scales_with_noise_level(self, rng):
        """Test doubling sigma scales the transforms by sqrt(2) and keeps the estimate."""
        y = rng.standard_normal((20, 15))
        base = W2Config(rank=2, lambda1=0.0, lambda2=0.0, max_iter=4, steps_per_outer=5)
        first = fit_w2(y, base)
        second = fit_w2(y, base.model_copy(update={"sigma_noise": 2.0}))

        np.testing.assert_allclose(second.transforms.q, np.sqrt(2.0) * first.transforms.q, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(second.low_rank_estimate(), first.low_rank_estimate(), rtol=1e-6, atol=1e-9)

    def test_row_precision_proportional_across_sigma(self, rng):
        """Test Q^T Q / sigma agrees within 5% for sigma in {0.5, 1, 2}."""
        y = rng.standard_normal((20, 15))
        base = W2Config(rank=2, lambda1=0.0, lambda2=0.0, max_iter=6, steps_per_outer=5)
        grams = {}
        for sigma in (0.5, 1.0, 2.0):
            q = fit_w2(y, base.model_copy(update={"sigma_noise": sigma})).transforms.q
            grams[sigma] = q.T @ q / sigma

        for sigma in (0.5, 2.0):
            ratio = np.linalg.norm(grams[sigma] - grams[1.0]) / np.linalg.norm(grams[1.0])
            assert ratio < 0.05

    def test_ill_conditioned_carries_best(self, small_instance, monkeypatch):
        """Test the abort exposes a model built from the best iterate."""
        monkeypatch.setattr(w2, "condition_number", lambda m: 1e12)

        with pytest.raises(IllConditionedTransformError) as info:
            fit_w2(small_instance.y, W2Config(rank=2, max_iter=5))

        best = info.value.best
        assert best is not None
        assert "ill_conditioned" in best.flags
        assert not best.converged
        assert best.transforms is not None

    def test_transforms_stay_invertible(self, small_instance):
        """Test the fitted transforms keep their smallest singular value above 1e-10."""
        model = fit_w2(small_instance.y, W2Config(rank=2, lambda1=0.5, lambda2=0.5, max_iter=5))

        for m in (model.transforms.q, model.transforms.r):
            assert np.linalg.svd(m, compute_uv=False)[-1] > 1e-10

    def test_rank_too_large(self):
        """Test the rank bound."""
        with pytest.raises(RankTooLargeError):
            fit_w2(np.ones((3, 4)), W2Config(rank=4))


class TestTransformsValidation:
    """Tests for the W2Transforms invertibility check."""

    def test_singular_rejected(self):
        """Test a singular transform is refused."""
        with pytest.raises(ValidationError):
            W2Transforms(q=np.diag([1.0, 0.0]), r=np.eye(2))


@pytest.mark.slow
class TestW2Recovery:
    """Recovery checks on generated data."""

    def test_iid_close_to_pca(self, iid_instance):
        """Test identity precisions give an RMSE within 10% of PCA."""
        from src.metrics import rmse
        from src.mrl import fit_pca

        truth = iid_instance.m_true
        pca = rmse(fit_pca(iid_instance.y, 2).low_rank_estimate(), truth)
        model = fit_w2(iid_instance.y, W2Config(rank=2, max_iter=20))

        assert rmse(model.low_rank_estimate(), truth) <= 1.1 * pca
        assert model.objective_trace[-1] < model.objective_trace[0]
