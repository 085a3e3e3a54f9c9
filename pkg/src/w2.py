"""
Wasserstein fit of the matrix-normal PCA model.

Instead of a likelihood, this fit learns square whitening transforms Q (n x n)
and R (p x p) so that the whitened residual Q E R looks like white noise of
scale sigma. For Gaussians the squared 2-Wasserstein distance has a closed
form; dropping constants and relaxing it gives the objective

    a ||Q E R||_F^2 - b ||Q E R||_* + lambda1 ||Q^T Q||_1 + lambda2 ||R^T R||_1

with a = 1 / sqrt(np) and b = 2 sigma / (np)^(1/4). Each outer iteration
re-solves the low-rank part as the rank-r SVD of Q Y R, takes a fixed number
of normalized subgradient steps on (Q, R), floors their singular values and
rebalances them.

For beginners: the l1 terms have kinks wherever an entry of Q^T Q is zero,
so single steps are not tested for descent. Only the value at the end of a
sweep is compared with its start; a sweep that ends higher is discarded and
later steps are shortened. The fit keeps the best iterate it has seen.
"""

import logging
from typing import Tuple

import numpy as np
import scipy.linalg as sla

from src.config import TOLERANCES
from src.exceptions import IllConditionedTransformError, PowerIterationStalledError, RankTooLargeError
from src.linalg import as_matrix, cholesky, condition_number, sqrtm_psd, truncated_svd
from src.models import Algorithm, MnPcaModel, SparseSymmetric, W2Config, W2Transforms
from src.mrl import gpca_postprocess

logger = logging.getLogger(__name__)

SINGULAR_VALUE_FLOOR = 1e-6


def gaussian_w2_squared(m1, c1, m2, c2) -> float:
    """
    Squared 2-Wasserstein distance between N(m1, c1) and N(m2, c2).

    ||m1 - m2||^2 + tr(c1 + c2 - 2 (c2^1/2 c1 c2^1/2)^1/2)

    Raises:
        NotPositiveDefiniteError: If a covariance is not SPD
    """
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    c1 = as_matrix(c1, "c1")
    c2 = as_matrix(c2, "c2")
    cholesky(c1)
    cholesky(c2)
    root2 = sqrtm_psd(c2)
    inner = root2 @ c1 @ root2
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    value = float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def _weights(shape: Tuple[int, int], sigma: float) -> Tuple[float, float]:
    n, p = shape
    return 1.0 / np.sqrt(n * p), 2.0 * sigma / (n * p) ** 0.25


def _penalty(q: np.ndarray, r: np.ndarray, cfg: W2Config) -> float:
    return cfg.lambda1 * np.abs(q.T @ q).sum() + cfg.lambda2 * np.abs(r.T @ r).sum()


def _objective(e: np.ndarray, q: np.ndarray, r: np.ndarray, cfg: W2Config) -> float:
    a, b = _weights(e.shape, cfg.sigma_noise)
    s = sla.svdvals(q @ e @ r, check_finite=False)
    return float(a * np.sum(s ** 2) - b * np.sum(s) + _penalty(q, r, cfg))


def _value_and_gradient(
    e: np.ndarray, q: np.ndarray, r: np.ndarray, cfg: W2Config
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Objective and gradients from a single SVD of Q E R."""
    a, b = _weights(e.shape, cfg.sigma_noise)
    er = e @ r
    qe = q @ e
    whitened = qe @ r
    u, s, vt = sla.svd(whitened, full_matrices=False, check_finite=False)
    # UV^T is a valid nuclear-norm subgradient even at repeated singular values
    polar = u @ vt
    core = 2.0 * a * whitened - b * polar
    gram_q = q.T @ q
    gram_r = r.T @ r
    value = float(
        a * np.sum(s ** 2) - b * np.sum(s) + cfg.lambda1 * np.abs(gram_q).sum() + cfg.lambda2 * np.abs(gram_r).sum()
    )
    grad_q = core @ er.T + 2.0 * cfg.lambda1 * q @ np.sign(gram_q)
    grad_r = qe.T @ core + 2.0 * cfg.lambda2 * r @ np.sign(gram_r)
    return value, grad_q, grad_r


def w2_objective(e, t: W2Transforms, cfg: W2Config) -> float:
    """
    Relaxed Wasserstein objective at a residual.

    Raises:
        NonFiniteError: If e contains NaN or Inf
    """
    return _objective(as_matrix(e, "e"), t.q, t.r, cfg)


def w2_gradient(e, t: W2Transforms, cfg: W2Config) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient of the relaxed objective with respect to Q and R.

    With Q E R = U diag(s) V^T:
        d/dQ = (2a QER - b UV^T)(ER)^T + 2 lambda1 Q sign(Q^T Q)
        d/dR = (QE)^T (2a QER - b UV^T) + 2 lambda2 R sign(R^T R)
    """
    _, grad_q, grad_r = _value_and_gradient(as_matrix(e, "e"), t.q, t.r, cfg)
    return grad_q, grad_r


def _mean_singular_value(m: np.ndarray) -> float:
    return float(np.mean(sla.svdvals(m, check_finite=False)))


def balance_transforms(t: W2Transforms) -> W2Transforms:
    """
    Rescale Q and R to equal mean singular values.

    Q <- c Q and R <- R / c with c = sqrt(mean_sv(R) / mean_sv(Q)), which
    leaves Q E R unchanged for every E.
    """
    sq = _mean_singular_value(t.q)
    sr = _mean_singular_value(t.r)
    c = np.sqrt(sr / sq)
    balanced = np.sqrt(sq * sr)
    return t.model_copy(
        update={
            "q": t.q * c,
            "r": t.r / c,
            "balance_log": [*t.balance_log, (balanced, balanced)],
        }
    )


def _floor_singular_values(m: np.ndarray) -> np.ndarray:
    u, s, vt = sla.svd(m, check_finite=False)
    floor = SINGULAR_VALUE_FLOOR * s.mean()
    if s[-1] >= floor:
        return m
    return (u * np.maximum(s, floor)) @ vt


def _low_rank_step(y: np.ndarray, q: np.ndarray, r: np.ndarray, rank: int):
    """Rank-r SVD of Q Y R and the residual Y - Q^-1 L R^-1, via solves."""
    svd = truncated_svd(q @ y @ r, rank)
    unwhitened = sla.solve(q, svd.reconstruct(), check_finite=False)
    unwhitened = sla.solve(r.T, unwhitened.T, check_finite=False).T
    return svd, y - unwhitened


def _identity_scale(e: np.ndarray, cfg: W2Config) -> float:
    """
    kappa^2 minimizing the objective along Q = R = kappa I.

    With s the singular values of E the objective along that line is
    a k^2 sum(s^2) - k (b sum(s) - lambda1 n - lambda2 p), k = kappa^2.
    """
    n, p = e.shape
    a, b = _weights(e.shape, cfg.sigma_noise)
    s = sla.svdvals(e, check_finite=False)
    curvature = 2.0 * a * np.sum(s ** 2)
    if curvature == 0:
        return 1.0
    slope = b * np.sum(s) - cfg.lambda1 * n - cfg.lambda2 * p
    if slope <= 0:
        # penalties dominate; fall back to the unpenalized minimizer
        slope = b * np.sum(s)
    return float(slope / curvature)


def _build_model(
    y: np.ndarray,
    means: np.ndarray,
    t: W2Transforms,
    cfg: W2Config,
    trace,
    converged: bool,
    iterations: int,
    flags,
) -> MnPcaModel:
    svd, _ = _low_rank_step(y, t.q, t.r, cfg.rank)
    # Q^-1 U S (R^-T V)^T = Q^-1 L R^-1
    x = sla.solve(t.q, svd.u * svd.s, check_finite=False)
    w = sla.solve(t.r.T, svd.v, check_finite=False)
    omega = t.q.T @ t.q
    sigma = t.r.T @ t.r

    gpca = None
    try:
        gpca = gpca_postprocess(x @ w.T, omega, sigma, cfg.rank)
    except PowerIterationStalledError as exc:
        logger.warning("GPCA post-processing skipped: %s", exc)
        flags = [*flags, "gpca_stalled"]

    return MnPcaModel(
        algorithm=Algorithm.W2,
        x=x,
        w=w,
        omega_inv=SparseSymmetric.from_dense(omega, threshold=TOLERANCES.sparse_export),
        sigma_inv=SparseSymmetric.from_dense(sigma, threshold=TOLERANCES.sparse_export),
        objective_trace=list(trace),
        hyper=cfg.model_dump(),
        column_means=means,
        converged=converged,
        flags=list(flags),
        iterations=iterations,
        transforms=t,
        gpca=gpca,
    )


def fit_w2(y, cfg: W2Config) -> MnPcaModel:
    """
    Fit the model by minimizing the relaxed Wasserstein objective.

    Q and R start at the identity, so the first low-rank step is plain PCA.
    The first update rescales both to the kappa I that minimizes the
    objective along scaled identities; from there every iterate scales
    exactly with sigma. The returned model uses the best iterate.

    Args:
        y: n x p data
        cfg: Fit settings

    Returns:
        MnPcaModel with omega_inv = Q^T Q, sigma_inv = R^T R and the transforms;
        objective_trace starts with the value at Q = R = I

    Raises:
        RankTooLargeError: If cfg.rank > min(n, p)
        IllConditionedTransformError: If cond(Q) or cond(R) exceeds 1e8;
            the exception carries the best model seen so far
    """
    y = as_matrix(y, "y")
    n, p = y.shape
    if cfg.rank > min(n, p):
        raise RankTooLargeError(f"rank {cfg.rank} exceeds min{y.shape}")
    means = y.mean(axis=0) if cfg.center else np.zeros(p)
    yc = y - means
    flags = []

    q, r = np.eye(n), np.eye(p)
    _, e = _low_rank_step(yc, q, r, cfg.rank)
    trace = [_objective(e, q, r, cfg)]
    if not np.any(e):
        logger.warning("PCA residual is zero; keeping identity transforms")
        flags.append("zero_residual")
    kappa = np.sqrt(_identity_scale(e, cfg))
    t = W2Transforms(q=kappa * q, r=kappa * r, sigma_noise=cfg.sigma_noise)
    best_value = _objective(e, t.q, t.r, cfg)
    best = t
    trace.append(best_value)

    logger.info(
        "W2 fit n=%d p=%d r=%d lambda1=%.4g lambda2=%.4g sigma=%.4g kappa=%.4g",
        n, p, cfg.rank, cfg.lambda1, cfg.lambda2, cfg.sigma_noise, kappa,
    )

    converged = False
    step_count = 0
    shrink = 1.0
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        _, e = _low_rank_step(yc, t.q, t.r, cfg.rank)
        q, r = t.q, t.r
        start_value = None

        for _ in range(cfg.steps_per_outer):
            eta = shrink * cfg.step_size / (1.0 + step_count * cfg.step_decay)
            step_count += 1
            value, grad_q, grad_r = _value_and_gradient(e, q, r, cfg)
            if start_value is None:
                start_value = value
            norm_q = np.linalg.norm(grad_q)
            norm_r = np.linalg.norm(grad_r)
            if norm_q == 0 and norm_r == 0:
                break
            if norm_q > 0:
                q = q - eta * np.linalg.norm(q) / norm_q * grad_q
            if norm_r > 0:
                r = r - eta * np.linalg.norm(r) / norm_r * grad_r

        candidate = W2Transforms(
            q=_floor_singular_values(q),
            r=_floor_singular_values(r),
            sigma_noise=cfg.sigma_noise,
            balance_log=t.balance_log,
        )
        value = _objective(e, candidate.q, candidate.r, cfg)
        accepted = value <= start_value
        if not accepted:
            # the whole sweep overshot; keep the start and shorten later steps
            shrink *= 0.5
            logger.debug("W2 outer %d rejected sweep, step multiplier %.3g", iteration, shrink)
            candidate, value = t, start_value
        t = balance_transforms(candidate)

        previous = trace[-1]
        trace.append(value)
        if value < best_value:
            best_value, best = value, t

        cond = max(condition_number(t.q), condition_number(t.r))
        logger.debug("W2 outer %d objective=%.10g cond=%.3e", iteration, value, cond)
        if cond > TOLERANCES.max_condition:
            model = _build_model(yc, means, best, cfg, trace, False, iteration, [*flags, "ill_conditioned"])
            raise IllConditionedTransformError(
                f"transform condition number {cond:.3e} exceeds {TOLERANCES.max_condition:.0e}",
                best=model,
            )

        change = abs(previous - value) / max(abs(previous), np.finfo(float).tiny)
        if accepted and change < cfg.tol:
            converged = True
            break

    if not converged:
        logger.warning("W2 did not converge in %d iterations", cfg.max_iter)

    # keep the full balance history on the returned transforms
    best = best.model_copy(update={"balance_log": t.balance_log})
    return _build_model(yc, means, best, cfg, trace, converged, iteration, flags)
