"""
Maximum regularized likelihood fit of the matrix-normal PCA model.

Model: Y = X W^T + E with E matrix-normal, row precision Omega^-1 (n x n)
and column precision Sigma^-1 (p x p). The fit alternates three block
updates on

    1/2 tr[Sigma^-1 R^T Omega^-1 R] + p/2 log|Omega| + n/2 log|Sigma|
        + n lambda1 ||Omega^-1||_1 + p lambda2 ||Sigma^-1||_1,   R = Y - X W^T

1. Omega^-1 by the graphical lasso on S1 = R Sigma^-1 R^T / p
2. Sigma^-1 by the graphical lasso on S2 = R^T Omega^-1 R / n
3. X, W by ridge-protected alternating least squares

Dividing the Omega block by p/2 shows that step 1 is glasso(S1, 2 n lambda1 / p);
likewise step 2 uses 2 p lambda2 / n. With those penalties every block update
minimizes the objective, and a guard rejects the rare update that does not.

The module also holds the plain PCA baseline and the generalized power
method that turns a fitted X W^T into unique factors.
"""

import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.config import TOLERANCES
from src.exceptions import NotPositiveDefiniteError, PowerIterationStalledError, RankTooLargeError, ShapeMismatchError
from src.glasso import select_lambda_bic, solve_glasso
from src.linalg import as_matrix, canonicalize_signs, cholesky, logdet_spd, solve_spd, truncated_svd
from src.models import Algorithm, GlassoProblem, GpcaFactors, MnPcaModel, MrlConfig, SparseSymmetric

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Objective
# ----------------------------------------------------------------------

def mahalanobis_distance(resid: np.ndarray, omega_inv: np.ndarray, sigma_inv: np.ndarray) -> float:
    """tr[Sigma^-1 R^T Omega^-1 R] for a residual R."""
    return float(np.sum((omega_inv @ resid) * (resid @ sigma_inv)))


def penalized_objective(
    resid: np.ndarray,
    omega_inv: np.ndarray,
    sigma_inv: np.ndarray,
    lambda1: float,
    lambda2: float,
) -> float:
    """Regularized negative log-likelihood evaluated from a residual."""
    n, p = resid.shape
    fit = 0.5 * mahalanobis_distance(resid, omega_inv, sigma_inv)
    # log|Omega| = -log|Omega^-1|
    log_terms = -0.5 * p * logdet_spd(omega_inv) - 0.5 * n * logdet_spd(sigma_inv)
    penalty = n * lambda1 * np.abs(omega_inv).sum() + p * lambda2 * np.abs(sigma_inv).sum()
    return float(fit + log_terms + penalty)


def _residual(y: np.ndarray, model: MnPcaModel) -> np.ndarray:
    y = as_matrix(y, "y")
    if y.shape != (model.x.shape[0], model.w.shape[0]):
        raise ShapeMismatchError(f"data shape {y.shape} does not match the model")
    return y - model.column_means - model.reconstruction()


def neg_log_likelihood(y, model: MnPcaModel) -> float:
    """
    Regularized negative log-likelihood of data under a fitted model.

    Penalty weights come from ``model.hyper['lambda1']`` and
    ``model.hyper['lambda2']`` (zero when absent).

    Raises:
        NotPositiveDefiniteError: If a precision is not positive definite
    """
    resid = _residual(y, model)
    return penalized_objective(
        resid,
        model.omega_inv.to_dense(),
        model.sigma_inv.to_dense(),
        float(model.hyper.get("lambda1", 0.0)),
        float(model.hyper.get("lambda2", 0.0)),
    )


def mahalanobis_reconstruction_error(y, model: MnPcaModel) -> float:
    """Generalized Mahalanobis reconstruction error tr[Sigma^-1 R^T Omega^-1 R]."""
    resid = _residual(y, model)
    return mahalanobis_distance(resid, model.omega_inv.to_dense(), model.sigma_inv.to_dense())


# ----------------------------------------------------------------------
# Block updates
# ----------------------------------------------------------------------

def update_factors_als(
    y: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    omega_inv: np.ndarray,
    sigma_inv: np.ndarray,
    epsilon: float = 1e-6,
    tol: float = 1e-5,
    max_iter: int = 30,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """
    Alternating least squares on the scores and loadings.

    X <- Y Sigma^-1 W (W^T Sigma^-1 W + eps I)^-1, then
    W <- Y^T Omega^-1 X (X^T Omega^-1 X + eps I)^-1, repeated until the
    relative change of 1/2 tr[Sigma^-1 R^T Omega^-1 R] drops below tol.

    Args:
        y: Centered data (n x p)
        x, w: Current scores (n x r) and loadings (p x r)
        omega_inv, sigma_inv: Dense precisions
        epsilon: Ridge protecting the r x r solves
        tol: Relative change threshold
        max_iter: Maximum sweeps

    Returns:
        (x, w, fit_trace) with the fit value after every sweep
    """
    r = x.shape[1]
    ridge = epsilon * np.eye(r)
    fit = 0.5 * mahalanobis_distance(y - x @ w.T, omega_inv, sigma_inv)
    trace = [fit]

    for sweep in range(max_iter):
        sw = sigma_inv @ w
        x = solve_spd(w.T @ sw + ridge, (y @ sw).T).T
        ox = omega_inv @ x
        w = solve_spd(x.T @ ox + ridge, (y.T @ ox).T).T

        new_fit = 0.5 * mahalanobis_distance(y - x @ w.T, omega_inv, sigma_inv)
        trace.append(new_fit)
        change = abs(fit - new_fit) / max(abs(fit), np.finfo(float).tiny)
        fit = new_fit
        if change < tol:
            break

    logger.debug("ALS finished after %d sweeps, fit=%.6g", len(trace) - 1, fit)
    return x, w, trace


def _glasso_precision(
    s: np.ndarray, rho: float, tol: float, max_iter: int, flags: List[str], label: str
) -> Optional[np.ndarray]:
    """Glasso step shared by both precisions; None means the update is skipped."""
    if not np.any(s):
        logger.warning("%s covariance is zero (exact fit); precision update skipped", label)
        flags.append(f"zero_residual_{label}")
        return None
    if rho == 0:
        try:
            cholesky(s)
        except NotPositiveDefiniteError:
            logger.warning("%s covariance is singular; adding %.1e jitter", label, TOLERANCES.jitter)
            flags.append(f"jitter_{label}")
            s = s + TOLERANCES.jitter * np.eye(s.shape[0])
    solution = solve_glasso(GlassoProblem(s=(s + s.T) / 2.0, rho=rho), tol=tol, max_iter=max_iter)
    if not solution.converged:
        flags.append(f"glasso_not_converged_{label}")
    return solution.theta.to_dense()


def row_covariance(resid: np.ndarray, sigma_inv: np.ndarray) -> np.ndarray:
    """S1 = R Sigma^-1 R^T / p."""
    return resid @ sigma_inv @ resid.T / resid.shape[1]


def column_covariance(resid: np.ndarray, omega_inv: np.ndarray) -> np.ndarray:
    """S2 = R^T Omega^-1 R / n."""
    return resid.T @ omega_inv @ resid / resid.shape[0]


def update_precisions(
    resid: np.ndarray,
    omega_inv: np.ndarray,
    sigma_inv: np.ndarray,
    rho1: float,
    rho2: float,
    tol: float = 1e-5,
    max_iter: int = 200,
    accept: Optional[Callable[[str, np.ndarray, np.ndarray], bool]] = None,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    Flip-flop update of both precisions.

    Omega^-1 is re-estimated first; S2 for Sigma^-1 then uses the new Omega^-1.
    A zero residual leaves both precisions unchanged.

    Args:
        resid: Current residual
        omega_inv, sigma_inv: Current precisions
        rho1, rho2: Glasso penalties of the two blocks
        tol, max_iter: Glasso settings
        accept: Optional guard called as accept(label, omega_inv, sigma_inv)
            with a candidate pair; a False return keeps the previous precision

    Returns:
        (omega_inv, sigma_inv, flags)
    """
    flags: List[str] = []
    new_omega = _glasso_precision(row_covariance(resid, sigma_inv), rho1, tol, max_iter, flags, "rows")
    if new_omega is not None and (accept is None or accept("rows", new_omega, sigma_inv)):
        omega_inv = new_omega
    new_sigma = _glasso_precision(column_covariance(resid, omega_inv), rho2, tol, max_iter, flags, "cols")
    if new_sigma is not None and (accept is None or accept("cols", omega_inv, new_sigma)):
        sigma_inv = new_sigma
    return omega_inv, sigma_inv, flags


# ----------------------------------------------------------------------
# Generalized power method
# ----------------------------------------------------------------------

def gpca_postprocess(
    y,
    omega_inv,
    sigma_inv,
    r: int,
    tol: float = 1e-10,
    max_iter: int = 2000,
) -> GpcaFactors:
    """
    Unique factors of a matrix in the precision-weighted inner products.

    Component k alternates u = Y R v / ||Y R v||_Q and v = Y^T Q u / ||Y^T Q u||_R
    (Q = Omega^-1, R = Sigma^-1), then deflates Y <- Y - d u v^T with
    d = u^T Q Y R v. Each start vector is the top right singular vector of
    the deflated matrix.

    Args:
        y: n x p matrix (typically a fitted low-rank estimate)
        omega_inv, sigma_inv: Precisions (dense or SparseSymmetric)
        r: Number of components
        tol: Bound on the relative Rayleigh change and on the R-norm step of v
        max_iter: Iterations per component

    Returns:
        GpcaFactors with u^T Q u = I, v^T R v = I

    Raises:
        PowerIterationStalledError: If a component does not settle
    """
    y = as_matrix(y, "y")
    q = omega_inv.to_dense() if isinstance(omega_inv, SparseSymmetric) else as_matrix(omega_inv)
    rm = sigma_inv.to_dense() if isinstance(sigma_inv, SparseSymmetric) else as_matrix(sigma_inv)
    n, p = y.shape
    if r < 1 or r > min(n, p):
        raise RankTooLargeError(f"rank {r} outside [1, {min(n, p)}]")

    def q_norm(vec):
        return float(np.sqrt(vec @ q @ vec))

    def r_norm(vec):
        return float(np.sqrt(vec @ rm @ vec))

    residual = y.copy()
    us, ds, vs = [], [], []
    for component in range(r):
        if not np.any(residual):
            raise PowerIterationStalledError(component, float("inf"))
        v = truncated_svd(residual, 1).v[:, 0]
        v = v / r_norm(v)
        d_prev = 0.0
        change = np.inf
        for _ in range(max_iter):
            u = residual @ (rm @ v)
            u = u / q_norm(u)
            v_new = residual.T @ (q @ u)
            d = r_norm(v_new)
            v_new = v_new / d
            step = r_norm(v_new - v)
            change = max(abs(d - d_prev) / max(d, np.finfo(float).tiny), step)
            v, d_prev = v_new, d
            if change <= tol:
                break
        else:
            raise PowerIterationStalledError(component, change)

        u = residual @ (rm @ v)
        d = q_norm(u)
        u = u / d
        residual = residual - d * np.outer(u, v)
        us.append(u)
        ds.append(d)
        vs.append(v)
        logger.debug("GPCA component %d: d=%.6g", component, d)

    u_mat, v_mat = canonicalize_signs(np.column_stack(us), np.column_stack(vs))
    return GpcaFactors(u=u_mat, d=np.asarray(ds), v=v_mat)


# ----------------------------------------------------------------------
# Fits
# ----------------------------------------------------------------------

def _prepare(y, rank: int, center: bool) -> Tuple[np.ndarray, np.ndarray]:
    y = as_matrix(y, "y")
    if rank > min(y.shape):
        raise RankTooLargeError(f"rank {rank} exceeds min{y.shape}")
    means = y.mean(axis=0) if center else np.zeros(y.shape[1])
    return y - means, means


def fit_pca(y, rank: int, center: bool = True) -> MnPcaModel:
    """
    Plain PCA baseline: rank-r truncated SVD with identity precisions.

    Args:
        y: n x p data
        rank: Target rank
        center: Remove column means first

    Returns:
        MnPcaModel with x = U_r S_r and w = V_r
    """
    yc, means = _prepare(y, rank, center)
    n, p = yc.shape
    svd = truncated_svd(yc, rank)
    x, w = svd.u * svd.s, svd.v
    objective = 0.5 * float(np.sum((yc - x @ w.T) ** 2))
    return MnPcaModel(
        algorithm=Algorithm.PCA,
        x=x,
        w=w,
        omega_inv=SparseSymmetric.identity(n),
        sigma_inv=SparseSymmetric.identity(p),
        objective_trace=[objective],
        hyper={"rank": rank, "center": center},
        column_means=means,
        gpca=GpcaFactors(u=svd.u, d=svd.s, v=svd.v),
    )


def _penalty_from_bic(s: np.ndarray, p_dim: int, cfg: MrlConfig) -> float:
    return select_lambda_bic(s, p_dim, tol=cfg.glasso_tol, max_iter=cfg.glasso_max_iter).lam


def fit_mrl(y, cfg: MrlConfig) -> MnPcaModel:
    """
    Maximum regularized likelihood fit.

    Starts from the rank-r SVD with identity precisions, then repeats
    {row precision, column precision, ALS} until the relative objective
    change falls below ``cfg.outer_tol`` or ``cfg.max_outer`` is reached.
    "auto" penalties are chosen once by BIC at the starting point.

    Args:
        y: n x p data
        cfg: Fit settings

    Returns:
        MnPcaModel; ``converged`` is False if the outer budget ran out

    Raises:
        RankTooLargeError: If cfg.rank > min(n, p)
        NonFiniteError: If y contains NaN or Inf
    """
    yc, means = _prepare(y, cfg.rank, cfg.center)
    n, p = yc.shape
    flags: List[str] = []

    svd = truncated_svd(yc, cfg.rank)
    x, w = svd.u * svd.s, svd.v
    omega = np.eye(n)
    sigma = np.eye(p)
    resid = yc - x @ w.T

    if cfg.update_precisions:
        if cfg.lambda1 == "auto":
            rho1 = _penalty_from_bic(row_covariance(resid, sigma), p, cfg)
            lambda1 = p * rho1 / (2 * n)
        else:
            lambda1 = float(cfg.lambda1)
            rho1 = 2 * n * lambda1 / p
        if cfg.lambda2 == "auto":
            rho2 = _penalty_from_bic(column_covariance(resid, omega), n, cfg)
            lambda2 = n * rho2 / (2 * p)
        else:
            lambda2 = float(cfg.lambda2)
            rho2 = 2 * p * lambda2 / n
    else:
        lambda1 = 0.0 if cfg.lambda1 == "auto" else float(cfg.lambda1)
        lambda2 = 0.0 if cfg.lambda2 == "auto" else float(cfg.lambda2)
        rho1 = rho2 = 0.0

    logger.info(
        "MRL fit n=%d p=%d r=%d lambda1=%.4g lambda2=%.4g (rho1=%.4g rho2=%.4g)",
        n, p, cfg.rank, lambda1, lambda2, rho1, rho2,
    )

    def objective(x_, w_, omega_, sigma_):
        return penalized_objective(yc - x_ @ w_.T, omega_, sigma_, lambda1, lambda2)

    current = objective(x, w, omega, sigma)

    def accept(block: str, new: float) -> bool:
        nonlocal current
        if new <= current + TOLERANCES.monotone_slack * abs(current):
            current = new
            return True
        logger.warning("%s update raised the objective (%.10g -> %.10g); rejected", block, current, new)
        flags.append(f"rejected_{block}")
        return False

    trace = [current]
    converged = False
    outer = 0

    for outer in range(1, cfg.max_outer + 1):
        start = current

        if cfg.update_precisions:
            omega, sigma, glasso_flags = update_precisions(
                yc - x @ w.T,
                omega,
                sigma,
                rho1,
                rho2,
                cfg.glasso_tol,
                cfg.glasso_max_iter,
                accept=lambda block, omega_, sigma_: accept(block, objective(x, w, omega_, sigma_)),
            )
            flags.extend(glasso_flags)

        x_new, w_new, _ = update_factors_als(
            yc, x, w, omega, sigma, cfg.epsilon, cfg.inner_tol, cfg.max_inner
        )
        if accept("factors", objective(x_new, w_new, omega, sigma)):
            x, w = x_new, w_new

        trace.append(current)
        change = abs(start - current) / max(abs(start), np.finfo(float).tiny)
        logger.debug("MRL outer %d objective=%.10g change=%.3e", outer, current, change)
        if change < cfg.outer_tol:
            converged = True
            break

    if not converged:
        logger.warning("MRL did not converge in %d outer iterations", cfg.max_outer)

    gpca = None
    if cfg.postprocess:
        try:
            gpca = gpca_postprocess(x @ w.T, omega, sigma, cfg.rank)
        except PowerIterationStalledError as exc:
            logger.warning("GPCA post-processing skipped: %s", exc)
            flags.append("gpca_stalled")

    return MnPcaModel(
        algorithm=Algorithm.MRL,
        x=x,
        w=w,
        omega_inv=SparseSymmetric.from_dense(omega),
        sigma_inv=SparseSymmetric.from_dense(sigma),
        objective_trace=trace,
        hyper={
            "rank": cfg.rank,
            "lambda1": lambda1,
            "lambda2": lambda2,
            "rho1": rho1,
            "rho2": rho2,
            "epsilon": cfg.epsilon,
            "outer_tol": cfg.outer_tol,
            "inner_tol": cfg.inner_tol,
            "center": cfg.center,
            "update_precisions": cfg.update_precisions,
        },
        column_means=means,
        converged=converged,
        flags=flags,
        iterations=outer,
        gpca=gpca,
    )
