"""
Sparse precision estimation with the graphical lasso.

The penalized problem solved here is

    minimize  -log|Theta| + tr(S Theta) + rho * sum_ij |Theta_ij|

with the diagonal included in the penalty. Adding rho to the diagonal of S
turns it into the off-diagonal-penalized form handled by scikit-learn's
coordinate-descent kernel, so each screened block is passed to
``sklearn.covariance.graphical_lasso`` on S + rho I.

For beginners: the covariance graph is split into connected components first
(entries with |S_ij| <= rho never connect two blocks), so large problems
become many small independent ones. A block on which coordinate descent
fails falls back to proximal gradient steps guarded by a Cholesky test.
"""

import logging
import warnings
from typing import List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_array
from scipy.sparse.csgraph import connected_components as _csgraph_components
from sklearn.covariance import graphical_lasso
from sklearn.exceptions import ConvergenceWarning

from src.config import get_settings
from src.exceptions import DegenerateCovarianceError, NotPositiveDefiniteError
from src.linalg import as_matrix, cholesky, inv_spd, logdet_spd
from src.models import GlassoProblem, GlassoSolution, LambdaGrid, LambdaSelection, SparseSymmetric

logger = logging.getLogger(__name__)

GRID_SIZE = 10
GRID_RATIO = 0.1


def glasso_objective(problem: GlassoProblem, theta) -> float:
    """
    Penalized negative log-likelihood of a precision matrix.

    Args:
        problem: Covariance and penalty
        theta: Precision matrix (SparseSymmetric or dense array)

    Returns:
        -log|theta| + tr(S theta) + rho * ||theta||_1 (diagonal included)

    Raises:
        NotPositiveDefiniteError: If theta is not positive definite
    """
    dense = theta.to_dense() if isinstance(theta, SparseSymmetric) else as_matrix(theta, "theta")
    return float(-logdet_spd(dense) + np.sum(problem.s * dense) + problem.rho * np.abs(dense).sum())


def screened_pattern(s: np.ndarray, rho: float) -> SparseSymmetric:
    """Off-diagonal entries of s that survive screening at level rho (|S_ij| > rho)."""
    return SparseSymmetric.from_dense(as_matrix(s, "covariance"), threshold=rho)


def connected_components(pattern: SparseSymmetric) -> List[np.ndarray]:
    """
    Partition the indices of a screened pattern into connected blocks.

    Returns:
        Index arrays, one per block, ordered by their smallest index
    """
    adjacency = csr_array(
        (np.ones(pattern.nnz_offdiag), (pattern.rows, pattern.cols)),
        shape=(pattern.dim, pattern.dim),
    )
    _, labels = _csgraph_components(adjacency, directed=False)
    blocks = [np.flatnonzero(labels == label) for label in np.unique(labels)]
    return sorted(blocks, key=lambda block: block[0])


def kkt_residual(s: np.ndarray, theta: np.ndarray, rho: float) -> float:
    """
    Largest stationarity violation of a candidate solution.

    On the support: |W_ij - S_ij - rho sign(Theta_ij)|; off it:
    max(0, |W_ij - S_ij| - rho), with W = Theta^-1.
    """
    w = inv_spd(theta)
    gap = w - s
    on_support = theta != 0
    residual = np.where(
        on_support,
        np.abs(gap - rho * np.sign(theta)),
        np.maximum(0.0, np.abs(gap) - rho),
    )
    return float(residual.max())


def _soft_threshold(a: np.ndarray, level: float) -> np.ndarray:
    return np.sign(a) * np.maximum(np.abs(a) - level, 0.0)


def _smooth_part(s: np.ndarray, theta: np.ndarray) -> Optional[float]:
    """-log|theta| + tr(S theta), or None when theta is not positive definite."""
    try:
        low = cholesky(theta)
    except NotPositiveDefiniteError:
        return None
    return float(-2.0 * np.sum(np.log(np.diag(low))) + np.sum(s * theta))


def proximal_glasso(
    s: np.ndarray, rho: float, tol: float = 1e-5, max_iter: int = 200
) -> Tuple[np.ndarray, List[float], int, bool]:
    """
    Graphical lasso by proximal gradient steps that never leave the SPD cone.

    Used when coordinate descent breaks down, typically on rank-deficient
    covariances. Each step soft-thresholds Theta - t (S - Theta^-1) at t rho;
    t is backtracked until the candidate has a Cholesky factor and satisfies
    the quadratic upper bound, so the objective never increases. Step sizes
    start from the Barzilai-Borwein estimate of the previous step.

    Args:
        s: Covariance block
        rho: Positive penalty, diagonal included
        tol: Relative objective change that counts as converged
        max_iter: Maximum proximal steps

    Returns:
        (theta, objective trace, steps taken, converged)
    """
    dim = s.shape[0]
    theta = np.diag(1.0 / (np.diag(s) + rho))
    smooth = _smooth_part(s, theta)
    w = np.diag(np.diag(s) + rho)
    trace = [smooth + rho * np.abs(theta).sum()]
    step = float(np.min(np.diag(theta))) ** 2

    for iteration in range(1, max_iter + 1):
        grad = s - w
        for _ in range(60):
            candidate = _soft_threshold(theta - step * grad, step * rho)
            candidate = (candidate + candidate.T) / 2.0
            value = _smooth_part(s, candidate)
            diff = candidate - theta
            if value is not None and value <= smooth + np.sum(grad * diff) + np.sum(diff ** 2) / (2.0 * step):
                break
            step /= 2.0
        else:
            logger.warning("proximal glasso step collapsed after %d iterations (dim=%d)", iteration - 1, dim)
            return theta, trace, iteration - 1, False

        w_new = inv_spd(candidate)
        objective = value + rho * np.abs(candidate).sum()
        previous = trace[-1]
        trace.append(objective)
        # curvature along the step: <dTheta, dGrad> with dGrad = -(W_new - W)
        curvature = -np.sum(diff * (w_new - w))
        theta, w, smooth = candidate, w_new, value
        if curvature > 0:
            step = float(np.sum(diff ** 2) / curvature)

        if abs(previous - objective) <= tol * max(abs(previous), 1.0):
            return theta, trace, iteration, True

    return theta, trace, max_iter, False


def solve_glasso(problem: GlassoProblem, tol: float = 1e-5, max_iter: int = 200) -> GlassoSolution:
    """
    Solve the graphical lasso on every screened block.

    Args:
        problem: Covariance and penalty
        tol: Dual-gap tolerance of the coordinate-descent solver
        max_iter: Maximum outer sweeps per block

    Blocks where coordinate descent breaks down (it can on rank-deficient
    covariances) are re-solved with proximal_glasso, so every returned
    precision is positive definite.

    Returns:
        GlassoSolution; ``converged`` is False when any block ran out of sweeps

    Raises:
        NotPositiveDefiniteError: If rho = 0 and S is singular
    """
    s, rho = problem.s, problem.rho
    dim = problem.dim

    if rho == 0:
        theta = inv_spd(s)
        return GlassoSolution(
            theta=SparseSymmetric.from_dense(theta),
            objective=glasso_objective(problem, theta),
            iterations=0,
            kkt_residual=kkt_residual(s, theta, 0.0),
            objective_trace=[],
        )

    blocks = connected_components(screened_pattern(s, rho))
    theta = np.zeros((dim, dim))
    iterations = 0
    converged = True
    trace: List[float] = []
    largest = max(len(block) for block in blocks)
    fallbacks = 0

    for block in blocks:
        if len(block) == 1:
            i = block[0]
            theta[i, i] = 1.0 / (s[i, i] + rho)
            continue

        sub = s[np.ix_(block, block)] + rho * np.eye(len(block))
        costs = None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            try:
                _, precision, costs, n_iter = graphical_lasso(
                    sub,
                    alpha=rho,
                    mode="cd",
                    tol=tol,
                    enet_tol=min(tol, 1e-4),
                    max_iter=max_iter,
                    return_costs=True,
                    return_n_iter=True,
                )
                cholesky(precision)
            except (FloatingPointError, NotPositiveDefiniteError) as exc:
                logger.info("coordinate descent failed on a block of size %d (%s); using proximal steps", len(block), exc)
                costs = None
        if costs is None:
            precision, block_trace, n_iter, block_converged = proximal_glasso(
                s[np.ix_(block, block)], rho, tol=tol, max_iter=max_iter
            )
            converged = converged and block_converged
            fallbacks += 1
        else:
            if any(issubclass(w.category, ConvergenceWarning) for w in caught):
                converged = False
            # sklearn reports tr - logdet + 2 k log(2 pi) + rho * offdiag
            offset = 2 * len(block) * np.log(2 * np.pi)
            block_trace = [float(cost - offset) for cost, _ in costs]
        iterations += n_iter
        theta[np.ix_(block, block)] = precision

        if len(block) == largest and not trace:
            trace = block_trace

    theta = (theta + theta.T) / 2.0
    solution_theta = SparseSymmetric.from_dense(theta)
    objective = glasso_objective(problem, theta)
    residual = kkt_residual(s, theta, rho)

    logger.debug(
        "glasso dim=%d rho=%.4g blocks=%d proximal=%d iterations=%d kkt=%.3e",
        dim, rho, len(blocks), fallbacks, iterations, residual,
    )
    if not converged:
        logger.warning("glasso did not converge within %d sweeps (rho=%.4g, kkt=%.3e)", max_iter, rho, residual)

    return GlassoSolution(
        theta=solution_theta,
        objective=objective,
        iterations=iterations,
        kkt_residual=residual,
        converged=converged,
        objective_trace=trace,
        n_components=len(blocks),
    )


def lambda_grid(s) -> LambdaGrid:
    """
    Ten log-spaced penalties between 0.1 and 1 times max |S_ij| (i != j).

    Raises:
        DegenerateCovarianceError: If every off-diagonal entry is zero
    """
    s = as_matrix(s, "covariance")
    off = s - np.diag(np.diag(s))
    lam_max = float(np.max(np.abs(off), initial=0.0))
    if lam_max == 0.0:
        raise DegenerateCovarianceError("covariance has no off-diagonal signal; lambda grid is undefined")
    return LambdaGrid(values=np.geomspace(GRID_RATIO * lam_max, lam_max, GRID_SIZE).tolist())


def bic_score(s: np.ndarray, solution: GlassoSolution, p_dim: int) -> float:
    """-log|Theta| + tr(S Theta) + t log(p_dim) / p_dim, t = upper off-diagonal nonzeros."""
    theta = solution.theta.to_dense()
    t = int(np.count_nonzero(solution.theta.values))
    return float(-logdet_spd(theta) + np.sum(s * theta) + t * np.log(p_dim) / p_dim)


def select_lambda_bic(
    s,
    p_dim: int,
    tol: float = 1e-5,
    max_iter: int = 200,
    default_rho: Optional[float] = None,
) -> LambdaSelection:
    """
    Choose the grid penalty with the smallest BIC.

    Args:
        s: Empirical covariance
        p_dim: Number of observations averaged into s
        tol: Solver tolerance
        max_iter: Solver sweep budget
        default_rho: Penalty used when the grid is undefined
            (defaults to ``Settings.default_rho``)

    Returns:
        LambdaSelection; ties go to the larger penalty
    """
    s = as_matrix(s, "covariance")
    try:
        grid = lambda_grid(s)
    except DegenerateCovarianceError:
        rho = default_rho if default_rho is not None else get_settings().default_rho
        logger.warning("lambda grid undefined, falling back to rho=%.4g", rho)
        solution = solve_glasso(GlassoProblem(s=s, rho=rho), tol=tol, max_iter=max_iter)
        return LambdaSelection(lam=rho, solution=solution, fallback=True)

    best_index = 0
    best_bic = np.inf
    bics: List[float] = []
    solutions: List[GlassoSolution] = []
    for index, lam in enumerate(grid.values):
        solution = solve_glasso(GlassoProblem(s=s, rho=lam), tol=tol, max_iter=max_iter)
        bic = bic_score(s, solution, p_dim)
        logger.debug("BIC lambda=%.4g edges=%d bic=%.6f", lam, solution.theta.nnz_offdiag, bic)
        bics.append(bic)
        solutions.append(solution)
        # grid is increasing, so <= keeps the sparser model on ties
        if bic <= best_bic:
            best_bic, best_index = bic, index

    logger.info("BIC selected lambda=%.4g (%d of %d)", grid.values[best_index], best_index + 1, GRID_SIZE)
    return LambdaSelection(
        lam=grid.values[best_index],
        solution=solutions[best_index],
        grid=grid,
        bic=bics,
    )
