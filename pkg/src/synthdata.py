"""
Synthetic benchmark data.

Instances follow Y = M* + E where the rows of M* are copies of three
centroids and E is matrix-normal noise whose row and column precisions are
sparse SPD matrices with a prescribed density and condition number:

- gen_sparse_spd: sparse precision with exact condition number
- gen_small_scale: 20-entry centroid blocks (n=300, p=200 by default)
- gen_large_scale: 10%-of-p centroid blocks
- gen_swiss_roll: two interleaved rolls in 3-D

Every generator is a pure function of its spec and seed.
"""

import logging
from typing import Union

import numpy as np
import scipy.linalg as sla

from src.exceptions import InfeasibleSpecError
from src.linalg import cholesky, sym_eig
from src.models import CentroidPattern, SparseSymmetric, SwissRoll, SyntheticInstance, SyntheticSpec

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

SMALL_BLOCK_WIDTH = 20
LARGE_BLOCK_FRACTION = 0.1
N_CENTROIDS = 3


def gen_sparse_spd(dim: int, alpha: float, c: float, seed: Seed = 0) -> SparseSymmetric:
    """
    Random sparse SPD matrix with condition number c and unit diagonal.

    round(alpha * dim(dim-1)/2) off-diagonal pairs get Uniform(-1, 1) weights
    in a zero-diagonal matrix A. With lam_min < 0 < lam_max its extreme
    eigenvalues, the shift delta = (lam_max - c lam_min) / (c - 1) makes
    A + delta I exactly c-conditioned, and dividing by delta restores a unit
    diagonal. Noise drawn from such precisions has entry variance near 1 when
    c is small and grows a few strongly correlated directions as c rises.

    Args:
        dim: Matrix dimension
        alpha: Fraction of nonzero off-diagonal pairs
        c: Target condition number (>= 1)
        seed: Integer seed or SeedSequence

    Returns:
        SparseSymmetric precision with unit diagonal (a graph without edges
        falls back to a diagonal spectrum of mean 1)

    Raises:
        InfeasibleSpecError: For out-of-range parameters
    """
    if dim < 1:
        raise InfeasibleSpecError(f"dimension must be positive, got {dim}")
    if not 0.0 <= alpha <= 1.0:
        raise InfeasibleSpecError(f"sparsity must lie in [0, 1], got {alpha}")
    if c < 1.0:
        raise InfeasibleSpecError(f"condition number must be >= 1, got {c}")
    if dim == 1 and c > 1.0:
        raise InfeasibleSpecError("a 1 x 1 matrix has condition number 1")

    if c == 1.0:
        if alpha > 0:
            logger.debug("condition number 1 forces a scaled identity; alpha=%.3g ignored", alpha)
        return SparseSymmetric.identity(dim)

    rng = np.random.default_rng(seed)
    n_pairs = dim * (dim - 1) // 2
    n_edges = int(round(alpha * n_pairs))
    rows, cols = np.triu_indices(dim, k=1)
    picked = np.sort(rng.choice(n_pairs, size=n_edges, replace=False))
    a = np.zeros((dim, dim))
    weights = rng.uniform(-1.0, 1.0, size=n_edges)
    a[rows[picked], cols[picked]] = weights
    a[cols[picked], rows[picked]] = weights

    values, _ = sym_eig(a)
    lam_max, lam_min = values[0], values[-1]
    if lam_max - lam_min <= np.finfo(float).eps * max(1.0, abs(lam_max)):
        # no usable spread: diagonal spectrum of mean 1 spanning a ratio of c
        diag = rng.permutation(np.linspace(2.0 / (c + 1.0), 2.0 * c / (c + 1.0), dim))
        return SparseSymmetric.from_edges(dim, diag, [])

    delta = (lam_max - c * lam_min) / (c - 1.0)
    return SparseSymmetric.from_dense(a / delta + np.eye(dim))


def sample_matrix_normal(omega_inv: SparseSymmetric, sigma_inv: SparseSymmetric, seed: Seed = 0) -> np.ndarray:
    """
    Draw E with row precision omega_inv and column precision sigma_inv.

    E = L_O^-T Z L_S^-1 with Z IID standard normal and L the lower Cholesky
    factors of the precisions, computed by triangular solves.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((omega_inv.dim, sigma_inv.dim))
    low_rows = cholesky(omega_inv.to_dense())
    low_cols = cholesky(sigma_inv.to_dense())
    left = sla.solve_triangular(low_rows, z, lower=True, trans="T", check_finite=False)
    return sla.solve_triangular(low_cols, left.T, lower=True, trans="T", check_finite=False).T


def centroids(pattern: CentroidPattern, p: int) -> np.ndarray:
    """
    The three centroid rows of a protocol.

    Small scale: c1 = +1 on the first and last 20 entries, c2 = -1 there,
    c3 = +1 on the first 20 and -1 on the last 20.
    Large scale: c1 = 1 on the first 10% of features, c2 = 1 on the last 10%,
    c3 = 1 on the first 10% and -1 on the last 10%.
    """
    out = np.zeros((N_CENTROIDS, p))
    if pattern == CentroidPattern.SMALL_SCALE:
        width = SMALL_BLOCK_WIDTH
        if p < 2 * width:
            raise InfeasibleSpecError(f"small-scale centroids need p >= {2 * width}, got {p}")
        head, tail = slice(0, width), slice(p - width, p)
        out[0, head], out[0, tail] = 1.0, 1.0
        out[1, head], out[1, tail] = -1.0, -1.0
        out[2, head], out[2, tail] = 1.0, -1.0
    else:
        width = int(round(LARGE_BLOCK_FRACTION * p))
        if width < 1:
            raise InfeasibleSpecError(f"large-scale centroids need p >= 10, got {p}")
        head, tail = slice(0, width), slice(p - width, p)
        out[0, head] = 1.0
        out[1, tail] = 1.0
        out[2, head], out[2, tail] = 1.0, -1.0
    return out


def centroid_labels(n: int) -> np.ndarray:
    """Assign rows to three contiguous, evenly sized groups."""
    return np.minimum(N_CENTROIDS * np.arange(n) // n, N_CENTROIDS - 1)


def _generate(spec: SyntheticSpec) -> SyntheticInstance:
    omega_seed, sigma_seed, noise_seed = np.random.SeedSequence(spec.seed).spawn(3)
    omega_inv = gen_sparse_spd(spec.n, spec.alpha1, spec.c1, omega_seed)
    sigma_inv = gen_sparse_spd(spec.p, spec.alpha2, spec.c2, sigma_seed)

    labels = centroid_labels(spec.n)
    m_true = centroids(spec.centroid_pattern, spec.p)[labels]
    noise = sample_matrix_normal(omega_inv, sigma_inv, noise_seed)

    logger.info(
        "generated %s instance n=%d p=%d c=(%.4g, %.4g) alpha=(%.3g, %.3g) seed=%d",
        spec.centroid_pattern.value, spec.n, spec.p, spec.c1, spec.c2, spec.alpha1, spec.alpha2, spec.seed,
    )
    return SyntheticInstance(
        y=m_true + noise,
        m_true=m_true,
        omega_inv_true=omega_inv,
        sigma_inv_true=sigma_inv,
        labels=labels,
        spec=spec,
    )


def gen_small_scale(spec: SyntheticSpec) -> SyntheticInstance:
    """Small-scale protocol instance (20-entry centroid blocks)."""
    if spec.centroid_pattern != CentroidPattern.SMALL_SCALE:
        raise InfeasibleSpecError("gen_small_scale needs the small-scale centroid pattern")
    return _generate(spec)


def gen_large_scale(spec: SyntheticSpec) -> SyntheticInstance:
    """Large-scale protocol instance (10%-of-p centroid blocks)."""
    if spec.centroid_pattern != CentroidPattern.LARGE_SCALE:
        raise InfeasibleSpecError("gen_large_scale needs the large-scale centroid pattern")
    return _generate(spec)


def generate(spec: SyntheticSpec) -> SyntheticInstance:
    """Dispatch on the spec's centroid pattern."""
    if spec.centroid_pattern == CentroidPattern.SMALL_SCALE:
        return gen_small_scale(spec)
    return gen_large_scale(spec)


def gen_swiss_roll(n_per_roll: int, seed: Seed = 0, noise: float = 0.0) -> SwissRoll:
    """
    Two interleaved Swiss rolls.

    Roll k maps angle t ~ U(1.5 pi, 4.5 pi) and height h ~ U(0, 21) to
    ((t + k pi) cos t, h, (t + k pi) sin t).

    Args:
        n_per_roll: Points per roll
        seed: Random seed
        noise: Standard deviation of optional Gaussian jitter

    Returns:
        SwissRoll with labels 0 and 1
    """
    if n_per_roll < 1:
        raise InfeasibleSpecError(f"need at least one point per roll, got {n_per_roll}")
    rng = np.random.default_rng(seed)
    parts, labels = [], []
    for roll in range(2):
        t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n_per_roll)
        height = rng.uniform(0.0, 21.0, size=n_per_roll)
        radius = t + roll * np.pi
        parts.append(np.column_stack([radius * np.cos(t), height, radius * np.sin(t)]))
        labels.append(np.full(n_per_roll, roll))
    points = np.vstack(parts)
    if noise > 0:
        points = points + noise * rng.standard_normal(points.shape)
    return SwissRoll(points=points, labels=np.concatenate(labels))
