"""
Rank selection by proportion of variance explained.

R_i = sum_{j<=i} d_j^2 / sum_{j<=k_max} d_j^2 over the top k_max singular
values d_j of the centered data; the rank is the smallest i with R_i > tau.
Data with fewer than 15 features always get rank 2.
"""

import logging

import numpy as np
import scipy.linalg as sla

from src.exceptions import RankTooLargeError
from src.linalg import as_matrix
from src.models import RankSelection

logger = logging.getLogger(__name__)

SMALL_FEATURE_COUNT = 15
SMALL_FEATURE_RANK = 2


def select_rank(y, k_max: int = 10, tau: float = 0.8, center: bool = True) -> RankSelection:
    """
    Choose the model rank from the singular value profile.

    Args:
        y: n x p data
        k_max: Number of leading singular values inspected
        tau: Threshold in (0, 1); the first R_i strictly above it wins
        center: Remove column means before the SVD

    Returns:
        RankSelection with the cumulative profile

    Raises:
        RankTooLargeError: If k_max > min(n, p)
    """
    y = as_matrix(y, "y")
    n, p = y.shape
    if k_max < 1 or k_max > min(n, p):
        raise RankTooLargeError(f"k_max {k_max} outside [1, {min(n, p)}]")
    if center:
        y = y - y.mean(axis=0)

    d = sla.svdvals(y, check_finite=False)[:k_max]
    energy = d ** 2
    total = energy.sum()
    if total > 0:
        profile = np.cumsum(energy) / total
    else:
        profile = np.ones(k_max)
    profile[-1] = 1.0

    chosen = int(np.argmax(profile > tau)) + 1
    small = p < SMALL_FEATURE_COUNT
    if small:
        chosen = min(SMALL_FEATURE_RANK, k_max)

    logger.info("rank selection: r=%d (k_max=%d, tau=%.2f%s)", chosen, k_max, tau, ", p<15 rule" if small else "")
    return RankSelection(
        k_max=k_max,
        tau=tau,
        chosen_r=chosen,
        variance_profile=profile.tolist(),
        small_feature_rule=small,
    )
