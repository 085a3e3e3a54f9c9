"""
Dense linear-algebra primitives shared by every fitting module.

All routines take and return numpy arrays and wrap the LAPACK drivers in
scipy.linalg, translating their failures into the package's error types:
- truncated_svd: rank-k SVD with reproducible signs
- cholesky / solve_spd / logdet_spd / inv_spd: SPD factorizations
- sym_eig / sqrtm_psd: symmetric eigendecomposition and square roots
"""

from typing import Tuple

import numpy as np
import scipy.linalg as sla

from src.config import TOLERANCES
from src.exceptions import NonFiniteError, NotPositiveDefiniteError, RankTooLargeError, ShapeMismatchError
from src.models import TruncatedSvd


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """
    Convert input to a finite 2-D float array.

    Args:
        a: Array-like input
        name: Label used in error messages

    Returns:
        2-D float64 array

    Raises:
        ShapeMismatchError: If the input is not two-dimensional
        NonFiniteError: If any entry is NaN or Inf
    """
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return arr


def _require_symmetric(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > TOLERANCES.symmetry * scale:
        raise ShapeMismatchError(f"{name} is not symmetric")


def canonicalize_signs(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flip paired columns so the largest-magnitude entry of each v column is positive."""
    if v.shape[1] == 0:
        return u, v
    pivots = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivots, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def truncated_svd(a, k: int) -> TruncatedSvd:
    """
    Best rank-k approximation factors of a matrix.

    Args:
        a: n x p matrix
        k: Number of components, 1 <= k <= min(n, p)

    Returns:
        TruncatedSvd with sign-canonicalized vectors

    Raises:
        NonFiniteError: If a contains NaN or Inf
        RankTooLargeError: If k is outside [1, min(n, p)]
    """
    a = as_matrix(a)
    limit = min(a.shape)
    if k < 1 or k > limit:
        raise RankTooLargeError(f"rank {k} outside [1, {limit}] for a {a.shape[0]}x{a.shape[1]} matrix")
    u, s, vt = sla.svd(a, full_matrices=False, lapack_driver="gesdd")
    u, v = canonicalize_signs(u[:, :k], vt[:k].T)
    return TruncatedSvd(u=u, s=s[:k].copy(), v=v)


def cholesky(a) -> np.ndarray:
    """
    Lower-triangular Cholesky factor L with L L^T = a.

    Raises:
        NonFiniteError: If a contains NaN or Inf
        NotPositiveDefiniteError: If a is not symmetric positive definite
    """
    a = as_matrix(a)
    try:
        _require_symmetric(a, "matrix")
    except ShapeMismatchError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    try:
        return sla.cholesky(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from exc


def _cho_factor(a: np.ndarray):
    try:
        return sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from exc


def solve_spd(a, b) -> np.ndarray:
    """
    Solve a x = b for symmetric positive definite a.

    b may be a vector or a matrix of right-hand sides.
    """
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise ShapeMismatchError(f"cannot solve {a.shape} system against {b.shape} right-hand side")
    return sla.cho_solve(_cho_factor(a), b, check_finite=False)


def inv_spd(a) -> np.ndarray:
    """Inverse of an SPD matrix, symmetrized."""
    a = as_matrix(a)
    inv = sla.cho_solve(_cho_factor(a), np.eye(a.shape[0]), check_finite=False)
    return (inv + inv.T) / 2.0


def logdet_spd(a) -> float:
    """log |a| via the Cholesky factor."""
    low = cholesky(a)
    return float(2.0 * np.sum(np.log(np.diag(low))))


def sym_eig(a) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a symmetric matrix.

    Returns:
        (values, vectors) with values nonincreasing and orthonormal vector columns
    """
    a = as_matrix(a)
    _require_symmetric(a, "matrix")
    values, vectors = sla.eigh(a, check_finite=False)
    return values[::-1].copy(), vectors[:, ::-1].copy()


def sqrtm_psd(a) -> np.ndarray:
    """Symmetric square root of a PSD matrix; tiny negative eigenvalues are clipped."""
    values, vectors = sym_eig(a)
    root = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
    return (root + root.T) / 2.0


def condition_number(a) -> float:
    """Ratio of the largest to the smallest singular value."""
    s = sla.svdvals(as_matrix(a), check_finite=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
