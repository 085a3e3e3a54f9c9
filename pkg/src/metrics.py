"""
Evaluation metrics for fitted models.

- rmse / psnr: low-rank recovery error against the true mean matrix
- kmeans / nmi: clustering quality of the projected samples
- support_metrics: edge recovery of an estimated precision matrix
- evaluate: all of the above bundled into an EvalReport
"""

import logging
from typing import Optional, Set

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import normalized_mutual_info_score

from src.exceptions import MalformedInputError, ShapeMismatchError
from src.models import Algorithm, EvalReport, MnPcaModel, SparseSymmetric, SupportReport

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 150
KMEANS_RESTARTS = 10


def rmse(m_hat, m_true) -> float:
    """||m_hat - m_true||_F / sqrt(np)."""
    m_hat = np.asarray(m_hat, dtype=float)
    m_true = np.asarray(m_true, dtype=float)
    if m_hat.shape != m_true.shape:
        raise ShapeMismatchError(f"estimate shape {m_hat.shape} does not match truth {m_true.shape}")
    return float(np.linalg.norm(m_hat - m_true) / np.sqrt(m_true.size))


def psnr_from_rmse(error: float) -> float:
    """-20 log10(rmse) with unit peak; +inf for an exact recovery."""
    if error == 0:
        return float("inf")
    return float(-20.0 * np.log10(error))


def psnr(m_hat, m_true) -> float:
    return psnr_from_rmse(rmse(m_hat, m_true))


def kmeans(points, k: int, seed: int = 0) -> np.ndarray:
    """
    k-means labels (k-means++ seeding, 10 restarts, best inertia kept).

    Raises:
        ShapeMismatchError: If k exceeds the number of points
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if k < 1 or k > points.shape[0]:
        raise ShapeMismatchError(f"cannot form {k} clusters from {points.shape[0]} points")
    model = KMeans(n_clusters=k, init="k-means++", n_init=KMEANS_RESTARTS, random_state=seed)
    return model.fit_predict(points)


def nmi(labels_a, labels_b) -> float:
    """Normalized mutual information (arithmetic-mean normalization) in percent."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape:
        raise ShapeMismatchError(f"label vectors differ in length: {labels_a.shape} vs {labels_b.shape}")
    return float(100.0 * normalized_mutual_info_score(labels_a, labels_b, average_method="arithmetic"))


def _upper_values(theta: SparseSymmetric) -> np.ndarray:
    rows, cols = np.triu_indices(theta.dim, k=1)
    return theta.to_dense()[rows, cols]


def _top_support(values: np.ndarray, top_k: int) -> Set[int]:
    """Indices of the top_k largest |values|, ignoring exact zeros."""
    order = np.argsort(-np.abs(values), kind="stable")[:top_k]
    return {int(i) for i in order if values[i] != 0}


def support_metrics(
    theta_hat: SparseSymmetric,
    theta_true: SparseSymmetric,
    top_k: int = DEFAULT_TOP_K,
) -> SupportReport:
    """
    Edge-recovery rates over the unordered off-diagonal pairs.

    The true support is the top_k entries of theta_true by magnitude; the
    predicted support is the nonzero off-diagonals of theta_hat, cut to its
    top_k when it has more. An empty prediction gives PPV 0 with
    ``ppv_defined=False``.

    Raises:
        ShapeMismatchError: If the dimensions differ
        MalformedInputError: If top_k exceeds the number of off-diagonal pairs
    """
    if theta_hat.dim != theta_true.dim:
        raise ShapeMismatchError(f"precision dimensions differ: {theta_hat.dim} vs {theta_true.dim}")
    n_pairs = theta_true.dim * (theta_true.dim - 1) // 2
    if top_k < 1 or top_k > n_pairs:
        raise MalformedInputError(f"top_k={top_k} outside [1, {n_pairs}] off-diagonal pairs")

    truth = _top_support(_upper_values(theta_true), top_k)
    predicted = _top_support(_upper_values(theta_hat), top_k)

    tp = len(truth & predicted)
    fp = len(predicted - truth)
    negatives = n_pairs - len(truth)
    tn = negatives - fp

    tpr = tp / len(truth) if truth else 1.0
    tnr = tn / negatives if negatives else 1.0
    ppv_defined = bool(predicted)
    ppv = tp / len(predicted) if predicted else 0.0
    return SupportReport(
        tpr=tpr,
        tnr=tnr,
        ppv=ppv,
        ppv_defined=ppv_defined,
        n_true=len(truth),
        n_predicted=len(predicted),
    )


def evaluate(
    model: MnPcaModel,
    m_true,
    labels=None,
    omega_inv_true: Optional[SparseSymmetric] = None,
    sigma_inv_true: Optional[SparseSymmetric] = None,
    top_k: int = DEFAULT_TOP_K,
    seed: int = 0,
) -> EvalReport:
    """
    Score a fitted model against ground truth.

    Args:
        model: Fitted model
        m_true: True mean matrix M*
        labels: True cluster labels; enables k-means NMI on model.projection()
        omega_inv_true, sigma_inv_true: True precisions; enable support scores
            (skipped for the PCA baseline, whose precisions are fixed)
        top_k: Support size used for scoring
        seed: k-means seed

    Returns:
        EvalReport
    """
    error = rmse(model.low_rank_estimate(), m_true)
    fields = {"rmse": error, "psnr": psnr_from_rmse(error)}

    if labels is not None:
        labels = np.asarray(labels)
        k = len(np.unique(labels))
        fields["nmi"] = nmi(labels, kmeans(model.projection(), k, seed))

    scored = model.algorithm != Algorithm.PCA
    for suffix, estimate, truth in (("1", model.omega_inv, omega_inv_true), ("2", model.sigma_inv, sigma_inv_true)):
        if truth is None or not scored or truth.dim < 2:
            continue
        top = min(top_k, truth.dim * (truth.dim - 1) // 2)
        report = support_metrics(estimate, truth, top)
        fields[f"tpr{suffix}"] = report.tpr
        fields[f"tnr{suffix}"] = report.tnr
        fields[f"ppv{suffix}"] = report.ppv
        fields[f"ppv{suffix}_defined"] = report.ppv_defined

    logger.info("evaluation: %s", ", ".join(f"{k}={v:.4g}" for k, v in fields.items() if isinstance(v, float)))
    return EvalReport(**fields)
