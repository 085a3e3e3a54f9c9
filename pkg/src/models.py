"""
Data models for the MN-PCA toolkit.

This module defines the core data structures using Pydantic for validation:
- SparseSymmetric: sparse storage for precision matrices
- GlassoProblem / GlassoSolution / LambdaGrid: sparse precision estimation
- MrlConfig / W2Config / MnPcaModel: the two MN-PCA fitting algorithms
- SyntheticSpec / SyntheticInstance: generated benchmark data
- EvalReport / RunManifest / BenchmarkCell: evaluation and bookkeeping

Models that carry numpy arrays allow arbitrary types; the invariants stated
for each type are checked in validators.
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, field_validator, model_validator

from src.config import TOLERANCES


class Algorithm(str, Enum):
    """Fitting algorithms exposed by the toolkit."""
    PCA = "pca"
    MRL = "mrl"
    W2 = "w2"


class CentroidPattern(str, Enum):
    """Centroid layouts of the synthetic protocols."""
    SMALL_SCALE = "small_scale"
    LARGE_SCALE = "large_scale"


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


class SparseSymmetric(_ArrayModel):
    """
    Symmetric matrix stored as its diagonal plus strictly-upper triplets.

    Attributes:
        dim: Matrix dimension
        diag: Diagonal values, length dim
        rows: Row index of each off-diagonal entry (i < j)
        cols: Column index of each off-diagonal entry
        values: Value of each off-diagonal entry
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dim: int = Field(..., gt=0, description="Matrix dimension")
    diag: np.ndarray = Field(..., description="Diagonal entries")
    rows: np.ndarray = Field(..., description="Upper-triangle row indices")
    cols: np.ndarray = Field(..., description="Upper-triangle column indices")
    values: np.ndarray = Field(..., description="Upper-triangle values")

    @model_validator(mode="after")
    def check_layout(self) -> "SparseSymmetric":
        """Enforce i < j < dim and unique keys."""
        if self.diag.shape != (self.dim,):
            raise ValueError(f"diag must have length {self.dim}")
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ValueError("rows, cols and values must have equal length")
        if len(self.rows):
            if np.any(self.rows < 0) or np.any(self.rows >= self.cols) or np.any(self.cols >= self.dim):
                raise ValueError("off-diagonal keys must satisfy 0 <= i < j < dim")
            keys = self.rows.astype(np.int64) * self.dim + self.cols.astype(np.int64)
            if len(np.unique(keys)) != len(keys):
                raise ValueError("duplicate off-diagonal keys")
        return self

    @classmethod
    def from_dense(cls, a: np.ndarray, threshold: float = 0.0) -> "SparseSymmetric":
        """
        Build from a dense symmetric matrix.

        Args:
            a: Square matrix; only its upper triangle is read
            threshold: Off-diagonal entries with |value| <= threshold are dropped

        Returns:
            SparseSymmetric holding the surviving entries
        """
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        rows, cols = np.triu_indices(a.shape[0], k=1)
        values = a[rows, cols]
        keep = np.abs(values) > threshold
        return cls(
            dim=a.shape[0],
            diag=np.diag(a).copy(),
            rows=rows[keep],
            cols=cols[keep],
            values=values[keep],
        )

    @classmethod
    def from_edges(
        cls, dim: int, diag: np.ndarray, edges: List[Tuple[int, int, float]]
    ) -> "SparseSymmetric":
        """Build from an explicit edge list."""
        if edges:
            rows, cols, values = (np.asarray(col) for col in zip(*edges))
        else:
            rows = cols = np.zeros(0, dtype=int)
            values = np.zeros(0)
        return cls(
            dim=dim,
            diag=np.asarray(diag, dtype=float),
            rows=rows.astype(int),
            cols=cols.astype(int),
            values=values.astype(float),
        )

    @classmethod
    def identity(cls, dim: int) -> "SparseSymmetric":
        return cls.from_edges(dim, np.ones(dim), [])

    def to_dense(self) -> np.ndarray:
        """Densify into an exactly symmetric array."""
        a = np.diag(self.diag.astype(float))
        a[self.rows, self.cols] = self.values
        a[self.cols, self.rows] = self.values
        return a

    def edges(self) -> List[Tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.values)]

    @property
    def nnz_offdiag(self) -> int:
        """Number of stored upper off-diagonal entries."""
        return len(self.values)


class TruncatedSvd(_ArrayModel):
    """
    Rank-k singular value decomposition.

    Attributes:
        u: n x k left singular vectors (orthonormal columns)
        s: k singular values, nonincreasing
        v: p x k right singular vectors (orthonormal columns)
    """
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @model_validator(mode="after")
    def check_shapes(self) -> "TruncatedSvd":
        k = len(self.s)
        if self.u.shape[1] != k or self.v.shape[1] != k:
            raise ValueError("u, s and v disagree on k")
        if np.any(self.s < 0) or np.any(np.diff(self.s) > 0):
            raise ValueError("singular values must be nonnegative and nonincreasing")
        return self

    def reconstruct(self) -> np.ndarray:
        """Return u diag(s) v^T."""
        return (self.u * self.s) @ self.v.T


class GlassoProblem(_ArrayModel):
    """
    L1-penalized precision estimation problem.

    Attributes:
        s: Empirical covariance (symmetric, PSD)
        rho: L1 penalty, applied to every entry including the diagonal
    """
    s: np.ndarray = Field(..., description="Empirical covariance")
    rho: NonNegativeFloat = Field(..., description="L1 penalty")

    @field_validator("s")
    @classmethod
    def check_symmetric(cls, v: np.ndarray) -> np.ndarray:
        """Covariance must be square, finite and symmetric."""
        v = np.asarray(v, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"covariance must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("covariance contains non-finite entries")
        scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
        if np.max(np.abs(v - v.T), initial=0.0) > TOLERANCES.symmetry * scale:
            raise ValueError("covariance is not symmetric")
        return v

    @property
    def dim(self) -> int:
        return self.s.shape[0]


class GlassoSolution(BaseModel):
    """
    Result of a graphical-lasso solve.

    Attributes:
        theta: Estimated precision matrix
        objective: Penalized negative log-likelihood at theta
        iterations: Outer sweeps used (summed over blocks)
        kkt_residual: Largest stationarity violation
        converged: False when the sweep budget ran out
        objective_trace: Objective after each sweep of the largest block
        n_components: Number of screened connected components
    """
    theta: SparseSymmetric
    objective: float
    iterations: int = Field(..., ge=0)
    kkt_residual: NonNegativeFloat
    converged: bool = True
    objective_trace: List[float] = Field(default_factory=list)
    n_components: int = Field(default=1, ge=1)


class LambdaGrid(BaseModel):
    """Ten log-spaced penalties from 0.1 * max up to max."""
    values: List[float] = Field(..., min_length=10, max_length=10)

    @field_validator("values")
    @classmethod
    def check_spacing(cls, v: List[float]) -> List[float]:
        """Grid must be positive, nondecreasing and span a factor of ten."""
        if any(x <= 0 for x in v):
            raise ValueError("grid values must be positive")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("grid must be nondecreasing")
        if not np.isclose(v[0], 0.1 * v[-1], rtol=1e-12):
            raise ValueError("smallest grid value must be 0.1 x the largest")
        return v


class LambdaSelection(BaseModel):
    """
    BIC choice of a glasso penalty.

    Attributes:
        lam: Selected penalty
        solution: Glasso solution at the selected penalty
        grid: Candidate grid (None when the fallback penalty was used)
        bic: BIC value per grid point
        fallback: True when the grid was undefined and the default was used
    """
    lam: float = Field(..., gt=0)
    solution: GlassoSolution
    grid: Optional[LambdaGrid] = None
    bic: List[float] = Field(default_factory=list)
    fallback: bool = False


class MrlConfig(BaseModel):
    """
    Settings of the maximum regularized likelihood fit.

    lambda1/lambda2 are the penalty weights of the objective (n*lambda1 on the
    row precision, p*lambda2 on the column precision), or "auto" for BIC.
    """
    rank: int = Field(..., ge=1, description="Target rank r")
    lambda1: Union[Literal["auto"], NonNegativeFloat] = Field(default="auto")
    lambda2: Union[Literal["auto"], NonNegativeFloat] = Field(default="auto")
    epsilon: float = Field(default=1e-6, gt=0, description="ALS ridge")
    outer_tol: float = Field(default=1e-4, gt=0)
    inner_tol: float = Field(default=1e-5, gt=0)
    max_outer: int = Field(default=50, ge=1)
    max_inner: int = Field(default=30, ge=1)
    glasso_tol: float = Field(default=1e-5, gt=0)
    glasso_max_iter: int = Field(default=200, ge=1)
    center: bool = True
    update_precisions: bool = Field(default=True, description="False holds identity precisions (plain PCA)")
    postprocess: bool = Field(default=True, description="Run GPCA on the fitted low-rank matrix")


class W2Config(BaseModel):
    """Settings of the Wasserstein fit; penalties default to 0.05 each."""
    rank: int = Field(..., ge=1)
    lambda1: NonNegativeFloat = 0.05
    lambda2: NonNegativeFloat = 0.05
    sigma_noise: float = Field(default=1.0, gt=0)
    step_size: float = Field(default=0.05, gt=0, description="Initial relative step")
    step_decay: float = Field(default=0.01, ge=0)
    steps_per_outer: int = Field(default=20, ge=1)
    max_iter: int = Field(default=50, ge=1)
    tol: float = Field(default=1e-5, gt=0)
    center: bool = True


class W2Transforms(_ArrayModel):
    """
    Whitening transforms of the Wasserstein fit.

    Attributes:
        q: n x n row transform (q^T q estimates the row precision)
        r: p x p column transform (r^T r estimates the column precision)
        sigma_noise: Target noise scale
        balance_log: (mean singular value of q, of r) after each balancing
    """
    q: np.ndarray
    r: np.ndarray
    sigma_noise: float = Field(default=1.0, gt=0)
    balance_log: List[Tuple[float, float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_square(self) -> "W2Transforms":
        for name, m in (("q", self.q), ("r", self.r)):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got shape {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            smallest = np.linalg.svd(m, compute_uv=False)[-1]
            if smallest <= TOLERANCES.invertibility:
                raise ValueError(f"{name} is not invertible (smallest singular value {smallest:.3e})")
        return self


class GpcaFactors(_ArrayModel):
    """
    Unique low-rank factors in the precision-weighted inner products.

    u^T Omega^-1 u = I and v^T Sigma^-1 v = I; the low-rank matrix is u diag(d) v^T.
    """
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        """Sample scores u diag(d)."""
        return self.u * self.d


class MnPcaModel(_ArrayModel):
    """
    Fitted MN-PCA model.

    Attributes:
        algorithm: Which fit produced the model
        x: n x r scores
        w: p x r loadings (x w^T is the centered low-rank estimate)
        omega_inv: Row precision
        sigma_inv: Column precision
        objective_trace: Objective after every outer iteration
        hyper: Hyperparameters used (including selected penalties)
        column_means: Means removed before fitting (zeros if not centered)
        converged: False when the outer iteration budget ran out
        flags: Degenerate events met during the fit
        iterations: Outer iterations run
        transforms: Whitening transforms (Wasserstein fit only)
        gpca: Unique factors from the GPCA post-processing
    """
    algorithm: Algorithm
    x: np.ndarray
    w: np.ndarray
    omega_inv: SparseSymmetric
    sigma_inv: SparseSymmetric
    objective_trace: List[float] = Field(default_factory=list)
    hyper: Dict[str, Any] = Field(default_factory=dict)
    column_means: np.ndarray
    converged: bool = True
    flags: List[str] = Field(default_factory=list)
    iterations: int = 0
    transforms: Optional[W2Transforms] = None
    gpca: Optional[GpcaFactors] = None

    @model_validator(mode="after")
    def check_shapes(self) -> "MnPcaModel":
        """Factor and precision shapes must agree."""
        n, r = self.x.shape
        p, r_w = self.w.shape
        if r != r_w:
            raise ValueError(f"x has rank {r} but w has rank {r_w}")
        if self.omega_inv.dim != n or self.sigma_inv.dim != p:
            raise ValueError("precision dimensions do not match the factors")
        if self.column_means.shape != (p,):
            raise ValueError("column_means must have length p")
        return self

    @property
    def rank(self) -> int:
        return self.x.shape[1]

    def reconstruction(self) -> np.ndarray:
        """Centered low-rank estimate x w^T."""
        return self.x @ self.w.T

    def low_rank_estimate(self) -> np.ndarray:
        """Low-rank estimate in the original data coordinates."""
        return self.reconstruction() + self.column_means

    def projection(self) -> np.ndarray:
        """Sample coordinates used for clustering (GPCA scores when available)."""
        return self.gpca.scores if self.gpca is not None else self.x


class RankSelection(BaseModel):
    """
    Variance-explained rank choice.

    Attributes:
        k_max: Number of singular values inspected
        tau: Threshold on the explained-variance ratio
        chosen_r: Selected rank
        variance_profile: Cumulative explained-variance ratios R_1..R_kmax
        small_feature_rule: True when the p < 15 shortcut fixed the rank
    """
    k_max: int = Field(default=10, ge=1)
    tau: float = Field(default=0.8, gt=0, lt=1)
    chosen_r: int = Field(..., ge=1)
    variance_profile: List[float]
    small_feature_rule: bool = False

    @model_validator(mode="after")
    def check_profile(self) -> "RankSelection":
        prof = self.variance_profile
        if len(prof) != self.k_max:
            raise ValueError("variance_profile must have k_max entries")
        if any(b < a - 1e-15 for a, b in zip(prof, prof[1:])):
            raise ValueError("variance_profile must be nondecreasing")
        if abs(prof[-1] - 1.0) > 1e-12:
            raise ValueError("variance_profile must end at 1")
        if self.chosen_r > self.k_max:
            raise ValueError("chosen_r cannot exceed k_max")
        return self


class SyntheticSpec(BaseModel):
    """
    Parameters of a synthetic matrix-normal instance.

    Attributes:
        n, p: Data shape
        rank: Rank of the signal (three centroids span two dimensions)
        alpha1, alpha2: Off-diagonal density of the row/column precisions
        c1, c2: Condition numbers of the row/column precisions
        centroid_pattern: Small-scale (20-entry blocks) or large-scale (10% blocks)
        seed: Random seed
    """
    n: int = Field(default=300, ge=3)
    p: int = Field(default=200, ge=1)
    rank: int = Field(default=2, ge=1)
    alpha1: float = Field(default=1e-2, ge=0, le=1)
    alpha2: float = Field(default=1e-2, ge=0, le=1)
    c1: float = Field(default=32.0, ge=1)
    c2: float = Field(default=32.0, ge=1)
    centroid_pattern: CentroidPattern = CentroidPattern.SMALL_SCALE
    seed: int = 0

    @model_validator(mode="after")
    def check_pattern_fits(self) -> "SyntheticSpec":
        if self.centroid_pattern == CentroidPattern.SMALL_SCALE and self.p < 40:
            raise ValueError("small-scale centroids need p >= 40")
        if self.centroid_pattern == CentroidPattern.LARGE_SCALE and self.p < 10:
            raise ValueError("large-scale centroids need p >= 10")
        return self


class SyntheticInstance(_ArrayModel):
    """Generated data Y = M* + E with its ground truth."""
    y: np.ndarray
    m_true: np.ndarray
    omega_inv_true: SparseSymmetric
    sigma_inv_true: SparseSymmetric
    labels: np.ndarray
    spec: SyntheticSpec


class SwissRoll(_ArrayModel):
    """Two interleaved rolls in 3-D with their roll index."""
    points: np.ndarray
    labels: np.ndarray


class SupportReport(BaseModel):
    """Edge-recovery rates of an estimated precision matrix."""
    tpr: float = Field(..., ge=0, le=1)
    tnr: float = Field(..., ge=0, le=1)
    ppv: float = Field(..., ge=0, le=1)
    ppv_defined: bool = True
    n_true: int = Field(..., ge=0)
    n_predicted: int = Field(..., ge=0)


class EvalReport(BaseModel):
    """
    Evaluation of a fit against ground truth.

    Attributes:
        rmse: ||M_hat - M*||_F / sqrt(np)
        psnr: -20 log10(rmse); +inf for an exact recovery
        nmi: k-means NMI of the projection, in percent
        tpr1, tnr1, ppv1: Row-precision support recovery
        tpr2, tnr2, ppv2: Column-precision support recovery
    """
    model_config = ConfigDict(ser_json_inf_nan="constants")

    rmse: NonNegativeFloat
    psnr: float
    nmi: Optional[float] = Field(None, ge=0, le=100)
    tpr1: Optional[float] = Field(None, ge=0, le=1)
    tnr1: Optional[float] = Field(None, ge=0, le=1)
    ppv1: Optional[float] = Field(None, ge=0, le=1)
    tpr2: Optional[float] = Field(None, ge=0, le=1)
    tnr2: Optional[float] = Field(None, ge=0, le=1)
    ppv2: Optional[float] = Field(None, ge=0, le=1)
    ppv1_defined: bool = True
    ppv2_defined: bool = True

    @model_validator(mode="after")
    def check_psnr(self) -> "EvalReport":
        """psnr and rmse must describe the same error."""
        if self.rmse == 0:
            if self.psnr != float("inf"):
                raise ValueError("psnr must be +inf when rmse is 0")
        elif not np.isclose(self.psnr, -20.0 * np.log10(self.rmse), rtol=0, atol=1e-9):
            raise ValueError("psnr is inconsistent with rmse")
        return self

    def to_table(self) -> str:
        """Render the report as an aligned two-column table."""
        rows = [
            (name, value)
            for name, value in self.model_dump().items()
            if not name.endswith("_defined") and value is not None
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  {'-' * 10}"]
        for name, value in rows:
            lines.append(f"{name:<{width}}  {value:.4f}")
        return "\n".join(lines)


class RunManifest(BaseModel):
    """
    Record written next to every CLI output.

    Attributes:
        command: Subcommand name
        config: Full configuration echo
        seed: Random seed (None for deterministic commands without one)
        version: Package version
        created_at: Start time
        duration_seconds: Wall-clock time of the run
        inputs: Input file -> sha256
        outputs: Output file -> sha256
        converged: Fit convergence flag, when a fit ran
        warnings: Warnings raised during the run
    """
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    version: str
    created_at: datetime = Field(default_factory=datetime.now)
    duration_seconds: float = Field(default=0.0, ge=0)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    converged: Optional[bool] = None
    warnings: List[str] = Field(default_factory=list)


class BenchmarkConfig(BaseModel):
    """
    Settings of a benchmark sweep.

    Attributes:
        protocol: small (condition sweep), large (feature sweep),
            swiss (two-roll clustering) or runtime (MRL time over a lambda2 grid)
        seeds: Repetitions per setting
        jobs: Worker processes (1 runs in-process)
        methods: Methods to run; the protocol default when empty
        conditions: Condition numbers of the small protocol
        features: Feature counts of the large protocol
        top_k: Support size for TPR/TNR/PPV
        mrl_max_outer: Outer budget of MRL fits
        w2_max_iter: Outer budget of W2 fits
        swiss_points: Points per roll of the swiss protocol
    """
    protocol: Literal["small", "large", "swiss", "runtime"] = "small"
    seeds: int = Field(default=10, ge=1)
    jobs: int = Field(default=1, ge=1)
    methods: List[str] = Field(default_factory=list)
    conditions: List[float] = Field(default_factory=lambda: [8, 16, 32, 64, 96, 128, 160, 192, 224])
    features: List[int] = Field(default_factory=lambda: [2000, 3000, 4000, 5000, 6000])
    top_k: int = Field(default=150, ge=1)
    mrl_max_outer: int = Field(default=50, ge=1)
    w2_max_iter: int = Field(default=50, ge=1)
    swiss_points: int = Field(default=500, ge=1)

    @field_validator("methods")
    @classmethod
    def check_methods(cls, v: List[str]) -> List[str]:
        unknown = set(v) - {"pca", "mrl", "w2", "glasso"}
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        return v


class BenchmarkCell(BaseModel):
    """
    One (setting, seed, method) measurement of a benchmark sweep.

    A failed cell keeps its error message and empty metrics.
    """
    protocol: str
    setting: str
    seed: int
    method: str
    metrics: Dict[str, float] = Field(default_factory=dict)
    seconds: float = Field(default=0.0, ge=0)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None
