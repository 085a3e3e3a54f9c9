"""
Benchmark sweeps over the synthetic protocols.

A sweep is a grid of cells (setting x seed x method). Each cell generates
its data, fits one method and records metrics plus wall-clock time. A cell
that raises is kept as a failed cell so the sweep always completes; the
summary table prints FAIL where every seed of a (setting, method) failed.

Protocols:
- small: n=300, p=200, condition numbers swept (both precisions share c)
- large: n=1000, c=196, alpha1=1e-2, alpha2=1e-3, feature counts swept
- swiss: two-roll data, k-means NMI of the 2-D projection
- runtime: MRL wall-clock with lambda2 swept over its BIC grid
"""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.glasso import lambda_grid, select_lambda_bic
from src.linalg import truncated_svd
from src.metrics import evaluate, kmeans, nmi, support_metrics
from src.models import (
    BenchmarkCell,
    BenchmarkConfig,
    CentroidPattern,
    MnPcaModel,
    MrlConfig,
    SyntheticSpec,
    W2Config,
)
from src.mrl import column_covariance, fit_mrl, fit_pca
from src.synthdata import gen_swiss_roll, generate
from src.w2 import fit_w2

logger = logging.getLogger(__name__)

DEFAULT_METHODS = {
    "small": ["pca", "mrl", "w2", "glasso"],
    "large": ["pca", "mrl", "w2"],
    "swiss": ["pca", "mrl", "w2"],
    "runtime": ["mrl"],
}
SMALL_SHAPE = (300, 200)
LARGE_ROWS = 1000
LARGE_CONDITION = 196.0
LARGE_ALPHAS = (1e-2, 1e-3)
RUNTIME_FEATURES = 2000
RANK = 2
METRIC_ORDER = ["rmse", "psnr", "nmi", "tpr1", "tnr1", "ppv1", "tpr2", "tnr2", "ppv2", "lambda2", "seconds"]


@dataclass(frozen=True)
class CellTask:
    """Everything a worker needs to run one cell."""
    protocol: str
    setting: str
    value: float
    seed: int
    method: str
    config: BenchmarkConfig


def _spec_for(task: CellTask) -> SyntheticSpec:
    if task.protocol == "small":
        n, p = SMALL_SHAPE
        return SyntheticSpec(n=n, p=p, c1=task.value, c2=task.value, alpha1=1e-2, alpha2=1e-2, seed=task.seed)
    features = int(task.value) if task.protocol == "large" else RUNTIME_FEATURES
    return SyntheticSpec(
        n=LARGE_ROWS,
        p=features,
        c1=LARGE_CONDITION,
        c2=LARGE_CONDITION,
        alpha1=LARGE_ALPHAS[0],
        alpha2=LARGE_ALPHAS[1],
        centroid_pattern=CentroidPattern.LARGE_SCALE,
        seed=task.seed,
    )


def _fit(method: str, y: np.ndarray, config: BenchmarkConfig, **overrides) -> MnPcaModel:
    if method == "pca":
        return fit_pca(y, RANK)
    if method == "mrl":
        cfg = MrlConfig(rank=RANK, max_outer=config.mrl_max_outer, **overrides)
        return fit_mrl(y, cfg)
    if method == "w2":
        return fit_w2(y, W2Config(rank=RANK, max_iter=config.w2_max_iter))
    raise ValueError(f"method {method!r} does not produce a low-rank fit")


def _glasso_baseline(task: CellTask) -> Dict[str, float]:
    """Glasso on the raw row and column covariances of Y, penalties by BIC."""
    if task.protocol not in ("small", "large"):
        raise ValueError(f"the glasso baseline needs precision ground truth, not protocol {task.protocol!r}")
    instance = generate(_spec_for(task))
    yc = instance.y - instance.y.mean(axis=0)
    n, p = yc.shape
    metrics: Dict[str, float] = {}
    for suffix, s, p_dim, truth in (
        ("1", yc @ yc.T / p, p, instance.omega_inv_true),
        ("2", yc.T @ yc / n, n, instance.sigma_inv_true),
    ):
        estimate = select_lambda_bic(s, p_dim).solution.theta
        report = support_metrics(estimate, truth, min(task.config.top_k, truth.dim * (truth.dim - 1) // 2))
        metrics.update({f"tpr{suffix}": report.tpr, f"tnr{suffix}": report.tnr, f"ppv{suffix}": report.ppv})
    return metrics


def _runtime_lambda2(instance_y: np.ndarray, index: int) -> float:
    """lambda2 at position ``index`` of the BIC grid of S2 at the PCA start."""
    yc = instance_y - instance_y.mean(axis=0)
    n, p = yc.shape
    svd = truncated_svd(yc, RANK)
    resid = yc - svd.reconstruct()
    rho2 = lambda_grid(column_covariance(resid, np.eye(n))).values[index]
    return n * rho2 / (2 * p)


def run_cell(task: CellTask) -> BenchmarkCell:
    """
    Run one cell; any exception becomes a failed cell.

    Args:
        task: Cell description

    Returns:
        BenchmarkCell with metrics and wall-clock seconds
    """
    start = time.perf_counter()
    try:
        metrics: Dict[str, float]
        if task.method == "glasso":
            metrics = _glasso_baseline(task)
        elif task.protocol == "swiss":
            roll = gen_swiss_roll(task.config.swiss_points, seed=task.seed)
            model = _fit(task.method, roll.points, task.config)
            labels = kmeans(model.projection(), 2, seed=task.seed)
            metrics = {"nmi": nmi(roll.labels, labels)}
        elif task.protocol == "runtime":
            instance = generate(_spec_for(task))
            lam2 = _runtime_lambda2(instance.y, int(task.value))
            fit_start = time.perf_counter()
            _fit("mrl", instance.y, task.config, lambda2=lam2)
            metrics = {"lambda2": lam2, "seconds": time.perf_counter() - fit_start}
        else:
            instance = generate(_spec_for(task))
            model = _fit(task.method, instance.y, task.config)
            report = evaluate(
                model,
                instance.m_true,
                labels=instance.labels,
                omega_inv_true=instance.omega_inv_true,
                sigma_inv_true=instance.sigma_inv_true,
                top_k=task.config.top_k,
                seed=task.seed,
            )
            metrics = {
                name: float(value)
                for name, value in report.model_dump().items()
                if value is not None and not name.endswith("_defined")
            }
    except Exception as e:
        # Record the failure and keep the sweep going
        logger.warning("cell %s/%s seed=%d %s failed: %s", task.protocol, task.setting, task.seed, task.method, e)
        return BenchmarkCell(
            protocol=task.protocol,
            setting=task.setting,
            seed=task.seed,
            method=task.method,
            seconds=time.perf_counter() - start,
            error=f"{type(e).__name__}: {e}",
        )

    return BenchmarkCell(
        protocol=task.protocol,
        setting=task.setting,
        seed=task.seed,
        method=task.method,
        metrics=metrics,
        seconds=time.perf_counter() - start,
    )


class BenchmarkRunner:
    """
    Runs a protocol sweep and writes its tables.

    Usage:
        runner = BenchmarkRunner(BenchmarkConfig(protocol="small", seeds=10))
        cells = runner.run()
        runner.write(Path("runs/bench"), cells)
    """

    def __init__(self, config: BenchmarkConfig):
        """Initialize the runner with its sweep settings."""
        self.config = config
        self.methods = config.methods or DEFAULT_METHODS[config.protocol]

    def settings(self) -> List[tuple]:
        """(label, value) pairs swept by the protocol."""
        protocol = self.config.protocol
        if protocol == "small":
            return [(f"c={c:g}", float(c)) for c in self.config.conditions]
        if protocol == "large":
            return [(f"p={p}", float(p)) for p in self.config.features]
        if protocol == "runtime":
            return [(f"grid={i}", float(i)) for i in range(10)]
        return [("swiss", 0.0)]

    def tasks(self) -> List[CellTask]:
        """All cells of the sweep in table order."""
        return [
            CellTask(self.config.protocol, label, value, seed, method, self.config)
            for label, value in self.settings()
            for method in self.methods
            for seed in range(self.config.seeds)
        ]

    def run(self) -> List[BenchmarkCell]:
        """
        Run every cell, in parallel when ``config.jobs`` > 1.

        Returns:
            Cells in task order
        """
        tasks = self.tasks()
        logger.info("benchmark %s: %d cells, %d jobs", self.config.protocol, len(tasks), self.config.jobs)
        if self.config.jobs == 1:
            return [run_cell(task) for task in tasks]
        with ProcessPoolExecutor(max_workers=self.config.jobs) as pool:
            return list(pool.map(run_cell, tasks))

    @staticmethod
    def summarize(cells: List[BenchmarkCell]) -> List[Dict[str, str]]:
        """
        Collapse seeds into mean(std) strings per (setting, method).

        A group where every seed failed shows FAIL in each metric column.
        """
        groups: Dict[tuple, List[BenchmarkCell]] = {}
        for cell in cells:
            groups.setdefault((cell.setting, cell.method), []).append(cell)

        metric_names = [
            name for name in METRIC_ORDER if any(name in cell.metrics for cell in cells)
        ] or ["seconds"]

        rows = []
        for (setting, method), group in groups.items():
            ok = [cell for cell in group if not cell.failed]
            row = {"setting": setting, "method": method, "failures": str(len(group) - len(ok))}
            for name in metric_names:
                if not ok:
                    row[name] = "FAIL"
                    continue
                values = [cell.metrics[name] for cell in ok if name in cell.metrics]
                if not values:
                    row[name] = ""
                    continue
                row[name] = f"{np.mean(values):.4f}({np.std(values):.4f})"
            row["wall_seconds"] = f"{np.mean([cell.seconds for cell in group]):.2f}"
            rows.append(row)
        return rows

    def write(self, out_dir: Path, cells: List[BenchmarkCell]) -> Dict[str, Path]:
        """
        Write raw cells and the summary table as CSV.

        Returns:
            Mapping of artifact name to path
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        cells_path = out_dir / "cells.csv"
        metric_names = sorted({name for cell in cells for name in cell.metrics})
        with open(cells_path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["protocol", "setting", "seed", "method", "seconds", "error", *metric_names])
            for cell in cells:
                writer.writerow([
                    cell.protocol, cell.setting, cell.seed, cell.method, f"{cell.seconds:.4f}", cell.error or "",
                    *[repr(cell.metrics[name]) if name in cell.metrics else "" for name in metric_names],
                ])

        table_path = out_dir / "table.csv"
        rows = self.summarize(cells)
        columns = list(rows[0].keys()) if rows else ["setting", "method"]
        with open(table_path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)

        logger.info("benchmark tables written to %s", out_dir)
        return {"cells": cells_path, "table": table_path}


def failed_cells(cells: List[BenchmarkCell]) -> Optional[List[BenchmarkCell]]:
    """Failed cells, or None if the sweep had none."""
    failed = [cell for cell in cells if cell.failed]
    return failed or None
