"""
Command-line front end.

Subcommands:
- generate: write a synthetic instance from a spec JSON
- fit: fit PCA, MRL or W2 to a data CSV
- eval: score a fit directory against a truth directory
- benchmark: run a protocol sweep and write mean(std) tables
- select-rank / select-lambda: model-order helpers
- glasso: sparse precision from a covariance CSV

Every command writes a manifest.json next to its outputs. Exit codes:
0 success (non-converged fits included, with a warning on stderr),
2 invalid input, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from src import __version__
from src.benchmark import BenchmarkRunner, failed_cells
from src.config import get_settings
from src.data_io import (
    file_digest,
    read_edges,
    read_labels,
    read_matrix_csv,
    write_edges,
    write_json,
    write_labels,
    write_matrix_csv,
)
from src.exceptions import IllConditionedTransformError, MalformedInputError
from src.glasso import select_lambda_bic, solve_glasso
from src.metrics import evaluate
from src.models import (
    Algorithm,
    BenchmarkConfig,
    GlassoProblem,
    GpcaFactors,
    MnPcaModel,
    MrlConfig,
    RunManifest,
    SyntheticSpec,
    W2Config,
)
from src.mrl import fit_mrl, fit_pca
from src.selection import select_rank
from src.synthdata import generate
from src.w2 import fit_w2

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class RunRecorder:
    """Collects digests and warnings for a command's manifest."""

    def __init__(self, command: str, out_dir: Path, config: Dict, seed: Optional[int] = None):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.seed = seed
        self.started = datetime.now()
        self.clock = time.perf_counter()
        self.inputs: Dict[str, str] = {}
        self.outputs: Dict[str, str] = {}
        self.warnings: List[str] = []
        self.converged: Optional[bool] = None
        out_dir.mkdir(parents=True, exist_ok=True)

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path: Path) -> None:
        self.outputs[path.name] = file_digest(path)

    def warn(self, message: str) -> None:
        print(f"warning: {message}", file=sys.stderr)
        self.warnings.append(message)

    def finish(self) -> Path:
        manifest = RunManifest(
            command=self.command,
            config=self.config,
            seed=self.seed,
            version=__version__,
            created_at=self.started,
            duration_seconds=time.perf_counter() - self.clock,
            inputs=self.inputs,
            outputs=self.outputs,
            converged=self.converged,
            warnings=self.warnings,
        )
        return write_json(self.out_dir / "manifest.json", manifest)


def _out_dir(args, default_name: str) -> Path:
    return Path(args.out) if args.out else get_settings().output_dir / default_name


def _lambda_arg(value: str):
    """Parse a penalty flag: a nonnegative float or 'auto'."""
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {value!r}")


def _write_model(model: MnPcaModel, out_dir: Path, recorder: RunRecorder) -> None:
    outputs = [
        write_matrix_csv(out_dir / "X.csv", model.x),
        write_matrix_csv(out_dir / "W.csv", model.w),
        write_matrix_csv(out_dir / "means.csv", model.column_means),
        write_edges(out_dir / "omega_inv.edges", model.omega_inv),
        write_edges(out_dir / "sigma_inv.edges", model.sigma_inv),
        write_matrix_csv(out_dir / "trace.csv", np.asarray(model.objective_trace)[:, None]),
    ]
    if model.gpca is not None:
        outputs += [
            write_matrix_csv(out_dir / "gpca_u.csv", model.gpca.u),
            write_matrix_csv(out_dir / "gpca_d.csv", model.gpca.d),
            write_matrix_csv(out_dir / "gpca_v.csv", model.gpca.v),
        ]
    for path in outputs:
        recorder.add_output(path)


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    """Write Y, M, labels and the true precisions of a synthetic instance."""
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise FileNotFoundError(f"File not found: {spec_path}")
    spec = SyntheticSpec.model_validate_json(spec_path.read_text())
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})

    out_dir = _out_dir(args, "generate")
    recorder = RunRecorder("generate", out_dir, spec.model_dump(mode="json"), seed=spec.seed)
    recorder.add_input(spec_path)

    instance = generate(spec)
    for path in (
        write_matrix_csv(out_dir / "Y.csv", instance.y),
        write_matrix_csv(out_dir / "M.csv", instance.m_true),
        write_labels(out_dir / "labels.csv", instance.labels),
        write_edges(out_dir / "omega_inv.edges", instance.omega_inv_true),
        write_edges(out_dir / "sigma_inv.edges", instance.sigma_inv_true),
    ):
        recorder.add_output(path)
    recorder.finish()
    print(f"wrote {spec.n}x{spec.p} instance to {out_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    """Fit a model and write its factors, precisions and objective trace."""
    data_path = Path(args.data)
    y = read_matrix_csv(data_path)
    center = not args.no_center

    rank = args.rank
    if rank is None:
        k_max = min(10, *y.shape)
        rank = select_rank(y, k_max=k_max, center=center).chosen_r
        logger.info("rank not given; selected r=%d", rank)

    if args.algo == "mrl":
        cfg = MrlConfig(
            rank=rank,
            lambda1=args.lambda1 if args.lambda1 is not None else "auto",
            lambda2=args.lambda2 if args.lambda2 is not None else "auto",
            max_outer=args.max_iter or 50,
            center=center,
        )
    elif args.algo == "w2":
        if "auto" in (args.lambda1, args.lambda2):
            raise MalformedInputError("--algo w2 takes numeric penalties only")
        cfg = W2Config(
            rank=rank,
            lambda1=args.lambda1 if args.lambda1 is not None else 0.05,
            lambda2=args.lambda2 if args.lambda2 is not None else 0.05,
            sigma_noise=args.sigma,
            max_iter=args.max_iter or 50,
            center=center,
        )
    else:
        cfg = None
        if rank < 1:
            raise MalformedInputError(f"rank must be positive, got {rank}")

    out_dir = _out_dir(args, "fit")
    config = {"algo": args.algo, "rank": rank, "center": center}
    if cfg is not None:
        config.update(cfg.model_dump(mode="json"))
    recorder = RunRecorder("fit", out_dir, config)
    recorder.add_input(data_path)

    if args.algo == "mrl":
        model = fit_mrl(y, cfg)
    elif args.algo == "w2":
        try:
            model = fit_w2(y, cfg)
        except IllConditionedTransformError as exc:
            if exc.best is None:
                raise
            recorder.warn(f"{exc}; writing the best iterate")
            model = exc.best
    else:
        model = fit_pca(y, rank, center=center)

    _write_model(model, out_dir, recorder)
    recorder.converged = model.converged
    if not model.converged:
        recorder.warn(f"{args.algo} fit did not converge after {model.iterations} iterations")
    for flag in model.flags:
        recorder.warnings.append(flag)
    recorder.finish()
    print(f"{args.algo} fit (r={rank}) written to {out_dir}; final objective {model.objective_trace[-1]:.6g}")
    return EXIT_OK


def _load_model(fit_dir: Path) -> MnPcaModel:
    manifest = json.loads((fit_dir / "manifest.json").read_text())
    x = read_matrix_csv(fit_dir / "X.csv")
    w = read_matrix_csv(fit_dir / "W.csv")
    means = read_matrix_csv(fit_dir / "means.csv").ravel()
    gpca = None
    if (fit_dir / "gpca_u.csv").exists():
        gpca = GpcaFactors(
            u=read_matrix_csv(fit_dir / "gpca_u.csv"),
            d=read_matrix_csv(fit_dir / "gpca_d.csv").ravel(),
            v=read_matrix_csv(fit_dir / "gpca_v.csv"),
        )
    return MnPcaModel(
        algorithm=Algorithm(manifest["config"]["algo"]),
        x=x,
        w=w,
        omega_inv=read_edges(fit_dir / "omega_inv.edges"),
        sigma_inv=read_edges(fit_dir / "sigma_inv.edges"),
        column_means=means,
        gpca=gpca,
    )


def cmd_eval(args) -> int:
    """Score a fit directory against generated ground truth."""
    fit_dir, truth_dir = Path(args.fit), Path(args.truth)
    for required in (fit_dir / "manifest.json", fit_dir / "X.csv", truth_dir / "M.csv"):
        if not required.exists():
            raise FileNotFoundError(f"File not found: {required}")

    model = _load_model(fit_dir)
    labels_path = truth_dir / "labels.csv"
    omega_path = truth_dir / "omega_inv.edges"
    sigma_path = truth_dir / "sigma_inv.edges"

    out_dir = Path(args.out) if args.out else fit_dir
    recorder = RunRecorder("eval", out_dir, {"fit": str(fit_dir), "truth": str(truth_dir), "top_k": args.top_k}, args.seed)
    for path in (fit_dir / "X.csv", fit_dir / "W.csv", truth_dir / "M.csv"):
        recorder.add_input(path)

    report = evaluate(
        model,
        read_matrix_csv(truth_dir / "M.csv"),
        labels=read_labels(labels_path) if labels_path.exists() else None,
        omega_inv_true=read_edges(omega_path) if omega_path.exists() else None,
        sigma_inv_true=read_edges(sigma_path) if sigma_path.exists() else None,
        top_k=args.top_k,
        seed=args.seed,
    )
    recorder.add_output(write_json(out_dir / "report.json", report))
    recorder.finish()
    print(report.to_table())
    return EXIT_OK


def cmd_benchmark(args) -> int:
    """Run a protocol sweep and write cells.csv and table.csv."""
    config = BenchmarkConfig(
        protocol=args.protocol,
        seeds=args.seeds if args.seeds is not None else (5 if args.protocol == "large" else 10),
        jobs=args.jobs or get_settings().benchmark_jobs,
        methods=args.methods or [],
        **({"conditions": args.conditions} if args.conditions else {}),
        **({"features": args.features} if args.features else {}),
    )
    out_dir = _out_dir(args, f"benchmark-{args.protocol}")
    recorder = RunRecorder("benchmark", out_dir, config.model_dump(mode="json"))

    runner = BenchmarkRunner(config)
    cells = runner.run()
    for path in runner.write(out_dir, cells).values():
        recorder.add_output(path)
    failures = failed_cells(cells)
    if failures:
        recorder.warn(f"{len(failures)} of {len(cells)} cells failed")
    recorder.finish()
    print((out_dir / "table.csv").read_text())
    return EXIT_OK


def cmd_select_rank(args) -> int:
    """Print the variance-explained rank choice."""
    data_path = Path(args.data)
    y = read_matrix_csv(data_path)
    out_dir = _out_dir(args, "select-rank")
    recorder = RunRecorder("select-rank", out_dir, {"k_max": args.k_max, "tau": args.tau})
    recorder.add_input(data_path)

    k_max = args.k_max
    if k_max > min(y.shape):
        k_max = min(y.shape)
        recorder.warn(f"k_max clamped to {k_max}")
    selection = select_rank(y, k_max=k_max, tau=args.tau, center=not args.no_center)
    recorder.add_output(write_json(out_dir / "rank.json", selection))
    recorder.finish()
    print(f"rank {selection.chosen_r}")
    return EXIT_OK


def cmd_select_lambda(args) -> int:
    """Print the BIC-selected glasso penalty for the row or column covariance."""
    data_path = Path(args.data)
    y = read_matrix_csv(data_path)
    if not args.no_center:
        y = y - y.mean(axis=0)
    n, p = y.shape
    if args.axis == "cols":
        s, p_dim = y.T @ y / n, n
    else:
        s, p_dim = y @ y.T / p, p

    out_dir = _out_dir(args, "select-lambda")
    recorder = RunRecorder("select-lambda", out_dir, {"axis": args.axis, "center": not args.no_center})
    recorder.add_input(data_path)

    selection = select_lambda_bic(s, p_dim)
    if selection.fallback:
        recorder.warn("covariance has no off-diagonal signal; default penalty used")
    summary = selection.model_dump(mode="json", exclude={"solution"})
    summary["edges"] = selection.solution.theta.nnz_offdiag
    summary["converged"] = selection.solution.converged
    lambda_path = out_dir / "lambda.json"
    lambda_path.write_text(json.dumps(summary, indent=2))
    recorder.add_output(lambda_path)
    recorder.add_output(write_edges(out_dir / "precision.edges", selection.solution.theta))
    recorder.finish()
    print(f"lambda {selection.lam:.6g}")
    return EXIT_OK


def cmd_glasso(args) -> int:
    """Solve the graphical lasso on a covariance CSV."""
    cov_path = Path(args.covariance)
    s = read_matrix_csv(cov_path)
    problem = GlassoProblem(s=s, rho=args.rho)

    out_dir = _out_dir(args, "glasso")
    recorder = RunRecorder("glasso", out_dir, {"rho": args.rho, "tol": args.tol, "max_iter": args.max_iter})
    recorder.add_input(cov_path)

    solution = solve_glasso(problem, tol=args.tol, max_iter=args.max_iter)
    recorder.converged = solution.converged
    if not solution.converged:
        recorder.warn(f"glasso did not converge (kkt residual {solution.kkt_residual:.3e})")
    recorder.add_output(write_edges(out_dir / "precision.edges", solution.theta))
    recorder.finish()
    print(f"{solution.theta.nnz_offdiag} edges, objective {solution.objective:.6g}")
    return EXIT_OK


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mnpca", description="Matrix-normal PCA toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic instance")
    gen.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    gen.add_argument("--seed", type=int, default=None, help="override the spec seed")
    gen.add_argument("--out", help="output directory")
    gen.set_defaults(handler=cmd_generate)

    fit = sub.add_parser("fit", help="fit a model to a data CSV")
    fit.add_argument("data", help="n x p data CSV")
    fit.add_argument("--algo", choices=[a.value for a in Algorithm], default="mrl")
    fit.add_argument("--rank", type=int, default=None, help="target rank (selected when omitted)")
    fit.add_argument("--lambda1", type=_lambda_arg, default=None, help="row penalty or 'auto'")
    fit.add_argument("--lambda2", type=_lambda_arg, default=None, help="column penalty or 'auto'")
    fit.add_argument("--sigma", type=float, default=1.0, help="W2 noise scale")
    fit.add_argument("--max-iter", type=int, default=None, help="outer iteration budget")
    fit.add_argument("--no-center", action="store_true", help="skip column centering")
    fit.add_argument("--out", help="output directory")
    fit.set_defaults(handler=cmd_fit)

    ev = sub.add_parser("eval", help="score a fit against ground truth")
    ev.add_argument("--fit", required=True, help="fit output directory")
    ev.add_argument("--truth", required=True, help="generate output directory")
    ev.add_argument("--top-k", type=int, default=150)
    ev.add_argument("--seed", type=int, default=0, help="k-means seed")
    ev.add_argument("--out", help="report directory (defaults to the fit directory)")
    ev.set_defaults(handler=cmd_eval)

    bench = sub.add_parser("benchmark", help="run a protocol sweep")
    bench.add_argument("--protocol", choices=["small", "large", "swiss", "runtime"], default="small")
    bench.add_argument("--seeds", type=int, default=None)
    bench.add_argument("--jobs", type=int, default=None, help="parallel cells")
    bench.add_argument("--methods", nargs="+", default=None)
    bench.add_argument("--conditions", type=float, nargs="+", default=None)
    bench.add_argument("--features", type=int, nargs="+", default=None)
    bench.add_argument("--out", help="output directory")
    bench.set_defaults(handler=cmd_benchmark)

    rank = sub.add_parser("select-rank", help="variance-explained rank choice")
    rank.add_argument("data")
    rank.add_argument("--k-max", type=int, default=10)
    rank.add_argument("--tau", type=float, default=0.8)
    rank.add_argument("--no-center", action="store_true")
    rank.add_argument("--out", help="output directory")
    rank.set_defaults(handler=cmd_select_rank)

    lam = sub.add_parser("select-lambda", help="BIC choice of the glasso penalty")
    lam.add_argument("data")
    lam.add_argument("--axis", choices=["rows", "cols"], default="cols", help="precision to estimate")
    lam.add_argument("--no-center", action="store_true")
    lam.add_argument("--out", help="output directory")
    lam.set_defaults(handler=cmd_select_lambda)

    gl = sub.add_parser("glasso", help="sparse precision from a covariance CSV")
    gl.add_argument("covariance")
    gl.add_argument("--rho", type=float, required=True)
    gl.add_argument("--tol", type=float, default=1e-5)
    gl.add_argument("--max-iter", type=int, default=200)
    gl.add_argument("--out", help="output directory")
    gl.set_defaults(handler=cmd_glasso)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the ``mnpca`` command.

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=get_settings().log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
