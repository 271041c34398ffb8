"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
Every run writes ``manifest.json`` (argv, resolved settings, seed, version) next
to its CSV output in ``--out-dir``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bootstrap import (
    ThresholdRule,
    WeightLaw,
    confidence_region,
    percentile_interval,
    pivot_draws,
    threshold_estimator,
)
from .cv import FoldGeometry, scaling_trajectory, select_penalty
from .experiments import CoverageConfig, run_c4_experiment, run_coverage_experiment
from .limit import LimitModel, limit_pivot_sample
from .model import (
    COVARIANCE_STRUCTURES,
    ConfigError,
    ErrorLaw,
    GridSpec,
    TrueModel,
    load_csv,
    paper_beta,
    parse_int_list,
    partition_folds,
    read_config,
)
from .solver import ConvergenceError, PenaltySpec, SolveOptions, solve_penalized_ls, solve_quadratic

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=d(1), help="replication worker processes")
    parser.add_argument("--out-dir", default=d("."), help="directory for CSV output and manifest")
    parser.add_argument("--config", default=d(None), help="key = value experiment file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvlasso", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="Lasso at a fixed penalty")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("cv", parents=[common], help="K-fold CV curve and selected penalty")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--grid", default=None, help="a,b,c | log:lo:hi:count | paper-remark | auto[:count[:ratio]]")

    p = sub.add_parser("pb-ci", parents=[common], help="perturbation-bootstrap intervals and norm region")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--b", type=int, default=None, help="bootstrap draws (default n)")
    p.add_argument("--weight-law", default=None, help="exp[:rate] | poisson")
    p.add_argument("--threshold-exponent", type=float, default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--validate-on", choices=("original", "perturbed"), default="perturbed",
                   help="responses the bootstrap CV errors are measured against")

    p = sub.add_parser("coverage-sim", parents=[common], help="coverage study on the simulation model")
    p.add_argument("--n-list", default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--b", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--p0", type=int, default=None)
    p.add_argument("--weight-law", default=None)
    p.add_argument("--threshold-exponent", type=float, default=None)
    p.add_argument("--center", choices=("estimate", "threshold"), default="estimate")
    p.add_argument("--validate-on", choices=("original", "perturbed"), default="perturbed")

    p = sub.add_parser("limit-sim", parents=[common], help="limit CV penalty uniqueness and limit pivots")
    p.add_argument("--structure", default=None, help=f"one of {', '.join(COVARIANCE_STRUCTURES)} or 'all'")
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--p0", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--pivots", type=int, default=0, help="limit pivot draws per structure (0 = none)")
    p.add_argument("--paper-cross-weight", action="store_true", help="unit weight on the held-out score term")

    p = sub.add_parser("scaling-sim", parents=[common], help="penalty scaling with sample size")
    p.add_argument("--sample-sizes", default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--p0", type=int, default=None)
    p.add_argument("--grid", default=None)
    return parser


class Settings:
    """Command-line values layered over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = read_config(args.config) if getattr(args, "config", None) else {}
        self.used: dict[str, Any] = {}

    def get(self, name: str, cast, default, key: str | None = None):
        raw = getattr(self.args, name, None)
        if raw is None:
            raw = self.file.get((key or name).lower())
        try:
            v = cast(raw) if raw is not None else default
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key or name}: {raw!r}") from exc
        self.used[name] = v if isinstance(v, (int, float, str, bool, list, tuple, type(None))) else repr(v)
        return v


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], echo: bool) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())
    if echo:
        sys.stdout.write(buf.getvalue())


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_fit(s: Settings, out: Path) -> dict:
    data = load_csv(s.args.data)
    lam, tol = s.get("lam", float, None), s.get("tol", float, 1e-8)
    if lam is None or lam < 0:
        raise ConfigError("--lambda must be nonnegative")
    fit = solve_penalized_ls(data.X, data.y, lam, SolveOptions(tol=tol))
    rows = [[j + 1, _fmt(b)] for j, b in enumerate(fit.beta_hat)]
    _write_csv(out / "fit.csv", ["coordinate", "beta_hat"], rows, echo=True)
    print(f"# objective={fit.objective!r} kkt_residual={fit.kkt_residual:.3g} sweeps={fit.sweeps}")
    return {"objective": fit.objective, "kkt_residual": fit.kkt_residual}


def cmd_cv(s: Settings, out: Path) -> dict:
    data = load_csv(s.args.data)
    K = s.get("k", int, 10)
    seed = s.get("seed", int, 0)
    grid = GridSpec.parse(s.get("grid", str, "auto"))
    folds = partition_folds(data.n, K, seed)
    curve = select_penalty(data, folds, grid)
    rows = [[_fmt(l), _fmt(h)] for l, h in zip(curve.grid.values, curve.errors)]
    _write_csv(out / "cv.csv", ["lambda", "H"], rows, echo=True)
    print(f"# selected_lambda={curve.selected_lambda!r} index={curve.selected_index}")
    return {"selected_lambda": curve.selected_lambda}


def cmd_pb_ci(s: Settings, out: Path) -> dict:
    data = load_csv(s.args.data)
    K = s.get("k", int, 10)
    seed = s.get("seed", int, 0)
    alpha = s.get("alpha", float, 0.10)
    B = s.get("b", int, data.n, key="B")
    law = WeightLaw.parse(s.get("weight_law", str, "exp"))
    rule = ThresholdRule(s.get("threshold_exponent", float, 1.0 / 3.0))
    grid = GridSpec.parse(s.get("grid", str, "auto"))
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    fold_ss, boot_ss = np.random.SeedSequence(seed).spawn(2)
    folds = partition_folds(data.n, K, np.random.default_rng(fold_ss))
    geo = FoldGeometry(data.X, folds)
    lam = select_penalty(data, folds, grid, geometry=geo).selected_lambda
    fit = solve_quadratic(geo.G, data.X.T @ data.y, PenaltySpec.uniform(data.p, lam), lam=lam)
    bt = threshold_estimator(fit, data.n, rule)
    piv = pivot_draws(data, bt, lam, folds, grid, law, B, np.random.default_rng(boot_ss), geo,
                      validate_on=s.args.validate_on)
    rows = []
    for j in range(data.p):
        iv = percentile_interval(piv.draws[:, j], alpha, "two_sided", fit.beta_hat[j], data.n)
        rows.append([j + 1, _fmt(iv.lower), _fmt(iv.upper), _fmt(iv.width)])
    q = confidence_region(piv.norms, 0.0, alpha).quantile
    rows.append(["region", "", "", "", _fmt(q)])
    _write_csv(out / "pb_ci.csv", ["coordinate", "lower", "upper", "width", "norm_quantile"], rows, echo=True)
    return {"lambda_cv": lam, "beta_hat": list(map(float, fit.beta_hat)), "beta_tilde": list(map(float, bt))}


def cmd_coverage(s: Settings, out: Path) -> dict:
    n_list = s.get("n_list", parse_int_list, [50, 100, 150, 300, 500])
    cfg = CoverageConfig(
        n_list=tuple(n_list),
        p=s.get("p", int, 7),
        p0=s.get("p0", int, 4),
        K=s.get("k", int, 10, key="K"),
        reps=s.get("reps", int, 500),
        B=s.get("b", int, None, key="B"),
        alpha=s.get("alpha", float, 0.10),
        threshold_exponent=s.get("threshold_exponent", float, 1.0 / 3.0),
        weight_law=WeightLaw.parse(s.get("weight_law", str, "exp")),
        seed=s.get("seed", int, 0),
        grid=GridSpec.parse(s.get("grid", str, "auto")),
        error=ErrorLaw.parse(s.get("error", str, "normal")),
        structure=s.get("structure", str, "ar03"),
        interval_center=s.args.center,
        bootstrap_validation=s.args.validate_on,
    )
    report = run_coverage_experiment(cfg, threads=s.args.threads)
    report.write_csv(out / "coverage.csv")
    for r in report.rows:
        print(f"n={r.n}: region={r.region:.3f} two_sided={np.round(r.two_sided, 3).tolist()} "
              f"width={np.round(r.avg_width, 3).tolist()} ({r.wall_time:.1f}s, {r.failures} failures)")
    return {"config": cfg.to_dict(), "wall_time": sum(r.wall_time for r in report.rows)}


def cmd_limit(s: Settings, out: Path) -> dict:
    structure = s.get("structure", str, "all")
    structures = list(COVARIANCE_STRUCTURES) if structure == "all" else [structure]
    p, p0, K = s.get("p", int, 7), s.get("p0", int, 4), s.get("k", int, 10, key="K")
    reps, seed = s.get("reps", int, 100), s.get("seed", int, 0)
    grid = GridSpec.parse(s.get("grid", str, "paper-remark"))
    if grid.kind == "auto":
        raise ConfigError("limit-sim needs an explicit, log or paper-remark grid")
    pg = grid.resolve()
    cw = 1.0 if s.args.paper_cross_weight else None
    report = run_c4_experiment(structures, reps, seed, out / "limit.csv", p, p0, K, pg, cw)
    summary = report.summary()
    for name, st in summary.items():
        print(f"{name}: unique_fraction={st['unique_fraction']:.3f} median_lambda={st['lambda_median']:.4f} "
              f"boundary_fraction={st['boundary_fraction']:.3f}")
    if s.args.pivots > 0:
        prow = []
        for si, name in enumerate(structures):
            lm = LimitModel.from_structure(name, p, p0, K)
            ps = limit_pivot_sample(lm, pg, s.args.pivots, seed, cross_weight=cw, key=(10**6 + si,))
            prow += [[name, r, *map(_fmt, d)] for r, d in enumerate(ps.draws)]
        _write_csv(out / "limit_pivots.csv", ["structure", "rep", *[f"u{j}" for j in range(1, p + 1)]], prow, echo=False)
    return {"summary": summary}


def cmd_scaling(s: Settings, out: Path) -> dict:
    sizes = s.get("sample_sizes", parse_int_list, [100, 400, 1600])
    p, p0 = s.get("p", int, 7), s.get("p0", int, 4)
    K, reps, seed = s.get("k", int, 10, key="K"), s.get("reps", int, 50), s.get("seed", int, 0)
    grid = GridSpec.parse(s.get("grid", str, "auto"))
    model = TrueModel(paper_beta(p, p0), p0, s.get("structure", str, "ar03"), ErrorLaw.parse(s.get("error", str, "normal")))
    traj = scaling_trajectory(model, sizes, K, reps, grid, seed, threads=s.args.threads)
    rows = [[n, _fmt(a), _fmt(b)] for n, a, b in zip(traj.sample_sizes, traj.scaled_by_n, traj.scaled_by_sqrt_n)]
    _write_csv(out / "scaling.csv", ["n", "median_lambda_over_n", "median_lambda_over_sqrt_n"], rows, echo=True)
    return {}


COMMANDS = {
    "fit": cmd_fit, "cv": cmd_cv, "pb-ci": cmd_pb_ci, "coverage-sim": cmd_coverage,
    "limit-sim": cmd_limit, "scaling-sim": cmd_scaling,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        settings = Settings(args)
        settings.get("seed", int, 0)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        extra = COMMANDS[args.command](settings, out)
        manifest = {
            "command": args.command,
            "argv": argv,
            "settings": settings.used,
            "config_file": dict(settings.file),
            "version": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "wall_time": time.perf_counter() - t0,
            "result": extra,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return repr(o)


if __name__ == "__main__":
    sys.exit(main())
