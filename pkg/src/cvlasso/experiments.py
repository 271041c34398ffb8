"""Simulation drivers: coverage study, limit-law experiments and penalty scaling."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import parallel
from .bootstrap import (
    VALIDATION_TARGETS,
    PivotSample,
    ThresholdRule,
    WeightLaw,
    confidence_region,
    percentile_interval,
    pivot_distance,
    pivot_draws,
    threshold_estimator,
)
from .cv import FoldGeometry, select_penalty
from .limit import C4Report, LimitModel, c4_experiment, limit_lambda_sample, limit_pivot_sample
from .model import (
    ConfigError,
    Dataset,
    ErrorLaw,
    GridSpec,
    PenaltyGrid,
    TrueModel,
    generate_design,
    generate_response,
    paper_beta,
    partition_folds,
)
from .solver import ConvergenceError, PenaltySpec, SolveOptions, solve_quadratic

MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class CoverageConfig:
    n_list: tuple[int, ...] = (50, 100, 150, 300, 500)
    p: int = 7
    p0: int = 4
    K: int = 10
    reps: int = 500
    B: int | None = None  # None means B = n
    alpha: float = 0.10
    threshold_exponent: float = 1.0 / 3.0
    weight_law: WeightLaw = field(default_factory=WeightLaw)
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    error: ErrorLaw = field(default_factory=ErrorLaw)
    structure: str = "ar03"
    interval_center: str = "estimate"  # or "threshold"
    fixed_folds: bool = False
    bootstrap_validation: str = "perturbed"  # or "original"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.B is not None and self.B < 2:
            raise ConfigError("B must be >= 2")
        if self.interval_center not in ("estimate", "threshold"):
            raise ConfigError("interval_center must be 'estimate' or 'threshold'")
        if self.bootstrap_validation not in VALIDATION_TARGETS:
            raise ConfigError(f"bootstrap_validation must be one of {VALIDATION_TARGETS}")
        ThresholdRule(self.threshold_exponent)
        if any(n <= self.p for n in self.n_list):
            raise ConfigError("every n must exceed p")

    @property
    def model(self) -> TrueModel:
        return TrueModel(paper_beta(self.p, self.p0), self.p0, self.structure, self.error)

    def B_for(self, n: int) -> int:
        return n if self.B is None else self.B

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["weight_law"] = asdict(self.weight_law)
        d["grid"] = asdict(self.grid)
        d["error"] = asdict(self.error)
        return d


@dataclass
class RepOutcome:
    two_sided: np.ndarray
    right: np.ndarray
    width: np.ndarray
    region: bool
    lam: float
    t_norm: float
    q_norm: float


@dataclass
class CoverageRow:
    n: int
    B: int
    reps_used: int
    failures: int
    two_sided: np.ndarray
    right: np.ndarray
    avg_width: np.ndarray
    region: float
    wall_time: float
    median_lambda: float

    def se(self, c: np.ndarray | float) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return np.sqrt(c * (1 - c) / max(self.reps_used, 1))


@dataclass
class CoverageReport:
    config: CoverageConfig
    rows: list[CoverageRow]

    def row(self, n: int) -> CoverageRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)

    def write_csv(self, path: str | Path) -> None:
        """One line per (n, coordinate) plus a ``region`` line per n."""
        beta = self.config.model.beta
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([
                "n", "coordinate", "beta", "two_sided_coverage", "two_sided_se",
                "right_coverage", "right_se", "avg_width", "reps", "failures",
            ])
            for r in self.rows:
                for j in range(len(beta)):
                    w.writerow([
                        r.n, j + 1, beta[j], f"{r.two_sided[j]:.4f}", f"{r.se(r.two_sided[j]):.4f}",
                        f"{r.right[j]:.4f}", f"{r.se(r.right[j]):.4f}", f"{r.avg_width[j]:.4f}",
                        r.reps_used, r.failures,
                    ])
                w.writerow([r.n, "region", "", f"{r.region:.4f}", f"{r.se(r.region):.4f}", "", "", "", r.reps_used, r.failures])


def coverage_replication(config: CoverageConfig, n_index: int, X: np.ndarray, rep: int, folds=None) -> RepOutcome:
    """One simulated dataset on the fixed design: CV fit, threshold, bootstrap, intervals."""
    model = config.model
    n = X.shape[0]
    err_rng, fold_rng, boot_rng = (np.random.default_rng(s) for s in parallel.stream(config.seed, n_index, rep).spawn(3))
    y = generate_response(model, X, err_rng)
    data = Dataset(X, y)
    if folds is None:
        folds = partition_folds(n, config.K, fold_rng)
    geo = FoldGeometry(X, folds)
    curve = select_penalty(data, folds, config.grid, geometry=geo)
    lam = curve.selected_lambda
    fit = solve_quadratic(geo.G, X.T @ y, PenaltySpec.uniform(data.p, lam), SolveOptions(), lam=lam)
    beta_hat = np.asarray(fit.beta_hat)
    beta_tilde = threshold_estimator(beta_hat, n, ThresholdRule(config.threshold_exponent))
    piv = pivot_draws(data, beta_tilde, lam, folds, config.grid, config.weight_law, config.B_for(n), boot_rng, geo,
                       validate_on=config.bootstrap_validation)
    center = beta_hat if config.interval_center == "estimate" else beta_tilde
    p = data.p
    two, right, width = np.zeros(p, bool), np.zeros(p, bool), np.zeros(p)
    for j in range(p):
        iv = percentile_interval(piv.draws[:, j], config.alpha, "two_sided", center[j], n)
        two[j] = iv.contains(model.beta[j])
        width[j] = iv.width
        right[j] = percentile_interval(piv.draws[:, j], config.alpha, "right", center[j], n).contains(model.beta[j])
    t_norm = math.sqrt(n) * float(np.linalg.norm(beta_hat - model.beta))
    reg = confidence_region(piv.norms, t_norm, config.alpha)
    return RepOutcome(two, right, width, reg.covered, lam, t_norm, reg.quantile)


def _safe_replication(config, n_index, X, rep, folds):
    try:
        return coverage_replication(config, n_index, X, rep, folds)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        return exc


def run_coverage_experiment(config: CoverageConfig, threads: int = 1, n_list: Sequence[int] | None = None) -> CoverageReport:
    """Design drawn once per n and held fixed; errors, folds and weights vary by replication."""
    rows = []
    for i, n in enumerate(config.n_list):
        if n_list is not None and n not in n_list:
            continue
        t0 = time.perf_counter()
        X = generate_design(config.model, n, parallel.rng(config.seed, i, 10**6))
        folds = partition_folds(n, config.K, parallel.rng(config.seed, i, 10**6 + 1)) if config.fixed_folds else None
        jobs = [(config, i, X, r, folds) for r in range(config.reps)]
        outcomes = parallel.replicate(_safe_replication, jobs, threads)
        good = [o for o in outcomes if isinstance(o, RepOutcome)]
        failures = len(outcomes) - len(good)
        if failures > MAX_FAILURE_RATE * len(outcomes):
            raise ConvergenceError(f"n={n}: {failures} of {len(outcomes)} replications failed")
        rows.append(CoverageRow(
            n=n,
            B=config.B_for(n),
            reps_used=len(good),
            failures=failures,
            two_sided=np.mean([o.two_sided for o in good], axis=0),
            right=np.mean([o.right for o in good], axis=0),
            avg_width=np.mean([o.width for o in good], axis=0),
            region=float(np.mean([o.region for o in good])),
            wall_time=time.perf_counter() - t0,
            median_lambda=float(np.median([o.lam for o in good])),
        ))
    return CoverageReport(config, rows)


# ---------------------------------------------------------------------------
# Limit-law comparisons
# ---------------------------------------------------------------------------


C4_COLUMNS = ("structure", "rep", "lambda_star", "h_value", "unique")


def run_c4_experiment(
    structures: Sequence[str], reps: int, seed: int | None, path: str | Path,
    p: int = 7, p0: int = 4, K: int = 10, grid: PenaltyGrid | None = None, cross_weight: float | None = None,
) -> C4Report:
    """c4_experiment plus a CSV with one row per (structure, rep)."""
    report = c4_experiment(structures, reps, seed, p, p0, K, grid, cross_weight)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(C4_COLUMNS)
        for r in report.rows:
            w.writerow([r.structure, r.rep, repr(r.lambda_star), repr(r.h_value), int(r.unique)])
    return report


def wide_limit_grid() -> PenaltyGrid:
    """Grid for the scaled penalty wide enough to contain the limit law's support."""
    return PenaltyGrid.log_spaced(1e-3, 1e2, 200)


def finite_scaled_penalties(
    model: TrueModel, n: int, K: int, reps: int, grid: PenaltyGrid, seed: int | None, *key: int
) -> np.ndarray:
    """(n-m)^{-1/2} lam_hat over ``reps`` error draws on one fixed design.

    The finite-sample grid is ``grid`` multiplied by sqrt(n-m), so both laws live
    on the same scaled grid.
    """
    nm = n - n // K
    X = generate_design(model, n, parallel.rng(seed, *key, 0))
    g = grid.scaled(math.sqrt(nm))
    out = np.empty(reps)
    for r in range(reps):
        e_rng, f_rng = (np.random.default_rng(s) for s in parallel.stream(seed, *key, 1, r).spawn(2))
        data = Dataset(X, generate_response(model, X, e_rng))
        out[r] = select_penalty(data, partition_folds(n, K, f_rng), g).selected_lambda / math.sqrt(nm)
    return out


def finite_pivots(
    model: TrueModel, n: int, K: int, reps: int, grid: GridSpec | PenaltyGrid | None, seed: int | None,
    *key: int, X: np.ndarray | None = None,
) -> PivotSample:
    """Monte Carlo draws of sqrt(n) (b(lam_cv) - beta) on one fixed design."""
    if X is None:
        X = generate_design(model, n, parallel.rng(seed, *key, 0))
    G = X.T @ X
    draws = np.empty((reps, model.p))
    lams = np.empty(reps)
    for r in range(reps):
        e_rng, f_rng = (np.random.default_rng(s) for s in parallel.stream(seed, *key, 1, r).spawn(2))
        y = generate_response(model, X, e_rng)
        folds = partition_folds(n, K, f_rng)
        lam = select_penalty(Dataset(X, y), folds, grid).selected_lambda
        fit = solve_quadratic(G, X.T @ y, PenaltySpec.uniform(model.p, lam), lam=lam)
        draws[r] = math.sqrt(n) * (np.asarray(fit.beta_hat) - model.beta)
        lams[r] = lam
    return PivotSample(draws, model.beta, lams)


def limit_model_for(model: TrueModel, K: int) -> LimitModel:
    """Limit matrices of a homoscedastic simulation model: L = Sigma, S = sigma^2 Sigma."""
    if model.error_dist.kind != "normal":
        raise ConfigError("limit matrices are only available for homoscedastic normal errors")
    L = model.covariance
    return LimitModel(L, model.error_dist.scale**2 * L, model.beta, model.p0, K)


@dataclass(frozen=True)
class DistanceComparison:
    sample_sizes: tuple[int, ...]
    distances: np.ndarray  # (len(sample_sizes), seeds)

    @property
    def medians(self) -> np.ndarray:
        return np.median(self.distances, axis=1)


def penalty_law_distance(
    model: TrueModel, sample_sizes: Sequence[int] = (100, 800), K: int = 10, reps: int = 200,
    limit_draws: int = 2000, seeds: int = 10, seed: int = 0, grid: PenaltyGrid | None = None,
) -> DistanceComparison:
    """KS distance between the laws of (n-m)^{-1/2} lam_hat and the limit CV penalty."""
    grid = grid or wide_limit_grid()
    lm = limit_model_for(model, K)
    out = np.empty((len(sample_sizes), seeds))
    for s in range(seeds):
        ref = limit_lambda_sample(lm, grid, limit_draws, seed, key=(s, 0))
        for i, n in enumerate(sample_sizes):
            fin = finite_scaled_penalties(model, n, K, reps, grid, seed, s, 1, i)
            out[i, s] = pivot_distance(fin, ref)
    return DistanceComparison(tuple(sample_sizes), out)


def limit_pivot_distance(
    model: TrueModel, sample_sizes: Sequence[int] = (100, 800), K: int = 10, reps: int = 200,
    limit_draws: int = 2000, seeds: int = 10, seed: int = 0, grid: PenaltyGrid | None = None,
) -> DistanceComparison:
    """KS distance between finite-sample pivot norms and limit pivot norms."""
    grid = grid or wide_limit_grid()
    lm = limit_model_for(model, K)
    out = np.empty((len(sample_sizes), seeds))
    for s in range(seeds):
        ref = limit_pivot_sample(lm, grid, limit_draws, seed=seed, key=(s, 0))
        for i, n in enumerate(sample_sizes):
            fin = finite_pivots(model, n, K, reps, None, seed, s, 1, i)
            out[i, s] = pivot_distance(fin, ref)
    return DistanceComparison(tuple(sample_sizes), out)


def bootstrap_pivot_distance(
    model: TrueModel, sample_sizes: Sequence[int] = (100, 800), K: int = 10, draws: int = 200,
    seeds: int = 10, seed: int = 0, threshold_exponent: float = 1.0 / 3.0, law: WeightLaw = WeightLaw(),
    validate_on: str = "perturbed",
) -> DistanceComparison:
    """KS distance between PB pivot norms (one dataset) and Monte Carlo pivot norms (same design)."""
    out = np.empty((len(sample_sizes), seeds))
    for s in range(seeds):
        for i, n in enumerate(sample_sizes):
            X = generate_design(model, n, parallel.rng(seed, s, i, 0))
            truth = finite_pivots(model, n, K, draws, None, seed, s, i, 1, X=X)
            e_rng, f_rng, b_rng = (np.random.default_rng(q) for q in parallel.stream(seed, s, i, 2).spawn(3))
            data = Dataset(X, generate_response(model, X, e_rng))
            folds = partition_folds(n, K, f_rng)
            geo = FoldGeometry(X, folds)
            lam = select_penalty(data, folds, geometry=geo).selected_lambda
            fit = solve_quadratic(geo.G, X.T @ data.y, PenaltySpec.uniform(model.p, lam), lam=lam)
            bt = threshold_estimator(fit, n, ThresholdRule(threshold_exponent))
            pb = pivot_draws(data, bt, lam, folds, None, law, draws, b_rng, geo, validate_on=validate_on)
            out[i, s] = pivot_distance(pb, truth)
    return DistanceComparison(tuple(sample_sizes), out)


__all__ = [
    "CoverageConfig", "CoverageReport", "CoverageRow", "run_coverage_experiment", "coverage_replication",
    "c4_experiment", "run_c4_experiment", "penalty_law_distance", "limit_pivot_distance", "bootstrap_pivot_distance",
    "finite_pivots", "finite_scaled_penalties", "limit_model_for", "wide_limit_grid",
]
