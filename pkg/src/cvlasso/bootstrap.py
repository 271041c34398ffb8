"""Perturbation bootstrap for the Lasso at a K-fold CV penalty.

Given the thresholded estimate ``bt`` and iid nonnegative weights ``G_i`` with
mean ``mu`` and variance ``mu^2``, the perturbed responses are

    z_i = x_i'bt + (y_i - x_i'bt) (G_i - mu) / mu.

Each bootstrap draw re-selects the penalty by K-fold CV on the original folds
(fits on ``z`` outside each fold), refits on all rows and records the pivot
``sqrt(n) (b*(lam*) - bt)``. Held-out errors are measured against the original
``y`` by default; ``validate_on="perturbed"`` measures them against ``z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from .cv import CvCurve, FoldGeometry, _resolve_grid
from .model import ConfigError, Dataset, FoldPartition, GridSpec, LassoFit, PenaltyGrid
from .solver import PenaltySpec, SolveOptions, solve_quadratic

VALIDATION_TARGETS = ("original", "perturbed")


@dataclass(frozen=True)
class WeightLaw:
    """Bootstrap weight law with mean ``mu`` and variance ``mu**2``."""

    family: str = "exponential"
    rate: float = 1.0

    def __post_init__(self):
        if self.family not in ("exponential", "poisson"):
            raise ConfigError(f"unknown weight law {self.family!r}")
        if not self.rate > 0:
            raise ConfigError("exponential rate must be positive")

    @property
    def mu(self) -> float:
        return 1.0 / self.rate if self.family == "exponential" else 1.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "exponential":
            return rng.exponential(self.mu, size)
        return rng.poisson(1.0, size).astype(np.float64)

    @classmethod
    def parse(cls, text: str) -> "WeightLaw":
        # "exp", "exp:2", "exponential:0.5", "poisson"
        name, _, arg = text.strip().lower().partition(":")
        if name in ("exp", "exponential"):
            return cls("exponential", float(arg) if arg else 1.0)
        if name == "poisson":
            return cls("poisson")
        raise ConfigError(f"unknown weight law {text!r}")


@dataclass(frozen=True)
class ThresholdRule:
    """a_n = n^(-exponent) with 0 < exponent < 1/2."""

    exponent: float = 1.0 / 3.0

    def __post_init__(self):
        # a_n -> 0 needs exponent > 0; n^{-1/2} log n / a_n -> 0 needs exponent < 1/2
        if not 0.0 < self.exponent < 0.5:
            raise ConfigError(f"threshold exponent must lie in (0, 1/2), got {self.exponent}")

    def a_n(self, n: int) -> float:
        return float(n) ** (-self.exponent)


@dataclass(frozen=True)
class PivotSample:
    """B draws (rows) of a sqrt(n)-scaled pivot vector, with their centre."""

    draws: np.ndarray
    center: np.ndarray
    lambdas: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.draws, dtype=np.float64))
        if d.shape[0] < 1:
            raise ValueError("pivot sample is empty")
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.draws, axis=1)


def threshold_estimator(fit: LassoFit | np.ndarray, n: int, rule: ThresholdRule | float = ThresholdRule()) -> np.ndarray:
    """Zero every coordinate with |b_j| <= a_n."""
    b = np.asarray(fit.beta_hat if isinstance(fit, LassoFit) else fit, dtype=np.float64)
    a_n = rule.a_n(n) if isinstance(rule, ThresholdRule) else float(rule)
    return np.where(np.abs(b) > a_n, b, 0.0)


def bootstrap_responses(data: Dataset | tuple, beta_tilde: np.ndarray, weights: np.ndarray, law: WeightLaw | float) -> np.ndarray:
    X, y = (data.X, data.y) if isinstance(data, Dataset) else data
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != y.shape[0]:
        raise ValueError("weights must have one entry per observation")
    if np.any(w < 0):
        raise ValueError("bootstrap weights must be nonnegative")
    mu = law.mu if isinstance(law, WeightLaw) else float(law)
    fitted = X @ np.asarray(beta_tilde, dtype=np.float64)
    return fitted + (y - fitted) * (w - mu) / mu


def bootstrap_cv_penalty(
    data: Dataset,
    z: np.ndarray,
    folds: FoldPartition,
    grid: PenaltyGrid | GridSpec | None = None,
    geometry: FoldGeometry | None = None,
    validate_on: str = "original",
) -> CvCurve:
    """CV curve with leave-fold-out fits on ``z``.

    Prediction errors are taken against ``y`` (``validate_on="original"``) or
    against ``z`` (``"perturbed"``, i.e. plain K-fold CV run on the perturbed data).
    An ``auto`` grid is anchored to the fold-complement zero-fit threshold of ``z``.
    """
    if validate_on not in VALIDATION_TARGETS:
        raise ConfigError(f"validate_on must be one of {VALIDATION_TARGETS}")
    geo = geometry or FoldGeometry(data.X, folds)
    g = _resolve_grid(grid, lambda: geo.lambda_max(z))
    return geo.curve(z, g, val_response=data.y if validate_on == "original" else z)


def pivot_draws(
    data: Dataset,
    fit_center: np.ndarray,
    lambda_cv: float | None,
    folds: FoldPartition,
    grid: PenaltyGrid | GridSpec | None = None,
    law: WeightLaw = WeightLaw(),
    B: int | None = None,
    seed: Any = None,
    geometry: FoldGeometry | None = None,
    tol: float = 1e-8,
    validate_on: str = "original",
) -> PivotSample:
    """B perturbation-bootstrap pivots sqrt(n) (b*(lam*) - fit_center).

    ``lambda_cv`` is the original CV penalty; it is not used by the draws and is
    accepted so call sites record what the centre was computed at. ``B`` defaults to n.
    """
    n = data.n
    B = n if B is None else int(B)
    if B < 1:
        raise ValueError("B must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    geo = geometry or FoldGeometry(data.X, folds)
    center = np.asarray(fit_center, dtype=np.float64)
    opts = SolveOptions(tol=tol)
    draws = np.empty((B, data.p))
    lams = np.empty(B)
    sqrt_n = math.sqrt(n)
    for b in range(B):
        z = bootstrap_responses(data, center, law.sample(rng, n), law)
        curve = bootstrap_cv_penalty(data, z, folds, grid, geo, validate_on)
        lam = curve.selected_lambda
        fit = solve_quadratic(geo.G, data.X.T @ z, PenaltySpec.uniform(data.p, lam), opts, lam=lam)
        draws[b] = sqrt_n * (fit.beta_hat - center)
        lams[b] = lam
    return PivotSample(draws, center, lams)


def order_statistic(sample: np.ndarray, q: float) -> float:
    """Empirical q-quantile as the ceil(q*B)-th order statistic (1-based)."""
    s = np.sort(np.asarray(sample, dtype=np.float64).reshape(-1))
    B = s.size
    k = math.ceil(q * B - 1e-9)
    k = min(max(k, 1), B)
    return float(s[k - 1])


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    degenerate: bool = False

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def percentile_interval(
    sample: np.ndarray,
    alpha: float,
    side: str = "two_sided",
    center: float = 0.0,
    n: int = 1,
) -> Interval:
    """Pivot-percentile interval ``center - q/sqrt(n)`` for one coordinate.

    ``two_sided`` uses the alpha/2 and 1-alpha/2 pivot quantiles;
    ``right`` is ``[center - q_{1-alpha}/sqrt(n), inf)``.
    """
    s = np.asarray(sample, dtype=np.float64).reshape(-1)
    if s.size < 2:
        raise ValueError("need at least two pivot draws")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    degenerate = bool(np.all(s == s[0]))
    r = math.sqrt(n)
    if side == "two_sided":
        q_lo = order_statistic(s, alpha / 2)
        q_hi = order_statistic(s, 1 - alpha / 2)
        return Interval(center - q_hi / r, center - q_lo / r, degenerate)
    if side == "right":
        return Interval(center - order_statistic(s, 1 - alpha) / r, math.inf, degenerate)
    raise ValueError(f"unknown side {side!r}")


@dataclass(frozen=True)
class RegionResult:
    quantile: float
    covered: bool


def confidence_region(pivot_norms: np.ndarray, t_obs: float, alpha: float) -> RegionResult:
    """Norm region: accept when ||T_n|| does not exceed the (1-alpha) quantile of ||T*||."""
    s = np.asarray(pivot_norms, dtype=np.float64).reshape(-1)
    if s.size < 2:
        raise ValueError("need at least two pivot norms")
    q = order_statistic(s, 1 - alpha)
    return RegionResult(q, bool(t_obs <= q))


def pivot_distance(sample_a: PivotSample | np.ndarray, sample_b: PivotSample | np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance between pivot norms.

    Plain 1-D arrays are taken to be norms already.
    """
    def norms(s):
        if isinstance(s, PivotSample):
            return s.norms
        a = np.asarray(s, dtype=np.float64)
        return np.linalg.norm(a, axis=1) if a.ndim == 2 else a

    a, b = norms(sample_a), norms(sample_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    return float(stats.ks_2samp(a, b).statistic)
