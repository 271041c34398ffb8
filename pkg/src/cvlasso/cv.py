"""K-fold cross-validated prediction error and penalty selection.

The CV error at penalty ``lam`` is

    H(lam) = 1/2 sum_k sum_{i in I_k} (y_i - x_i' b_{-k}(lam))^2

where ``b_{-k}`` is the Lasso fit on all rows outside fold ``k``. Curves over a
grid are computed with warm starts from the largest penalty down, using fold
Gram matrices so each solve costs O(p^2) per sweep regardless of n.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import parallel
from .model import (
    Dataset,
    FoldPartition,
    GridSpec,
    PenaltyGrid,
    TrueModel,
    generate_dataset,
    partition_folds,
)
from .solver import SolveOptions, path_values, solve_penalized_ls

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class CvCurve:
    grid: PenaltyGrid
    errors: np.ndarray
    selected_index: int
    selected_lambda: float
    max_kkt: float = 0.0

    @property
    def has_interior_minimum(self) -> bool:
        return 0 < self.selected_index < len(self.grid) - 1


def least_argmin(values: np.ndarray) -> int:
    """First index attaining the minimum (smallest penalty on an increasing grid)."""
    return int(np.argmin(np.asarray(values)))


class FoldGeometry:
    """Design-only fold quantities shared by every response on the same (X, folds)."""

    def __init__(self, X: np.ndarray, folds: FoldPartition):
        X = np.asarray(X, dtype=np.float64)
        if folds.n != X.shape[0]:
            raise ValueError(f"partition covers {folds.n} rows, design has {X.shape[0]}")
        self.X = X
        self.folds = folds
        self.labels = folds.labels
        self.K = folds.K
        p = X.shape[1]
        self.G = X.T @ X
        self.G_val = np.stack([X[f].T @ X[f] for f in folds.folds])
        self.G_train = self.G[None, :, :] - self.G_val
        for k, f in enumerate(folds.folds):
            if X.shape[0] - f.size < p:
                raise ValueError(f"fold {k} complement has fewer than p={p} rows")

    def fold_cross(self, v: np.ndarray) -> np.ndarray:
        """Rows k = X_k' v_k (K x p)."""
        p = self.X.shape[1]
        out = np.empty((self.K, p))
        for j in range(p):
            out[:, j] = np.bincount(self.labels, weights=self.X[:, j] * v, minlength=self.K)
        return out

    def fold_sq(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.labels, weights=v * v, minlength=self.K)

    def lambda_max(self, v: np.ndarray) -> float:
        """Largest zero-fit threshold over the fold complements."""
        c_train = (self.X.T @ v)[None, :] - self.fold_cross(v)
        return float(np.max(np.abs(c_train)))

    def curve(
        self,
        train_response: np.ndarray,
        grid: PenaltyGrid,
        val_response: np.ndarray | None = None,
        tol: float = DEFAULT_TOL,
    ) -> CvCurve:
        """CV curve with fits on ``train_response`` scored against ``val_response``."""
        v_tr = np.asarray(train_response, dtype=np.float64)
        v_val = v_tr if val_response is None else np.asarray(val_response, dtype=np.float64)
        c_train = (self.X.T @ v_tr)[None, :] - self.fold_cross(v_tr)
        c_val = self.fold_cross(v_val)
        k_val = 0.5 * self.fold_sq(v_val)
        p = self.X.shape[1]
        lams = grid.values[::-1].copy()
        vals, worst = path_values(
            self.G_train, c_train, np.ones(p), np.zeros(p), self.G_val, c_val, k_val, lams, tol
        )
        errors = vals[::-1].copy()
        idx = least_argmin(errors)
        return CvCurve(grid, errors, idx, float(grid.values[idx]), worst)


def _resolve_grid(grid: PenaltyGrid | GridSpec | None, lam_max_fn) -> PenaltyGrid:
    if isinstance(grid, PenaltyGrid):
        return grid
    spec = grid or GridSpec()
    return spec.resolve(lam_max_fn() if spec.kind == "auto" else None)


def cv_error(data: Dataset, folds: FoldPartition, lam: float, tol: float = DEFAULT_TOL) -> float:
    """H(lam) from explicit leave-fold-out fits and residuals."""
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    labels = folds.labels
    total = 0.0
    for k, f in enumerate(folds.folds):
        out = labels != k
        if np.count_nonzero(out) < data.p:
            raise ValueError(f"fold {k} complement has fewer than p={data.p} rows")
        fit = solve_penalized_ls(data.X[out], data.y[out], lam, SolveOptions(tol=tol))
        r = data.y[f] - data.X[f] @ fit.beta_hat
        total += 0.5 * float(r @ r)
    return total


def select_penalty(
    data: Dataset,
    folds: FoldPartition,
    grid: PenaltyGrid | GridSpec | None = None,
    *,
    refine: bool = False,
    tol: float = DEFAULT_TOL,
    geometry: FoldGeometry | None = None,
) -> CvCurve:
    """Grid argmin of H, ties to the smallest penalty.

    ``grid=None`` uses 100 log-spaced values on [1e-4, 1] times the largest
    fold-complement zero-fit threshold. With ``refine`` a bounded scalar search on
    log-penalty between the neighbours of the grid argmin may move
    ``selected_lambda`` off the grid (only if it lowers H).
    """
    geo = geometry or FoldGeometry(data.X, folds)
    g = _resolve_grid(grid, lambda: geo.lambda_max(data.y))
    curve = geo.curve(data.y, g, tol=tol)
    if refine and len(g) >= 3:
        curve = _refine(data, folds, curve, tol)
    return curve


def _refine(data: Dataset, folds: FoldPartition, curve: CvCurve, tol: float) -> CvCurve:
    v = curve.grid.values
    i = curve.selected_index
    lo, hi = np.log(v[max(i - 1, 0)]), np.log(v[min(i + 1, v.size - 1)])
    res = minimize_scalar(
        lambda t: cv_error(data, folds, float(np.exp(t)), tol),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-4},
    )
    if res.fun < curve.errors[i]:
        return CvCurve(curve.grid, curve.errors, i, float(np.exp(res.x)), curve.max_kkt)
    return curve


# ---------------------------------------------------------------------------
# Score vectors and leave-out diagnostics (simulation mode: errors known)
# ---------------------------------------------------------------------------


def fold_scores(X: np.ndarray, eps: np.ndarray, folds: FoldPartition) -> tuple[np.ndarray, np.ndarray]:
    """(W_in, W_minus): m^{-1/2} sum_{I_k} eps_i x_i and (n-m)^{-1/2} sum_{not I_k} eps_i x_i.

    ``m`` is the size of each fold and ``n - m`` the size of its complement.
    """
    X = np.asarray(X, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    n = X.shape[0]
    total = X.T @ eps
    W_in = np.empty((folds.K, X.shape[1]))
    W_minus = np.empty_like(W_in)
    for k, f in enumerate(folds.folds):
        s_in = X[f].T @ eps[f]
        W_in[k] = s_in / np.sqrt(f.size)
        W_minus[k] = (total - s_in) / np.sqrt(n - f.size)
    return W_in, W_minus


def leave_out_deviation(data: Dataset, folds: FoldPartition, lam: float, beta: np.ndarray) -> float:
    """max_k || b_{-k}(lam) - beta ||."""
    labels = folds.labels
    worst = 0.0
    for k in range(folds.K):
        out = labels != k
        fit = solve_penalized_ls(data.X[out], data.y[out], lam)
        worst = max(worst, float(np.linalg.norm(fit.beta_hat - beta)))
    return worst


# ---------------------------------------------------------------------------
# Penalty scaling with n
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingTrajectory:
    sample_sizes: tuple[int, ...]
    scaled_by_n: np.ndarray
    scaled_by_sqrt_n: np.ndarray
    replications: int
    aggregation: str
    raw: np.ndarray  # (len(sample_sizes), reps) selected penalties


def selected_penalty_once(
    model: TrueModel, n: int, K: int, grid: GridSpec | PenaltyGrid | None, seed: int | None, *key: int
) -> float:
    """One dataset, one partition, one CV selection."""
    data_ss, fold_ss = parallel.stream(seed, *key).spawn(2)
    data = generate_dataset(model, n, data_ss)
    folds = partition_folds(n, K, np.random.default_rng(fold_ss))
    return select_penalty(data, folds, grid).selected_lambda


def scaling_trajectory(
    model: TrueModel,
    sample_sizes: Sequence[int],
    K: int = 10,
    reps: int = 50,
    grid_spec: GridSpec | PenaltyGrid | None = None,
    seed: int | None = 0,
    aggregation: str = "median",
    threads: int = 1,
) -> ScalingTrajectory:
    """Aggregate n^{-1} lam_hat and n^{-1/2} lam_hat over independent datasets per n."""
    sizes = tuple(int(n) for n in sample_sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sample sizes must be strictly increasing")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if aggregation not in ("median", "mean"):
        raise ValueError("aggregation must be 'median' or 'mean'")
    jobs = [(model, n, K, grid_spec, seed, i, r) for i, n in enumerate(sizes) for r in range(reps)]
    lams = np.array(parallel.replicate(selected_penalty_once, jobs, threads)).reshape(len(sizes), reps)
    agg = np.median if aggregation == "median" else np.mean
    ns = np.array(sizes, dtype=float)
    return ScalingTrajectory(
        sizes,
        agg(lams / ns[:, None], axis=1),
        agg(lams / np.sqrt(ns)[:, None], axis=1),
        reps,
        aggregation,
        lams,
    )
