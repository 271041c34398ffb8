"""Monte Carlo for the limiting CV objective, its minimiser and the limit pivot law.

Per draw, K independent N(0, S) blocks ``Z_k`` generate every Gaussian limit:

    W_in[k]    = Z_k
    W_minus[k] = (K-1)^{-1/2} sum_{k' != k} Z_k'
    W_full     = K^{-1/2} sum_k Z_k

which is the joint law the finite-n fold score vectors converge to when folds
have equal size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import parallel
from .bootstrap import PivotSample
from .model import COVARIANCE_STRUCTURES, PenaltyGrid, covariance_matrix, paper_beta
from .solver import PenaltySpec, SolveOptions, path_values, solve_quadratic

UNIQUE_ATOL = 1e-10


@dataclass(frozen=True)
class LimitModel:
    L: np.ndarray
    S: np.ndarray
    beta: np.ndarray
    p0: int
    K: int

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.float64)
        S = np.asarray(self.S, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        p = beta.size
        for name, M in (("L", L), ("S", S)):
            if M.shape != (p, p):
                raise ValueError(f"{name} must be {p}x{p}")
            if not np.allclose(M, M.T, atol=1e-12, rtol=0):
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(M)[0] <= 1e-10:
                raise ValueError(f"{name} is not positive definite")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not 0 <= self.p0 <= p:
            raise ValueError("p0 out of range")
        if np.any(beta[: self.p0] == 0) or np.any(beta[self.p0 :] != 0):
            raise ValueError("beta must be nonzero exactly on the leading p0 coordinates")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "beta", beta)

    @property
    def p(self) -> int:
        return self.beta.size

    @property
    def signs(self) -> np.ndarray:
        return np.sign(self.beta)

    @property
    def extreme_eigenvalues(self) -> tuple[float, float]:
        w = np.linalg.eigvalsh(self.L)
        return float(w[0]), float(w[-1])

    def penalty_units(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-unit-penalty (thresholds, slopes) of the mixed penalty."""
        t = np.where(np.arange(self.p) < self.p0, 0.0, 1.0)
        s = np.where(np.arange(self.p) < self.p0, self.signs, 0.0)
        return t, s

    def sqrt_S(self) -> np.ndarray:
        w, V = np.linalg.eigh(self.S)
        return (V * np.sqrt(w)) @ V.T

    @classmethod
    def from_structure(
        cls, structure: str = "ar03", p: int = 7, p0: int = 4, K: int = 10, beta: np.ndarray | None = None
    ) -> "LimitModel":
        """L = S = the named covariance structure; beta defaults to the alternating-sign one."""
        S = covariance_matrix(structure, p)
        return cls(S, S.copy(), paper_beta(p, p0) if beta is None else beta, p0, K)


@dataclass(frozen=True)
class FoldGaussians:
    Z: np.ndarray
    W_minus: np.ndarray
    W_in: np.ndarray
    W_full: np.ndarray

    @classmethod
    def from_blocks(cls, Z: np.ndarray) -> "FoldGaussians":
        Z = np.asarray(Z, dtype=np.float64)
        K = Z.shape[0]
        # sum the other blocks directly rather than subtracting from the total,
        # so that e.g. K = 2 swaps rows exactly
        others = np.stack([np.delete(Z, k, axis=0).sum(axis=0) for k in range(K)])
        return cls(Z, others / math.sqrt(K - 1), Z.copy(), Z.sum(axis=0) / math.sqrt(K))

    @property
    def K(self) -> int:
        return self.Z.shape[0]


def _rng(seed: Any) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_fold_gaussians(model: LimitModel, seed: Any = None) -> FoldGaussians:
    root = model.sqrt_S()
    Z = _rng(seed).standard_normal((model.K, model.p)) @ root
    return FoldGaussians.from_blocks(Z)


def default_cross_weight(K: int) -> float:
    """Weight on u'W_in that makes the limit objective the rescaled finite-n CV error.

    H(sqrt(n-m) lam) - 1/2 sum eps_i^2 = (K-1)^{-1} sum_k [1/2 u'L_k u - sqrt(K-1) u'W_k] + o(1).
    """
    return math.sqrt(K - 1)


def solve_limit_argmin(model: LimitModel, w: np.ndarray, lam: float, tol: float = 1e-10) -> np.ndarray:
    """argmin_u 1/2 u'Lu - u'w + lam * (sum_{j<p0} sgn(beta_j) u_j + sum_{j>=p0} |u_j|)."""
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    pen = PenaltySpec.mixed(lam, model.signs, model.p0)
    return np.array(solve_quadratic(model.L, w, pen, SolveOptions(tol=tol)).beta_hat)


def limit_cv_objective(model: LimitModel, g: FoldGaussians, lam: float, cross_weight: float | None = None) -> float:
    """sum_k [1/2 u_k'L u_k - c u_k'W_in[k]] with u_k = solve_limit_argmin(W_minus[k], lam)."""
    if lam <= 0:
        raise ValueError("penalty must be positive")
    if g.K != model.K:
        raise ValueError("fold count of the draw does not match the model")
    c = default_cross_weight(model.K) if cross_weight is None else cross_weight
    total = 0.0
    for k in range(model.K):
        u = solve_limit_argmin(model, g.W_minus[k], lam)
        total += 0.5 * u @ model.L @ u - c * u @ g.W_in[k]
    return float(total)


def limit_cv_curve(
    model: LimitModel, g: FoldGaussians, grid: PenaltyGrid, cross_weight: float | None = None, tol: float = 1e-10
) -> np.ndarray:
    """limit_cv_objective on every grid value (warm-started compiled path)."""
    c = default_cross_weight(model.K) if cross_weight is None else cross_weight
    K, p = model.K, model.p
    Ls = np.broadcast_to(model.L, (K, p, p))
    t_unit, s_unit = model.penalty_units()
    vals, _ = path_values(Ls, g.W_minus, t_unit, s_unit, Ls, c * g.W_in, np.zeros(K), grid.values[::-1].copy(), tol)
    return vals[::-1].copy()


@dataclass(frozen=True)
class LimitArgmin:
    lambda_star: float
    value: float
    unique: bool
    index: int


def limit_penalty_argmin(
    model: LimitModel, g: FoldGaussians, grid: PenaltyGrid | None = None, cross_weight: float | None = None
) -> LimitArgmin:
    grid = grid or PenaltyGrid.paper_remark()
    vals = limit_cv_curve(model, g, grid, cross_weight)
    idx = int(np.argmin(vals))
    ties = int(np.count_nonzero(vals <= vals[idx] + UNIQUE_ATOL))
    return LimitArgmin(float(grid.values[idx]), float(vals[idx]), ties == 1, idx)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class C4Row:
    structure: str
    rep: int
    lambda_star: float
    h_value: float
    unique: bool
    index: int


@dataclass(frozen=True)
class C4Report:
    rows: tuple[C4Row, ...]
    grid: PenaltyGrid

    def structures(self) -> list[str]:
        return list(dict.fromkeys(r.structure for r in self.rows))

    def uniqueness_fraction(self, structure: str) -> float:
        rs = [r for r in self.rows if r.structure == structure]
        return sum(r.unique for r in rs) / len(rs)

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        last = len(self.grid) - 1
        for s in self.structures():
            lam = np.array([r.lambda_star for r in self.rows if r.structure == s])
            idx = np.array([r.index for r in self.rows if r.structure == s])
            out[s] = {
                "reps": float(lam.size),
                "unique_fraction": self.uniqueness_fraction(s),
                "lambda_mean": float(lam.mean()),
                "lambda_median": float(np.median(lam)),
                "lambda_sd": float(lam.std(ddof=1)) if lam.size > 1 else 0.0,
                "lambda_min": float(lam.min()),
                "lambda_max": float(lam.max()),
                "boundary_fraction": float(np.mean((idx == 0) | (idx == last))),
            }
        return out


def c4_experiment(
    structures: Sequence[str] = COVARIANCE_STRUCTURES,
    reps: int = 100,
    seed: int | None = 0,
    p: int = 7,
    p0: int = 4,
    K: int = 10,
    grid: PenaltyGrid | None = None,
    cross_weight: float | None = None,
) -> C4Report:
    """Grid-argmin uniqueness of the limit CV objective over independent draws per structure."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    grid = grid or PenaltyGrid.paper_remark()
    rows = []
    for si, s in enumerate(structures):
        model = LimitModel.from_structure(s, p, p0, K)
        for r in range(reps):
            g = sample_fold_gaussians(model, parallel.rng(seed, si, r))
            res = limit_penalty_argmin(model, g, grid, cross_weight)
            rows.append(C4Row(s, r, res.lambda_star, res.value, res.unique, res.index))
    return C4Report(tuple(rows), grid)


def limit_pivot_draw(
    model: LimitModel,
    g: FoldGaussians,
    grid: PenaltyGrid,
    penalty_scale: float | None = None,
    cross_weight: float | None = None,
    lambda_override: float | None = None,
) -> tuple[np.ndarray, float]:
    """(argmin_u V(u, c * Lambda), Lambda) for one draw, Lambda minimising the same draw's curve.

    ``penalty_scale`` c defaults to sqrt((K-1)/K), the ratio between the fold-level
    and full-sample root-n penalty scalings.
    """
    lam = limit_penalty_argmin(model, g, grid, cross_weight).lambda_star if lambda_override is None else lambda_override
    c = math.sqrt((model.K - 1) / model.K) if penalty_scale is None else penalty_scale
    return solve_limit_argmin(model, g.W_full, c * lam), lam


def limit_pivot_sample(
    model: LimitModel,
    grid: PenaltyGrid | None = None,
    reps: int = 1000,
    seed: int | None = 0,
    penalty_scale: float | None = None,
    cross_weight: float | None = None,
    lambda_override: float | None = None,
    key: tuple[int, ...] = (),
) -> PivotSample:
    """Draws from the limit law of sqrt(n) (b(lam_cv) - beta); draw r uses stream (seed, *key, r)."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    grid = grid or PenaltyGrid.paper_remark()
    draws = np.empty((reps, model.p))
    lams = np.empty(reps)
    for r in range(reps):
        g = sample_fold_gaussians(model, parallel.rng(seed, *key, r))
        draws[r], lams[r] = limit_pivot_draw(model, g, grid, penalty_scale, cross_weight, lambda_override)
    return PivotSample(draws, np.zeros(model.p), lams)


def limit_lambda_sample(
    model: LimitModel, grid: PenaltyGrid, reps: int, seed: int | None = 0, cross_weight: float | None = None,
    key: tuple[int, ...] = (),
) -> np.ndarray:
    """Independent draws of the limit CV penalty."""
    return np.array([
        limit_penalty_argmin(model, sample_fold_gaussians(model, parallel.rng(seed, *key, r)), grid, cross_weight).lambda_star
        for r in range(reps)
    ])
