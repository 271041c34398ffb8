"""Cyclic coordinate descent for quadratic losses with absolute or signed-linear penalties.

Every problem is reduced to the Gram form

    f(b) = 1/2 b'Gb - c'b + sum_j t_j |b_j| + sum_j s_j b_j + const

where ``G = X'WX`` and ``c = X'Wy`` for a weighted least-squares loss, or ``G = L``
and ``c = w`` for the quadratic forms of the limiting objectives. Signed-linear
slopes ``s`` are folded into ``c`` before the coordinate updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numba import njit

from .model import LassoFit

CONVERGED = 0
MAX_SWEEPS = 1
UNBOUNDED = 2
NOT_MONOTONE = 3


class ConvergenceError(RuntimeError):
    """Raised when the solver stops without a KKT certificate; carries the last iterate."""

    def __init__(self, message: str, fit: LassoFit | None = None):
        super().__init__(message)
        self.fit = fit


@dataclass(frozen=True)
class Absolute:
    weight: float

    def __post_init__(self):
        if not self.weight >= 0:
            raise ValueError(f"absolute penalty weight must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class SignedLinear:
    slope: float

    def __post_init__(self):
        if not np.isfinite(self.slope):
            raise ValueError("signed-linear slope must be finite")


Penalty = Union[Absolute, SignedLinear]


@dataclass(frozen=True)
class PenaltySpec:
    per_coord: tuple[Penalty, ...]

    @classmethod
    def uniform(cls, p: int, lam: float) -> "PenaltySpec":
        return cls(tuple(Absolute(lam) for _ in range(p)))

    @classmethod
    def mixed(cls, lam: float, signs: Sequence[float], p0: int) -> "PenaltySpec":
        """lam * sgn(beta_j) * u_j on j < p0 and lam * |u_j| beyond."""
        p = len(signs)
        return cls(tuple(
            SignedLinear(lam * float(signs[j])) if j < p0 else Absolute(lam) for j in range(p)
        ))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(thresholds, slopes); signed-linear coordinates get threshold 0."""
        t = np.array([q.weight if isinstance(q, Absolute) else 0.0 for q in self.per_coord])
        s = np.array([q.slope if isinstance(q, SignedLinear) else 0.0 for q in self.per_coord])
        return t, s

    def __len__(self) -> int:
        return len(self.per_coord)


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_sweeps: int = 100_000
    obs_weights: np.ndarray | None = None
    check_monotone: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.obs_weights is not None:
            w = np.asarray(self.obs_weights, dtype=np.float64)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("observation weights must be finite and nonnegative")


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0)."""
    if gamma < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _gradient(G, c, beta, g):
    p = beta.shape[0]
    for i in range(p):
        acc = c[i]
        for j in range(p):
            acc -= G[i, j] * beta[j]
        g[i] = acc


@njit(cache=True)
def _kkt(g, t, beta):
    worst = 0.0
    for j in range(beta.shape[0]):
        if beta[j] == 0.0:
            v = abs(g[j]) - t[j]
        elif beta[j] > 0.0:
            v = abs(g[j] - t[j])
        else:
            v = abs(g[j] + t[j])
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _objective(G, c, t, beta):
    p = beta.shape[0]
    val = 0.0
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += G[i, j] * beta[j]
        val += 0.5 * beta[i] * acc - c[i] * beta[i] + t[i] * abs(beta[i])
    return val


@njit(cache=True)
def _cd(G, c, t, beta, g, tol, max_sweeps, check_monotone):
    """Minimise 1/2 b'Gb - c'b + sum t|b| in place; returns (status, sweeps, kkt).

    ``c`` already includes any signed-linear slopes. ``g`` is workspace.
    """
    p = beta.shape[0]
    for j in range(p):
        if G[j, j] <= 0.0:
            if abs(c[j]) > t[j]:
                return UNBOUNDED, 0, np.inf
            beta[j] = 0.0
    _gradient(G, c, beta, g)
    prev = _objective(G, c, t, beta) if check_monotone else 0.0
    kkt = np.inf
    for sweep in range(1, max_sweeps + 1):
        maxd = 0.0
        for j in range(p):
            d_jj = G[j, j]
            if d_jj <= 0.0:
                continue
            new = _soft(g[j] + d_jj * beta[j], t[j]) / d_jj
            d = new - beta[j]
            if d != 0.0:
                beta[j] = new
                for i in range(p):
                    g[i] -= d * G[i, j]
                ad = abs(d)
                if ad > maxd:
                    maxd = ad
        if check_monotone:
            cur = _objective(G, c, t, beta)
            if cur > prev + 1e-12 * (1.0 + abs(prev)):
                return NOT_MONOTONE, sweep, np.inf
            prev = cur
        if maxd <= tol:
            _gradient(G, c, beta, g)
            kkt = _kkt(g, t, beta)
            if kkt <= tol:
                return CONVERGED, sweep, kkt
    _gradient(G, c, beta, g)
    return MAX_SWEEPS, max_sweeps, _kkt(g, t, beta)


@njit(cache=True)
def _path_values(G_train, c_train, t_unit, s_unit, Q_val, r_val, k_val, lams, tol, max_sweeps, out):
    """Validation objective summed over K subproblems along a descending penalty path.

    Subproblem k at penalty lam minimises 1/2 b'G_k b - c_k'b + lam*sum(t_unit|b|)
    + lam*s_unit'b (warm started from the previous penalty); its minimiser b_k
    contributes 1/2 b_k'Q_k b_k - r_k'b_k + k_val[k] to ``out``.
    Returns (status, worst kkt).
    """
    K, p = c_train.shape
    beta = np.zeros((K, p))
    g = np.empty(p)
    t = np.empty(p)
    c = np.empty(p)
    worst = 0.0
    for i in range(lams.shape[0]):
        lam = lams[i]
        for j in range(p):
            t[j] = lam * t_unit[j]
        total = 0.0
        for k in range(K):
            for j in range(p):
                c[j] = c_train[k, j] - lam * s_unit[j]
            b = beta[k]
            status, _, kkt = _cd(G_train[k], c, t, b, g, tol, max_sweeps, False)
            if status != CONVERGED:
                return status, kkt
            if kkt > worst:
                worst = kkt
            val = k_val[k]
            for a in range(p):
                acc = 0.0
                for e in range(p):
                    acc += Q_val[k, a, e] * b[e]
                val += 0.5 * b[a] * acc - r_val[k, a] * b[a]
            total += val
        out[i] = total
    return CONVERGED, worst


# ---------------------------------------------------------------------------
# Python surface
# ---------------------------------------------------------------------------


def _status_message(status: int) -> str:
    return {
        MAX_SWEEPS: "no KKT certificate within max_sweeps",
        UNBOUNDED: "objective unbounded below (zero-norm column with insufficient penalty)",
        NOT_MONOTONE: "objective increased during a sweep",
    }.get(status, f"solver status {status}")


def solve_quadratic(
    G: np.ndarray,
    c: np.ndarray,
    penalty: PenaltySpec,
    opts: SolveOptions | None = None,
    *,
    const: float = 0.0,
    beta0: np.ndarray | None = None,
    lam: float | None = None,
) -> LassoFit:
    """Minimise ``1/2 b'Gb - c'b + penalty(b) + const`` by coordinate descent."""
    opts = opts or SolveOptions()
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64).reshape(-1)
    p = c.shape[0]
    if G.shape != (p, p) or len(penalty) != p:
        raise ValueError(f"dimension mismatch: G {G.shape}, c ({p},), penalty ({len(penalty)},)")
    t, s = penalty.arrays()
    c_eff = c - s
    for j in range(p):
        if G[j, j] <= 0.0 and (t[j] == 0.0):
            raise ValueError(f"coordinate {j} has zero norm and no absolute penalty")
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=np.float64)
    g = np.empty(p)
    status, sweeps, kkt = _cd(G, c_eff, t, beta, g, opts.tol, opts.max_sweeps, opts.check_monotone)
    obj = float(_objective(G, c_eff, t, beta)) + const if np.isfinite(kkt) else np.inf
    lam_rec = float(lam) if lam is not None else float(t.max(initial=0.0))
    fit = LassoFit(beta, lam_rec, obj, float(kkt), int(sweeps), status == CONVERGED)
    if status != CONVERGED:
        raise ConvergenceError(f"{_status_message(status)} (kkt={kkt:.3g})", fit)
    return fit


def gram(X: np.ndarray, y: np.ndarray, obs_weights: np.ndarray | None = None):
    """(X'WX, X'Wy, 1/2 y'Wy) with W = diag(obs_weights) or the identity."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    if obs_weights is None:
        return X.T @ X, X.T @ y, 0.5 * float(y @ y)
    w = np.asarray(obs_weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != X.shape[0]:
        raise ValueError("observation weights have the wrong length")
    Xw = X * w[:, None]
    return Xw.T @ X, Xw.T @ y, 0.5 * float(w @ (y * y))


def solve_penalized_ls(
    X: np.ndarray,
    y: np.ndarray,
    penalty: PenaltySpec | float,
    opts: SolveOptions | None = None,
    beta0: np.ndarray | None = None,
) -> LassoFit:
    """Minimise ``1/2 sum_i w_i (y_i - x_i'b)^2 + sum_j pen_j(b_j)``.

    A float ``penalty`` means the uniform absolute penalty ``lam * sum |b_j|``.
    The returned fit's ``kkt_residual`` is at most ``opts.tol``; otherwise a
    :class:`ConvergenceError` carrying the last iterate is raised.
    """
    opts = opts or SolveOptions()
    G, c, const = gram(X, y, opts.obs_weights)
    p = G.shape[0]
    lam = None
    if not isinstance(penalty, PenaltySpec):
        lam = float(penalty)
        penalty = PenaltySpec.uniform(p, lam)
    if opts.obs_weights is not None and np.count_nonzero(np.asarray(opts.obs_weights) > 0) < p:
        raise ValueError("need at least p strictly positive observation weights")
    return solve_quadratic(G, c, penalty, opts, const=const, beta0=beta0, lam=lam)


def lasso(X: np.ndarray, y: np.ndarray, lam: float, tol: float = 1e-8) -> LassoFit:
    """Plain Lasso at absolute penalty ``lam``."""
    return solve_penalized_ls(X, y, lam, SolveOptions(tol=tol))


def lambda_max(X: np.ndarray, y: np.ndarray, obs_weights: np.ndarray | None = None) -> float:
    """Smallest uniform penalty at which the zero vector is optimal: max_j |x_j'Wy|."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("dimension mismatch")
    wy = y if obs_weights is None else np.asarray(obs_weights, dtype=np.float64) * y
    return float(np.max(np.abs(X.T @ wy), initial=0.0))


def path_values(
    G_train: np.ndarray,
    c_train: np.ndarray,
    t_unit: np.ndarray,
    s_unit: np.ndarray,
    Q_val: np.ndarray,
    r_val: np.ndarray,
    k_val: np.ndarray,
    lams_desc: np.ndarray,
    tol: float = 1e-8,
    max_sweeps: int = 100_000,
) -> tuple[np.ndarray, float]:
    """Thin wrapper over the compiled warm-started path kernel; raises on failure."""
    out = np.empty(lams_desc.shape[0])
    status, worst = _path_values(
        np.ascontiguousarray(G_train, dtype=np.float64),
        np.ascontiguousarray(c_train, dtype=np.float64),
        np.ascontiguousarray(t_unit, dtype=np.float64),
        np.ascontiguousarray(s_unit, dtype=np.float64),
        np.ascontiguousarray(Q_val, dtype=np.float64),
        np.ascontiguousarray(r_val, dtype=np.float64),
        np.ascontiguousarray(k_val, dtype=np.float64),
        np.ascontiguousarray(lams_desc, dtype=np.float64),
        tol, max_sweeps, out,
    )
    if status != CONVERGED:
        raise ConvergenceError(f"path solve failed: {_status_message(status)} (kkt={worst:.3g})")
    return out, worst
