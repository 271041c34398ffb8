"""Shared data model: datasets, true models, fold partitions, fits and penalty grids."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

RANK_RTOL = 1e-10
MAX_DESIGN_ATTEMPTS = 5


class ConfigError(ValueError):
    """Invalid experiment configuration or input file."""


def _frozen(a: Any, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def column_rank(X: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Numerical rank from singular values relative to the largest one."""
    s = np.linalg.svd(X, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


# ---------------------------------------------------------------------------
# Covariance structures
# ---------------------------------------------------------------------------

COVARIANCE_STRUCTURES = ("ar03", "banded", "cs045", "identity")


def covariance_matrix(structure: str, p: int, rho: float | None = None) -> np.ndarray:
    """Build one of the named p x p covariance structures.

    ``ar03``     entries rho^|j-k| (rho defaults to 0.3)
    ``banded``   1 on the diagonal, 0.5 on the first and 0.2 on the second off-diagonal
    ``cs045``    compound symmetry, 1 on the diagonal and rho (default 0.45) elsewhere
    ``identity`` the identity
    """
    idx = np.arange(p)
    lag = np.abs(idx[:, None] - idx[None, :])
    key = structure.lower().replace("-", "").replace("_", "")
    if key in ("ar03", "ar"):
        r = 0.3 if rho is None else rho
        S = np.where(lag == 0, 1.0, r ** lag.astype(float))
    elif key == "banded":
        S = (lag == 0) + 0.5 * (lag == 1) + 0.2 * (lag == 2)
    elif key in ("cs045", "cs"):
        r = 0.45 if rho is None else rho
        S = np.where(lag == 0, 1.0, r)
    elif key in ("identity", "iid", "eye"):
        S = np.eye(p)
    else:
        raise ConfigError(f"unknown covariance structure: {structure!r}")
    return np.asarray(S, dtype=np.float64)


def check_positive_definite(S: np.ndarray, name: str = "covariance", floor: float = 0.0) -> None:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be square, got shape {S.shape}")
    if not np.allclose(S, S.T, atol=1e-12, rtol=0.0):
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(S)[0] <= floor:
        raise ValueError(f"{name} is not positive definite")


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Fixed design ``X`` (n x p, full column rank) and response ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y).reshape(-1)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D array")
        n, p = X.shape
        if y.shape[0] != n:
            raise ValueError(f"y has length {y.shape[0]}, expected {n}")
        if p < 1 or n <= p:
            raise ValueError(f"need n > p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite values in data")
        if column_rank(X) < p:
            raise ValueError("design matrix is rank deficient")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.X, y)


@dataclass(frozen=True)
class ErrorLaw:
    """Per-observation error distribution.

    kind is one of ``normal`` (iid N(0, scale^2)), ``zero`` (point mass at 0) or
    ``hetero`` (normal with sd scale * (1 + |x_i1|) / sqrt(2)).
    """

    kind: str = "normal"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "zero", "hetero"):
            raise ConfigError(f"unknown error law: {self.kind!r}")
        if self.scale < 0:
            raise ConfigError("error scale must be nonnegative")

    def sample(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        n = X.shape[0]
        if self.kind == "zero":
            return np.zeros(n)
        eps = rng.standard_normal(n) * self.scale
        if self.kind == "hetero":
            eps *= (1.0 + np.abs(X[:, 0])) / math.sqrt(2.0)
        return eps

    def second_moments(self, X: np.ndarray) -> np.ndarray:
        """E(eps_i^2) for each row of ``X``."""
        n = X.shape[0]
        if self.kind == "zero":
            return np.zeros(n)
        if self.kind == "normal":
            return np.full(n, self.scale**2)
        return self.scale**2 * (1.0 + np.abs(X[:, 0])) ** 2 / 2.0

    @classmethod
    def parse(cls, text: str) -> "ErrorLaw":
        # "normal", "normal:2.0", "zero", "hetero:1.5"
        kind, _, scale = text.strip().partition(":")
        return cls(kind.strip().lower(), float(scale) if scale else 1.0)


def paper_beta(p: int, p0: int) -> np.ndarray:
    """beta_j = 0.5 (-1)^j j for j <= p0 and 0 beyond."""
    j = np.arange(1, p + 1)
    return np.where(j <= p0, 0.5 * (-1.0) ** j * j, 0.0)


@dataclass(frozen=True)
class TrueModel:
    """Regression parameter with active set {1..p0}, covariate law and error law."""

    beta: np.ndarray
    p0: int
    sigma_struct: str = "ar03"
    error_dist: ErrorLaw = field(default_factory=ErrorLaw)

    def __post_init__(self):
        beta = _frozen(self.beta).reshape(-1)
        p = beta.shape[0]
        if not 0 <= self.p0 <= p:
            raise ConfigError(f"p0={self.p0} outside [0, {p}]")
        if np.any(beta[: self.p0] == 0.0) or np.any(beta[self.p0 :] != 0.0):
            raise ConfigError("beta must be nonzero exactly on the leading p0 coordinates")
        object.__setattr__(self, "beta", beta)

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(range(self.p0))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_matrix(self.sigma_struct, self.p)

    @classmethod
    def paper_default(cls, p: int = 7, p0: int = 4, error: ErrorLaw | None = None) -> "TrueModel":
        """The simulation model: AR(0.3) covariates, alternating-sign beta, N(0,1) errors."""
        return cls(paper_beta(p, p0), p0, "ar03", error or ErrorLaw())


@dataclass(frozen=True)
class FoldPartition:
    """K disjoint index sets covering {0..n-1}; first K-1 folds share size m."""

    folds: tuple[np.ndarray, ...]
    K: int
    m: int

    def __post_init__(self):
        folds = tuple(_frozen(f, dtype=np.intp) for f in self.folds)
        if len(folds) != self.K:
            raise ValueError("number of folds does not match K")
        object.__setattr__(self, "folds", folds)

    @property
    def n(self) -> int:
        return int(sum(f.size for f in self.folds))

    @property
    def labels(self) -> np.ndarray:
        """Fold label of every observation."""
        lab = np.empty(self.n, dtype=np.intp)
        for k, f in enumerate(self.folds):
            lab[f] = k
        return lab

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels != k)

    def sizes(self) -> list[int]:
        return [int(f.size) for f in self.folds]


def partition_folds(n: int, K: int, seed: Any = None) -> FoldPartition:
    """Random partition of {0..n-1} into K folds; the last fold takes the remainder."""
    if K < 2 or K > n:
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    m = n // K
    folds = [np.sort(perm[k * m : (k + 1) * m]) for k in range(K - 1)]
    folds.append(np.sort(perm[(K - 1) * m :]))
    return FoldPartition(tuple(folds), K, m)


@dataclass(frozen=True)
class LassoFit:
    """Solution of a penalized least-squares problem with its optimality certificate."""

    beta_hat: np.ndarray
    lam: float
    objective: float
    kkt_residual: float
    sweeps: int = 0
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "beta_hat", _frozen(self.beta_hat))

    @property
    def active_set(self) -> frozenset[int]:
        return frozenset(int(j) for j in np.flatnonzero(np.abs(self.beta_hat) > 0))


@dataclass(frozen=True)
class PenaltyGrid:
    """Strictly increasing, positive candidate penalties."""

    values: np.ndarray
    construction: str = "explicit"

    def __post_init__(self):
        v = _frozen(self.values).reshape(-1)
        if v.size == 0:
            raise ValueError("penalty grid is empty")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("penalty grid values must be positive and finite")
        if np.any(np.diff(v) <= 0):
            raise ValueError("penalty grid must be strictly increasing")
        if self.construction not in ("explicit", "log_spaced", "paper_remark"):
            raise ValueError(f"unknown grid construction {self.construction!r}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "PenaltyGrid":
        return cls(np.asarray(values, dtype=np.float64), "explicit")

    @classmethod
    def log_spaced(cls, lo: float, hi: float, count: int) -> "PenaltyGrid":
        if not 0 < lo < hi or count < 2:
            raise ValueError("log grid needs 0 < lo < hi and count >= 2")
        return cls(np.logspace(math.log10(lo), math.log10(hi), count), "log_spaced")

    @classmethod
    def paper_remark(cls) -> "PenaltyGrid":
        """The 100 values 10^x with x_i = 0.5 - (i-1)*0.6/99."""
        i = np.arange(1, 101)
        x = 0.5 - (i - 1) * 0.6 / 99
        return cls(np.sort(10.0**x), "paper_remark")

    def scaled(self, factor: float) -> "PenaltyGrid":
        return PenaltyGrid(self.values * factor, self.construction)


@dataclass(frozen=True)
class GridSpec:
    """Unresolved grid description.

    ``auto`` grids are anchored to a data-dependent maximal penalty: ``count``
    log-spaced values on [ratio * lam_max, lam_max].
    """

    kind: str = "auto"
    values: tuple[float, ...] = ()
    lo: float = 0.0
    hi: float = 0.0
    count: int = 100
    ratio: float = 1e-4

    def resolve(self, lam_max: float | None = None) -> PenaltyGrid:
        if self.kind == "explicit":
            return PenaltyGrid.explicit(sorted(self.values))
        if self.kind == "log":
            return PenaltyGrid.log_spaced(self.lo, self.hi, self.count)
        if self.kind == "paper_remark":
            return PenaltyGrid.paper_remark()
        if lam_max is None:
            raise ValueError("auto grid needs lam_max")
        if lam_max <= 0:
            # zero response: every penalty gives the zero fit
            lam_max = 1.0
        return PenaltyGrid.log_spaced(self.ratio * lam_max, lam_max, self.count)

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``1,2,3`` | ``log:lo:hi:count`` | ``paper-remark`` | ``auto[:count[:ratio]]``."""
        t = text.strip().lower()
        try:
            if t in ("paper-remark", "paper_remark", "paper"):
                return cls("paper_remark")
            if t.startswith("auto"):
                parts = t.split(":")[1:]
                count = int(parts[0]) if parts else 100
                ratio = float(parts[1]) if len(parts) > 1 else 1e-4
                return cls("auto", count=count, ratio=ratio)
            if t.startswith("log:"):
                _, lo, hi, count = t.split(":")
                return cls("log", lo=float(lo), hi=float(hi), count=int(count))
            return cls("explicit", values=tuple(float(v) for v in t.split(",") if v.strip()))
        except ValueError as exc:
            raise ConfigError(f"bad grid spec {text!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Data generation and I/O
# ---------------------------------------------------------------------------


def _rng(seed: Any) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_design(model: TrueModel, n: int, seed: Any = None) -> np.ndarray:
    """Draw n iid N(0, Sigma) covariate rows; redraw if the result is rank deficient."""
    if n <= model.p:
        raise ValueError(f"need n > p, got n={n}, p={model.p}")
    S = model.covariance
    check_positive_definite(S)
    C = np.linalg.cholesky(S)
    rng = _rng(seed)
    for _ in range(MAX_DESIGN_ATTEMPTS):
        X = rng.standard_normal((n, model.p)) @ C.T
        if column_rank(X) == model.p:
            return X
    raise RuntimeError(f"rank-deficient design after {MAX_DESIGN_ATTEMPTS} attempts")


def generate_response(model: TrueModel, X: np.ndarray, seed: Any = None) -> np.ndarray:
    return X @ model.beta + model.error_dist.sample(X, _rng(seed))


def generate_dataset(model: TrueModel, n: int, seed: Any = None) -> Dataset:
    """Design and response from independent child streams of ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    design_ss, error_ss = ss.spawn(2)
    X = generate_design(model, n, np.random.default_rng(design_ss))
    y = generate_response(model, X, np.random.default_rng(error_ss))
    return Dataset(X, y)


def load_csv(path: str | Path) -> Dataset:
    """Read a dataset with header ``y,x1,...,xp``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        if not header or header[0] != "y" or len(header) < 2:
            raise ConfigError(f"{path}: header must start with 'y' followed by x1..xp")
        expected = [f"x{j}" for j in range(1, len(header))]
        if header[1:] != expected:
            raise ConfigError(f"{path}: covariate columns must be named {','.join(expected)}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged rows")
    try:
        return Dataset(data[:, 1:], data[:, 0])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_csv(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j}" for j in range(1, data.p + 1)])
        for yi, xi in zip(data.y, data.X):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


CONFIG_KEYS = {
    "n", "n_list", "p", "p0", "k", "seed", "grid", "error", "reps", "b", "alpha",
    "threshold_exponent", "weight_law", "structure", "sample_sizes", "fixed_folds",
}


def read_config(path: str | Path) -> dict[str, str]:
    """Read a ``key = value`` file (``#`` comments) into a lower-cased dict."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = {k.lower(): v.strip() for k, v in cp["config"].items()}
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return cfg


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc
