import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from cvlasso.solver import (
    Absolute,
    ConvergenceError,
    PenaltySpec,
    SignedLinear,
    SolveOptions,
    lambda_max,
    lasso,
    soft_threshold,
    solve_penalized_ls,
    solve_quadratic,
)

from conftest import grid_oracle, lasso_objective, resolution_bound


@pytest.mark.parametrize("z,g,out", [(5, 2, 3), (-5, 2, -3), (1, 2, 0), (2, 2, 0), (0.5, 0, 0.5)])
def test_soft_threshold(z, g, out):
    assert soft_threshold(z, g) == out


def test_zero_penalty_is_least_squares():
    fit = solve_penalized_ls(np.eye(2), np.array([1.0, -2.0]), PenaltySpec([Absolute(0), Absolute(0)]))
    np.testing.assert_allclose(fit.beta_hat, [1, -2], atol=1e-12)


def test_orthogonal_design_against_root_bracketing():
    # columns orthogonal with x_j'x_j = 4; x_1'y = 6
    X = 2.0 * np.eye(4)[:, :2]
    y = np.array([3.0, 1.0, 0.0, 0.0])
    fit = lasso(X, y, 2.0, tol=1e-12)
    # stationarity of the 1-D problem on b > 0: 4b - 6 + 2 = 0
    root = brentq(lambda b: 4 * b - 6 + 2, 1e-9, 10)
    assert fit.beta_hat[0] == pytest.approx(root, abs=1e-10)
    assert fit.beta_hat[0] == pytest.approx(soft_threshold(6, 2) / 4)
    assert fit.beta_hat[1] == 0.0  # x_2'y = 2 <= lam


def test_penalty_above_lambda_max_gives_zero(small_data):
    lm = lambda_max(small_data.X, small_data.y)
    assert np.all(lasso(small_data.X, small_data.y, lm).beta_hat == 0)
    assert np.all(lasso(small_data.X, small_data.y, 2 * lm).beta_hat == 0)
    assert np.any(lasso(small_data.X, small_data.y, 0.99 * lm).beta_hat != 0)


def test_lambda_max_examples():
    assert lambda_max(np.eye(2), np.array([3.0, -4.0])) == 4.0
    assert lambda_max(np.ones((3, 2)) + np.eye(3)[:, :2], np.zeros(3)) == 0.0


def test_lambda_max_random_instance_zero_fit():
    rng = np.random.default_rng(5)
    X, y = rng.standard_normal((10, 3)), rng.standard_normal(10)
    lm = lambda_max(X, y)
    for lam in (lm, 1.01 * lm):
        np.testing.assert_array_equal(lasso(X, y, lam).beta_hat, 0.0)


def test_weighted_lambda_max():
    rng = np.random.default_rng(2)
    X, y, w = rng.standard_normal((12, 3)), rng.standard_normal(12), rng.exponential(size=12)
    lm = lambda_max(X, y, w)
    fit = solve_penalized_ls(X, y, lm, SolveOptions(obs_weights=w))
    np.testing.assert_array_equal(fit.beta_hat, 0.0)


def test_signed_linear_closed_form():
    # 1/2 b'Lb - w'b + lam s'b with every coordinate linear: b = L^{-1}(w - lam s)
    L = np.array([[2.0, 0.3], [0.3, 1.0]])
    w = np.array([1.0, -0.5])
    s = np.array([1.0, -1.0])
    pen = PenaltySpec([SignedLinear(0.4 * s[0]), SignedLinear(0.4 * s[1])])
    fit = solve_quadratic(L, w, pen, SolveOptions(tol=1e-12))
    np.testing.assert_allclose(fit.beta_hat, np.linalg.solve(L, w - 0.4 * s), atol=1e-10)


def test_kkt_certificate(small_data):
    for lam in (0.5, 5.0, 50.0):
        fit = lasso(small_data.X, small_data.y, lam)
        g = small_data.X.T @ (small_data.X @ fit.beta_hat - small_data.y)
        on = fit.beta_hat != 0
        assert np.all(np.abs(g[on] + lam * np.sign(fit.beta_hat[on])) <= 1e-8 * 10)
        assert np.all(np.abs(g[~on]) <= lam + 1e-8)
        assert fit.kkt_residual <= 1e-8
        assert fit.converged


def test_objective_monotone_flag(small_data):
    fit = solve_penalized_ls(small_data.X, small_data.y, 3.0, SolveOptions(check_monotone=True))
    assert fit.converged


def test_max_sweeps_raises_with_iterate(small_data):
    with pytest.raises(ConvergenceError) as info:
        solve_penalized_ls(small_data.X, small_data.y, 0.1, SolveOptions(tol=1e-14, max_sweeps=1))
    assert info.value.fit is not None and not info.value.fit.converged


def test_unpenalized_zero_column_rejected():
    G = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        solve_quadratic(G, np.array([1.0, 1.0]), PenaltySpec([Absolute(0.1), SignedLinear(0.5)]))


@given(seed=st.integers(0, 10**6), lam=st.floats(0.01, 20.0), k=st.integers(-3, 3))
@settings(max_examples=40, deadline=None)
def test_scaling_equivariance(seed, lam, k):
    rng = np.random.default_rng(seed)
    X, y = rng.standard_normal((15, 4)), rng.standard_normal(15)
    c = 2.0**k  # exact in floating point; with the tolerance scaled too the sweep paths coincide
    a = solve_penalized_ls(X, y, lam, SolveOptions(tol=1e-8)).beta_hat
    b = solve_penalized_ls(X, c * y, c * lam, SolveOptions(tol=c * 1e-8)).beta_hat
    np.testing.assert_allclose(b, c * a, rtol=0, atol=1e-12 * max(1.0, c))


def test_scaling_equivariance_general_factor(small_data):
    c = 3.7
    opts = SolveOptions(tol=1e-13)
    a = solve_penalized_ls(small_data.X, small_data.y, 4.0, opts).beta_hat
    b = solve_penalized_ls(small_data.X, c * small_data.y, c * 4.0, opts).beta_hat
    np.testing.assert_allclose(b, c * a, rtol=0, atol=1e-12 * c * 10)


def test_matches_grid_oracle_small_instances():
    rng = np.random.default_rng(42)
    for _ in range(10):
        p = int(rng.integers(1, 4))
        n = int(rng.integers(p + 1, 9))
        X = rng.standard_normal((n, p))
        y = X @ rng.uniform(-2, 2, p) + 0.5 * rng.standard_normal(n)
        lam = float(rng.uniform(0.05, 3.0))
        fit = lasso(X, y, lam)
        if np.max(np.abs(fit.beta_hat)) > 4.9:
            continue
        _, f_grid = grid_oracle(X, y, lam)
        f_cd = float(lasso_objective(X, y, lam, fit.beta_hat[None, :])[0])
        assert f_cd <= f_grid + 1e-9
        assert f_grid - f_cd <= resolution_bound(X, lam, 1e-3)


def _path_max_step(X, y, lo, hi, delta):
    lams = np.arange(lo, hi + delta / 2, delta)
    path = np.array([lasso(X, y, l, tol=1e-12).beta_hat for l in lams])
    return np.max(np.linalg.norm(np.diff(path, axis=0), axis=1))


def test_path_continuity_halving(small_data):
    X, y = small_data.X, small_data.y
    lm = lambda_max(X, y)
    lo, hi = 0.05 * lm, 0.8 * lm
    delta = (hi - lo) / 40
    steps = [_path_max_step(X, y, lo, hi, delta / 2**h) for h in range(4)]
    for a, b in zip(steps, steps[1:]):
        assert b <= 4 * a / 2
    assert steps[-1] <= steps[0] / 4
