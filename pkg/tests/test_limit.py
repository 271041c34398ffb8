import math

import numpy as np
import pytest

from cvlasso import parallel
from cvlasso.limit import (
    FoldGaussians,
    LimitModel,
    c4_experiment,
    default_cross_weight,
    limit_cv_curve,
    limit_cv_objective,
    limit_penalty_argmin,
    limit_pivot_draw,
    limit_pivot_sample,
    sample_fold_gaussians,
    solve_limit_argmin,
)
from cvlasso.model import PenaltyGrid, covariance_matrix, paper_beta
from cvlasso.solver import soft_threshold


def _scalar(p0, K=2):
    return LimitModel(np.eye(1), np.eye(1), np.array([1.0]) if p0 else np.zeros(1), p0, K)


# --- model validation -------------------------------------------------------------

def test_rejects_single_fold():
    with pytest.raises(ValueError):
        LimitModel(np.eye(2), np.eye(2), np.zeros(2), 0, 1)


def test_rejects_singular_matrices():
    with pytest.raises(ValueError):
        LimitModel(np.eye(2), np.diag([1.0, 0.0]), np.zeros(2), 0, 3)


def test_rejects_beta_support_mismatch():
    with pytest.raises(ValueError):
        LimitModel(np.eye(2), np.eye(2), np.array([0.0, 1.0]), 1, 3)


# --- fold gaussians ---------------------------------------------------------------

def test_two_fold_swap():
    m = LimitModel.from_structure("ar03", 3, 1, 2, beta=np.array([1.0, 0, 0]))
    g = sample_fold_gaussians(m, 4)
    np.testing.assert_array_equal(g.W_minus[0], g.Z[1])
    np.testing.assert_array_equal(g.W_minus[1], g.Z[0])


def test_construction_identities_hold_per_draw():
    m = LimitModel.from_structure("banded", 7, 4, 10)
    for r in range(20):
        g = sample_fold_gaussians(m, r)
        K = g.K
        np.testing.assert_array_equal(g.W_in, g.Z)
        for k in range(K):
            expect = np.delete(g.Z, k, axis=0).sum(0) / math.sqrt(K - 1)
            np.testing.assert_allclose(g.W_minus[k], expect, atol=1e-12, rtol=0)
        np.testing.assert_allclose(g.W_full, g.Z.sum(0) / math.sqrt(K), atol=1e-12, rtol=0)


def test_unit_variance_scalar_case():
    m = LimitModel(np.eye(1), np.eye(1), np.zeros(1), 0, 3)
    rng = np.random.default_rng(0)
    N = 100_000
    w = np.array([sample_fold_gaussians(m, rng).W_in[0, 0] for _ in range(N)])
    se = math.sqrt(2.0 / N)  # SE of a sample variance of unit normals
    assert abs(w.var() - 1.0) <= 3 * se


def test_fold_gaussian_covariances():
    S = covariance_matrix("ar03", 3)
    m = LimitModel(S, S, np.zeros(3), 0, 10)
    rng = np.random.default_rng(1)
    N = 100_000
    Wm0, Wm1, Wf = np.empty((N, 3)), np.empty((N, 3)), np.empty((N, 3))
    for i in range(N):
        g = sample_fold_gaussians(m, rng)
        Wm0[i], Wm1[i], Wf[i] = g.W_minus[0], g.W_minus[1], g.W_full
    cross = (Wm0 - Wm0.mean(0)).T @ (Wm1 - Wm1.mean(0)) / N
    assert np.max(np.abs(cross - (8 / 9) * S)) < 0.03
    assert np.max(np.abs(np.cov(Wm0.T) - S)) < 0.03
    assert np.max(np.abs(np.cov(Wf.T) - S)) < 0.03


# --- limit argmin -----------------------------------------------------------------

def test_zero_penalty_argmin_is_linear_solve():
    m = LimitModel.from_structure("cs045", 5, 2, 4, beta=np.array([1.0, -2.0, 0, 0, 0]))
    w = np.array([0.3, -1.0, 2.0, 0.1, -0.4])
    np.testing.assert_allclose(solve_limit_argmin(m, w, 0.0), np.linalg.solve(m.L, w), atol=1e-9)


@pytest.mark.parametrize("w,lam", [(1.5, 0.4), (-0.2, 2.0), (0.0, 1.0)])
def test_scalar_closed_forms(w, lam):
    assert solve_limit_argmin(_scalar(1), np.array([w]), lam)[0] == pytest.approx(w - lam, abs=1e-9)
    assert solve_limit_argmin(_scalar(0), np.array([w]), lam)[0] == pytest.approx(soft_threshold(w, lam), abs=1e-9)


def test_argmin_continuous_in_penalty():
    m = LimitModel.from_structure("ar03", 7, 4, 10)
    w = sample_fold_gaussians(m, 3).W_full

    def max_step(delta):
        lams = np.arange(0.0, 3.0 + delta / 2, delta)
        path = np.array([solve_limit_argmin(m, w, l, tol=1e-12) for l in lams])
        return np.max(np.linalg.norm(np.diff(path, axis=0), axis=1))

    steps = [max_step(0.1 / 2**h) for h in range(4)]
    for a, b in zip(steps, steps[1:]):
        assert b <= 4 * a / 2
    assert steps[-1] <= steps[0] / 4


# --- limit CV objective --------------------------------------------------------------

def test_curve_matches_pointwise_objective():
    m = LimitModel.from_structure("ar03", 7, 4, 10)
    g = sample_fold_gaussians(m, 2)
    grid = PenaltyGrid.paper_remark()
    curve = limit_cv_curve(m, g, grid)
    for i in (0, 50, 99):
        assert curve[i] == pytest.approx(limit_cv_objective(m, g, grid.values[i]), abs=1e-8)
    lit = limit_cv_curve(m, g, grid, cross_weight=1.0)
    assert lit[10] == pytest.approx(limit_cv_objective(m, g, grid.values[10], cross_weight=1.0), abs=1e-8)


def test_saturation_beyond_zero_fit_threshold():
    # with no signed-linear coordinates the fold solutions are all zero once
    # lam >= max_k ||W_minus[k]||_inf, after which the objective is flat
    S = covariance_matrix("ar03", 5)
    m = LimitModel(S, S, np.zeros(5), 0, 5)
    g = sample_fold_gaussians(m, 7)
    gamma0 = m.extreme_eigenvalues[0]
    big = 10 * np.max(np.abs(g.W_minus)) / gamma0
    a, b = limit_cv_objective(m, g, big), limit_cv_objective(m, g, 3 * big)
    assert a == b == 0.0


def test_signed_coordinates_keep_objective_moving():
    # the linear-penalty coordinates never saturate: their solution is affine in lam
    m = LimitModel.from_structure("identity", 3, 1, 3, beta=np.array([1.0, 0, 0]))
    g = sample_fold_gaussians(m, 8)
    lam = 10 * np.max(np.abs(g.W_minus))
    assert limit_cv_objective(m, g, lam) != limit_cv_objective(m, g, 2 * lam)


def test_objective_rejects_nonpositive_penalty():
    m = _scalar(1)
    g = sample_fold_gaussians(m, 0)
    with pytest.raises(ValueError):
        limit_cv_objective(m, g, 0.0)


def test_cross_weight_default():
    assert default_cross_weight(10) == 3.0


def test_interior_minima_are_common_on_a_wide_grid():
    m = LimitModel.from_structure("ar03", 7, 4, 10)
    grid = PenaltyGrid.log_spaced(1e-3, 1e2, 120)
    interior = 0
    for r in range(40):
        res = limit_penalty_argmin(m, sample_fold_gaussians(m, parallel.rng(5, r)), grid)
        interior += 0 < res.index < len(grid) - 1
    assert interior >= 20


# --- penalty argmin -------------------------------------------------------------------

def test_constant_objective_is_not_unique():
    m = LimitModel(np.eye(2), np.eye(2), np.zeros(2), 0, 3)
    g = FoldGaussians.from_blocks(np.zeros((3, 2)))
    res = limit_penalty_argmin(m, g, PenaltyGrid.paper_remark())
    assert not res.unique and res.index == 0 and res.value == 0.0


def test_scalar_c4_matches_analytic_path():
    m = LimitModel(np.eye(1), np.eye(1), np.array([0.5]), 1, 2)
    grid = PenaltyGrid.paper_remark()
    c = default_cross_weight(2)
    for r in range(10):
        g = sample_fold_gaussians(m, parallel.rng(0, 0, r))
        lam = grid.values
        h = np.zeros_like(lam)
        for k in range(2):
            u = g.W_minus[k, 0] - lam
            h += 0.5 * u * u - c * u * g.W_in[k, 0]
        res = limit_penalty_argmin(m, g, grid)
        assert res.index == int(np.argmin(h))
        assert res.value == pytest.approx(h.min(), abs=1e-9)
    rep = c4_experiment(["identity"], reps=10, seed=0, p=1, p0=1, K=2)
    for r, row in enumerate(rep.rows):
        g = sample_fold_gaussians(LimitModel.from_structure("identity", 1, 1, 2), parallel.rng(0, 0, r))
        assert row.lambda_star == limit_penalty_argmin(LimitModel.from_structure("identity", 1, 1, 2), g).lambda_star


def test_c4_single_rep_deterministic():
    a = c4_experiment(["ar03"], reps=1, seed=4)
    b = c4_experiment(["ar03"], reps=1, seed=4)
    assert a.rows == b.rows and len(a.rows) == 1
    s = a.summary()["ar03"]
    assert s["reps"] == 1.0 and 0.0 <= s["boundary_fraction"] <= 1.0


# --- limit pivots -------------------------------------------------------------------

def test_zero_penalty_pivots_are_gaussian_image():
    S = covariance_matrix("ar03", 3)
    L = S + 0.5 * np.eye(3)
    m = LimitModel(L, S, np.array([1.0, 0, 0]), 1, 5)
    ps = limit_pivot_sample(m, reps=100_000, seed=2, lambda_override=0.0)
    Li = np.linalg.inv(L)
    target = Li @ S @ Li
    emp = np.cov(ps.draws.T)
    assert np.max(np.abs(emp - target)) <= 0.05 * np.max(np.abs(np.diag(target)))


def test_all_active_pivot_is_affine():
    S = covariance_matrix("ar03", 4)
    beta = np.array([5.0, -5.0, 5.0, -5.0])
    m = LimitModel(S, S, beta, 4, 10)
    g = sample_fold_gaussians(m, 6)
    grid = PenaltyGrid.paper_remark()
    lam = limit_penalty_argmin(m, g, grid).lambda_star
    scale = math.sqrt(9 / 10)
    ps = limit_pivot_sample(m, grid, reps=1, seed=None, lambda_override=lam)
    direct = np.linalg.solve(S, g.W_full - scale * lam * np.sign(beta))
    u, lam_used = limit_pivot_draw(m, g, grid)
    assert lam_used == lam
    np.testing.assert_allclose(u, direct, atol=1e-9)
    u1, _ = limit_pivot_draw(m, g, grid, penalty_scale=1.0)
    np.testing.assert_allclose(u1, np.linalg.solve(S, g.W_full - lam * np.sign(beta)), atol=1e-9)
    assert ps.B == 1


def test_limit_pivot_sample_deterministic():
    m = LimitModel.from_structure("ar03", 7, 4, 10)
    a = limit_pivot_sample(m, reps=5, seed=3)
    b = limit_pivot_sample(m, reps=5, seed=3)
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.lambdas, b.lambdas)
