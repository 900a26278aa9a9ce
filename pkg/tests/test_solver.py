"""Dual solver: objective correctness, special cases, oracle equivalences."""

import numpy as np
import pytest

import genbal as gb
from genbal.errors import NonConvergenceError, RankDeficiencyError
from genbal.solver import _JointDual

from helpers import (
    finite_difference_gradient,
    finite_difference_hessian,
    primal_group_weights,
    primal_joint_weights,
    random_instance,
)


def test_dual_objective_zero_parameters_is_one():
    rng = np.random.default_rng(0)
    sample, spec, design, target, _ = random_instance(rng, n_s=30, k_h=2, k_g=1)
    kh = design.h.shape[1]
    value, grad, hess = gb.dual_objective(
        np.zeros(kh), np.zeros(kh), np.zeros(1), design, target, sample.treated
    )
    assert value == pytest.approx(1.0)
    assert grad.shape == (2 * kh + 1,)
    assert hess.shape == (2 * kh + 1, 2 * kh + 1)


def test_gradient_vanishes_at_solution():
    rng = np.random.default_rng(1)
    sample, spec, design, target, _ = random_instance(rng, n_s=80, k_h=3, k_g=2)
    sol, ws = gb.solve_extended(design, target, sample.treated)
    value, grad, _ = gb.dual_objective(
        sol.lambda1, sol.lambda0, sol.gamma, design, target, sample.treated
    )
    assert np.abs(grad).max() <= 1e-10


def test_gradient_matches_finite_differences_on_ten_rows():
    rng = np.random.default_rng(2)
    sample, spec, design, target, _ = random_instance(rng, n_s=10, k_h=2, k_g=1)
    problem = _JointDual(design, target, sample.treated, score_cap=30.0)
    theta = 0.3 * rng.standard_normal(problem.dim)
    _, grad, hess = problem.value_grad_hess(theta)
    fd_grad = finite_difference_gradient(problem.value, theta)
    np.testing.assert_allclose(grad, fd_grad, atol=1e-6)
    fd_hess = finite_difference_hessian(
        lambda th: problem.value_grad_hess(th, with_hess=False)[1], theta
    )
    np.testing.assert_allclose(hess, fd_hess, atol=1e-6)


def test_gradient_equals_balance_residuals_exactly():
    rng = np.random.default_rng(3)
    for _ in range(5):
        sample, spec, design, target, _ = random_instance(rng, n_s=40, k_h=2, k_g=2)
        problem = _JointDual(design, target, sample.treated, score_cap=30.0)
        theta = 0.2 * rng.standard_normal(problem.dim)
        _, grad, _ = problem.value_grad_hess(theta)
        w = problem.weights(theta)
        res = gb.balance_residuals(design, target, sample.treated, w)
        np.testing.assert_allclose(grad, res.stacked(), atol=1e-12)


def test_hessian_positive_semidefinite_at_random_points():
    rng = np.random.default_rng(4)
    for _ in range(5):
        sample, spec, design, target, _ = random_instance(rng, n_s=35, k_h=2, k_g=1)
        problem = _JointDual(design, target, sample.treated, score_cap=30.0)
        theta = 0.4 * rng.standard_normal(problem.dim)
        _, _, hess = problem.value_grad_hess(theta)
        assert np.linalg.eigvalsh(hess).min() >= -1e-10


def test_constant_only_gives_uniform_per_arm_weights():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(12, 1))
    A = np.array([1] * 5 + [0] * 7)
    sample = gb.SourceSample(X, A, np.zeros(12))
    spec = gb.BasisSpec.from_names(["const"])
    design = gb.evaluate_basis(spec, sample)
    target = gb.align_target_summary(spec, [1.0], design)
    _, ws = gb.solve_extended(design, target, sample.treated)
    np.testing.assert_allclose(ws.w[sample.s1], 12 / 5, atol=1e-10)
    np.testing.assert_allclose(ws.w[sample.s0], 12 / 7, atol=1e-10)


def test_small_instance_matches_primal_oracle():
    # 6 rows, H = (1, x1), G = (x2)
    rng = np.random.default_rng(6)
    sample, spec, design, target, _ = random_instance(rng, n_s=6, k_h=1, k_g=1)
    _, ws = gb.solve_extended(design, target, sample.treated)
    oracle = primal_joint_weights(design, target, sample.treated)
    assert np.abs(ws.w - oracle).max() <= 1e-6


def test_infeasible_target_raises_with_diagnostics():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 2))
    A = np.array([1] * 20 + [0] * 20)
    sample = gb.SourceSample(X, A, np.zeros(40))
    spec = gb.BasisSpec.from_names(["const", "x1"], ["x2"])
    design = gb.evaluate_basis(spec, sample)
    raw = np.array([1.0, X[:, 0].max() + 5.0])  # beyond every observed value
    target = gb.align_target_summary(spec, raw, design)
    with pytest.raises(NonConvergenceError) as err:
        gb.solve_extended(design, target, sample.treated)
    assert err.value.solution is not None
    assert not err.value.solution.converged
    # objective decreased monotonically from its value 1 at zero parameters
    assert err.value.solution.objective < 1.0
    assert err.value.residuals is not None


def test_rank_deficient_design_rejected():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 2))
    sample = gb.SourceSample(
        np.column_stack([X, X[:, 0]]), np.array([1] * 15 + [0] * 15), np.zeros(30)
    )
    spec = gb.BasisSpec.from_names(["const", "x1", "x2"], ["x3"])
    design = gb.evaluate_basis(spec, sample)
    target = gb.align_target_summary(spec, [1.0, 0.0, 0.0], design)
    with pytest.raises(RankDeficiencyError):
        gb.solve_extended(design, target, sample.treated)


def test_ebal_equals_extended_with_empty_g():
    rng = np.random.default_rng(9)
    sample, spec, design, target, raw_target = random_instance(rng, n_s=45, k_h=3, k_g=2)
    h_spec = spec.h_only()
    h_design = gb.evaluate_basis(h_spec, sample)
    h_target = gb.align_target_summary(h_spec, raw_target, h_design)
    sol_a, ws_a = gb.solve_ebal(design, target, sample.treated)
    sol_b, ws_b = gb.solve_extended(h_design, h_target, sample.treated)
    np.testing.assert_allclose(ws_a.w, ws_b.w, atol=1e-12)


def test_ebal_constant_only_uniform():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(9, 1))
    sample = gb.SourceSample(X, np.array([1] * 4 + [0] * 5), np.zeros(9))
    spec = gb.BasisSpec.from_names(["const"])
    design = gb.evaluate_basis(spec, sample)
    target = gb.align_target_summary(spec, [1.0], design)
    _, ws = gb.solve_ebal(design, target, sample.treated)
    np.testing.assert_allclose(ws.w[sample.s1], 9 / 4, atol=1e-10)
    np.testing.assert_allclose(ws.w[sample.s0], 9 / 5, atol=1e-10)


def test_et_calibration_no_op_when_target_equals_source_means():
    rng = np.random.default_rng(11)
    sample, spec, design, _, _ = random_instance(rng, n_s=40, k_h=2, k_g=1)
    raw = spec.evaluate_h(sample.X).mean(axis=0)
    raw[0] = 1.0
    target = gb.align_target_summary(spec, raw, design)
    _, qs = gb.solve_et_calibration(design, target)
    np.testing.assert_allclose(qs.w, 1.0, atol=1e-9)


def test_et_calibration_constant_only_is_identity():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(14, 1))
    sample = gb.SourceSample(X, np.array([1] * 7 + [0] * 7), np.zeros(14))
    spec = gb.BasisSpec.from_names(["const"])
    design = gb.evaluate_basis(spec, sample)
    target = gb.align_target_summary(spec, [1.0], design)
    _, qs = gb.solve_et_calibration(design, target)
    np.testing.assert_allclose(qs.w, 1.0, atol=1e-12)


def test_et_calibration_matches_primal_oracle_eight_rows():
    rng = np.random.default_rng(13)
    sample, spec, design, target, _ = random_instance(rng, n_s=8, k_h=2, k_g=0)
    _, qs = gb.solve_et_calibration(design, target)
    oracle = primal_group_weights(design.h, target.values, design.n)
    assert np.abs(qs.w - oracle).max() <= 1e-6


def test_two_step_equals_one_step():
    rng = np.random.default_rng(14)
    for _ in range(10):
        sample, spec, design, target, _ = random_instance(rng, n_s=50, k_h=2, k_g=1)
        ws_two = gb.solve_two_step(design, target, sample.treated)
        _, ws_one = gb.solve_ebal(design, target, sample.treated)
        assert np.abs(ws_two.w - ws_one.w).max() <= 1e-6


def test_two_step_near_uniform_when_target_is_source_and_arms_balanced():
    rng = np.random.default_rng(15)
    X = rng.normal(size=(400, 2))
    A = np.array([1, 0] * 200)
    sample = gb.SourceSample(X, A, np.zeros(400))
    spec = gb.BasisSpec.from_names(["const", "x1", "x2"])
    design = gb.evaluate_basis(spec, sample)
    raw = spec.evaluate_h(sample.X).mean(axis=0)
    raw[0] = 1.0
    target = gb.align_target_summary(spec, raw, design)
    ws = gb.solve_two_step(design, target, sample.treated)
    assert np.abs(ws.w - 2.0).max() < 0.5  # near 2 = n_s / arm size


def test_two_step_with_unit_q_reduces_to_one_step():
    rng = np.random.default_rng(16)
    sample, spec, design, target, _ = random_instance(rng, n_s=30, k_h=2, k_g=1)
    ws_forced = gb.solve_two_step(
        design, target, sample.treated, q_weights=np.ones(design.n)
    )
    _, ws_one = gb.solve_ebal(design, target, sample.treated)
    np.testing.assert_allclose(ws_forced.w, ws_one.w, atol=1e-9)


def test_att_uniform_when_arms_identical():
    X = np.tile(np.array([[0.5], [1.5], [-1.0]]), (2, 1))
    A = np.array([1, 1, 1, 0, 0, 0])
    sample = gb.SourceSample(X, A, np.zeros(6))
    spec = gb.BasisSpec.from_names(["const", "x1"])
    design = gb.evaluate_basis(spec, sample)
    ws = gb.solve_att(design, sample.treated)
    np.testing.assert_allclose(ws.w[sample.s0], 2.0, atol=1e-10)


def test_att_two_point_closed_form():
    # controls at 0 and 2, treated mean 1, n_s = 4: both control weights are 2
    X = np.array([[1.0], [1.0], [0.0], [2.0]])
    sample = gb.SourceSample(X, np.array([1, 1, 0, 0]), np.zeros(4))
    spec = gb.BasisSpec.from_names(["const", "x1"])
    design = gb.evaluate_basis(spec, sample)
    ws = gb.solve_att(design, sample.treated)
    np.testing.assert_allclose(ws.w[sample.s0], [2.0, 2.0], atol=1e-10)


def test_att_balances_treated_means():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(60, 3))
    A = (rng.random(60) < 0.4).astype(int)
    if A.sum() in (0, 60):
        A[:2] = [0, 1]
    sample = gb.SourceSample(X, A, np.zeros(60))
    spec = gb.BasisSpec.from_names(["const", "x1", "x2", "x3"])
    design = gb.evaluate_basis(spec, sample)
    ws = gb.solve_att(design, sample.treated)
    t = sample.treated
    weighted_control = design.h[~t].T @ ws.w[~t] / sample.n_s
    treated_mean = design.h[t].mean(axis=0)
    np.testing.assert_allclose(weighted_control, treated_mean, atol=1e-8)


def test_balance_residuals_within_tolerance_at_convergence():
    rng = np.random.default_rng(18)
    for _ in range(5):
        sample, spec, design, target, _ = random_instance(rng, n_s=70, k_h=3, k_g=2)
        weight_sets = [
            gb.solve_extended(design, target, sample.treated)[1],
            gb.solve_ebal(design, target, sample.treated)[1],
            gb.solve_two_step(design, target, sample.treated),
        ]
        for ws in weight_sets:
            res = gb.balance_residuals(design, target, sample.treated, ws.w)
            assert np.abs(res.h_treated).max() <= 1e-8
            assert np.abs(res.h_control).max() <= 1e-8
            if ws.method is gb.Method.EXTENDED:
                assert np.abs(res.g_gap).max() <= 1e-8


def test_weights_reparameterization_invariance():
    rng = np.random.default_rng(19)
    for _ in range(5):
        sample, spec, design, target, raw_target = random_instance(rng, n_s=60, k_h=2, k_g=2)
        design_raw = gb.evaluate_basis(spec, sample, standardize=False)
        target_raw = gb.align_target_summary(spec, raw_target, design_raw)
        _, ws_std = gb.solve_extended(design, target, sample.treated)
        _, ws_raw = gb.solve_extended(design_raw, target_raw, sample.treated)
        assert np.abs(ws_std.w - ws_raw.w).max() <= 1e-10


def test_tilting_structure_reconstructs_from_raw_parameters():
    # log-weights live in span{H, G} with opposite G coefficients per arm
    rng = np.random.default_rng(20)
    sample, spec, design, target, _ = random_instance(rng, n_s=55, k_h=2, k_g=2)
    sol, ws = gb.solve_extended(design, target, sample.treated)
    l1, l0, g = sol.unstandardized(design)
    raw_h = spec.evaluate_h(sample.X)
    raw_g = spec.evaluate_g(sample.X)
    t = sample.treated
    log_w = np.log(ws.w)
    np.testing.assert_allclose(log_w[t], raw_h[t] @ l1 + raw_g[t] @ g, atol=1e-10)
    np.testing.assert_allclose(log_w[~t], raw_h[~t] @ l0 - raw_g[~t] @ g, atol=1e-10)


def test_normalization_rescales_arm_sums():
    rng = np.random.default_rng(21)
    sample, spec, design, target, _ = random_instance(rng, n_s=48, k_h=2, k_g=1)
    _, ws = gb.solve_extended(design, target, sample.treated, normalize=True)
    t = sample.treated
    assert ws.w[t].sum() == pytest.approx(sample.n_s)
    assert ws.w[~t].sum() == pytest.approx(sample.n_s)
    assert ws.normalized


def test_weightset_rejects_nonpositive():
    with pytest.raises(Exception):
        gb.WeightSet(np.array([1.0, 0.0]), gb.Method.EXTENDED, False)
