"""Newton solvers for the dual of entropy-balancing weight problems.

The primal problems minimize sum(w log w) (optionally relative to base
weights) under linear balance constraints; every solution is an
exponential tilt of the base weights. The joint problem balances the
H terms of each arm to the target summary and equalizes the G terms
across arms, so its dual parameters are (lambda1, lambda0, gamma) with
weights

    w_i = exp(lambda1'H_i + gamma'G_i)   on the treated arm,
    w_i = exp(lambda0'H_i - gamma'G_i)   on the control arm.

The dual gradient equals the primal balance residuals, which is what the
convergence test monitors. All solves run in the coordinates of the
supplied design (standardized by default); weights are invariant to that
choice and :meth:`DualSolution.unstandardized` maps parameters back to
raw coordinates.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

from .basis import DesignMatrices, TargetSummary, check_design_rank, matrix_rank_report
from .errors import NonConvergenceError, RankDeficiencyError, ValidationError

__all__ = [
    "Method",
    "SolverOptions",
    "DualSolution",
    "CalibrationSolution",
    "WeightSet",
    "BalanceReport",
    "dual_objective",
    "balance_residuals",
    "solve_extended",
    "solve_ebal",
    "solve_two_step",
    "solve_et_calibration",
    "solve_att",
]

ARMIJO_FACTOR = 0.5
ARMIJO_SLOPE = 1e-4
_MAX_BACKTRACKS = 60


class Method(str, enum.Enum):
    """Provenance tag for a weight set."""

    EXTENDED = "extended"       # per-arm H calibration + cross-arm G balance
    EBAL = "ebal"               # per-arm H calibration only
    TWO_STEP = "two_step"       # shift calibration first, arm balance second
    ET = "et"                   # whole-sample shift calibration
    ATT = "att"                 # control arm tilted to treated means
    IPW = "ipw"
    IPW_ET = "ipw_et"


@dataclasses.dataclass(frozen=True)
class SolverOptions:
    """Newton solver knobs.

    ``tol`` bounds the sup-norm of the dual gradient (equivalently the
    balance residuals) in design coordinates. ``score_cap`` bounds the
    linear scores fed to exp during the line search; a converged solution
    must sit strictly below it.
    """

    tol: float = 1e-10
    max_iter: int = 200
    score_cap: float = 30.0


@dataclasses.dataclass(frozen=True)
class DualSolution:
    """Dual parameters of the joint (two-arm) problem plus diagnostics."""

    lambda1: np.ndarray
    lambda0: np.ndarray
    gamma: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    objective: float

    def unstandardized(self, design: DesignMatrices):
        """Equivalent parameters over the raw (unscaled) basis columns.

        The constant coefficient absorbs the centering of every scaled
        column, including the G columns whose sign flips between arms.
        """
        hc, hs = design.h_center, design.h_scale
        gc, gs = design.g_center, design.g_scale
        l1 = self.lambda1 / hs
        l0 = self.lambda0 / hs
        if self.gamma.size:
            g = self.gamma / gs
            g_shift = float(self.gamma @ (gc / gs))
        else:
            g = self.gamma.copy()
            g_shift = 0.0
        h_shift = float(self.lambda1[1:] @ (hc[1:] / hs[1:]))
        l1[0] = self.lambda1[0] - h_shift - g_shift
        l0[0] = self.lambda0[0] - float(self.lambda0[1:] @ (hc[1:] / hs[1:])) + g_shift
        return l1, l0, g


@dataclasses.dataclass(frozen=True)
class CalibrationSolution:
    """Dual parameters of a single-group calibration problem."""

    beta: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    objective: float

    def unstandardized(self, design: DesignMatrices) -> np.ndarray:
        hc, hs = design.h_center, design.h_scale
        b = self.beta / hs
        b[0] = self.beta[0] - float(self.beta[1:] @ (hc[1:] / hs[1:]))
        return b


@dataclasses.dataclass(frozen=True)
class WeightSet:
    """Weights aligned to source rows, with provenance."""

    w: np.ndarray
    method: Method
    normalized: bool

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 1:
            raise ValidationError("weights must be a 1-d vector")
        if not np.isfinite(w).all() or (w <= 0).any():
            raise ValidationError("weights must be strictly positive and finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclasses.dataclass(frozen=True)
class BalanceReport:
    """Primal constraint residuals of a weight vector."""

    h_treated: np.ndarray
    h_control: np.ndarray
    g_gap: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.h_treated, self.h_control, self.g_gap])

    @property
    def sup_norm(self) -> float:
        s = self.stacked()
        return float(np.abs(s).max()) if s.size else 0.0


def balance_residuals(design: DesignMatrices, target: TargetSummary, treated, w) -> BalanceReport:
    """Residuals of the joint balance constraints for arbitrary weights."""
    t = np.asarray(treated, dtype=bool)
    w = np.asarray(w, dtype=float)
    n_s = design.n
    w1, w0 = w[t], w[~t]
    r1 = design.h[t].T @ w1 / n_s - target.values
    r0 = design.h[~t].T @ w0 / n_s - target.values
    rg = (design.g[t].T @ w1 - design.g[~t].T @ w0) / n_s
    return BalanceReport(r1, r0, rg)


class _JointDual:
    """Packed objective over theta = (lambda1, lambda0, gamma)."""

    def __init__(self, design, target, treated, score_cap):
        t = np.asarray(treated, dtype=bool)
        if t.shape[0] != design.n:
            raise ValidationError("treated mask misaligned with design rows")
        if t.sum() == 0 or (~t).sum() == 0:
            raise ValidationError("both arms must be non-empty")
        self.treated = t
        self.h1, self.h0 = design.h[t], design.h[~t]
        self.g1, self.g0 = design.g[t], design.g[~t]
        self.hbar = target.values
        self.n_s = design.n
        self.kh = design.h.shape[1]
        self.kg = design.g.shape[1]
        self.dim = 2 * self.kh + self.kg
        self.cap = score_cap
        self.b1 = np.hstack([self.h1, self.g1])
        self.b0 = np.hstack([self.h0, -self.g0])

    def split(self, theta):
        kh, kg = self.kh, self.kg
        return theta[:kh], theta[kh:2 * kh], theta[2 * kh:2 * kh + kg]

    def scores(self, theta):
        l1, l0, g = self.split(theta)
        s1 = self.h1 @ l1 + (self.g1 @ g if self.kg else 0.0)
        s0 = self.h0 @ l0 - (self.g0 @ g if self.kg else 0.0)
        return s1, s0

    def max_score(self, theta):
        s1, s0 = self.scores(theta)
        return max(float(s1.max()), float(s0.max()))

    def value(self, theta):
        s1, s0 = self.scores(theta)
        if max(float(s1.max()), float(s0.max())) > self.cap:
            return np.inf
        l1, l0, _ = self.split(theta)
        return float(
            (np.exp(s1).sum() + np.exp(s0).sum()) / self.n_s - (l1 + l0) @ self.hbar
        )

    def value_grad_hess(self, theta, with_hess=True):
        s1, s0 = self.scores(theta)
        if max(float(s1.max()), float(s0.max())) > self.cap:
            return np.inf, None, None
        w1, w0 = np.exp(s1), np.exp(s0)
        l1, l0, _ = self.split(theta)
        val = float((w1.sum() + w0.sum()) / self.n_s - (l1 + l0) @ self.hbar)
        grad = np.concatenate([
            self.h1.T @ w1 / self.n_s - self.hbar,
            self.h0.T @ w0 / self.n_s - self.hbar,
            (self.g1.T @ w1 - self.g0.T @ w0) / self.n_s,
        ])
        if not with_hess:
            return val, grad, None
        m1 = self.b1.T @ (self.b1 * w1[:, None]) / self.n_s
        m0 = self.b0.T @ (self.b0 * w0[:, None]) / self.n_s
        kh, kg = self.kh, self.kg
        hess = np.zeros((self.dim, self.dim))
        idx1 = np.r_[0:kh, 2 * kh:2 * kh + kg]
        idx0 = np.r_[kh:2 * kh, 2 * kh:2 * kh + kg]
        hess[np.ix_(idx1, idx1)] += m1
        hess[np.ix_(idx0, idx0)] += m0
        return val, grad, hess

    def weights(self, theta):
        s1, s0 = self.scores(theta)
        w = np.empty(self.n_s)
        w[self.treated] = np.exp(s1)
        w[~self.treated] = np.exp(s0)
        return w


class _GroupDual:
    """min (1/n_s) sum_i base_i exp(beta'F_i) - beta'target over one group."""

    def __init__(self, F, base, target_vals, n_s, score_cap):
        self.F = F
        self.base = base
        self.target = np.asarray(target_vals, dtype=float)
        self.n_s = n_s
        self.dim = F.shape[1]
        self.cap = score_cap

    def max_score(self, beta):
        return float((self.F @ beta).max())

    def value(self, beta):
        s = self.F @ beta
        if float(s.max()) > self.cap:
            return np.inf
        return float((self.base * np.exp(s)).sum() / self.n_s - beta @ self.target)

    def value_grad_hess(self, beta, with_hess=True):
        s = self.F @ beta
        if float(s.max()) > self.cap:
            return np.inf, None, None
        w = self.base * np.exp(s)
        val = float(w.sum() / self.n_s - beta @ self.target)
        grad = self.F.T @ w / self.n_s - self.target
        if not with_hess:
            return val, grad, None
        hess = self.F.T @ (self.F * w[:, None]) / self.n_s
        return val, grad, hess

    def weights(self, beta):
        return self.base * np.exp(self.F @ beta)


@dataclasses.dataclass
class _NewtonResult:
    theta: np.ndarray
    value: float
    grad: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool


def _newton_minimize(problem, options: SolverOptions) -> _NewtonResult:
    """Damped Newton with Armijo backtracking, started at zero.

    Falls back to the gradient direction when the Hessian solve fails or
    does not yield a descent direction.
    """
    theta = np.zeros(problem.dim)
    val, grad, hess = problem.value_grad_hess(theta)
    iterations = 0
    while iterations < options.max_iter:
        grad_norm = float(np.abs(grad).max())
        if grad_norm <= options.tol:
            return _NewtonResult(theta, val, grad, grad_norm, iterations, True)
        step = None
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and (not np.isfinite(step).all() or grad @ step <= 0):
            step = None
        direction = -step if step is not None else -grad
        slope = float(grad @ direction)
        # Absolute slack keeps the sufficient-decrease test meaningful when
        # improvements fall below floating-point resolution of the value.
        floor = 1e-14 * (1.0 + abs(val))
        t = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            cand = theta + t * direction
            cval = problem.value(cand)
            if np.isfinite(cval) and cval <= val + ARMIJO_SLOPE * t * slope + floor:
                accepted = True
                break
            t *= ARMIJO_FACTOR
        if not accepted:
            return _NewtonResult(theta, val, grad, grad_norm, iterations, False)
        theta = cand
        val, grad, hess = problem.value_grad_hess(theta)
        iterations += 1
    grad_norm = float(np.abs(grad).max())
    return _NewtonResult(theta, val, grad, grad_norm, iterations, grad_norm <= options.tol)


def dual_objective(lambda1, lambda0, gamma, design, target, treated, score_cap=30.0):
    """Value, gradient and Hessian of the joint dual at the given parameters.

    The gradient components are exactly the balance residuals: treated-arm
    H block, control-arm H block, then the G gap. If any linear score
    exceeds ``score_cap`` the value is +inf and gradient/Hessian are NaN.
    """
    problem = _JointDual(design, target, treated, score_cap)
    theta = np.concatenate([
        np.asarray(lambda1, dtype=float),
        np.asarray(lambda0, dtype=float),
        np.asarray(gamma, dtype=float),
    ])
    if theta.shape[0] != problem.dim:
        raise ValidationError("dual parameter dimensions do not match the design")
    val, grad, hess = problem.value_grad_hess(theta)
    if grad is None:
        grad = np.full(problem.dim, np.nan)
        hess = np.full((problem.dim, problem.dim), np.nan)
    return val, grad, hess


def _normalize_per_arm(w, treated, n_s):
    out = w.copy()
    out[treated] *= n_s / out[treated].sum()
    out[~treated] *= n_s / out[~treated].sum()
    return out


def _require_full_rank(matrix, what):
    rep = matrix_rank_report(matrix)
    if rep.deficient:
        raise RankDeficiencyError(
            f"{what} is rank deficient: rank {rep.rank} < {rep.n_columns} columns "
            f"(condition number {rep.condition_number:.3g})"
        )


def _solve_joint(design, target, treated, options, normalize, method):
    opts = options or SolverOptions()
    rep = check_design_rank(design)
    if rep.deficient:
        raise RankDeficiencyError(
            f"[H|G] is rank deficient: rank {rep.rank} < {rep.n_columns} columns "
            f"(condition number {rep.condition_number:.3g})"
        )
    problem = _JointDual(design, target, treated, opts.score_cap)
    res = _newton_minimize(problem, opts)
    at_cap = problem.max_score(res.theta) >= opts.score_cap
    l1, l0, g = problem.split(res.theta)
    solution = DualSolution(
        lambda1=l1,
        lambda0=l0,
        gamma=g,
        iterations=res.iterations,
        grad_norm=res.grad_norm,
        converged=res.converged and not at_cap,
        objective=res.value,
    )
    if not solution.converged:
        raise NonConvergenceError(
            f"dual solve stalled after {res.iterations} iterations "
            f"(residual sup-norm {res.grad_norm:.3g}); the target may be "
            "infeasible or overlap too weak",
            solution=solution,
            residuals=res.grad,
        )
    w = problem.weights(res.theta)
    if normalize:
        w = _normalize_per_arm(w, problem.treated, design.n)
    return solution, WeightSet(w, method, normalize)


def solve_extended(design, target, treated, options=None, normalize=False):
    """Weights balancing H per arm to the target and G across arms."""
    return _solve_joint(design, target, treated, options, normalize, Method.EXTENDED)


def solve_ebal(design, target, treated, options=None, normalize=False):
    """H-only special case: drop the G columns and balance per arm."""
    solution, ws = _solve_joint(
        design.h_only(), target, treated, options, normalize, Method.EBAL
    )
    return solution, ws


def _calibrate_group(F, base, target_vals, n_s, opts, what):
    _require_full_rank(F, what)
    problem = _GroupDual(F, base, target_vals, n_s, opts.score_cap)
    res = _newton_minimize(problem, opts)
    at_cap = problem.max_score(res.theta) >= opts.score_cap
    solution = CalibrationSolution(
        beta=res.theta,
        iterations=res.iterations,
        grad_norm=res.grad_norm,
        converged=res.converged and not at_cap,
        objective=res.value,
    )
    if not solution.converged:
        raise NonConvergenceError(
            f"calibration of {what} stalled after {res.iterations} iterations "
            f"(residual sup-norm {res.grad_norm:.3g})",
            solution=solution,
            residuals=res.grad,
        )
    return solution, problem.weights(res.theta)


def solve_et_calibration(design, target, options=None, normalize=False):
    """Whole-sample exponential-tilting calibration of H means to the target.

    Ignores treatment arms: the weighted source means of every H term are
    pushed onto the target summary.
    """
    opts = options or SolverOptions()
    solution, q = _calibrate_group(
        design.h, np.ones(design.n), target.values, design.n, opts, "H design"
    )
    if normalize:
        q = q * (design.n / q.sum())
    return solution, WeightSet(q, Method.ET, normalize)


def solve_two_step(design, target, treated, options=None, normalize=False, q_weights=None):
    """Shift-then-balance calibration: tilt the whole sample to the target,
    then re-balance each arm relative to that tilt.

    The second step minimizes sum(w log(w / q)) per arm. Its constraint
    right-hand sides are the q-weighted source averages, which at the
    exact first-step solution coincide with the target summary; they are
    anchored at the target here so the identity is exact rather than
    holding only to solver tolerance. ``q_weights`` overrides the first
    step (diagnostics; all ones reduces the procedure to the one-step
    H-only problem).
    """
    opts = options or SolverOptions()
    t = np.asarray(treated, dtype=bool)
    if q_weights is None:
        _, q_set = solve_et_calibration(design, target, opts)
        q = q_set.w
    else:
        q = np.asarray(q_weights, dtype=float)
        if q.shape[0] != design.n or (q <= 0).any():
            raise ValidationError("q_weights must be positive and aligned to the design")
    rhs = target.values
    w = np.empty(design.n)
    for arm_mask, label in ((t, "treated arm"), (~t, "control arm")):
        _, w_arm = _calibrate_group(
            design.h[arm_mask], q[arm_mask], rhs, design.n, opts, label
        )
        w[arm_mask] = w_arm
    if normalize:
        w = _normalize_per_arm(w, t, design.n)
    return WeightSet(w, Method.TWO_STEP, normalize)


def solve_att(design, treated, options=None, normalize=False):
    """Tilt the control arm onto the treated arm's H means.

    Control weights satisfy sum(w)/n_s = 1 and reproduce the treated-arm
    means of every H column; treated rows get the uniform weight
    n_s / |S1| for completeness.
    """
    opts = options or SolverOptions()
    t = np.asarray(treated, dtype=bool)
    if t.sum() == 0 or (~t).sum() == 0:
        raise ValidationError("both arms must be non-empty")
    target_vals = design.h[t].mean(axis=0)
    _, w0 = _calibrate_group(
        design.h[~t], np.ones(int((~t).sum())), target_vals, design.n, opts, "control arm"
    )
    w = np.empty(design.n)
    w[~t] = w0
    w[t] = design.n / t.sum()
    if normalize:
        w = _normalize_per_arm(w, t, design.n)
    return WeightSet(w, Method.ATT, normalize)
