"""Subspace Newton driver: parameter selection, directions, acceptance, line search."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .model import (
    BoxBounds,
    IterateState,
    LeastSquaresObjective,
    Problem,
    SmoothObjective,
    SolverParams,
    SolverReport,
    StepKind,
    validate_problem,
)
from .operators import DenseMap, power_iteration
from .prox import prox_l0_box
from .stationarity import IndexPartition, partition_indices, residual_F

PIVOT_FLOOR = 1e-12


@dataclass
class DirectionBundle:
    """A full-length step direction plus the partition that produced it."""

    d: np.ndarray
    partition: IndexPartition
    kind: StepKind
    solvable: bool

    @property
    def d_theta(self) -> np.ndarray:
        return self.d[self.partition.theta]

    @property
    def d_gamma(self) -> np.ndarray:
        return self.d[self.partition.gamma]

    @property
    def d_ibar(self) -> np.ndarray:
        return self.d[self.partition.ibar]


def estimate_lipschitz(
    objective: SmoothObjective, iters: int = 100, seed: int = 0
) -> float:
    """Largest-eigenvalue estimate of the Hessian (constant for least squares)."""
    if isinstance(objective, LeastSquaresObjective):
        return power_iteration(objective.map, iters=iters, seed=seed)
    n = objective.dim()
    idx = np.arange(n)
    hess = objective.hessian_block(np.zeros(n), idx, idx)
    return power_iteration(DenseMap(hess), iters=iters, seed=seed)


def select_tau(bounds: BoxBounds, lam: float, L_hat: float) -> float:
    """Step parameter: just under the bound cap a/(2*lambda), also capped by 1/(4*L)."""
    return min(0.99 * bounds.a / (2.0 * lam), 0.25 / L_hat)


def lambda_schedule(lambda_target: float, lambda0: float, decay: float, k: int) -> float:
    """Geometric homotopy lambda0 * decay^k floored at lambda_target."""
    return max(lambda_target, lambda0 * decay**k)


def lambda_upper_bound(
    objective: SmoothObjective, bounds: BoxBounds, L_hat: float
) -> float:
    """Penalty scale above which the first prox step from the origin zeroes everything.

    Computed from the gradient at the origin: (tau0/2) * max_i |grad_i f(0)|^2
    with tau0 = min(a / (2 max_i |grad_i f(0)|), 1/(4 L)).  Returns 0 when the
    origin is already stationary.
    """
    g0 = objective.gradient(np.zeros(objective.dim()))
    gmax = float(np.max(np.abs(g0))) if g0.size else 0.0
    if gmax == 0.0:
        return 0.0
    tau0 = min(bounds.a / (2.0 * gmax), 0.25 / L_hat)
    return 0.5 * tau0 * gmax**2


def compute_alpha_bar(L_hat: float, delta: float, sigma: float) -> float:
    """Step-size floor constant derived from the smoothness/backtracking constants."""
    if L_hat <= 0.0:
        return 1.0
    return min(
        (1.0 - 2.0 * sigma) / (L_hat / delta - sigma),
        2.0 * (1.0 - sigma) * delta / L_hat,
        1.0,
    )


def gamma_direction(
    x: np.ndarray, partition: IndexPartition, bounds: BoxBounds
) -> np.ndarray:
    """Displacement moving active components exactly onto their bound.

    u_i - x_i on gamma_u and -l_i - x_i on gamma_l, returned in the order of
    partition.gamma.  Equals the projected-gradient displacement on gamma for
    any step parameter <= 1.
    """
    d = np.zeros(x.shape[0])
    d[partition.gamma_u] = bounds.upper[partition.gamma_u] - x[partition.gamma_u]
    d[partition.gamma_l] = -bounds.lower[partition.gamma_l] - x[partition.gamma_l]
    return d[partition.gamma]


def _block_pivots(dmat: np.ndarray) -> np.ndarray:
    """Eigenvalues of the 1x1/2x2 blocks of an LDL^T block-diagonal factor."""
    t = dmat.shape[0]
    pivots = []
    i = 0
    while i < t:
        if i + 1 < t and dmat[i + 1, i] != 0.0:
            a, b, c = dmat[i, i], dmat[i + 1, i], dmat[i + 1, i + 1]
            half = 0.5 * (a + c)
            disc = math.hypot(0.5 * (a - c), b)
            pivots.extend([half - disc, half + disc])
            i += 2
        else:
            pivots.append(dmat[i, i])
            i += 1
    return np.asarray(pivots)


def _solve_symmetric(hess: np.ndarray, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Pivoted LDL^T solve; None when a pivot falls below the diagonal floor."""
    t = hess.shape[0]
    if t == 0:
        return rhs[:0]
    diag_max = float(np.max(np.abs(np.diag(hess))))
    if not np.isfinite(diag_max) or diag_max == 0.0:
        return None
    lu, dmat, perm = scipy.linalg.ldl(hess)
    pivots = _block_pivots(dmat)
    if np.min(np.abs(pivots)) < PIVOT_FLOOR * diag_max:
        return None
    # A = lu d lu^T with lu[perm] unit lower triangular, so P A P^T = L d L^T.
    lower = lu[perm]
    w = scipy.linalg.solve_triangular(lower, rhs[perm], lower=True, unit_diagonal=True)
    v = np.linalg.solve(dmat, w)
    y = scipy.linalg.solve_triangular(lower.T, v, lower=False, unit_diagonal=True)
    out = np.empty(t)
    out[perm] = y
    return out


def newton_direction(
    objective: SmoothObjective,
    x: np.ndarray,
    g: np.ndarray,
    partition: IndexPartition,
    bounds: BoxBounds,
) -> DirectionBundle:
    """Newton step on the inactive subspace with pinned gamma/ibar blocks.

    Solves H_tt d_theta = -g_theta - H_tg d_gamma - H_tj d_j where j runs over
    the discarded indices that are still nonzero (zero columns contribute
    nothing).  A failed factorization returns solvable=False, signalling the
    projected-gradient fallback.
    """
    d = np.zeros(x.shape[0])
    d[partition.ibar] = -x[partition.ibar]
    d[partition.gamma] = gamma_direction(x, partition, bounds)

    theta = partition.theta
    if theta.size == 0:
        return DirectionBundle(d, partition, StepKind.NEWTON, solvable=True)

    dropped = partition.ibar[x[partition.ibar] != 0.0]
    extra = np.concatenate([partition.gamma, dropped])
    blocks = objective.hessian_block(x, theta, np.concatenate([theta, extra]))
    h_tt = blocks[:, : theta.size]
    rhs = -g[theta]
    if extra.size:
        rhs = rhs - blocks[:, theta.size :] @ d[extra]
    d_theta = _solve_symmetric(h_tt, rhs)
    if d_theta is None:
        return DirectionBundle(d, partition, StepKind.NEWTON, solvable=False)
    d[theta] = d_theta
    return DirectionBundle(d, partition, StepKind.NEWTON, solvable=True)


def _same_index_set(a: np.ndarray, b: np.ndarray) -> bool:
    return a.size == b.size and bool(np.all(a == b))


def _theta_feasible(
    x: np.ndarray, d: np.ndarray, partition: IndexPartition, bounds: BoxBounds
) -> bool:
    # gamma lands exactly on its bound and ibar at zero by construction, so
    # x + d can only leave the box through the theta block.
    theta = partition.theta
    xt = x[theta] + d[theta]
    return bool(
        np.all(xt <= bounds.upper[theta]) and np.all(xt >= -bounds.lower[theta])
    )


def accept_newton(
    bundle: DirectionBundle,
    x: np.ndarray,
    g: np.ndarray,
    partition: IndexPartition,
    prev_support: np.ndarray,
    params: SolverParams,
    bounds: BoxBounds,
    lam: float,
) -> bool:
    """Descent/feasibility/index-history test for a Newton bundle.

    Strict mode checks the four original conditions verbatim.  The default
    relaxed mode doubles the support-restricted descent product and trades the
    hard support-size cap for a penalty-weighted growth budget, keeping the
    feasibility and index-history conditions.
    """
    d = bundle.d
    tau = params.tau
    support = partition.support

    if not _theta_feasible(x, d, partition, bounds):
        return False
    new_in_theta = np.setdiff1d(partition.theta, prev_support, assume_unique=True)
    if new_in_theta.size == 0 and not _same_index_set(support, prev_support):
        return False

    gd_support = float(g[support] @ d[support])
    d_sq = float(d @ d)
    slack = float(x[partition.ibar] @ x[partition.ibar]) / (4.0 * tau)
    nnz = int(np.count_nonzero(x))

    if params.strict_acceptance:
        if gd_support > -params.delta * d_sq + slack:
            return False
        if support.size > nnz:
            return False
        return True

    if 2.0 * gd_support > -params.delta * d_sq + slack:
        return False
    gd_full = float(g @ d)
    scale = params.sigma * params.beta * params.alpha_bar
    return scale * gd_full + lam * (support.size - nnz) <= 0.5 * scale * gd_full


def newton_trial(
    x: np.ndarray,
    bundle: DirectionBundle,
    bounds: BoxBounds,
    alpha: float,
) -> np.ndarray:
    """Trial point with only the theta block scaled by alpha.

    Gamma components are pinned exactly to their bound and ibar to zero; the
    theta block is clamped so one rounding cannot leave the box.
    """
    part = bundle.partition
    out = np.zeros_like(x)
    theta = part.theta
    out[theta] = np.clip(
        x[theta] + alpha * bundle.d[theta],
        -bounds.lower[theta],
        bounds.upper[theta],
    )
    out[part.gamma_u] = bounds.upper[part.gamma_u]
    out[part.gamma_l] = -bounds.lower[part.gamma_l]
    return out


def armijo_search(
    objective: SmoothObjective,
    x: np.ndarray,
    g: np.ndarray,
    bundle: DirectionBundle,
    bounds: BoxBounds,
    params: SolverParams,
    f_x: Optional[float] = None,
) -> Optional[float]:
    """Smallest beta^m satisfying f(trial) <= f(x) + sigma*beta^m*<g, d>.

    Returns None when max_backtracks is exhausted (caller falls back to a
    projected-gradient step).
    """
    if f_x is None:
        f_x = objective.value(x)
    gd = float(g @ bundle.d)
    alpha = 1.0
    for _ in range(params.max_backtracks + 1):
        trial = newton_trial(x, bundle, bounds, alpha)
        if objective.value(trial) <= f_x + params.sigma * alpha * gd:
            return alpha
        alpha *= params.beta
    return None


def pgm_step(
    x: np.ndarray, g: np.ndarray, tau: float, lam: float, bounds: BoxBounds
) -> np.ndarray:
    """Projected-gradient (hard-threshold + clamp) update from x."""
    return prox_l0_box(x - tau * g, tau * lam, bounds)


def solve_bnl0r(
    problem: Problem,
    params: Optional[SolverParams] = None,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[IterateState], None]] = None,
) -> SolverReport:
    """Box-constrained subspace Newton solve.

    Per iteration: partition the indices at the current point, try the Newton
    direction (acceptance test plus Armijo search on the theta block), and fall
    back to the projected-gradient step otherwise.  The penalty follows a
    geometric homotopy from lambda0 down to the problem's target whose stage
    advances only once the current level is essentially solved (stationarity
    residual at the level near zero, or a stalled iterate); the step parameter
    is reselected whenever the penalty changes.  Stops on the relative iterate
    change (once the penalty has reached its target) or on f <= tol_f;
    non-convergence within max_iter is reported, not raised.
    """
    validate_problem(problem)
    params = replace(params) if params is not None else SolverParams()
    objective, bounds = problem.objective, problem.bounds
    n = objective.dim()

    start = time.perf_counter()
    L_hat = params.lipschitz_estimate
    if L_hat is None:
        L_hat = estimate_lipschitz(objective)
    L_hat = max(L_hat, np.finfo(float).tiny)
    if params.alpha_bar is None:
        params.alpha_bar = compute_alpha_bar(L_hat, params.delta, params.sigma)

    lam_target = problem.lambda_target
    lam0 = params.lambda0
    if lam0 is None:
        lam0 = 0.5 * lambda_upper_bound(objective, bounds, L_hat)
    lam0 = max(lam0, lam_target)
    # A solved-to-machine-precision level has residual ~1e-14 on this scale.
    gate = 1e-8 * max(1.0, math.sqrt(lam0 * L_hat))

    x = np.zeros(n) if x0 is None else np.clip(np.asarray(x0, dtype=float), -bounds.lower, bounds.upper)
    prev_support = np.zeros(0, dtype=int)
    f_val = objective.value(x)
    history: list = []
    newton_steps = 0
    pgm_steps = 0
    converged = False
    k = 0
    stage = 0
    lam_k = lam0
    tau_k = params.tau if params.tau is not None else select_tau(bounds, lam_k, L_hat)

    while k < params.max_iter:
        g = objective.gradient(x)
        # Advance the homotopy through every level already solved at x.
        while True:
            lam_k = lambda_schedule(lam_target, lam0, params.lambda_decay, stage)
            tau_k = params.tau if params.tau is not None else select_tau(bounds, lam_k, L_hat)
            part = partition_indices(x, g, tau_k, lam_k, bounds)
            if lam_k <= lam_target:
                break
            if residual_F(x, g, tau_k, part, bounds).norm > gate:
                break
            stage += 1
        step_params = replace(params, tau=tau_k, lipschitz_estimate=L_hat)

        kind = StepKind.PGM
        x_new = None
        bundle = newton_direction(objective, x, g, part, bounds)
        if bundle.solvable and accept_newton(
            bundle, x, g, part, prev_support, step_params, bounds, lam_k
        ):
            alpha = armijo_search(objective, x, g, bundle, bounds, step_params, f_x=f_val)
            if alpha is not None:
                x_new = newton_trial(x, bundle, bounds, alpha)
                kind = StepKind.NEWTON
        if x_new is None:
            x_new = pgm_step(x, g, tau_k, lam_k, bounds)
        d_norm = float(np.linalg.norm(bundle.d if kind is StepKind.NEWTON else x_new - x))

        f_new = objective.value(x_new)
        phi_new = f_new + lam_k * np.count_nonzero(x_new)
        history.append((k, f_new, phi_new, d_norm, kind.value))
        if kind is StepKind.NEWTON:
            newton_steps += 1
        else:
            pgm_steps += 1

        rel_change = float(
            np.linalg.norm(x_new - x) / max(1.0, np.linalg.norm(x_new))
        )
        at_target = lam_k <= lam_target
        x, f_val = x_new, f_new
        k += 1
        if callback is not None:
            callback(
                IterateState(
                    x=x,
                    grad=g,
                    partition=part,
                    prev_support=part.support,
                    k=k,
                    f_val=f_val,
                    phi_val=phi_new,
                    last_step=kind,
                )
            )
        prev_support = part.support
        if f_new <= params.tol_f:
            converged = True
            break
        if rel_change <= params.tol_rel:
            if at_target:
                converged = True
                break
            # Stalled above the target: force the next homotopy level.
            stage += 1

    g = objective.gradient(x)
    part = partition_indices(x, g, tau_k, lam_k, bounds)
    res_norm = residual_F(x, g, tau_k, part, bounds).norm
    return SolverReport(
        x_final=x,
        iterations=k,
        wall_time=time.perf_counter() - start,
        f_final=f_val,
        nnz=int(np.count_nonzero(x)),
        residual_norm=res_norm,
        newton_steps=newton_steps,
        pgm_steps=pgm_steps,
        converged=converged,
        history=history,
    )
