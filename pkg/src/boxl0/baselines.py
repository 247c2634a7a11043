"""First-order comparison solvers: hard-thresholding (PIHT) and l1 relaxation (PGA)."""

from __future__ import annotations

import time
from dataclasses import replace
from typing import Callable, Optional

import numpy as np

from .model import (
    IterateState,
    LeastSquaresObjective,
    Problem,
    SolverParams,
    SolverReport,
    StepKind,
    validate_problem,
)
from .prox import prox_l0_box, prox_l1_box
from .solver import estimate_lipschitz, lambda_schedule, lambda_upper_bound
from .stationarity import partition_indices, residual_F

_STEP_RANGE = (1e-3, 1e3)


def _curvature_step(objective, x, g, L_hat):
    """Damped steepest-descent step length restricted to the current support.

    0.98 * ||g_T||^2 / <g_T, H g_T> with T = supp(x); slightly inside the exact
    per-step minimizer so iterates approach the restricted optimum
    geometrically instead of landing on it.  Falls back to 1/L when the support
    is empty or the curvature degenerates.
    """
    support = np.flatnonzero(x)
    if support.size == 0:
        return 1.0 / L_hat
    gt = g[support]
    gg = float(gt @ gt)
    if gg == 0.0:
        return 1.0 / L_hat
    if isinstance(objective, LeastSquaresObjective):
        lifted = np.zeros(x.shape[0])
        lifted[support] = gt
        hg = objective.map.apply(lifted)
        quad = float(np.vdot(hg, hg).real)
    else:
        block = objective.hessian_block(x, support, support)
        quad = float(gt @ (block @ gt))
    if quad <= 0.0:
        return 1.0 / L_hat
    return float(np.clip(0.98 * gg / quad, _STEP_RANGE[0] / L_hat, _STEP_RANGE[1] / L_hat))


def _prepare(problem, params, x0):
    validate_problem(problem)
    params = replace(params) if params is not None else SolverParams()
    objective, bounds = problem.objective, problem.bounds
    L_hat = params.lipschitz_estimate
    if L_hat is None:
        L_hat = estimate_lipschitz(objective)
    L_hat = max(L_hat, np.finfo(float).tiny)
    lam0 = params.lambda0
    if lam0 is None:
        lam0 = 0.5 * lambda_upper_bound(objective, bounds, L_hat)
    lam0 = max(lam0, problem.lambda_target)
    x = (
        np.zeros(objective.dim())
        if x0 is None
        else np.clip(np.asarray(x0, dtype=float), -bounds.lower, bounds.upper)
    )
    return params, objective, bounds, L_hat, lam0, x


def _finish(x, objective, bounds, tau, lam, k, start, history, pgm_steps, converged):
    g = objective.gradient(x)
    tau = min(tau, 0.99 * bounds.a / (2.0 * lam))
    part = partition_indices(x, g, tau, lam, bounds)
    res = residual_F(x, g, tau, part, bounds).norm
    return SolverReport(
        x_final=x,
        iterations=k,
        wall_time=time.perf_counter() - start,
        f_final=objective.value(x),
        nnz=int(np.count_nonzero(x)),
        residual_norm=res,
        newton_steps=0,
        pgm_steps=pgm_steps,
        converged=converged,
        history=history,
    )


def solve_piht(
    problem: Problem,
    params: Optional[SolverParams] = None,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[IterateState], None]] = None,
) -> SolverReport:
    """Proximal iterative hard thresholding under the box constraint.

    Every iteration is a hard-threshold-and-clamp prox step.  The trial step
    length is the support-restricted steepest-descent estimate, halved until
    the proximal sufficient-decrease model holds, which keeps the merit
    f + lambda*||x||_0 nonincreasing.  Same penalty homotopy and stopping rule
    as the Newton solver.
    """
    params, objective, bounds, L_hat, lam0, x = _prepare(problem, params, x0)
    lam_target = problem.lambda_target
    start = time.perf_counter()
    f_val = objective.value(x)
    g = objective.gradient(x)
    history: list = []
    converged = False
    x_prev = None
    g_prev = None
    k = 0
    stage = 0
    tau = 1.0 / L_hat
    lam_k = lam0

    while k < params.max_iter:
        lam_k = lambda_schedule(lam_target, lam0, params.lambda_decay, stage)
        t = min(_curvature_step(objective, x, g, L_hat), 0.99 * bounds.a / (2.0 * lam_k))

        x_new = None
        for _ in range(params.max_backtracks + 1):
            cand = prox_l0_box(x - t * g, t * lam_k, bounds)
            step = cand - x
            model = f_val + float(g @ step) + float(step @ step) / (2.0 * t)
            if objective.value(cand) <= model:
                x_new = cand
                break
            t *= 0.5
        if x_new is None:
            t = min(1.0 / L_hat, 0.99 * bounds.a / (2.0 * lam_k))
            x_new = prox_l0_box(x - t * g, t * lam_k, bounds)
        tau = t

        f_new = objective.value(x_new)
        phi_new = f_new + lam_k * np.count_nonzero(x_new)
        history.append((k, f_new, phi_new, float(np.linalg.norm(x_new - x)), StepKind.PGM.value))
        rel_change = float(np.linalg.norm(x_new - x) / max(1.0, np.linalg.norm(x_new)))
        at_target = lam_k <= lam_target

        x_prev, g_prev = x, g
        x, f_val = x_new, f_new
        g = objective.gradient(x)
        k += 1
        if callback is not None:
            part = partition_indices(x_prev, g_prev, tau, lam_k, bounds)
            callback(
                IterateState(
                    x=x,
                    grad=g_prev,
                    partition=part,
                    prev_support=part.support,
                    k=k,
                    f_val=f_val,
                    phi_val=phi_new,
                    last_step=StepKind.PGM,
                )
            )
        if f_new <= params.tol_f:
            converged = True
            break
        if rel_change <= params.tol_rel:
            if at_target:
                converged = True
                break
            stage += 1

    return _finish(x, objective, bounds, tau, lam_k, k, start, history, k, converged)


def solve_pga(
    problem: Problem,
    params: Optional[SolverParams] = None,
    x0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[IterateState], None]] = None,
) -> SolverReport:
    """Proximal gradient on the l1 relaxation with the box constraint.

    Each iteration soft-thresholds and clamps with a step length backtracked
    (halving from 1/L) until the standard proximal-gradient sufficient-decrease
    inequality holds, so f + lambda*||x||_1 never increases.  Same homotopy and
    stopping rule as the l0 solvers.
    """
    params, objective, bounds, L_hat, lam0, x = _prepare(problem, params, x0)
    lam_target = problem.lambda_target
    start = time.perf_counter()
    f_val = objective.value(x)
    history: list = []
    converged = False
    k = 0
    stage = 0
    tau = 1.0 / L_hat
    lam_k = lam0

    while k < params.max_iter:
        lam_k = lambda_schedule(lam_target, lam0, params.lambda_decay, stage)
        g = objective.gradient(x)
        t = 1.0 / L_hat
        x_new = None
        for _ in range(params.max_backtracks + 1):
            cand = prox_l1_box(x - t * g, t * lam_k, bounds)
            step = cand - x
            model = f_val + float(g @ step) + float(step @ step) / (2.0 * t)
            if objective.value(cand) <= model:
                x_new = cand
                break
            t *= 0.5
        if x_new is None:
            x_new = prox_l1_box(x - g / L_hat, lam_k / L_hat, bounds)
        tau = t

        f_new = objective.value(x_new)
        merit = f_new + lam_k * float(np.sum(np.abs(x_new)))
        history.append((k, f_new, merit, float(np.linalg.norm(x_new - x)), StepKind.PGM.value))
        rel_change = float(np.linalg.norm(x_new - x) / max(1.0, np.linalg.norm(x_new)))
        at_target = lam_k <= lam_target
        x, f_val = x_new, f_new
        k += 1
        if callback is not None:
            part = partition_indices(x, objective.gradient(x), tau, lam_k, bounds)
            callback(
                IterateState(
                    x=x,
                    grad=g,
                    partition=part,
                    prev_support=part.support,
                    k=k,
                    f_val=f_val,
                    phi_val=merit,
                    last_step=StepKind.PGM,
                )
            )
        if f_new <= params.tol_f:
            converged = True
            break
        if rel_change <= params.tol_rel:
            if at_target:
                converged = True
                break
            stage += 1

    return _finish(x, objective, bounds, tau, lam_k, k, start, history, k, converged)
