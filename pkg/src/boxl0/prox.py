"""Closed-form proximal/projection operators for the box-constrained penalties."""

from __future__ import annotations

import math

import numpy as np

from .model import BoxBounds, ThresholdTooLarge


def box_project(z: np.ndarray, bounds: BoxBounds) -> np.ndarray:
    """Project componentwise onto [-l_i, u_i]."""
    return np.clip(z, -bounds.lower, bounds.upper)


def prox_l0_box(z: np.ndarray, tau_lambda: float, bounds: BoxBounds) -> np.ndarray:
    """Prox of tau*lambda*(||.||_0 + box indicator), componentwise closed form.

    Requires 2*tau_lambda < min_i min(l_i^2, u_i^2) so the bound cases and the
    threshold case never conflict.  On the tie |z_i| = sqrt(2*tau_lambda) both
    z_i and 0 are minimizers; z_i is returned so the result always agrees with
    the inclusive threshold used by the index partition.
    """
    a = bounds.a
    if not 2.0 * tau_lambda < a:
        raise ThresholdTooLarge(f"2*tau*lambda = {2 * tau_lambda} must be < a = {a}")
    thr = math.sqrt(2.0 * tau_lambda)
    out = np.where(np.abs(z) >= thr, z, 0.0)
    out = np.where(z >= bounds.upper, bounds.upper, out)
    out = np.where(z <= -bounds.lower, -bounds.lower, out)
    return out


def prox_l1_box(z: np.ndarray, tau_lambda: float, bounds: BoxBounds) -> np.ndarray:
    """Prox of tau*lambda*||.||_1 followed by the box clamp.

    The composition is exact because the box contains the origin.
    """
    soft = np.sign(z) * np.maximum(np.abs(z) - tau_lambda, 0.0)
    return box_project(soft, bounds)


def prox_oracle_1d(
    z: float, tau_lambda: float, l: float, u: float, grid_step: float
) -> float:
    """Brute-force minimizer of 0.5*(y-z)^2 + tau_lambda*[y != 0] over [-l, u].

    Evaluates a uniform grid plus the candidates 0 and clamp(z); exact ties go
    to the larger |y|, mirroring the production tie rule.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    grid = np.arange(-l, u, grid_step)
    candidates = np.concatenate([grid, [u, 0.0, min(max(z, -l), u)]])
    objective = 0.5 * (candidates - z) ** 2 + tau_lambda * (candidates != 0.0)
    # ties resolved toward larger |y|
    order = np.lexsort((-np.abs(candidates), objective))
    return float(candidates[order[0]])
