"""Active/inactive index partition and the stationarity residual system."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import BoxBounds, InfeasiblePoint, ThresholdTooLarge
from .prox import box_project


@dataclass(frozen=True)
class IndexPartition:
    """Disjoint split of {0..n-1} into inactive, bound-active and discarded sets.

    theta:   trial point strictly inside the box with magnitude at/above the
             sparsity threshold (Newton subspace)
    gamma_u: trial point at or beyond the upper bound
    gamma_l: trial point at or beyond the lower bound
    ibar:    everything else; pinned to zero by the next step
    """

    theta: np.ndarray
    gamma_u: np.ndarray
    gamma_l: np.ndarray
    ibar: np.ndarray

    @cached_property
    def gamma(self) -> np.ndarray:
        return np.sort(np.concatenate([self.gamma_u, self.gamma_l]))

    @cached_property
    def support(self) -> np.ndarray:
        return np.sort(np.concatenate([self.theta, self.gamma_u, self.gamma_l]))

    @property
    def n(self) -> int:
        return self.theta.size + self.gamma_u.size + self.gamma_l.size + self.ibar.size


@dataclass(frozen=True)
class ResidualF:
    """Blocks of the stationarity system and their joint Euclidean norm."""

    theta_part: np.ndarray
    gamma_part: np.ndarray
    ibar_part: np.ndarray
    norm: float


def partition_indices(
    x: np.ndarray,
    g: np.ndarray,
    tau: float,
    lam: float,
    bounds: BoxBounds,
) -> IndexPartition:
    """Classify indices from the prox-gradient trial point z = x - tau*g.

    Bound cases use inclusive >=/<=, the threshold is inclusive as well, so the
    partition agrees exactly with the closed-form prox under its tie rule.
    """
    if not 2.0 * tau * lam < bounds.a:
        raise ThresholdTooLarge(
            f"2*tau*lambda = {2 * tau * lam} must be < a = {bounds.a}"
        )
    z = x - tau * g
    thr = math.sqrt(2.0 * tau * lam)
    at_upper = z >= bounds.upper
    at_lower = z <= -bounds.lower
    interior = ~(at_upper | at_lower)
    big = np.abs(z) >= thr
    return IndexPartition(
        theta=np.flatnonzero(interior & big),
        gamma_u=np.flatnonzero(at_upper),
        gamma_l=np.flatnonzero(at_lower),
        ibar=np.flatnonzero(interior & ~big),
    )


def residual_F(
    x: np.ndarray,
    g: np.ndarray,
    tau: float,
    partition: IndexPartition,
    bounds: BoxBounds,
) -> ResidualF:
    """Stationarity residual [grad on theta; bound gap on gamma; x on ibar].

    When the partition comes from the trial point itself, the gamma block
    reduces to x - u on gamma_u and x + l on gamma_l.
    """
    z = x - tau * g
    proj = box_project(z, bounds)
    gamma = partition.gamma
    theta_part = g[partition.theta]
    gamma_part = x[gamma] - proj[gamma]
    ibar_part = x[partition.ibar]
    norm = math.sqrt(
        float(theta_part @ theta_part)
        + float(gamma_part @ gamma_part)
        + float(ibar_part @ ibar_part)
    )
    return ResidualF(theta_part, gamma_part, ibar_part, norm)


def check_tau_stationary(
    x: np.ndarray,
    g: np.ndarray,
    tau: float,
    lam: float,
    bounds: BoxBounds,
    tol: float = 1e-8,
) -> bool:
    """Componentwise fixed-point test of the prox-gradient map.

    Each component must satisfy its case: interior components at or above the
    sparsity threshold need |g_i| <= tol, components at the upper (lower) bound
    need g_i <= tol (>= -tol), zero components need |g_i| <= sqrt(2*lam/tau) +
    tol.  An interior nonzero component below the threshold fits no case.
    Zero means exactly zero; the solvers construct such iterates.
    """
    if not bounds.contains(x, tol=tol):
        raise InfeasiblePoint("x violates the box beyond tol")
    thr_x = math.sqrt(2.0 * tau * lam)
    thr_g = math.sqrt(2.0 * lam / tau)
    for i in range(x.shape[0]):
        xi, gi = x[i], g[i]
        if xi == 0.0:
            if abs(gi) > thr_g + tol:
                return False
        elif xi >= bounds.upper[i] - tol:
            if gi > tol:
                return False
        elif xi <= -bounds.lower[i] + tol:
            if gi < -tol:
                return False
        elif abs(xi) >= thr_x:
            if abs(gi) > tol:
                return False
        else:
            return False
    return True
