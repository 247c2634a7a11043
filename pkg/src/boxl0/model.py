"""Problem data model: bounds, objectives, solver parameters and reports."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .operators import LinearMap
    from .stationarity import IndexPartition


class DimensionMismatch(ValueError):
    """Vector/matrix dimensions do not agree."""


class NonpositiveBound(ValueError):
    """A box bound entry is <= 0, which would make the threshold setup degenerate."""


class NonpositiveLambda(ValueError):
    """The sparsity penalty must be strictly positive."""


class ThresholdTooLarge(ValueError):
    """2*tau*lambda >= min_i min(l_i^2, u_i^2); the prox characterization breaks."""


class InfeasiblePoint(ValueError):
    """Point lies outside the box beyond the allowed tolerance."""


@dataclass(frozen=True)
class BoxBounds:
    """Componentwise box -lower <= x <= upper with positive bound vectors."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        up = np.asarray(self.upper, dtype=float)
        if lo.ndim != 1 or up.ndim != 1 or lo.shape != up.shape:
            raise DimensionMismatch(
                f"bound vectors must be 1-d and equally long, got {lo.shape} and {up.shape}"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def a(self) -> float:
        """min_i min(l_i^2, u_i^2); the largest usable 2*tau*lambda."""
        if self.n == 0:
            return 0.0
        return float(np.min(np.minimum(self.lower, self.upper)) ** 2)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(x >= -self.lower - tol) and np.all(x <= self.upper + tol))

    @classmethod
    def symmetric(cls, n: int, radius: float) -> "BoxBounds":
        r = np.full(n, float(radius))
        return cls(r, r.copy())


class SmoothObjective(abc.ABC):
    """Twice-differentiable objective exposing Hessian sub-blocks by index lists.

    Only small blocks indexed by the active/inactive sets are ever requested,
    so matrix-free objectives can realize them through column extraction.
    """

    @abc.abstractmethod
    def value(self, x: np.ndarray) -> float: ...

    @abc.abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def hessian_block(
        self, x: np.ndarray, rows: np.ndarray, cols: np.ndarray
    ) -> np.ndarray: ...

    @abc.abstractmethod
    def dim(self) -> int: ...


class LeastSquaresObjective(SmoothObjective):
    """f(x) = 0.5 * ||A x - b||^2 for a real or complex linear map A.

    For complex measurements the decision variable stays real: the gradient is
    the real part of the adjoint residual and Hessian blocks are Re((A^H A)_RC).
    """

    def __init__(self, map: "LinearMap", observation: np.ndarray):
        b = np.asarray(observation)
        if b.ndim != 1 or b.shape[0] != map.nrows:
            raise DimensionMismatch(
                f"observation length {b.shape} does not match map rows {map.nrows}"
            )
        self.map = map
        self.observation = b

    def dim(self) -> int:
        return self.map.ncols

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.map.apply(x) - self.observation

    def value(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return 0.5 * float(np.vdot(r, r).real)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = self.map.adjoint_apply(self.residual(x))
        return np.ascontiguousarray(g.real, dtype=float)

    def hessian_block(self, x, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        if rows.size == 0 or cols.size == 0:
            return np.zeros((rows.size, cols.size))
        # One column sweep covers both index lists.
        needed, inverse = np.unique(np.concatenate([rows, cols]), return_inverse=True)
        cols_mat = self.map.columns(needed)
        br = cols_mat[:, inverse[: rows.size]]
        bc = cols_mat[:, inverse[rows.size :]]
        if np.iscomplexobj(cols_mat):
            return br.real.T @ bc.real + br.imag.T @ bc.imag
        return br.T @ bc


@dataclass(frozen=True)
class Problem:
    """A smooth objective plus box bounds and the target sparsity penalty."""

    objective: SmoothObjective
    bounds: BoxBounds
    lambda_target: float


def validate_problem(problem: Problem) -> None:
    """Check dimensions, strict bound positivity and lambda > 0; raise otherwise."""
    n = problem.objective.dim()
    if problem.bounds.n != n:
        raise DimensionMismatch(
            f"objective dim {n} != bounds length {problem.bounds.n}"
        )
    if np.any(problem.bounds.lower <= 0) or np.any(problem.bounds.upper <= 0):
        raise NonpositiveBound("box bounds must be strictly positive componentwise")
    if not problem.lambda_target > 0:
        raise NonpositiveLambda(f"lambda must be > 0, got {problem.lambda_target}")


class StepKind(str, Enum):
    NEWTON = "newton"
    PGM = "pgm"


@dataclass
class SolverParams:
    """Tunable constants of the solvers.

    Fields left at None are derived at solve time: tau from the bound/Lipschitz
    caps, lambda0 from the gradient scale at the origin, alpha_bar from
    (lipschitz_estimate, delta, sigma), lipschitz_estimate by power iteration.
    """

    tau: Optional[float] = None
    lambda0: Optional[float] = None
    lambda_decay: float = 0.5
    delta: float = 1e-6
    sigma: float = 1e-4
    beta: float = 0.5
    alpha_bar: Optional[float] = None
    lipschitz_estimate: Optional[float] = None
    max_iter: int = 2000
    tol_rel: float = 1e-6
    tol_f: float = 0.0
    max_backtracks: int = 40
    strict_acceptance: bool = False


@dataclass
class IterateState:
    """Snapshot passed to solve callbacks after each completed iteration.

    ``x`` is the new iterate; ``grad`` and ``partition`` are the gradient and
    index partition of the previous point that produced it, so
    supp(x) is contained in ``prev_support`` (= that partition's support).
    """

    x: np.ndarray
    grad: np.ndarray
    partition: "IndexPartition"
    prev_support: np.ndarray
    k: int
    f_val: float
    phi_val: float
    last_step: StepKind


@dataclass
class SolverReport:
    """Outcome of one solve call."""

    x_final: np.ndarray
    iterations: int
    wall_time: float
    f_final: float
    nnz: int
    residual_norm: float
    newton_steps: int
    pgm_steps: int
    converged: bool
    # (k, f, phi, ||d||, step kind) per iteration
    history: list = field(default_factory=list)
