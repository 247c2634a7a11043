"""Box-constrained l0-regularized least squares: subspace Newton solver and benchmarks."""

from .baselines import solve_pga, solve_piht
from .model import (
    BoxBounds,
    LeastSquaresObjective,
    Problem,
    SmoothObjective,
    SolverParams,
    SolverReport,
    StepKind,
    validate_problem,
)
from .operators import (
    ComposedMap,
    DenseMap,
    HaarMap,
    LinearMap,
    PartialDFTMap,
    haar_forward,
    haar_inverse,
    power_iteration,
)
from .prox import box_project, prox_l0_box, prox_l1_box, prox_oracle_1d
from .solver import (
    DirectionBundle,
    accept_newton,
    armijo_search,
    compute_alpha_bar,
    estimate_lipschitz,
    gamma_direction,
    lambda_schedule,
    lambda_upper_bound,
    newton_direction,
    pgm_step,
    select_tau,
    solve_bnl0r,
)
from .stationarity import (
    IndexPartition,
    ResidualF,
    check_tau_stationary,
    partition_indices,
    residual_F,
)

__version__ = "0.1.0"

__all__ = [
    "BoxBounds",
    "ComposedMap",
    "DenseMap",
    "DirectionBundle",
    "HaarMap",
    "IndexPartition",
    "LeastSquaresObjective",
    "LinearMap",
    "PartialDFTMap",
    "Problem",
    "ResidualF",
    "SmoothObjective",
    "SolverParams",
    "SolverReport",
    "StepKind",
    "accept_newton",
    "armijo_search",
    "box_project",
    "check_tau_stationary",
    "compute_alpha_bar",
    "estimate_lipschitz",
    "gamma_direction",
    "haar_forward",
    "haar_inverse",
    "lambda_schedule",
    "lambda_upper_bound",
    "newton_direction",
    "partition_indices",
    "pgm_step",
    "power_iteration",
    "prox_l0_box",
    "prox_l1_box",
    "prox_oracle_1d",
    "residual_F",
    "select_tau",
    "solve_bnl0r",
    "solve_pga",
    "solve_piht",
    "validate_problem",
]
