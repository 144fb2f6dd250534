"""Solvers for obstacle problems of fully nonlinear path-dependent PDEs.

The value functional of the second-order reflected BSDE is computed by tree
and least-squares Monte Carlo backward solvers, cross-checked by nonlinear
expectation lattices, frozen-data cell schemes and independent oracles.
"""

from .config import ExperimentConfig
from .errors import BudgetError, DomainError, NumericError, ParameterError, PpdeError
from .expectation import (
    Lattice,
    lower_expectation,
    positive_hitting_check,
    snell_upper,
    test_membership,
    upper_expectation,
)
from .frozen import (
    CellOptions,
    FrozenCell,
    envelope_values,
    freeze_bundle,
    freeze_data,
    frozen_replay,
    hitting_gap_diagnostic,
    sandwich_check,
    solve_obstacle_cell,
    solve_penalized_cell,
)
from .model import (
    Modulus,
    ProblemData,
    TestFunctional,
    build_problem,
    change_of_variable,
    generator_G,
    invert_change_of_variable,
    monotone_transform_constants,
    operator_L,
    validate,
)
from .oracle import MarkovianSpec, binomial_american, brute_force_snell, fd_variational_inequality
from .paths import (
    DiscretePath,
    LevelCascade,
    PathPoint,
    concat,
    dist_dinfty,
    hitting_time_delta,
    interpolate_hat_path,
    level_cascade,
    shift,
    skeleton_path,
    stop,
)
from .rbsde import (
    RbsdeSolution,
    TreeSpec,
    ValueEstimate,
    dpp_residual,
    skorokhod_report,
    solve_penalized,
    solve_rbsde_lsmc,
    solve_rbsde_tree,
    value_functional,
)
from .simulate import ControlPolicy, PathBundle, euler_bundle, moment_report

__version__ = "0.1.0"
