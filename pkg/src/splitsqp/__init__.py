"""Monotone splitting SQP for two-block nonconvex programs with linear coupling.

The main entry points are :func:`solve` (splitting method on boxes),
:func:`solve_baseline` (coupled full-QP counterpart) and :func:`solve_B`
(splitting method with x and y in closed convex sets).
"""

from .al_sqp import solve_baseline
from .boxqp import BoxQP, BoxQPBudgetError, NotPositiveDefiniteError, solve_box_qp
from .convex_sets import (AffineSet, BallSet, BoxSet, CallbackSet, ProjectableSet, SimplexSet,
                          WholeSpace, solve_B)
from .dispatch import (EDInstance, UnitParams, build_ed_problem, dispatch_config,
                       load_instance, table1_instance)
from .kkt import Multipliers, ResidualBreakdown, kkt_residual_original, kkt_residual_reformulated
from .objectives import (CallbackObjective, CubicSeparableObjective, Objective,
                         QuadraticObjective)
from .problem import (EvaluationError, Iterate, ProblemDimensionError, SolverConfig,
                      TwoBlockProblem, make_iterate, problem_from_callbacks, reformulate)
from .report import SolveReport, load_report
from .splitting import LineSearchError, SolverInputError, solve

__version__ = "0.1.0"
