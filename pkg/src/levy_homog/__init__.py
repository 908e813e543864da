"""Numerical homogenization of Levy integro-differential operators with asymmetric densities."""
from .cell_solver import (CellProblem, ErgodicResult, MaxCellProblem, ergodic_constant, ergodic_constant_max,
                          holder_seminorm, solve_discounted, solve_discounted_max)
from .effective_op import EffectiveOperator, check_subellipticity, eval_effective, tabulate, tabulate_max
from .errors import (ConditionAFailure, ConfigError, ErgodicityFailure, LevyHomogError, ParseError,
                     PreconditionError, SolverError)
from .expr import Expression, parse
from .homogenize import StudySetup, convergence_study, solve_effective, solve_epsilon
from .measures import (JumpMap, LevyDensity, builtin_example, check_homogeneity, estimate_alpha,
                       example5_structures, extract_q0, symmetric_stable)
from .nonlocal_op import (BoxDomain, DiscreteOperator, DomainField, PeriodicField, TorusGrid, apply,
                          assemble_domain, assemble_periodic)
from .quadrature import QuadratureRule, build_rule, explicit_rule, refine
from .reachability import build_graph, check_condition_B, smp_check

__version__ = "0.1.0"
