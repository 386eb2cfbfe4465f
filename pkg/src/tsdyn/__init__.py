"""Linear and almost-linear dynamic systems on periodic time scales.

A system ``x^Delta = A(t) x`` on a time scale is lifted to an ODE in a
rescaled time ``s(t)``; hyperbolicity, bounded solutions and stable manifolds
are computed for the lift and mapped back to the scale.
"""
from .errors import TsdynError
from .timescale import GridFunction, TimeScale, delta_antiderivative, delta_derivative, delta_integral
from .matlog import is_positive_matrix, matrix_log, regressivity_report
from .lift import (
    PiecewiseMatrix,
    check_fundamental_identity,
    lift_coefficient,
    lift_rhs,
    project_rhs,
    rescale,
    rescale_inverse,
)
from .dichotomy import (
    Dichotomy,
    bounded_solution_ode,
    bounded_solution_ts,
    cauchy_matrix,
    detect_dichotomy,
    fundamental_matrix_ts,
    pliss_maizel_probe,
    weighted_norm_check,
)
from .nonlinear import Perturbation, solve_almost_linear, stable_manifold, verify_manifold_point

__version__ = "0.1.0"
