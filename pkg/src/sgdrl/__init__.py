"""Stochastic approximation and SGD: recursion engine, hypothesis checkers, bound certificates, rate experiments."""
from .certificates import l2_bound_certificate, lp_error, lp_induction_chain, noise_moment_check, rate_fit
from .core_math import LyapunovSpec, check_power_convexity, check_power_reverse_triangle, inner, lyapunov_gradient, lyapunov_value
from .drift import DriftField, check_contraction, derived_bounds_check, euler_monotonicity_check, transport_constants
from .engine import SaaProblem, SgdProblem, from_sgd, simulate, simulate_ensemble, step
from .gronwall import RecursionSpec, bound_constant, recursion_envelope, verify_bound
from .linreg import build_sgd_problem, gradient, interchange_check, spd_contraction_constant, true_minimizer
from .schedules import check_admissibility, decay_ratio_check, gamma, parse_schedule, polynomial, tabulated

__version__ = "0.1.0"
