"""Numerical kernels shared by the solvers."""

from .lp import LpInputError, LpProblem, LpSolution, solve_lp
from .normal import norm_cdf, norm_inv_cdf, norm_pdf
from .optimize import minimize_convex_1d
from .quadrature import gauss_hermite_expectation, normal_integral, sign_changes
from .rng import RngStream

__all__ = [
    "LpInputError", "LpProblem", "LpSolution", "solve_lp",
    "norm_cdf", "norm_inv_cdf", "norm_pdf",
    "minimize_convex_1d",
    "gauss_hermite_expectation", "normal_integral", "sign_changes",
    "RngStream",
]
