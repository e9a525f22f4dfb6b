"""Maximal probability of outperforming a random benchmark.

Finite-space hypothesis-testing solvers, complete-market closed forms,
dual evaluation by quadrature and Monte Carlo, a stochastic factor model
simulator and an HJB finite-difference solver.
"""

__version__ = "0.1.0"
