"""Deterministic quadrature for expectations of functions of a standard normal."""

import math
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .normal import norm_pdf

# beyond |n| = 12 the Gaussian density is below 1e-31
TRUNCATION = 12.0


@lru_cache(maxsize=None)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=None)
def _hermite(n):
    return np.polynomial.hermite.hermgauss(n)


def gauss_hermite_expectation(g, n_nodes=64):
    """E[g(N)] by Gauss-Hermite. Only accurate for smooth ``g``."""
    x, w = _hermite(n_nodes)
    return float(np.dot(w, g(math.sqrt(2.0) * x)) / math.sqrt(math.pi))


def normal_integral(g, lo=-TRUNCATION, hi=TRUNCATION, breakpoints=(),
                    panel_width=0.5, nodes=16):
    """Integral of ``g(n) * phi(n)`` over ``[lo, hi]``.

    Composite Gauss-Legendre; ``breakpoints`` (kinks of ``g``) are made
    panel boundaries so every panel sees a smooth integrand.
    """
    lo = max(lo, -TRUNCATION)
    hi = min(hi, TRUNCATION)
    if hi <= lo:
        return 0.0
    cuts = sorted({lo, hi, *(b for b in breakpoints if lo < b < hi)})
    x, w = _legendre(nodes)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        k = max(1, math.ceil((b - a) / panel_width))
        edges = np.linspace(a, b, k + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        wts = (half[:, None] * w[None, :]).ravel()
        total += float(np.dot(wts, g(pts) * norm_pdf(pts)))
    return total


def sign_changes(h, lo=-TRUNCATION, hi=TRUNCATION, n_scan=4001):
    """Roots of ``h`` on ``[lo, hi]`` located by a scan and refined by Brent."""
    grid = np.linspace(lo, hi, n_scan)
    vals = h(grid)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        roots.append(brentq(lambda u: float(h(np.array([u]))[0]), grid[i], grid[i + 1],
                            xtol=1e-14, rtol=1e-14))
    roots.extend(float(grid[i]) for i in np.nonzero(vals == 0.0)[0])
    return sorted(roots)
