"""Complete-market (geometric Brownian motion) outperformance probabilities.

The stock follows ``dS = S (sigma theta dt + sigma dW)`` with zero interest
rate, so the unique martingale density is
``Z_T = exp(-theta W_T - theta^2 T / 2)``. For a power benchmark
``F = beta S_T^p`` the product ``Z_T F`` is lognormal and

    V(x) = inf_{a >= 0} { x a + E[(1 - a Z_T F)^+] }

has a closed form.
"""

import math
from dataclasses import dataclass

from scipy.optimize import bisect

from .numerics.normal import norm_cdf, norm_inv_cdf

DEGENERATE_TOL = 1e-12


class MarketError(ValueError):
    pass


@dataclass(frozen=True)
class GbmMarket:
    s0: float
    sigma: float
    theta: float
    T: float

    def __post_init__(self):
        for name in ("s0", "sigma", "T"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise MarketError(f"{name}: must be positive and finite, got {v!r}")
        if not math.isfinite(self.theta):
            raise MarketError(f"theta: must be finite, got {self.theta!r}")


@dataclass(frozen=True)
class PowerBenchmark:
    """``F = beta * S_T ** p``."""

    beta: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise MarketError(f"beta: must be nonnegative, got {self.beta!r}")
        if not math.isfinite(self.p):
            raise MarketError(f"p: must be finite, got {self.p!r}")

    def scaled(self, factor):
        return PowerBenchmark(self.beta * factor, self.p)


@dataclass(frozen=True)
class EtfSpec:
    """Fund with initial value ``l0`` holding ``p`` times its value in the stock."""

    l0: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.l0) and self.l0 > 0):
            raise MarketError(f"l0: must be positive, got {self.l0!r}")


@dataclass(frozen=True)
class GbmDualSolution:
    v: float
    a_hat: float
    d1: float
    d2: float
    f0: float
    z: float


def superhedge_price(market, bench):
    """``E^Q[beta S_T^p] = beta s0^p exp(sigma^2 p (p-1) T / 2)``."""
    if bench.beta == 0:
        return 0.0
    p, s = bench.p, market.sigma
    return bench.beta * market.s0 ** p * math.exp(0.5 * s * s * p * (p - 1.0) * market.T)


def effective_exponent(market, bench):
    return bench.p * market.sigma - market.theta


def _d_terms(a, f0, z, T):
    if a == 0:
        return math.inf, math.inf
    if math.isinf(a):
        return -math.inf, -math.inf
    vol = abs(z) * math.sqrt(T)
    d1 = (-math.log(a * f0) - 0.5 * T * z * z) / vol
    return d1, d1 + vol


def success_probability(market, bench, x):
    return power_law_success(superhedge_price(market, bench),
                             effective_exponent(market, bench), market.T, x)


def power_law_success(f0, z, T, x):
    """Closed form when ``Z_T F = f0 exp(-z^2 T/2 + z sqrt(T) N)``.

    ``f0`` is the super-hedging price and ``z`` the log-volatility per unit
    square-root time of the product.
    """
    x = float(x)
    if not (math.isfinite(x) and x >= 0):
        raise MarketError(f"x: capital must be nonnegative, got {x!r}")
    if x >= f0:
        return GbmDualSolution(1.0, 0.0, math.inf, math.inf, f0, z)
    if abs(z) < DEGENERATE_TOL:
        # Z_T F is the constant f0
        return GbmDualSolution(x / f0, 1.0 / f0, math.nan, math.nan, f0, z)
    if x == 0:
        # F > 0 a.s., so nothing can be hedged
        return GbmDualSolution(0.0, math.inf, -math.inf, -math.inf, f0, z)
    vol = abs(z) * math.sqrt(T)
    y = norm_inv_cdf(x / f0)
    a_hat = math.exp(-y * vol - 0.5 * z * z * T - math.log(f0))
    d1, d2 = _d_terms(a_hat, f0, z, T)
    v = x * a_hat + norm_cdf(d2) - a_hat * f0 * norm_cdf(d1)
    return GbmDualSolution(min(1.0, max(0.0, v)), a_hat, d1, d2, f0, z)


def capital_for_probability(market, bench, target, xtol=1e-14):
    """Smallest capital reaching success probability ``target``."""
    target = float(target)
    if not 0.0 <= target <= 1.0:
        raise MarketError(f"target: probability must lie in [0, 1], got {target!r}")
    f0 = superhedge_price(market, bench)
    if target == 1.0 or f0 == 0.0:
        return f0
    if target == 0.0:
        return 0.0
    if abs(effective_exponent(market, bench)) < DEGENERATE_TOL:
        return target * f0
    return bisect(lambda x: success_probability(market, bench, x).v - target,
                  0.0, f0, xtol=xtol * max(1.0, f0), maxiter=500)


def etf_benchmark(market, etf):
    """Power benchmark replicating the terminal value of a leveraged fund.

    A fund with constant leverage ``p`` ends at
    ``l0 (S_T/s0)^p exp(p (1-p) sigma^2 T / 2)``.
    """
    p, s = etf.p, market.sigma
    beta = etf.l0 * market.s0 ** (-p) * math.exp(0.5 * p * (1.0 - p) * s * s * market.T)
    return PowerBenchmark(beta, p)


def vtilde_beta(market, bench, x, beta):
    """Success probability against the benchmark scaled by ``beta``."""
    beta = float(beta)
    if not (math.isfinite(beta) and beta >= 0):
        raise MarketError(f"beta: must be nonnegative, got {beta!r}")
    return success_probability(market, bench.scaled(beta), x).v
