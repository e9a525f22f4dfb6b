"""Dual evaluation of the outperformance probability.

For a nonnegative random variable ``M`` (density times benchmark),

    V(x) = inf_{a >= 0} { x a + q(a) },      q(a) = E[(1 - a M)^+],

so ``V`` is the concave conjugate of the convex, nonincreasing ``q``.
``q`` can be computed in closed form (lognormal ``M``), by quadrature
(``M`` a function of one standard normal) or by Monte Carlo.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics.normal import norm_cdf
from .numerics.optimize import minimize_convex_1d
from .numerics.quadrature import normal_integral, sign_changes
from .numerics.rng import RngStream

MODES = ("closed_form", "quadrature", "monte_carlo")
DEFAULT_CHUNK = 1 << 16


class DualError(ValueError):
    pass


@dataclass(frozen=True)
class LognormalSpec:
    """``M = exp(m + s N)``."""

    m: float
    s: float

    def __post_init__(self):
        if not (math.isfinite(self.m) and math.isfinite(self.s) and self.s >= 0):
            raise DualError(f"lognormal spec needs finite m and s >= 0, got ({self.m}, {self.s})")

    @classmethod
    def from_gbm(cls, market, bench):
        """Law of ``Z_T * beta S_T^p`` in the complete market."""
        from .gbm import effective_exponent, superhedge_price

        f0 = superhedge_price(market, bench)
        if f0 <= 0:
            raise DualError("benchmark is identically zero")
        z = effective_exponent(market, bench)
        return cls(math.log(f0) - 0.5 * z * z * market.T, abs(z) * math.sqrt(market.T))

    @property
    def mean(self):
        return math.exp(self.m + 0.5 * self.s * self.s)

    def of_normal(self, n):
        return np.exp(self.m + self.s * np.asarray(n, dtype=float))


@dataclass(frozen=True)
class NormalFunctionalSpec:
    """``M = g(N)`` for a vectorized ``g >= 0``; ``kinks`` are points where
    ``g`` is not smooth (they become quadrature panel edges)."""

    g: Callable
    kinks: tuple = ()

    def of_normal(self, n):
        return self.g(np.asarray(n, dtype=float))

    @property
    def mean(self):
        return normal_integral(self.g, breakpoints=self.kinks)


@dataclass(frozen=True)
class SampleSpec:
    """Monte Carlo draws of ``M``; ``sampler(generator, size)`` returns an
    array of nonnegative draws."""

    sampler: Callable
    n_paths: int
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        if int(self.n_paths) <= 0 or int(self.chunk) <= 0:
            raise DualError("n_paths and chunk must be positive")


@dataclass(frozen=True)
class DualResult:
    v: float
    a_hat: float
    q_at_a_hat: float
    std_error: float = None


def _check_a(a):
    a = float(a)
    if not a >= 0:
        raise DualError(f"a: must be nonnegative, got {a!r}")
    return a


def q_closed_form(spec, a):
    a = _check_a(a)
    if a == 0:
        return 1.0
    if math.isinf(a):
        return 0.0
    if spec.s == 0:
        return max(0.0, 1.0 - a * math.exp(spec.m))
    d2 = (-math.log(a) - spec.m) / spec.s
    return norm_cdf(d2) - a * spec.mean * norm_cdf(d2 - spec.s)


def q_quadrature(spec, a):
    a = _check_a(a)
    if a == 0:
        return 1.0
    if isinstance(spec, LognormalSpec):
        if spec.s == 0:
            return max(0.0, 1.0 - a * math.exp(spec.m))
        cut = (-math.log(a) - spec.m) / spec.s
        return normal_integral(lambda n: 1.0 - a * spec.of_normal(n), hi=cut)
    kinks = list(spec.kinks)
    kinks += sign_changes(lambda n: 1.0 - a * spec.of_normal(n))
    return normal_integral(lambda n: np.maximum(0.0, 1.0 - a * spec.of_normal(n)),
                           breakpoints=kinks)


class MonteCarloSample:
    """Frozen draws of ``M`` so that ``q`` is a deterministic function of ``a``.

    ``units`` has shape ``(n_units, k)``: lognormal specs use antithetic pairs
    (``k = 2``) and each pair is one unit for the standard error.
    """

    def __init__(self, units):
        self.units = np.asarray(units, dtype=float)
        self.n_units = self.units.shape[0]

    @classmethod
    def draw(cls, spec, n_paths, rng=None, chunk=DEFAULT_CHUNK):
        rng = rng or RngStream(0)
        if isinstance(spec, SampleSpec):
            n_paths, rng, chunk = spec.n_paths, spec.rng, spec.chunk
        n_paths = int(n_paths)
        parts = []
        done, k = 0, 0
        while done < n_paths:
            size = min(chunk, n_paths - done)
            gen = rng.generator(chunk=k)
            if isinstance(spec, SampleSpec):
                d = np.asarray(spec.sampler(gen, size), dtype=float)
                if d.shape != (size,) or np.any(d < 0) or not np.all(np.isfinite(d)):
                    raise DualError("sampler must return `size` finite nonnegative draws")
                parts.append(d[:, None])
            else:
                # antithetic pairs: ceil(n_paths / 2) units
                n = gen.standard_normal((size + 1) // 2)
                parts.append(np.stack([spec.of_normal(n), spec.of_normal(-n)], axis=1))
            done += size
            k += 1
        return cls(np.concatenate(parts, axis=0))

    @property
    def mean(self):
        return float(self.units.mean())

    @property
    def zero_fraction(self):
        return float(np.mean(self.units == 0))

    def estimate(self, values):
        """Mean and standard error of per-draw ``values`` grouped by unit."""
        per_unit = values.mean(axis=1)
        mean = math.fsum(per_unit) / self.n_units
        if self.n_units < 2:
            return mean, math.nan
        var = math.fsum((per_unit - mean) ** 2) / (self.n_units - 1)
        return mean, math.sqrt(var / self.n_units)

    def q(self, a):
        a = _check_a(a)
        return self.estimate(np.maximum(0.0, 1.0 - a * self.units))


def q_value(spec, a, mode="closed_form", n_paths=100_000, rng=None):
    """``(E[(1 - a M)^+], std_error)``; ``std_error`` is ``None`` except in
    Monte Carlo mode."""
    a = _check_a(a)
    if mode not in MODES:
        raise DualError(f"mode: expected one of {MODES}, got {mode!r}")
    if mode == "closed_form":
        if not isinstance(spec, LognormalSpec):
            raise DualError("closed_form mode requires a LognormalSpec")
        return q_closed_form(spec, a), None
    if mode == "quadrature":
        if isinstance(spec, SampleSpec):
            raise DualError("quadrature mode requires a normal-functional spec")
        return q_quadrature(spec, a), None
    if isinstance(spec, MonteCarloSample):
        return spec.q(a)
    return MonteCarloSample.draw(spec, n_paths, rng).q(a)


def _bracket(obj, mean_m, max_doublings=200):
    a_max = 4.0 / mean_m if mean_m > 0 else 1.0
    for _ in range(max_doublings):
        if obj(a_max) > obj(0.5 * a_max):
            return a_max
        a_max *= 2.0
    raise DualError("could not bracket the dual minimizer")


def minimize_dual(spec, x, mode="closed_form", n_paths=100_000, rng=None):
    """``inf_{a >= 0} {x a + q(a)}`` with the minimizing ``a``."""
    x = float(x)
    if not (math.isfinite(x) and x >= 0):
        raise DualError(f"x: capital must be nonnegative, got {x!r}")
    if mode not in MODES:
        raise DualError(f"mode: expected one of {MODES}, got {mode!r}")
    se = None
    if mode == "monte_carlo":
        sample = spec if isinstance(spec, MonteCarloSample) else MonteCarloSample.draw(spec, n_paths, rng)
        q = lambda a: sample.q(a)[0]
        mean_m, p_zero, rel_tol = sample.mean, sample.zero_fraction, 1e-4
    else:
        q = lambda a: q_value(spec, a, mode)[0]
        mean_m, p_zero, rel_tol = spec.mean, 0.0, 1e-8
        if isinstance(spec, NormalFunctionalSpec):
            p_zero = normal_integral(lambda n: (spec.of_normal(n) == 0).astype(float),
                                     breakpoints=spec.kinks)

    if x >= mean_m:
        a_hat = 0.0
    elif x == 0:
        a_hat = math.inf
    else:
        obj = lambda a: x * a + q(a)
        a_max = _bracket(obj, mean_m)
        a_hat, _ = minimize_convex_1d(obj, 0.0, a_max, tol=rel_tol * a_max)

    if math.isinf(a_hat):
        return DualResult(p_zero, a_hat, p_zero, 0.0 if mode == "monte_carlo" else None)
    if mode == "monte_carlo":
        qa, se = sample.q(a_hat)
    else:
        qa = q(a_hat)
    v = min(1.0, max(0.0, x * a_hat + qa))
    return DualResult(v, a_hat, qa, se)
