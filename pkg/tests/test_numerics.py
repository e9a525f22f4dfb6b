import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from outperf.numerics import (LpInputError, LpProblem, RngStream, gauss_hermite_expectation,
                              minimize_convex_1d, norm_cdf, norm_inv_cdf, normal_integral,
                              sign_changes, solve_lp)

mpmath.mp.dps = 40


def mp_cdf(u):
    return float(mpmath.ncdf(u))


# ---- normal distribution ----------------------------------------------------

def test_cdf_reference_values():
    assert norm_cdf(0.1) == pytest.approx(0.539827837277029, abs=1e-15)
    assert norm_cdf(0.0) == 0.5
    assert norm_inv_cdf(0.975) == pytest.approx(1.959963984540054, abs=1e-14)


@pytest.mark.parametrize("u", [-37.0, -20.0, -8.0, -3.3, -1.0, -1e-3, 0.5, 2.0, 6.0, 8.2])
def test_cdf_matches_high_precision(u):
    ref = mp_cdf(u)
    assert abs(norm_cdf(u) - ref) <= 1e-15 * max(ref, 1e-300) + 1e-300 or \
        abs(norm_cdf(u) / ref - 1) < 1e-13


def test_cdf_vectorized_agrees_with_scalar():
    u = np.linspace(-10, 10, 101)
    vec = norm_cdf(u)
    assert np.allclose(vec, [norm_cdf(float(v)) for v in u], rtol=1e-14, atol=0)


@pytest.mark.parametrize("q", [1e-300, 1e-20, 1e-10, 0.01, 0.02425, 0.3, 0.5, 0.77, 0.97575, 0.999, 1 - 1e-12])
def test_quantile_matches_high_precision(q):
    guess = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(0.5 if q < 1e-15 else q) - 1))
    if q < 1e-15:
        guess = -math.sqrt(-2 * math.log(q))
    ref = float(mpmath.findroot(lambda u: mpmath.log(mpmath.ncdf(u)) - mpmath.log(q), guess))
    assert norm_inv_cdf(q) == pytest.approx(ref, rel=1e-13, abs=1e-13)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-8.0, max_value=8.0))
def test_quantile_round_trip(u):
    # above the median q is stored with absolute spacing ~1e-16, which fixes u
    # only to about ulp / phi(u)
    slack = 1e-9 + (4e-16 / float(mpmath.npdf(u)) if u > 0 else 0.0)
    assert norm_inv_cdf(norm_cdf(u)) == pytest.approx(u, abs=slack)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_domain(q):
    with pytest.raises(ValueError):
        norm_inv_cdf(q)


# ---- 1-d convex minimization ------------------------------------------------

def test_minimize_convex_interior_and_endpoints():
    a, v = minimize_convex_1d(lambda t: (t - 0.3) ** 2 + 1, 0.0, 2.0, tol=1e-12)
    assert a == pytest.approx(0.3, abs=1e-6) and v == pytest.approx(1.0, abs=1e-12)
    a, v = minimize_convex_1d(lambda t: t, 0.0, 1.0)
    assert a == 0.0 and v == 0.0
    a, _ = minimize_convex_1d(lambda t: -t, 0.0, 1.0)
    assert a == 1.0


# ---- quadrature ---------------------------------------------------------------

def test_normal_integral_moments():
    assert normal_integral(lambda n: np.ones_like(n)) == pytest.approx(1.0, abs=1e-14)
    assert normal_integral(lambda n: n * n) == pytest.approx(1.0, abs=1e-13)
    assert normal_integral(np.exp) == pytest.approx(math.exp(0.5), rel=1e-13)


def test_normal_integral_kinked_integrand():
    # E[(N - 0.3)^+] = phi(0.3) - 0.3 (1 - Phi(0.3))
    exact = math.exp(-0.045) / math.sqrt(2 * math.pi) - 0.3 * (1 - norm_cdf(0.3))
    got = normal_integral(lambda n: np.maximum(n - 0.3, 0.0), breakpoints=[0.3])
    assert got == pytest.approx(exact, abs=1e-14)


def test_gauss_hermite_smooth():
    assert gauss_hermite_expectation(lambda n: np.cos(n)) == pytest.approx(math.exp(-0.5), abs=1e-14)


def test_sign_changes():
    roots = sign_changes(lambda n: (n - 1.0) * (n + 2.0))
    assert np.allclose(sorted(roots), [-2.0, 1.0], atol=1e-10)


# ---- RNG ----------------------------------------------------------------------

def test_rng_reproducible_and_independent():
    a = RngStream(42).generator(chunk=3).standard_normal(5)
    b = RngStream(42).generator(chunk=3).standard_normal(5)
    c = RngStream(42).generator(chunk=4).standard_normal(5)
    d = RngStream(42, stream=1).generator(chunk=3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_rng_seed_range(seed):
    with pytest.raises(ValueError):
        RngStream(seed)


# ---- LP -----------------------------------------------------------------------

def test_lp_textbook_max():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
    p = LpProblem([3, 5], [[1, 0], [0, 2], [3, 2]], ["<="] * 3, [4, 12, 18], maximize=True)
    s = solve_lp(p)
    assert s.status == "optimal"
    assert np.allclose(s.x, [2, 6], atol=1e-12) and s.objective == pytest.approx(36, abs=1e-12)
    assert s.duals @ p.b == pytest.approx(36, abs=1e-10)


def test_lp_equality_free_and_bounded_variables():
    # min x - y with x + y == 1, x free, -2 <= y <= 3  -> y = 3, x = -2
    p = LpProblem([1, -1], [[1, 1]], ["=="], [1], bounds=[(None, None), (-2, 3)])
    s = solve_lp(p)
    assert s.status == "optimal"
    assert np.allclose(s.x, [-2, 3]) and s.objective == pytest.approx(-5)


def test_lp_infeasible_and_unbounded():
    assert solve_lp(LpProblem([1], [[1], [1]], ["<=", ">="], [1, 2])).status == "infeasible"
    assert solve_lp(LpProblem([1], [[1]], [">="], [0], maximize=True)).status == "unbounded"


def test_lp_degenerate_cycling_example():
    # Beale's example cycles under the textbook rule; Bland's rule terminates
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    s = solve_lp(LpProblem(c, A, ["<="] * 3, [0, 0, 1]))
    assert s.status == "optimal" and s.objective == pytest.approx(-0.05, abs=1e-12)


def test_lp_deterministic():
    p = LpProblem([1, 1, 1], [[1, 1, 0], [0, 1, 1]], [">=", ">="], [1, 1])
    s1, s2 = solve_lp(p), solve_lp(p)
    assert np.array_equal(s1.x, s2.x) and s1.objective == s2.objective


@pytest.mark.parametrize("args", [
    dict(c=[1, 2], A=[[1, 2, 3]], senses=["<="], b=[1]),
    dict(c=[1], A=[[1]], senses=["<"], b=[1]),
    dict(c=[1], A=[[1]], senses=["<=", "<="], b=[1]),
    dict(c=[1], A=[[1]], senses=["<="], b=[1], bounds=[(2, 1)]),
])
def test_lp_input_errors(args):
    with pytest.raises(LpInputError):
        LpProblem(**args)


def test_lp_random_strong_duality_against_highs():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(100):
        m, n = rng.integers(2, 8), rng.integers(2, 10)
        A = rng.uniform(-1, 1, (m, n))
        x0 = rng.uniform(0, 1, n)
        b = A @ x0 + rng.uniform(0, 1, m)       # x0 feasible
        c = rng.uniform(-1, 1, n)
        bounds = [(0, 2)] * n
        s = solve_lp(LpProblem(c, A, ["<="] * m, b, bounds))
        ref = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        assert s.status == "optimal"
        assert s.objective == pytest.approx(ref.fun, abs=1e-8)
        # dual objective: b.y + sum of bound terms = primal objective
        y = s.duals
        assert np.all(y <= 1e-9)
        reduced = c - A.T @ y
        dual_obj = b @ y + np.sum(np.minimum(reduced, 0.0) * 2.0)
        assert dual_obj == pytest.approx(s.objective, abs=1e-8)
        checked += 1
    assert checked == 100
