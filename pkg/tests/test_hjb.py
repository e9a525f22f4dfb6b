import io
import math

import numpy as np
import pytest

from outperf.dual import LognormalSpec, q_closed_form
from outperf.factor import Coefficient, SimConfig, preset_model
from outperf.gbm import power_law_success
from outperf.hjb import (ConfigError, HjbBenchmark, HjbConfig, RangeError, SuccessQuery, _Operator,
                         _pad, frame_drift, solve_hjb, stable_time_steps, success_from_U,
                         terminal_datum, validate_mc)
from outperf.numerics import RngStream, norm_cdf

CONST = preset_model("constant")          # theta 0.2, sigma 0.3, c 0


def small(n=24, **kw):
    kw.setdefault("lambda_max", 0.5)
    return HjbConfig(n=(n, n, n), **kw)


@pytest.fixture(scope="module")
def stock_solution():
    return solve_hjb(CONST, small())


@pytest.fixture(scope="module")
def flat_solution():
    return solve_hjb(CONST, small(benchmark=HjbBenchmark("constant", 1.0)))


def closed_form_U(sol, alpha):
    """E[(1 - z s Z_T S_T / s)^+] on the t = 0 nodes (stock benchmark)."""
    x1, _, x3 = sol.axes
    return np.array([[q_closed_form(LognormalSpec(a + c - alpha * alpha / 2, abs(alpha)), 1.0)
                      for c in x3] for a in x1])


def inner_error(sol, alpha):
    n = sol.u.shape[1]
    lo, hi = n // 4, 3 * n // 4
    exact = closed_form_U(sol, alpha)
    return np.abs(sol.u[0] - exact[:, None, :])[lo:hi, lo:hi, lo:hi].max()


# ---- datum, bounds, monotonicity -------------------------------------------------

def test_terminal_slice_is_exact(stock_solution):
    sol = stock_solution
    x1, x2, x3 = sol.physical_axes(sol.config.T)
    expect = np.maximum(0.0, 1.0 - np.exp(x1[:, None, None] + x3[None, None, :])) * np.ones((1, x2.size, 1))
    assert np.array_equal(sol.u[-1], terminal_datum(sol.config, sol.frame))
    assert np.allclose(sol.u[-1], expect, atol=1e-15, rtol=0)


def test_bounds_and_z_monotonicity(stock_solution):
    d = stock_solution.diagnostics
    assert d["max_bound_violation"] <= 1e-12
    assert d["max_z_increase"] <= 1e-12
    assert np.all(np.diff(stock_solution.u, axis=3) <= 1e-12)


def test_aligned_grid_matches_default_for_constant_model():
    assert HjbConfig.aligned(CONST).log_z_bounds == pytest.approx(HjbConfig().log_z_bounds)


def test_stochastic_factor_model_near_bounds():
    # the s-y correlation keeps the tensor stencil from being monotone here,
    # which the diagnostics report; on the aligned grid the overshoot is small
    m = preset_model("bounded-tanh")
    d = solve_hjb(m, HjbConfig.aligned(m, n=(16, 16, 16), lambda_max=0.5)).diagnostics
    assert not d["monotone_stencil"]
    assert d["max_bound_violation"] <= 1e-3
    assert d["max_z_increase"] <= 1e-3


# ---- accuracy ------------------------------------------------------------------------

def test_constant_case_matches_closed_form(stock_solution):
    n = stock_solution.u.shape[1]
    lo, hi = n // 4, 3 * n // 4
    exact = closed_form_U(stock_solution, -0.1)[lo:hi, lo:hi]
    err = inner_error(stock_solution, -0.1)
    assert err <= 0.02 * np.abs(exact).max()


def test_grid_refinement_reduces_error():
    coarse = inner_error(solve_hjb(CONST, small(16)), -0.1)
    fine = inner_error(solve_hjb(CONST, small(32)), -0.1)
    assert coarse / fine >= 1.5


def test_lambda_minimization_is_exact():
    m = preset_model("bounded-tanh")
    cfg = small(16, lambda_max=2.0)
    op = _Operator(m, cfg, frame_drift(m, cfg))
    # a smooth, nonlinear field standing in for an interior time slice
    x1, x2, x3 = cfg.axes()
    g1, g2, g3 = np.meshgrid(x1, x2, x3, indexing="ij")
    P = _pad(1.0 / (1.0 + np.exp(3 * g3 + g1 - 0.8 * np.sin(2 * g2) * g3)))
    _, _, Q, cp, cm = op.parts(P)
    lam, h = op.minimize(Q, cp, cm)
    assert np.array_equal(h, op.hamiltonian(lam, Q, cp, cm))
    rng = np.random.default_rng(0)
    nodes = tuple(rng.integers(0, 16, (3, 1000)))
    dense = np.linspace(-2.0, 2.0, 20001)
    idx = np.cumsum(np.ones(16 ** 3, int)).reshape(16, 16, 16) - 1
    flat = idx[nodes]
    hs = np.stack([op.hamiltonian(l, Q, cp, cm).ravel()[flat] for l in dense])
    assert np.all(h[nodes] <= hs.min(axis=0) + 1e-12)
    assert np.all(np.abs(lam) <= 2.0)


def test_symmetric_lambda_is_zero():
    m = preset_model("constant", c=Coefficient.constant(0.3), theta=Coefficient.constant(0.1))
    cfg = small(16, n_time=200, benchmark=HjbBenchmark("constant", 1.0))
    sol = solve_hjb(m, cfg)
    lo, hi = 4, 12
    assert np.abs(sol.lam[:, lo:hi, lo:hi, lo:hi]).max() <= 0.05


def test_success_probability_standard_query(stock_solution):
    v, a = success_from_U(stock_solution, SuccessQuery(0.0, 1.0, 0.0, 0.5))
    assert abs(v / norm_cdf(0.1) - 1) <= 0.02
    assert a == pytest.approx(math.exp(-0.005), rel=0.02)


def test_success_probability_flat_benchmark(flat_solution):
    # f = 1, alpha = theta = 0.2: v = Phi(Phi^-1(x) + 0.2)
    v, _ = success_from_U(flat_solution, SuccessQuery(0.0, 1.0, 0.0, 0.5))
    assert abs(v / norm_cdf(0.2) - 1) <= 0.02
    assert power_law_success(1.0, 0.2, 1.0, 0.5).v == pytest.approx(norm_cdf(0.2), abs=1e-14)


def test_success_nondecreasing_in_x(stock_solution):
    vs = [success_from_U(stock_solution, SuccessQuery(0.0, 1.0, 0.0, x))[0]
          for x in np.linspace(0.3, 1.2, 19)]
    assert np.all(np.diff(vs) >= -1e-12)
    assert vs[-1] == 1.0


def test_super_hedge_query_and_report(stock_solution):
    q = SuccessQuery(0.0, 1.0, 0.0, 1.5)
    assert success_from_U(stock_solution, q) == (1.0, 0.0)
    rep = validate_mc(stock_solution, CONST, SimConfig(100, 5), q)
    assert rep.regime == "super-hedge regime" and rep.probability_ok and rep.budget_ok


def test_validate_mc_flat_benchmark(flat_solution):
    rep = validate_mc(flat_solution, CONST, SimConfig(100_000, 20, rng=RngStream(6)),
                      SuccessQuery(0.0, 1.0, 0.0, 0.5))
    assert rep.probability_ok and rep.budget_ok


def test_query_range_errors(stock_solution):
    with pytest.raises(RangeError):
        success_from_U(stock_solution, SuccessQuery(0.0, 100.0, 0.0, 0.5))
    with pytest.raises(RangeError):
        success_from_U(stock_solution, SuccessQuery(2.0, 1.0, 0.0, 0.5))
    with pytest.raises(RangeError):
        SuccessQuery(0.0, 1.0, 0.0, -0.5)


# ---- configuration ---------------------------------------------------------------------

def test_stability_is_checked():
    cfg = small(24, lambda_max=5.0, n_time=50)
    need = stable_time_steps(CONST, cfg)
    assert need > 50
    with pytest.raises(ConfigError, match=str(need)):
        solve_hjb(CONST, cfg)


@pytest.mark.parametrize("kw", [dict(n=(4, 8, 8)), dict(lambda_max=0.0), dict(y_bounds=(1.0, -1.0)),
                                dict(n_time=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        HjbConfig(**kw)


def test_config_from_dict():
    cfg = HjbConfig.from_dict({"n": [16, 16, 16], "benchmark": {"kind": "power", "p": 2}})
    assert cfg.n == (16, 16, 16) and cfg.benchmark.p == 2.0
    with pytest.raises(ConfigError):
        HjbConfig.from_dict({"grid": 3})
    with pytest.raises(ConfigError):
        HjbBenchmark("stock-factor")


def test_exports_are_deterministic(tmp_path, flat_solution):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    flat_solution.write_npz(a)
    flat_solution.write_npz(b)
    assert a.read_bytes() == b.read_bytes()
    with np.load(a) as z:
        assert np.array_equal(z["u"], flat_solution.u)
    buf = io.StringIO()
    flat_solution.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,ln_s,y,ln_z,U,lambda"
    assert len(lines) == 1 + 24 ** 3
