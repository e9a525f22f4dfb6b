"""Stochastic factor model and Monte Carlo checks of the dual problem.

    dS/S = sigma(Y) (theta(Y) dt + dW)
    dY   = b(Y) dt + c(Y) (rho dW + sqrt(1 - rho^2) dW')
    dZ/Z = -theta(Y) dW - lambda dW'

Each ``lambda`` gives a martingale density ``Z^lambda``; ``lambda = 0`` is the
minimal martingale measure. For a benchmark ``beta S_T^delta`` with delta in
{0, 1} the dual value is

    V_lambda(x) = inf_{a >= 0} { x a + E[(1 - a beta Z^lambda_T S_T^delta)^+] }.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .dual import MonteCarloSample, minimize_dual
from .gbm import power_law_success
from .numerics.rng import RngStream

DEFAULT_CHUNK = 1 << 15


class ModelError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Coefficient:
    """Named coefficient family ``y -> value``.

    ``constant``        value
    ``affine-clamped``  clip(c0 + c1 y, lo, hi)
    ``bounded-tanh``    c0 + c1 tanh(y)
    """

    kind: str
    c0: float
    c1: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf

    KINDS = ("constant", "affine-clamped", "bounded-tanh")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ModelError(f"coefficient kind {self.kind!r} not in {self.KINDS}")
        if self.lo > self.hi:
            raise ModelError(f"coefficient clamp [{self.lo}, {self.hi}] is empty")

    @classmethod
    def constant(cls, value):
        return cls("constant", float(value))

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (int, float)):
            return cls.constant(d)
        d = dict(d)
        kind = d.pop("kind", "constant")
        return cls(kind, **{k: float(v) for k, v in d.items()})

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full_like(y, self.c0)
        if self.kind == "affine-clamped":
            return np.clip(self.c0 + self.c1 * y, self.lo, self.hi)
        return self.c0 + self.c1 * np.tanh(y)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(y)
        if self.kind == "affine-clamped":
            v = self.c0 + self.c1 * y
            return np.where((v > self.lo) & (v < self.hi), self.c1, 0.0)
        return self.c1 / np.cosh(y) ** 2

    def range(self):
        """``(inf, sup)`` over the real line."""
        if self.kind == "constant":
            return self.c0, self.c0
        if self.kind == "affine-clamped":
            if self.c1 == 0:
                v = min(max(self.c0, self.lo), self.hi)
                return v, v
            return self.lo, self.hi
        return self.c0 - abs(self.c1), self.c0 + abs(self.c1)

    @property
    def is_constant(self):
        lo, hi = self.range()
        return lo == hi


@dataclass(frozen=True)
class FactorModel:
    theta: Coefficient
    sigma: Coefficient
    b: Coefficient
    c: Coefficient
    rho: float
    s0: float = 1.0
    y0: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ModelError(f"rho: must lie in (-1, 1), got {self.rho}")
        if not self.s0 > 0:
            raise ModelError(f"s0: must be positive, got {self.s0}")
        if self.sigma.range()[0] <= 0:
            raise ModelError("sigma: family must be bounded away from zero")
        if self.c.range()[0] < 0:
            raise ModelError("c: family must be nonnegative")

    def alpha_range(self, delta, y=None):
        """``(inf, sup)`` of ``|theta - delta sigma|`` over ``y`` (a dense grid
        on [-20, 20] by default; all families settle well inside)."""
        y = np.linspace(-20.0, 20.0, 40001) if y is None else np.asarray(y, dtype=float)
        a = np.abs(self.theta(y) - delta * self.sigma(y))
        return float(a.min()), float(a.max())

    def constant_alpha(self, delta, tol=1e-12):
        y = np.linspace(-20.0, 20.0, 4001)
        alpha = self.theta(y) - delta * self.sigma(y)
        if np.ptp(alpha) > tol:
            return None
        return float(alpha[0])

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        preset = d.pop("preset", None)
        base = preset_model(preset) if preset else None
        kw = {}
        for name in ("theta", "sigma", "b", "c"):
            if name in d:
                kw[name] = Coefficient.from_dict(d.pop(name))
        for name in ("rho", "s0", "y0"):
            if name in d:
                kw[name] = float(d.pop(name))
        if d:
            raise ModelError(f"unknown model field(s): {', '.join(sorted(d))}")
        if base is None:
            missing = {"theta", "sigma", "b", "c", "rho"} - kw.keys()
            if missing:
                raise ModelError(f"model is missing field(s): {', '.join(sorted(missing))}")
            return cls(**kw)
        return replace(base, **kw)


def preset_model(name, **overrides):
    if name == "bounded-tanh":
        m = FactorModel(
            theta=Coefficient("bounded-tanh", 0.5, 0.1),
            sigma=Coefficient("bounded-tanh", 0.2, 0.05),
            b=Coefficient("affine-clamped", 0.0, -1.0, -5.0, 5.0),
            c=Coefficient.constant(0.5),
            rho=-0.5,
        )
    elif name == "constant":
        m = FactorModel(
            theta=Coefficient.constant(0.2),
            sigma=Coefficient.constant(0.3),
            b=Coefficient.constant(0.0),
            c=Coefficient.constant(0.0),
            rho=0.0,
        )
    else:
        raise ModelError(f"unknown model preset {name!r}; choose 'bounded-tanh' or 'constant'")
    return replace(m, **overrides) if overrides else m


@dataclass(frozen=True)
class SimConfig:
    """``lam`` is a constant or a feedback ``lam(t, s, y, z) -> array``."""

    n_paths: int
    n_steps: int
    T: float = 1.0
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    lam: Union[float, Callable] = 0.0
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        if int(self.n_paths) <= 0 or int(self.n_steps) <= 0:
            raise ModelError("n_paths and n_steps must be positive")
        if not self.T > 0:
            raise ModelError(f"T: must be positive, got {self.T}")
        if int(self.chunk) <= 0:
            raise ModelError("chunk must be positive")


@dataclass
class PathBatch:
    """Terminal values per path. ``w_hat`` is the terminal value of the
    non-traded Brownian motion, which turns ``z`` into ``Z^lambda`` for any
    other constant ``lambda`` (see ``density_for``)."""

    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    log_z: np.ndarray
    w_hat: np.ndarray
    lam: float
    T: float

    def density_for(self, lam):
        if callable(self.lam):
            raise ModelError("reweighting needs a batch simulated with constant lambda")
        lam = float(lam)
        log_z = self.log_z + (self.lam - lam) * self.w_hat \
            - 0.5 * (lam * lam - self.lam * self.lam) * self.T
        return np.exp(log_z)


@dataclass(frozen=True)
class Benchmark:
    """``beta * S_T ** delta`` with ``delta`` in {0, 1}."""

    beta: float
    delta: int

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ModelError(f"delta: must be 0 or 1, got {self.delta}")
        if not self.beta >= 0:
            raise ModelError(f"beta: must be nonnegative, got {self.beta}")

    def __call__(self, s):
        return self.beta * (s if self.delta == 1 else np.ones_like(s))


def _check(name, arr, step):
    if not np.all(np.isfinite(arr)):
        raise SimulationError(f"non-finite {name} at step {step}")


def simulate_paths(model, cfg):
    """Log-Euler scheme for ``(ln S, Y, ln Z)``; paths are generated in
    chunks, chunk ``k`` drawing from ``cfg.rng.generator(chunk=k)``."""
    dt = cfg.T / cfg.n_steps
    sq = math.sqrt(dt)
    rho_bar = math.sqrt(1.0 - model.rho ** 2)
    feedback = callable(cfg.lam)
    out = {k: [] for k in ("s", "y", "log_z", "w_hat")}
    done, k = 0, 0
    while done < cfg.n_paths:
        n = min(cfg.chunk, cfg.n_paths - done)
        gen = cfg.rng.generator(chunk=k)
        log_s = np.full(n, math.log(model.s0))
        y = np.full(n, float(model.y0))
        log_z = np.zeros(n)
        w_hat = np.zeros(n)
        for i in range(cfg.n_steps):
            dw = gen.standard_normal(n) * sq
            dwh = gen.standard_normal(n) * sq
            th, sg, bb, cc = model.theta(y), model.sigma(y), model.b(y), model.c(y)
            if feedback:
                lam = np.asarray(cfg.lam(i * dt, np.exp(log_s), y, np.exp(log_z)), dtype=float)
                _check("lambda", lam, i)
            else:
                lam = cfg.lam
            log_s = log_s + sg * (th - 0.5 * sg) * dt + sg * dw
            log_z = log_z - 0.5 * (th * th + lam * lam) * dt - th * dw - lam * dwh
            y = y + bb * dt + cc * (model.rho * dw + rho_bar * dwh)
            w_hat += dwh
            _check("state", log_s, i)
            _check("factor", y, i)
            _check("density", log_z, i)
        for key, arr in (("s", np.exp(log_s)), ("y", y), ("log_z", log_z), ("w_hat", w_hat)):
            out[key].append(arr)
        done += n
        k += 1
    cat = {k: np.concatenate(v) for k, v in out.items()}
    lam_tag = cfg.lam if feedback else float(cfg.lam)
    return PathBatch(cat["s"], cat["y"], np.exp(cat["log_z"]), cat["log_z"],
                     cat["w_hat"], lam_tag, cfg.T)


def _mean_se(v):
    n = v.size
    m = math.fsum(v) / n
    return m, math.sqrt(math.fsum((v - m) ** 2) / (n - 1) / n)


def dual_objective_mc(model, cfg, a, x, bench, batch=None):
    """Estimate of ``x a + E[(1 - a F Z^lambda_T)^+]``; returns ``(value, se)``."""
    a = float(a)
    if not a >= 0:
        raise ModelError(f"a: must be nonnegative, got {a}")
    batch = batch or simulate_paths(model, cfg)
    m = bench(batch.s) * batch.z
    mean, se = _mean_se(np.maximum(0.0, 1.0 - a * m))
    return x * a + mean, se


@dataclass
class ScanRow:
    lam: float
    a_hat: float
    value: float
    se: float
    diff: float
    diff_se: float


@dataclass
class ScanResult:
    rows: list
    argmin: float

    def table(self):
        return [(r.lam, r.a_hat, r.value, r.se) for r in self.rows]


def mmm_scan(model, cfg, x, bench, lambda_grid, batch=None):
    """Dual value for each constant ``lambda`` on common random numbers.

    ``diff`` is ``V_lambda - V_0`` estimated path by path (each at its own
    minimizing ``a``) with its paired standard error.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ModelError("lambda grid is empty")
    if callable(cfg.lam):
        raise ModelError("mmm_scan needs a constant-lambda configuration")
    batch = batch or simulate_paths(model, cfg)
    F = bench(batch.s)

    def solve(lam):
        m = F * batch.density_for(lam)
        res = minimize_dual(MonteCarloSample(m[:, None]), x, mode="monte_carlo")
        per_path = x * res.a_hat + np.maximum(0.0, 1.0 - res.a_hat * m) \
            if math.isfinite(res.a_hat) else (m == 0).astype(float)
        return res, per_path

    base_res, base = solve(0.0)
    rows = []
    for lam in grid:
        res, per_path = (base_res, base) if lam == 0.0 else solve(lam)
        d, d_se = _mean_se(per_path - base) if lam != 0.0 else (0.0, 0.0)
        rows.append(ScanRow(lam, res.a_hat, res.v, res.std_error, d, d_se))
    best = min(rows, key=lambda r: (r.value, abs(r.lam)))
    return ScanResult(rows, best.lam)


def corollary_value(model, x, beta, delta, T=1.0):
    """Closed form when ``theta - delta sigma`` is a constant ``alpha``.

    Then ``beta Z^0_T S_T^delta`` is lognormal with mean ``beta s0^delta`` and
    log-volatility ``|alpha| sqrt(T)``.
    """
    alpha = model.constant_alpha(delta)
    if alpha is None:
        raise ModelError(f"theta - {delta} sigma is not constant for this model")
    f0 = beta * model.s0 ** delta
    return power_law_success(f0, -alpha, T, x).v


PSI_PRESETS = {
    "put": lambda z, k=1.0: np.maximum(0.0, k - z),
    "call": lambda z, k=1.0: np.maximum(0.0, z - k),
    "square": lambda z, k=None: z * z,
    "linear": lambda z, k=None: z,
}


@dataclass
class ComparisonReport:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    diff_se: float
    holds: bool

    @property
    def margin(self):
        return (self.lhs - self.rhs) / self.diff_se if self.diff_se > 0 else math.inf


def _step_values(f, n_steps, dt):
    if callable(f):
        return np.array([float(f(i * dt)) for i in range(n_steps)])
    arr = np.atleast_1d(np.asarray(f, dtype=float))
    if arr.size == 1:
        return np.full(n_steps, float(arr[0]))
    if arr.size != n_steps:
        raise ModelError(f"step function has {arr.size} values for {n_steps} steps")
    return arr


def comparison_lemma_check(a_t, b_t, psi, cfg, k=1.0):
    """Compare ``E[psi(Z^a_T)]`` and ``E[psi(Z^b_T)]`` for the exponential
    martingales ``Z^f = exp(-int f dW - int f^2 dt / 2)`` on one Brownian path.

    For convex ``psi`` and ``int a^2 >= int b^2`` the first is larger.
    """
    dt = cfg.T / cfg.n_steps
    a = _step_values(a_t, cfg.n_steps, dt)
    b = _step_values(b_t, cfg.n_steps, dt)
    qa, qb = float(np.sum(a * a) * dt), float(np.sum(b * b) * dt)
    if qa < qb - 1e-15:
        raise ModelError(f"need int a^2 >= int b^2, got {qa} < {qb}")
    if isinstance(psi, str):
        if psi not in PSI_PRESETS:
            raise ModelError(f"psi preset {psi!r} not in {sorted(PSI_PRESETS)}")
        fn = PSI_PRESETS[psi]
        psi = lambda z: fn(z, k)
    la, lb = [], []
    done, c = 0, 0
    while done < cfg.n_paths:
        n = min(cfg.chunk, cfg.n_paths - done)
        gen = cfg.rng.generator(chunk=c)
        dw = gen.standard_normal((n, cfg.n_steps)) * math.sqrt(dt)
        la.append(psi(np.exp(-dw @ a - 0.5 * qa)))
        lb.append(psi(np.exp(-dw @ b - 0.5 * qb)))
        done += n
        c += 1
    va, vb = np.concatenate(la), np.concatenate(lb)
    lhs, lhs_se = _mean_se(va)
    rhs, rhs_se = _mean_se(vb)
    _, d_se = _mean_se(va - vb)
    return ComparisonReport(lhs, lhs_se, rhs, rhs_se, d_se, lhs >= rhs - 3.0 * d_se)
