"""Explicit finite differences for the dual value function

    U(t, s, y, z) = inf_lambda E[(1 - z Z^lambda_{t,T} f(S_T, Y_T))^+ | S_t = s, Y_t = y],

which solves ``U_t + inf_lambda L^lambda U = 0`` with ``U(T) = (1 - z f)^+``.
The success probability is its Legendre transform in ``z``:
``V(t, s, y, x) = inf_{a >= 0} {x a + U(t, s, y, a)}``.

The equation is solved in ``(ln s, y, ln z)`` where ``L^lambda`` has
diffusion matrix

    a11 = sigma^2             a12 = sigma c rho       a13 = -sigma theta
    a22 = c^2                 a23 = -c (rho theta + rho' lambda)
    a33 = theta^2 + lambda^2,                          rho' = sqrt(1 - rho^2)

and drifts ``(sigma (theta - sigma/2), b, -(theta^2 + lambda^2)/2)``.
Cross derivatives use the diagonal stencil aligned with the sign of the
coefficient and the remaining axis weight is ``a_ii - sum_j |a_ij| h_i / h_j``;
drifts are upwinded. When every axis weight is nonnegative and the time step
passes the explicit bound the scheme is monotone, so ``0 <= U <= 1`` and
monotonicity in ``z`` carry over from the terminal datum.

For each node the lambda-dependent part of the discrete operator is a
piecewise quadratic in lambda (two pieces split where ``a23`` changes sign)
and is minimized exactly over ``[-lambda_max, lambda_max]``.
"""

import csv
import io
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .factor import Coefficient, FactorModel, SimConfig, simulate_paths
from .numerics.optimize import minimize_convex_1d
from .numerics.rng import RngStream

TIE_TOL = 1e-13


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class HjbBenchmark:
    """``f(s, y)``: ``constant`` beta, ``stock`` beta s, ``power`` beta s^p,
    ``stock-factor`` beta s g(y) with ``g`` a bounded coefficient family."""

    kind: str = "stock"
    beta: float = 1.0
    p: float = 1.0
    g: Coefficient = None

    KINDS = ("constant", "stock", "power", "stock-factor")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"benchmark kind {self.kind!r} not in {self.KINDS}")
        if not self.beta > 0:
            raise ConfigError(f"benchmark beta must be positive, got {self.beta}")
        if self.kind == "stock-factor":
            if self.g is None:
                raise ConfigError("stock-factor benchmark needs a factor function g")
            lo, hi = self.g.range()
            if not (lo > 0 and math.isfinite(hi)):
                raise ConfigError("g must be bounded and positive")

    def log_f(self, log_s, y):
        log_s, y = np.broadcast_arrays(np.asarray(log_s, float), np.asarray(y, float))
        base = math.log(self.beta)
        if self.kind == "constant":
            return np.full(log_s.shape, base)
        if self.kind == "stock":
            return base + log_s
        if self.kind == "power":
            return base + self.p * log_s
        return base + log_s + np.log(self.g(y))

    def __call__(self, s, y):
        return np.exp(self.log_f(np.log(s), y))

    @property
    def delta(self):
        return {"constant": 0, "stock": 1}.get(self.kind)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        g = d.pop("g", None)
        return cls(g=Coefficient.from_dict(g) if g is not None else None,
                   **{k: (v if k == "kind" else float(v)) for k, v in d.items()})


@dataclass(frozen=True)
class HjbConfig:
    log_s_bounds: tuple = (-1.5, 1.5)
    y_bounds: tuple = (-1.0, 1.0)
    log_z_bounds: tuple = (-1.0, 1.0)
    n: tuple = (48, 48, 48)
    n_time: int = 200
    T: float = 1.0
    lambda_max: float = 5.0
    benchmark: HjbBenchmark = field(default_factory=HjbBenchmark)
    save_every: int = 10
    moving_frame: bool = True

    def __post_init__(self):
        if len(self.n) != 3 or min(self.n) < 8:
            raise ConfigError(f"grid sizes must be three integers >= 8, got {self.n}")
        for name in ("log_s_bounds", "y_bounds", "log_z_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name}: need lo < hi, got {(lo, hi)}")
        if int(self.n_time) <= 0 or not self.T > 0:
            raise ConfigError("n_time and T must be positive")
        if not self.lambda_max > 0:
            raise ConfigError(f"lambda_max must be positive, got {self.lambda_max}")
        if int(self.save_every) <= 0:
            raise ConfigError("save_every must be positive")

    def axes(self):
        return tuple(np.linspace(lo, hi, k) for (lo, hi), k in
                     zip((self.log_s_bounds, self.y_bounds, self.log_z_bounds), self.n))

    @property
    def dt(self):
        return self.T / self.n_time

    def echo(self):
        d = asdict(self)
        d["benchmark"] = asdict(self.benchmark)
        return d

    def kwargs(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def aligned(cls, model, **kw):
        """Config whose ``ln z`` spacing is ``theta/sigma`` (at ``y0``) times the
        ``ln s`` spacing. ``ln s`` and ``ln z`` share one Brownian motion, and the
        diagonal stencil represents that rank-one diffusion with nonnegative
        weights only along this ratio."""
        cfg = cls(**kw)
        ratio = float(model.theta(model.y0)) / float(model.sigma(model.y0))
        lo, hi = cfg.log_s_bounds
        h1 = (hi - lo) / (cfg.n[0] - 1)
        half = 0.5 * abs(ratio) * h1 * (cfg.n[2] - 1)
        mid = 0.5 * sum(cfg.log_z_bounds)
        return replace(cfg, log_z_bounds=(mid - half, mid + half))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "benchmark" in d:
            d["benchmark"] = HjbBenchmark.from_dict(d["benchmark"])
        for k in ("log_s_bounds", "y_bounds", "log_z_bounds", "n"):
            if k in d:
                d[k] = tuple(d[k])
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown hjb config field(s): {', '.join(sorted(extra))}")
        return cls(**d)


@dataclass
class HjbSolution:
    """``u[k]`` and ``lam[k]`` hold the slices at time ``times[k]``
    (every ``save_every`` steps plus both ends).

    Grid nodes are frame coordinates: node ``(xi1, y, xi3)`` at time ``t`` is
    the state ``ln s = xi1 + m1 t``, ``ln z = xi3 + m3 t`` with
    ``frame = (m1, m3)``.
    """

    times: np.ndarray
    axes: tuple
    u: np.ndarray
    lam: np.ndarray
    config: HjbConfig
    diagnostics: dict
    frame: tuple = (0.0, 0.0)

    def to_frame(self, t, log_s, log_z):
        return log_s - self.frame[0] * t, log_z - self.frame[1] * t

    def physical_axes(self, t):
        x1, x2, x3 = self.axes
        return x1 + self.frame[0] * t, x2, x3 + self.frame[1] * t

    def slice_at(self, t):
        """``U(t, ...)`` by linear interpolation between saved slices."""
        ts = self.times
        if not (ts[0] - 1e-12 <= t <= ts[-1] + 1e-12):
            raise RangeError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        k = int(np.clip(np.searchsorted(ts, t) - 1, 0, ts.size - 2))
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        w = min(1.0, max(0.0, w))
        return (1 - w) * self.u[k] + w * self.u[k + 1]

    def lambda_feedback(self):
        """Feedback ``lambda(t, s, y, z)`` from the saved field (nearest saved
        time, trilinear in space, clamped to the grid)."""
        interps = [RegularGridInterpolator(self.axes, lam, bounds_error=False, fill_value=None)
                   for lam in self.lam]
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        lmax = self.config.lambda_max

        def lam(t, s, y, z):
            k = int(np.argmin(np.abs(self.times - t)))
            xi1, xi3 = self.to_frame(self.times[k], np.log(s), np.log(z))
            pts = np.column_stack(np.broadcast_arrays(xi1, y, xi3))
            return np.clip(interps[k](np.clip(pts, lo, hi)), -lmax, lmax)

        return lam

    def write_npz(self, path):
        """Deterministic ``.npz`` (fixed member timestamps)."""
        arrays = {"times": self.times, "xi1": self.axes[0], "y": self.axes[1],
                  "xi3": self.axes[2], "frame": np.array(self.frame),
                  "u": self.u, "lam": self.lam}
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o644 << 16
                zf.writestr(info, buf.getvalue())

    def write_csv(self, fh, k=0):
        """Rows ``(t, ln_s, y, ln_z, U, lambda)`` of saved slice ``k``."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ln_s", "y", "ln_z", "U", "lambda"])
        t = self.times[k]
        g1, g2, g3 = np.meshgrid(*self.physical_axes(t), indexing="ij")
        for a, b, c, u, l in zip(g1.ravel(), g2.ravel(), g3.ravel(),
                                 self.u[k].ravel(), self.lam[k].ravel()):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b)), repr(float(c)),
                        repr(float(u)), repr(float(l))])


# ---- stencil helpers on a padded array -----------------------------------

def _pad(v):
    """One ghost layer per face by linear extrapolation, clipped to [0, 1]."""
    for ax in range(3):
        lo = 2 * np.take(v, [0], axis=ax) - np.take(v, [1], axis=ax)
        hi = 2 * np.take(v, [-1], axis=ax) - np.take(v, [-2], axis=ax)
        v = np.concatenate([np.clip(lo, 0, 1), v, np.clip(hi, 0, 1)], axis=ax)
    return v


def _shift(P, d):
    n1, n2, n3 = (k - 2 for k in P.shape)
    return P[1 + d[0]:1 + d[0] + n1, 1 + d[1]:1 + d[1] + n2, 1 + d[2]:1 + d[2] + n3]


def _unit(i, s=1):
    e = [0, 0, 0]
    e[i] = s
    return e


class _Operator:
    """Coefficients of the discrete operator, broadcast along the y axis."""

    def __init__(self, model, cfg, frame=(0.0, 0.0)):
        x1, x2, x3 = cfg.axes()
        self.h = (x1[1] - x1[0], x2[1] - x2[0], x3[1] - x3[0])
        y = x2[None, :, None]
        self.th, self.sg = model.theta(y), model.sigma(y)
        self.b, self.c = model.b(y), model.c(y)
        self.rho = model.rho
        self.rho_bar = math.sqrt(1 - model.rho ** 2)
        self.lmax = float(cfg.lambda_max)
        h1, h2, h3 = self.h
        self.a12 = self.sg * self.c * self.rho
        self.a13 = -self.sg * self.th
        self.r1 = self.sg ** 2 - np.abs(self.a12) * h1 / h2 - np.abs(self.a13) * h1 / h3
        self.r2_0 = self.c ** 2 - np.abs(self.a12) * h2 / h1
        self.r3_0 = self.th ** 2 - np.abs(self.a13) * h3 / h1
        self.mu1 = self.sg * (self.th - 0.5 * self.sg) - frame[0]
        self.mu3 = -0.5 * self.th ** 2 - frame[1]
        self.lam0 = -self.rho * self.th / self.rho_bar

    def a23(self, lam):
        return -self.c * (self.rho * self.th + self.rho_bar * lam)

    def weights(self, lam):
        """Per node: total off-center weight and the smallest axis weight."""
        h1, h2, h3 = self.h
        a23 = np.abs(self.a23(lam))
        r2 = self.r2_0 - a23 * h2 / h3
        r3 = self.r3_0 + lam * lam - a23 * h3 / h2
        total = (np.abs(self.r1) / h1 ** 2 + np.abs(r2) / h2 ** 2 + np.abs(r3) / h3 ** 2
                 + np.abs(self.a12) / (h1 * h2) + np.abs(self.a13) / (h1 * h3) + a23 / (h2 * h3)
                 + np.abs(self.mu1) / h1 + np.abs(self.b) / h2 + np.abs(self.mu3) / h3)
        # the central lambda^2 drift takes lam^2 h3 / 2 off the upper z neighbour
        r3_eff = r3 - 0.5 * lam * lam * h3
        return total, np.minimum(np.minimum(self.r1, r2), r3_eff)

    def check(self, dt):
        worst, min_r = 0.0, math.inf
        for lam in (0.0, -self.lmax, self.lmax):
            tot, r = self.weights(lam)
            worst = max(worst, float(np.max(tot)))
            min_r = min(min_r, float(np.min(r)))
        return worst, min_r

    def parts(self, P):
        """``(L0, Q, C_plus, C_minus)``: lambda-free operator and the pieces
        of ``H(lam) = lam^2 Q / 2 + a23(lam) C_{sign a23}``."""
        h1, h2, h3 = self.h
        C = _shift(P, (0, 0, 0))

        def second(i):
            return (_shift(P, _unit(i)) - 2 * C + _shift(P, _unit(i, -1))) / self.h[i] ** 2

        def diag(i, j, s):
            e = [0, 0, 0]
            e[i], e[j] = 1, s
            return _shift(P, e) - 2 * C + _shift(P, [-q for q in e])

        def upwind(i, mu):
            fwd = _shift(P, _unit(i)) - C
            bwd = C - _shift(P, _unit(i, -1))
            return np.where(mu > 0, mu * fwd, mu * bwd) / self.h[i]

        D11, D22, D33 = second(0), second(1), second(2)
        cross12 = np.where(self.a12 >= 0, diag(0, 1, 1), diag(0, 1, -1))
        cross13 = np.where(self.a13 >= 0, diag(0, 2, 1), diag(0, 2, -1))
        L0 = (0.5 * self.r1 * D11 + 0.5 * self.r2_0 * D22 + 0.5 * self.r3_0 * D33
              + np.abs(self.a12) / (2 * h1 * h2) * cross12
              + np.abs(self.a13) / (2 * h1 * h3) * cross13
              + upwind(0, self.mu1) + upwind(1, self.b) + upwind(2, self.mu3))
        # the lambda^2 drift rides on a lambda^2 diffusion, so a central
        # difference stays monotone for h3 < 2 and keeps Q >= 0 where U is
        # linear in z (a one-sided difference makes Q = O(-h) there)
        Q = D33 - (_shift(P, _unit(2)) - _shift(P, _unit(2, -1))) / (2 * h3)
        base = h3 ** 2 * D33 + h2 ** 2 * D22
        c_plus = (diag(1, 2, 1) - base) / (2 * h2 * h3)
        c_minus = -(diag(1, 2, -1) - base) / (2 * h2 * h3)
        return C, L0, Q, c_plus, c_minus

    def hamiltonian(self, lam, Q, c_plus, c_minus):
        a23 = self.a23(lam)
        return 0.5 * lam * lam * Q + a23 * np.where(a23 >= 0, c_plus, c_minus)

    def minimize(self, Q, c_plus, c_minus):
        """Exact minimizer of the piecewise quadratic on ``[-lmax, lmax]``."""
        shape = Q.shape
        lmax = self.lmax
        cands = [np.zeros(shape)]
        if np.any(self.c != 0):
            cands.append(np.broadcast_to(np.clip(self.lam0, -lmax, lmax), shape))
            k = self.c * self.rho_bar
            with np.errstate(divide="ignore", invalid="ignore"):
                for cs in (c_plus, c_minus):
                    st = np.where(Q > 0, k * cs / Q, 0.0)
                    cands.append(np.clip(st, -lmax, lmax))
        cands += [np.full(shape, -lmax), np.full(shape, lmax)]
        lams = np.stack(np.broadcast_arrays(*cands))
        hs = np.stack([self.hamiltonian(l, Q, c_plus, c_minus) for l in lams])
        hmin = hs.min(axis=0)
        # first candidate within TIE_TOL of the minimum; zero comes first
        idx = np.argmax(hs <= hmin + TIE_TOL, axis=0)
        lam = np.take_along_axis(lams, idx[None], 0)[0]
        h = np.take_along_axis(hs, idx[None], 0)[0]
        return lam, h


def frame_drift(model, cfg):
    """Drift of ``(ln s, ln z)`` under ``lambda = 0`` at ``y0``. The grid moves
    with it, so upwinding only acts on the deviation from this drift (zero for
    constant coefficients)."""
    if not cfg.moving_frame:
        return 0.0, 0.0
    th, sg = float(model.theta(model.y0)), float(model.sigma(model.y0))
    return sg * (th - 0.5 * sg), -0.5 * th * th


def terminal_datum(cfg, frame=(0.0, 0.0)):
    x1, x2, x3 = cfg.axes()
    x1 = x1 + frame[0] * cfg.T
    x3 = x3 + frame[1] * cfg.T
    log_f = cfg.benchmark.log_f(x1[:, None], x2[None, :])[:, :, None]
    return np.maximum(0.0, 1.0 - np.exp(x3[None, None, :] + log_f))


def stable_time_steps(model, cfg):
    """Smallest ``n_time`` passing the explicit bound for this grid."""
    worst, _ = _Operator(model, cfg, frame_drift(model, cfg)).check(1.0)
    return int(math.ceil(cfg.T * worst))


def solve_hjb(model, cfg):
    if not isinstance(model, FactorModel):
        raise ConfigError("model must be a FactorModel built from preset families")
    frame = frame_drift(model, cfg)
    op = _Operator(model, cfg, frame)
    dt = cfg.dt
    worst, min_r = op.check(dt)
    if dt * worst > 1.0:
        raise ConfigError(
            f"explicit scheme unstable: dt * max weight = {dt * worst:.3f} > 1; "
            f"use n_time >= {int(math.ceil(cfg.T * worst))} or a smaller lambda_max")
    axes = cfg.axes()
    v = terminal_datum(cfg, frame)
    _, _, Q, cp, cm = op.parts(_pad(v))
    lam_T, _ = op.minimize(Q, cp, cm)
    saved_u, saved_lam, saved_t = [v.copy()], [lam_T], [cfg.T]
    worst_bound = 0.0
    worst_mono = float(np.max(np.diff(v, axis=2)))
    for step in range(cfg.n_time - 1, -1, -1):
        C, L0, Q, cp, cm = op.parts(_pad(v))
        lam, h = op.minimize(Q, cp, cm)
        v = C + dt * (L0 + h)
        if not np.all(np.isfinite(v)):
            i = np.argwhere(~np.isfinite(v))[0]
            t = step * dt
            coords = (float(axes[0][i[0]] + frame[0] * t), float(axes[1][i[1]]),
                      float(axes[2][i[2]] + frame[1] * t))
            raise NumericalError(f"non-finite value at step {step}, node (ln s, y, ln z) = {coords}")
        worst_bound = max(worst_bound, float(-v.min()), float(v.max() - 1.0))
        worst_mono = max(worst_mono, float(np.max(np.diff(v, axis=2))))
        if step % cfg.save_every == 0:
            saved_u.append(v.copy())
            saved_lam.append(lam)
            saved_t.append(step * dt)
    order = np.argsort(saved_t)
    diagnostics = {
        "dt_times_max_weight": dt * worst,
        "min_axis_weight": min_r,
        "monotone_stencil": min_r >= -1e-14,
        "max_bound_violation": worst_bound,
        "max_z_increase": worst_mono,
    }
    return HjbSolution(np.array(saved_t)[order], axes, np.stack(saved_u)[order],
                       np.stack(saved_lam)[order], cfg, diagnostics, frame)


@dataclass(frozen=True)
class SuccessQuery:
    t: float
    s: float
    y: float
    x: float

    def __post_init__(self):
        if not self.x >= 0:
            raise RangeError(f"x: capital must be nonnegative, got {self.x}")
        if not self.s > 0:
            raise RangeError(f"s: must be positive, got {self.s}")


def _z_curve(solution, q):
    """``U(t, s, y, .)`` on the physical ``ln z`` nodes at time ``t``."""
    x1, x2, x3 = solution.axes
    xi1, _ = solution.to_frame(q.t, math.log(q.s), 0.0)
    for name, val, ax in (("ln s", xi1, x1), ("y", q.y, x2)):
        if not ax[0] - 1e-12 <= val <= ax[-1] + 1e-12:
            raise RangeError(f"{name} (frame coordinate {val}) outside grid [{ax[0]}, {ax[-1]}]")
    U = solution.slice_at(q.t)
    interp = RegularGridInterpolator((x1, x2), U, method="cubic")
    return solution.physical_axes(q.t)[2], interp([[xi1, q.y]])[0]


def success_from_U(solution, query):
    """``(v, a_hat)`` from ``inf_a {x a + U(t, s, y, a)}``.

    ``U`` is interpolated by cubics in ``(ln s, y)``; along ``ln z`` the best
    grid node is refined on a cubic spline through the column, since a
    piecewise-linear column would pin the minimizer to a node.
    """
    x3, u = _z_curve(solution, query)
    x = query.x
    obj = x * np.exp(x3) + u
    k = int(np.argmin(obj))
    if obj[k] >= 1.0:
        # a -> 0 gives U -> 1: the super-hedge regime
        return 1.0, 0.0
    spline = CubicSpline(x3, u)
    lo, hi = x3[max(k - 1, 0)], x3[min(k + 1, x3.size - 1)]
    ell, best = minimize_convex_1d(lambda l: x * math.exp(l) + float(spline(l)), lo, hi, tol=1e-12)
    if best > obj[k]:
        ell, best = x3[k], obj[k]
    return min(1.0, max(0.0, best)), math.exp(ell)


@dataclass
class McReport:
    v_hjb: float
    a_hat: float
    p_event: float
    p_se: float
    budget: float
    budget_se: float
    target_budget: float
    probability_ok: bool
    budget_ok: bool
    regime: str


def validate_mc(solution, model, sim, query):
    """Simulate under ``lambda = 0`` from the query state and check that the
    success event ``{a_hat Z_T f < 1}`` has probability ``v`` and spends
    ``E[a_hat Z_T f 1{event}] = a_hat x``."""
    bench = solution.config.benchmark
    if bench.delta is None:
        raise ConfigError("validate_mc needs a constant or stock benchmark")
    v, a_hat = success_from_U(solution, query)
    if a_hat == 0.0:
        return McReport(v, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, True, True, "super-hedge regime")
    horizon = solution.config.T - query.t
    m = FactorModel(model.theta, model.sigma, model.b, model.c, model.rho, query.s, query.y)
    cfg = SimConfig(sim.n_paths, sim.n_steps, horizon, sim.rng, 0.0, sim.chunk)
    batch = simulate_paths(m, cfg)
    w = a_hat * batch.z * bench(batch.s, batch.y)
    event = (w < 1.0).astype(float)
    n = event.size
    p = float(event.mean())
    p_se = math.sqrt(max(p * (1 - p), 1e-300) / (n - 1))
    spend = w * event
    budget = float(spend.mean())
    budget_se = float(spend.std(ddof=1) / math.sqrt(n))
    target = a_hat * query.x
    return McReport(v, a_hat, p, p_se, budget, budget_se, target,
                    abs(p - v) <= 3 * p_se, abs(budget - target) <= 3 * budget_se, "interior")
