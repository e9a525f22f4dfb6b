"""Composite hypothesis testing on a finite probability space.

A family of "alternatives" ``G`` and "nulls" ``H`` is given by vertex lists of
nonnegative random variables on ``Omega = {0, ..., n-1}``. For a budget ``x``
the randomized value is

    V(x) = max_{0 <= X <= 1} min_j E[G_j X]   s.t.  E[H_k X] <= x  for all k,

and the pure value ``V1(x)`` restricts ``X`` to indicators. Both problems are
solved exactly: ``V`` as a linear program, ``V1`` by enumeration.

The dual

    V(x) = inf_{a >= 0} { x a + inf_{G in conv G, H in conv H} E[(G - a H)^+] }

is itself a linear program whose solution gives the certificate
``(a_hat, H_hat, G_hat)``.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics.lp import LpProblem, solve_lp

PROB_TOL = 1e-12
TIE_TOL = 1e-9
MAX_PURE_ATOMS = 24


class InstanceError(ValueError):
    """Malformed finite testing instance."""


class CapacityError(ValueError):
    """Problem too large for exhaustive enumeration."""


@dataclass(frozen=True)
class FiniteSpace:
    probs: tuple
    atoms: tuple = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).ravel()
        if p.size == 0:
            raise InstanceError("probs: empty probability vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InstanceError("probs: entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
            raise InstanceError(f"probs: sum is {p.sum()!r}, expected 1")
        atoms = self.atoms
        if atoms is None:
            atoms = tuple(f"w{i}" for i in range(p.size))
        atoms = tuple(str(a) for a in atoms)
        if len(atoms) != p.size:
            raise InstanceError(f"atoms: {len(atoms)} labels for {p.size} probabilities")
        object.__setattr__(self, "probs", tuple(p.tolist()))
        object.__setattr__(self, "atoms", atoms)

    @property
    def p(self):
        return np.array(self.probs)

    @property
    def size(self):
        return len(self.probs)

    def expect(self, v):
        return float(np.dot(self.p, v))


def _vertices(name, rows, n):
    try:
        arr = np.asarray(rows, dtype=float)
    except ValueError:
        raise InstanceError(f"{name}: ragged vertex list") from None
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InstanceError(f"{name}: need a nonempty list of vectors")
    if arr.shape[1] != n:
        raise InstanceError(f"{name}: vectors have length {arr.shape[1]}, space has {n} atoms")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InstanceError(f"{name}: entries must be finite and nonnegative")
    return arr


@dataclass(frozen=True)
class FiniteTestInstance:
    space: FiniteSpace
    g_vertices: np.ndarray
    h_vertices: np.ndarray
    x: float

    def __post_init__(self):
        n = self.space.size
        object.__setattr__(self, "g_vertices", _vertices("g_vertices", self.g_vertices, n))
        object.__setattr__(self, "h_vertices", _vertices("h_vertices", self.h_vertices, n))
        x = float(self.x)
        if not math.isfinite(x) or x < 0:
            raise InstanceError(f"x: budget must be finite and nonnegative, got {self.x!r}")
        object.__setattr__(self, "x", x)

    def with_budget(self, x):
        return FiniteTestInstance(self.space, self.g_vertices, self.h_vertices, x)

    def with_h_vertices(self, h):
        return FiniteTestInstance(self.space, self.g_vertices, h, self.x)

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in ("probs", "g_vertices", "h_vertices", "x") if k not in d]
        if missing:
            raise InstanceError(f"instance is missing field(s): {', '.join(missing)}")
        space = FiniteSpace(d["probs"], d.get("atoms"))
        return cls(space, d["g_vertices"], d["h_vertices"], d["x"])

    def to_dict(self):
        return {
            "atoms": list(self.space.atoms),
            "probs": list(self.space.probs),
            "g_vertices": self.g_vertices.tolist(),
            "h_vertices": self.h_vertices.tolist(),
            "x": self.x,
        }


def load_instance(path):
    with open(Path(path), encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise InstanceError(f"{path}: expected a JSON object")
    return FiniteTestInstance.from_dict(data)


@dataclass
class TestSolution:
    """Optimal test plus dual certificate.

    ``kind`` is ``"randomized"`` or ``"pure"``. For pure solutions the
    certificate is the randomized one, so it bounds ``value`` from above.
    """

    __test__ = False  # not a pytest class

    kind: str
    value: float
    test: np.ndarray
    a_hat: float
    h_hat: np.ndarray
    g_hat: np.ndarray
    dual_objective: float
    strict_mass: float
    boundary_mass: float
    b0: float = None
    boundary: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d


@dataclass(frozen=True)
class DualCertificate:
    value: float
    a_hat: float
    h_hat: np.ndarray
    g_hat: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


def _primal_lp(inst, g_rows=None):
    """max t s.t. t <= E[G_j X], E[H_k X] <= x, X in [0,1]^n."""
    p = inst.space.p
    G = inst.g_vertices if g_rows is None else g_rows
    H = inst.h_vertices
    n = p.size
    rows = [np.concatenate([-p * g, [1.0]]) for g in G]
    rows += [np.concatenate([p * h, [0.0]]) for h in H]
    b = [0.0] * len(G) + [inst.x] * len(H)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    bounds = [(0.0, 1.0)] * n + [(None, None)]
    return LpProblem(c, np.array(rows), ["<="] * len(rows), b, bounds, maximize=True)


def _dual_lp(inst, h_rows):
    """min x sum(mu) + E[u], u >= sum nu_j G_j - sum mu_k H_k, nu in simplex."""
    p = inst.space.p
    G, H = inst.g_vertices, h_rows
    J, K, n = G.shape[0], H.shape[0], p.size
    c = np.concatenate([np.zeros(J), np.full(K, inst.x), p])
    A = np.zeros((n + 1, J + K + n))
    A[0, :J] = 1.0
    A[1:, :J] = -G.T
    A[1:, J:J + K] = H.T
    A[1:, J + K:] = np.eye(n)
    b = np.concatenate([[1.0], np.zeros(n)])
    return LpProblem(c, A, ["=="] + [">="] * n, b), (J, K)


def _certificate(inst, h_rows):
    prob, (J, K) = _dual_lp(inst, h_rows)
    sol = solve_lp(prob)
    if sol.status != "optimal":
        raise RuntimeError(f"dual LP ended with status {sol.status}")
    nu = np.clip(sol.x[:J], 0.0, None)
    mu = np.clip(sol.x[J:J + K], 0.0, None)
    a_hat = float(mu.sum())
    if a_hat > 0:
        h_hat = mu @ h_rows / a_hat
    else:
        # any element of the hull is admissible; take the first vertex
        h_hat = h_rows[0].copy()
        mu = np.zeros(K)
    g_hat = nu @ inst.g_vertices
    return DualCertificate(sol.objective, a_hat, h_hat, g_hat, mu, nu)


def dual_value(instance, convexify=True):
    """Return ``(value, a_hat, h_hat, g_hat)`` of the dual problem.

    With ``convexify=False`` the infimum over ``H`` runs over the listed
    vertices only (no convex combinations), one LP per vertex.
    """
    if convexify:
        cert = _certificate(instance, instance.h_vertices)
    else:
        certs = [_certificate(instance, h[None, :]) for h in instance.h_vertices]
        cert = min(certs, key=lambda c: c.value)
    return cert.value, cert.a_hat, cert.h_hat, cert.g_hat


def _masses(inst, a_hat, h_hat, g_hat):
    p = inst.space.p
    ah = a_hat * h_hat
    scale = np.maximum(1.0, np.maximum(np.abs(g_hat), np.abs(ah)))
    boundary = np.abs(g_hat - ah) <= TIE_TOL * scale
    strict = (g_hat > ah) & ~boundary
    strict_mass = float(np.dot(p, h_hat * strict))
    boundary_mass = float(np.dot(p, h_hat * boundary))
    return strict_mass, boundary_mass, boundary


def _b0_or_none(strict_mass, boundary_mass, x):
    if boundary_mass <= 0:
        return None
    lo, hi = strict_mass, strict_mass + boundary_mass
    if lo - TIE_TOL <= x <= hi + TIE_TOL:
        return b0_threshold_from_masses(strict_mass, boundary_mass, x)
    return None


def solve_randomized(instance):
    res = solve_lp(_primal_lp(instance))
    if res.status != "optimal":
        raise RuntimeError(f"primal LP ended with status {res.status}")
    X = np.clip(res.x[:-1], 0.0, 1.0)
    value = float(min(instance.space.expect(g * X) for g in instance.g_vertices))
    cert = _certificate(instance, instance.h_vertices)
    sm, bm, boundary = _masses(instance, cert.a_hat, cert.h_hat, cert.g_hat)
    return TestSolution(
        kind="randomized", value=value, test=X, a_hat=cert.a_hat,
        h_hat=cert.h_hat, g_hat=cert.g_hat, dual_objective=cert.value,
        strict_mass=sm, boundary_mass=bm,
        b0=_b0_or_none(sm, bm, instance.x) if cert.a_hat > 0 else None,
        boundary=boundary,
    )


def _subset_bits(start, stop, n):
    """Indicator rows for subset codes in ``[start, stop)``; atom 0 is the top bit."""
    codes = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(float)


def solve_pure(instance, chunk=1 << 16):
    """Best indicator test by enumeration; ties go to the lexicographically
    smallest indicator vector (0 < 1)."""
    n = instance.space.size
    if n > MAX_PURE_ATOMS:
        raise CapacityError(f"pure search supports at most {MAX_PURE_ATOMS} atoms, got {n}")
    p = instance.space.p
    gp = (instance.g_vertices * p).T
    hp = (instance.h_vertices * p).T
    x = instance.x
    best_val, best_code = -np.inf, None
    total = 1 << n
    for start in range(0, total, chunk):
        bits = _subset_bits(start, min(total, start + chunk), n)
        feasible = np.all(bits @ hp <= x + TIE_TOL, axis=1)
        if not feasible.any():
            continue
        vals = np.where(feasible, (bits @ gp).min(axis=1), -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_val + TIE_TOL:
            best_val, best_code = float(vals[i]), start + i
    X = _subset_bits(best_code, best_code + 1, n)[0]
    value = float(min(instance.space.expect(g * X) for g in instance.g_vertices))
    cert = _certificate(instance, instance.h_vertices)
    sm, bm, boundary = _masses(instance, cert.a_hat, cert.h_hat, cert.g_hat)
    return TestSolution(
        kind="pure", value=value, test=X.astype(bool), a_hat=cert.a_hat,
        h_hat=cert.h_hat, g_hat=cert.g_hat, dual_objective=cert.value,
        strict_mass=sm, boundary_mass=bm, b0=None, boundary=boundary,
    )


def b0_threshold_from_masses(strict_mass, boundary_mass, x):
    lo, hi = strict_mass, strict_mass + boundary_mass
    if not (lo - TIE_TOL <= x <= hi + TIE_TOL):
        raise ValueError(f"x={x} outside [{lo}, {hi}] spanned by the boundary set")
    if abs(x - lo) <= TIE_TOL:
        return 0.0
    if abs(x - hi) <= TIE_TOL:
        return 1.0
    return (x - lo) / boundary_mass


def b0_threshold(solution, x):
    """Constant randomization level on ``{G_hat = a_hat H_hat}`` that spends
    the remaining budget."""
    if solution.boundary_mass <= 0:
        if abs(x - solution.strict_mass) <= TIE_TOL:
            return 0.0
        raise ValueError("boundary set has zero mass; no randomization level exists")
    return b0_threshold_from_masses(solution.strict_mass, solution.boundary_mass, x)


@dataclass(frozen=True)
class PurifiedTest:
    """Pure test on ``Omega x [0,1]``: reject iff ``U < threshold[omega]``."""

    threshold: np.ndarray
    probs: np.ndarray
    moments: dict

    def indicator(self, omega, u):
        return bool(u < self.threshold[omega])

    def sample(self, rng, size):
        """Draws ``(omega, rejected)`` under ``P x Uniform`` from a numpy Generator."""
        omega = rng.choice(self.probs.size, size=size, p=self.probs)
        u = rng.random(size)
        return omega, u < self.threshold[omega]


def purify_with_uniform(test, instance):
    """Replace a randomized test by ``1{U < X(omega)}`` with ``U`` uniform.

    Since ``P(U < c) = c`` for ``c`` in [0,1], every moment ``E[M X]`` is
    preserved; the returned ``moments`` maps vertex labels to
    ``(E[M X], E[M Xbar])``.
    """
    X = np.asarray(test, dtype=float)
    if X.shape != (instance.space.size,) or np.any(X < 0) or np.any(X > 1):
        raise InstanceError("test: need one value in [0,1] per atom")
    p = instance.space.p
    prob_reject = np.clip(X, 0.0, 1.0)   # E[1{U < X(w)}] for each atom
    moments = {}
    for tag, family in (("G", instance.g_vertices), ("H", instance.h_vertices)):
        for j, m in enumerate(family):
            moments[f"{tag}{j}"] = (float(np.dot(p, m * X)), float(np.dot(p, m * prob_reject)))
    return PurifiedTest(threshold=prob_reject, probs=p, moments=moments)


def positivity_check(instance):
    """Return ``(holds, threshold)`` where ``threshold`` is
    ``max_k E[H_k 1{G_j > 0 for all j}]``; when ``0 < x < threshold`` the
    optimal multiplier ``a_hat`` is strictly positive."""
    support = np.all(instance.g_vertices > 0, axis=0)
    threshold = float(max(instance.space.expect(h * support) for h in instance.h_vertices))
    return (0.0 < instance.x < threshold), threshold


def avar_value(space, payoff, K, z_vertices, x, level):
    """Minimal average value at risk of a liability whose premium is ``x``.

    With ``X = (K - F)/K`` the problem becomes a randomized test with
    alternatives ``{G >= 0 : E[G] = 1, G <= 1/level}`` and nulls
    ``z_vertices`` at budget ``(K - x)/K``; returns ``K - K V_level``.
    ``payoff`` is only checked for range: the optimum runs over all claims
    in ``[0, K]``.
    """
    level = float(level)
    if not 0.0 < level <= 1.0:
        raise InstanceError(f"level: must lie in (0, 1], got {level}")
    K = float(K)
    if not K > 0:
        raise InstanceError(f"K: must be positive, got {K}")
    F = np.asarray(payoff, dtype=float)
    if F.shape != (space.size,) or np.any(F < 0) or np.any(F > K):
        raise InstanceError("payoff: need one value in [0, K] per atom")
    Z = _vertices("z_vertices", z_vertices, space.size)
    budget = (K - float(x)) / K
    if budget < 0:
        raise InstanceError(f"x={x} exceeds K={K}")
    return K - K * _avar_inner(space.p, Z, budget, level)


def _avar_inner(p, Z, budget, level):
    # variables: X (n), eta (free), s (n); inner min over the density
    # polytope replaced by its dual  max eta - E[s]/level,  eta - s - X <= 0
    n = p.size
    c = np.concatenate([np.zeros(n), [1.0], -p / level])
    rows = []
    for w in range(n):
        r = np.zeros(2 * n + 1)
        r[w] = -1.0
        r[n] = 1.0
        r[n + 1 + w] = -1.0
        rows.append(r)
    for z in Z:
        rows.append(np.concatenate([p * z, [0.0], np.zeros(n)]))
    b = [0.0] * n + [budget] * len(Z)
    bounds = [(0.0, 1.0)] * n + [(None, None)] + [(0.0, None)] * n
    sol = solve_lp(LpProblem(c, np.array(rows), ["<="] * len(rows), b, bounds, maximize=True))
    if sol.status != "optimal":
        raise RuntimeError(f"AVaR LP ended with status {sol.status}")
    return sol.objective


def concave_majorant(xs, vs):
    """Smallest concave function above the piecewise-linear interpolant of
    ``(xs, vs)``, evaluated at ``xs``."""
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if xs.shape != vs.shape or xs.ndim != 1:
        raise ValueError(f"xs and vs must be 1-d of equal length, got {xs.shape} and {vs.shape}")
    if xs.size and np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    hull = []
    for i in range(xs.size):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            # drop i1 if it lies on or below the chord i0 -> i
            cross = (xs[i1] - xs[i0]) * (vs[i] - vs[i0]) - (vs[i1] - vs[i0]) * (xs[i] - xs[i0])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(xs, xs[hull], vs[hull])
