"""Dense two-phase simplex with Bland's anti-cycling rule.

Small problems only (a few hundred variables). The solver is deterministic:
entering and leaving variables are chosen by lowest index among eligible
candidates, so identical inputs give bitwise-identical outputs.
"""

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-9

_SENSES = {"<=": "<=", "le": "<=", "≤": "<=",
           ">=": ">=", "ge": ">=", "≥": ">=",
           "==": "==", "=": "==", "eq": "=="}


class LpInputError(ValueError):
    pass


@dataclass
class LpProblem:
    """``min`` (or ``max``) ``c @ x`` s.t. ``A @ x (sense) b``, ``lo <= x <= hi``.

    ``bounds`` defaults to ``(0, inf)`` for every variable; use ``None`` or
    ``±inf`` for a missing side.
    """

    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    bounds: list = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, n))
        elif A.ndim == 1:
            A = A.reshape(1, -1)
        self.A = A
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise LpInputError(f"constraint matrix has {self.A.shape[1]} columns, objective has {n}")
        if len(self.senses) != m or self.b.size != m:
            raise LpInputError(
                f"constraint rows ({m}), senses ({len(self.senses)}) and rhs ({self.b.size}) differ")
        try:
            self.senses = [_SENSES[s] for s in self.senses]
        except KeyError as exc:
            raise LpInputError(f"unknown constraint sense {exc.args[0]!r}") from None
        if self.bounds is None:
            self.bounds = [(0.0, np.inf)] * n
        if len(self.bounds) != n:
            raise LpInputError(f"{len(self.bounds)} bounds given for {n} variables")
        clean = []
        for j, (lo, hi) in enumerate(self.bounds):
            lo = -np.inf if lo is None else float(lo)
            hi = np.inf if hi is None else float(hi)
            if lo > hi:
                raise LpInputError(f"variable {j}: lower bound {lo} exceeds upper bound {hi}")
            clean.append((lo, hi))
        self.bounds = clean
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise LpInputError("objective, matrix and rhs must be finite")


@dataclass
class LpSolution:
    """Solver output.

    ``duals[i]`` is the sensitivity of the optimal objective to ``b[i]``
    (for both ``min`` and ``max`` problems), so that strong duality reads
    ``objective == duals @ b + (bound contributions)``.
    """

    status: str
    x: np.ndarray = None
    objective: float = np.nan
    duals: np.ndarray = None
    iterations: int = 0
    extra: dict = field(default_factory=dict)


class _Tableau:
    def __init__(self, A, b, basis):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = list(basis)
        self.iterations = 0

    @property
    def m(self):
        return self.T.shape[0] - 1

    def set_objective(self, cost):
        n = self.T.shape[1] - 1
        self.T[-1, :] = 0.0
        self.T[-1, :n] = cost
        for i, j in enumerate(self.basis):
            if self.T[-1, j] != 0.0:
                self.T[-1, :] -= self.T[-1, j] * self.T[i, :]

    def pivot(self, r, j):
        T = self.T
        T[r, :] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r, :])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self.iterations += 1

    def run(self, allowed, max_iter=50_000):
        """Bland iterations restricted to ``allowed`` columns."""
        T = self.T
        while self.iterations < max_iter:
            red = T[-1, :-1]
            enter = next((j for j in allowed if red[j] < -FEAS_TOL), None)
            if enter is None:
                return "optimal"
            col = T[:-1, enter]
            rows = np.nonzero(col > PIVOT_TOL)[0]
            if rows.size == 0:
                return "unbounded"
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + FEAS_TOL * max(1.0, abs(best))]
            leave = min(ties, key=lambda i: self.basis[i])
            self.pivot(leave, enter)
        raise RuntimeError("simplex iteration limit reached")


def _standard_form(p):
    """Map to ``min c' z, A' z = b', z >= 0``; x = shift + M @ z_struct."""
    n = p.c.size
    cols = []  # (orig var, sign)
    shift = np.zeros(n)
    ub_rows = []
    for j, (lo, hi) in enumerate(p.bounds):
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    M = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s

    m0 = p.A.shape[0]
    rows_A = [p.A @ M]
    rhs = [p.b - p.A @ shift]
    senses = list(p.senses)
    if ub_rows:
        U = np.zeros((len(ub_rows), len(cols)))
        for r, (k, cap) in enumerate(ub_rows):
            U[r, k] = 1.0
        rows_A.append(U)
        rhs.append(np.array([cap for _, cap in ub_rows]))
        senses += ["<="] * len(ub_rows)
    A = np.vstack(rows_A)
    b = np.concatenate(rhs)
    m = A.shape[0]

    n_slack = sum(s != "==" for s in senses)
    A_eq = np.zeros((m, len(cols) + n_slack))
    A_eq[:, :len(cols)] = A
    slack_of = {}
    k = len(cols)
    for i, s in enumerate(senses):
        if s == "<=":
            A_eq[i, k] = 1.0
        elif s == ">=":
            A_eq[i, k] = -1.0
        if s != "==":
            slack_of[i] = k
            k += 1
    flip = np.where(b < 0, -1.0, 1.0)
    A_eq *= flip[:, None]
    b = b * flip

    cost = np.zeros(A_eq.shape[1])
    cost[:len(cols)] = M.T @ p.c
    if p.maximize:
        cost = -cost
    return A_eq, b, cost, M, shift, flip, slack_of, m0


def solve_lp(problem: LpProblem) -> LpSolution:
    A, b, cost, M, shift, flip, slack_of, m0 = _standard_form(problem)
    m, n = A.shape

    # initial basis: a +1 slack where available, artificial otherwise
    basis = []
    art_rows = []
    for i in range(m):
        k = slack_of.get(i)
        if k is not None and A[i, k] > 0:
            basis.append(k)
        else:
            basis.append(None)
            art_rows.append(i)
    n_art = len(art_rows)
    A_full = np.hstack([A, np.zeros((m, n_art))])
    for a, i in enumerate(art_rows):
        A_full[i, n + a] = 1.0
        basis[i] = n + a

    tab = _Tableau(A_full, b, basis)
    if n_art:
        phase1 = np.zeros(n + n_art)
        phase1[n:] = 1.0
        tab.set_objective(phase1)
        tab.run(range(n + n_art))
        infeas = -tab.T[-1, -1]
        if infeas > FEAS_TOL * max(1.0, np.abs(b).max()):
            return LpSolution("infeasible", iterations=tab.iterations)
        # drive artificials out of the basis; drop redundant rows
        keep = []
        for r in range(tab.m):
            if tab.basis[r] >= n:
                cand = np.nonzero(np.abs(tab.T[r, :n]) > PIVOT_TOL)[0]
                if cand.size:
                    tab.pivot(r, int(cand[0]))
                    keep.append(r)
            else:
                keep.append(r)
        T = tab.T
        new = np.vstack([T[keep][:, list(range(n)) + [n + n_art]], np.zeros((1, n + 1))])
        tab.T = new
        tab.basis = [tab.basis[r] for r in keep]
        kept_rows = keep
    else:
        kept_rows = list(range(m))

    tab.set_objective(cost)
    status = tab.run(range(n))
    if status == "unbounded":
        return LpSolution("unbounded", iterations=tab.iterations)

    z = np.zeros(n)
    for r, j in enumerate(tab.basis):
        z[j] = tab.T[r, -1]
    z = np.maximum(z, 0.0)
    x = shift + M @ z[:M.shape[1]]
    objective = float(problem.c @ x)

    # y solves B^T y = c_B on the kept rows
    B = A[np.ix_(kept_rows, tab.basis)]
    y_kept = np.linalg.solve(B.T, cost[tab.basis]) if kept_rows else np.zeros(0)
    y = np.zeros(m)
    y[kept_rows] = y_kept
    y = y * flip
    if problem.maximize:
        y = -y
    return LpSolution("optimal", x=x, objective=objective, duals=y[:m0],
                      iterations=tab.iterations, extra={"bound_duals": y[m0:]})
