"""Small dense linear programs and a two-phase tableau simplex solver.

Pivoting uses Dantzig's most-negative reduced cost and falls back to Bland's
rule after a run of degenerate pivots, which rules out cycling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

_SENSES = ("<=", "=", ">=")


class LpError(ValueError):
    pass


@dataclass
class LpProblem:
    """Linear program over named nonnegative variables.

    Constraint rows are stored sparsely as ``(indices, values, sense, rhs)``.
    """

    sense: str = "min"
    names: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise LpError(f"objective sense must be 'min' or 'max', got {self.sense!r}")

    @property
    def num_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, ub: Optional[float] = None) -> int:
        self.names.append(name)
        self.upper.append(ub)
        return len(self.names) - 1

    def add_constraint(self, coeffs: Union[Mapping[int, float], tuple], sense: str,
                       rhs: float) -> None:
        if sense not in _SENSES:
            raise LpError(f"unknown constraint sense {sense!r}")
        if isinstance(coeffs, Mapping):
            idx = np.fromiter(coeffs.keys(), dtype=int, count=len(coeffs))
            val = np.fromiter(coeffs.values(), dtype=float, count=len(coeffs))
        else:
            idx, val = (np.asarray(c) for c in coeffs)
            idx = idx.astype(int)
            val = val.astype(float)
        if idx.size and (idx.min() < 0 or idx.max() >= self.num_vars):
            raise LpError("constraint references an undeclared variable")
        self.rows.append((idx, val, sense, float(rhs)))

    def set_objective(self, coeffs: Mapping[int, float]) -> None:
        for j in coeffs:
            if not 0 <= j < self.num_vars:
                raise LpError(f"objective references undeclared variable {j}")
        self.objective = dict(coeffs)

    def dense(self):
        """``(c, A, senses, b)`` with upper bounds appended as ``<=`` rows."""
        n = self.num_vars
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] += v
        rows = list(self.rows)
        for j, ub in enumerate(self.upper):
            if ub is not None:
                rows.append((np.array([j]), np.array([1.0]), "<=", float(ub)))
        A = np.zeros((len(rows), n))
        senses, b = [], np.zeros(len(rows))
        for i, (idx, val, s, r) in enumerate(rows):
            np.add.at(A[i], idx, val)
            senses.append(s)
            b[i] = r
        return c, A, senses, b

    def to_text(self) -> str:
        """Human-readable dump for debugging."""
        out = [f"{self.sense}imize"]
        terms = " + ".join(f"{v:g} {self.names[j]}" for j, v in sorted(self.objective.items()))
        out.append(f"  {terms or '0'}")
        out.append("subject to")
        for k, (idx, val, s, r) in enumerate(self.rows):
            lhs = " + ".join(f"{v:g} {self.names[j]}" for j, v in zip(idx, val))
            out.append(f"  c{k}: {lhs or '0'} {s} {r + 0.0:g}")
        out.append("bounds")
        for name, ub in zip(self.names, self.upper):
            out.append(f"  0 <= {name}" + (f" <= {ub:g}" if ub is not None else ""))
        return "\n".join(out) + "\n"


@dataclass
class LpResult:
    status: str
    x: Optional[np.ndarray]
    objective: Optional[float]
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    def __init__(self, T, basis, piv_tol, degenerate_limit):
        self.T = T
        self.basis = basis
        self.piv_tol = piv_tol
        self.degenerate_limit = degenerate_limit
        self.iterations = 0

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = j
        self.iterations += 1

    def run(self, allowed, cost_tol, max_iter):
        """Optimize the objective in the last row over columns ``allowed``."""
        T = self.T
        m = T.shape[0] - 1
        bland = False
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            red = T[-1, :-1]
            cand = np.flatnonzero(allowed & (red < -cost_tol))
            if cand.size == 0:
                return OPTIMAL
            j = int(cand[0]) if bland else int(cand[np.argmin(red[cand])])
            colj = T[:m, j]
            rows = np.flatnonzero(colj > self.piv_tol)
            if rows.size == 0:
                return UNBOUNDED
            ratios = T[rows, -1] / colj[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = int(ties[np.argmin([self.basis[i] for i in ties])])
            if best <= 1e-12:
                degenerate += 1
                if degenerate > self.degenerate_limit and not bland:
                    log.debug("switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate = 0
            self.pivot(r, j)


def solve_lp(p: LpProblem, tol: float = 1e-7, max_iter: Optional[int] = None,
             degenerate_limit: int = 50) -> LpResult:
    """Two-phase dense simplex. Returns status, primal point and objective."""
    if p.num_vars < 1:
        raise LpError("problem has no variables")
    c, A, senses, b = p.dense()
    if p.sense == "max":
        c = -c
    m, n = A.shape
    A = A.copy()
    b = b.copy()
    senses = list(senses)
    for i in range(m):
        if b[i] < 0:
            A[i] *= -1
            b[i] *= -1
            senses[i] = {"<=": ">=", ">=": "<=", "=": "="}[senses[i]]
    n_slack = sum(s != "=" for s in senses)
    n_art = sum(s != "<=" for s in senses)
    N = n + n_slack + n_art
    T = np.zeros((m + 1, N + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = [0] * m
    art_cols = []
    si, ai = n, n + n_slack
    for i, s in enumerate(senses):
        if s == "<=":
            T[i, si] = 1.0
            basis[i] = si
            si += 1
        else:
            if s == ">=":
                T[i, si] = -1.0
                si += 1
            T[i, ai] = 1.0
            basis[i] = ai
            art_cols.append(ai)
            ai += 1
    if max_iter is None:
        max_iter = 50 * (m + N) + 1000
    scale = max(1.0, float(np.abs(b).max()) if m else 1.0)
    cost_tol = 1e-10 * max(1.0, float(np.abs(c).max()))
    tab = _Tableau(T, basis, piv_tol=1e-9, degenerate_limit=degenerate_limit)
    allowed = np.ones(N, dtype=bool)

    if art_cols:
        T[-1, :] = 0.0
        T[-1, art_cols] = 1.0
        for i in range(m):
            if basis[i] in art_cols:
                T[-1] -= T[i]
        status = tab.run(allowed, 1e-12, max_iter)
        if status == ITERATION_LIMIT:
            return LpResult(status, None, None, tab.iterations)
        if -T[-1, -1] > tol * scale:
            return LpResult(INFEASIBLE, None, None, tab.iterations)
        is_art = np.zeros(N, dtype=bool)
        is_art[art_cols] = True
        drop_rows = []
        for i in range(m):
            if is_art[tab.basis[i]]:
                cand = np.flatnonzero(~is_art & (np.abs(T[i, :N]) > tab.piv_tol))
                if cand.size:
                    tab.pivot(i, int(cand[0]))
                else:
                    drop_rows.append(i)
        if drop_rows:
            keep = [i for i in range(m) if i not in drop_rows] + [m]
            tab.T = T = T[keep]
            tab.basis = [tab.basis[i] for i in keep[:-1]]
            m = T.shape[0] - 1
        allowed = ~is_art

    full_c = np.zeros(N)
    full_c[:n] = c
    T[-1, :] = 0.0
    T[-1, :N] = full_c
    for i in range(m):
        T[-1] -= full_c[tab.basis[i]] * T[i]
    status = tab.run(allowed, cost_tol, max_iter)
    if status != OPTIMAL:
        return LpResult(status, None, None, tab.iterations)
    xfull = np.zeros(N)
    for i, j in enumerate(tab.basis):
        xfull[j] = T[i, -1]
    x = np.maximum(xfull[:n], 0.0)
    obj = float(np.dot(c, x))
    if p.sense == "max":
        obj = -obj
    return LpResult(OPTIMAL, x, obj, tab.iterations)
