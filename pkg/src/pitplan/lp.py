"""Minimal dense linear-programming solver (two-phase simplex).

Maximizes c'x subject to rows (a, rel, b) with rel in {<=, =, >=} and
x >= lower bounds (default 0). Bland's rule keeps pivoting finite and
deterministic; duals come from the final basis. Problems in this engine
are small (a few hundred variables), so a dense tableau is adequate
and easy to audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NumericalFailure, ValidationError

LE, EQ, GE = "<=", "=", ">="

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-7


class LpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class LpProblem:
    objective: np.ndarray  # maximize
    constraints: list[tuple[np.ndarray, str, float]]
    lower_bounds: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        rows = []
        for a, rel, b in self.constraints:
            a = np.asarray(a, dtype=float)
            if a.size != n:
                raise ValidationError("constraint length mismatch")
            if rel not in (LE, EQ, GE):
                raise ValidationError(f"unknown relation {rel!r}")
            if not np.isfinite(b):
                raise ValidationError("rhs must be finite")
            rows.append((a, rel, float(b)))
        self.constraints = rows
        if self.lower_bounds is None:
            self.lower_bounds = np.zeros(n)
        else:
            self.lower_bounds = np.asarray(self.lower_bounds, dtype=float)


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    extras: dict = field(default_factory=dict)


def solve_lp(problem: LpProblem) -> LpSolution:
    """Two-phase simplex with Bland's anti-cycling rule."""
    c = problem.objective.copy()
    lb = problem.lower_bounds
    n = c.size
    m = len(problem.constraints)

    # shift x = x' + lb so that x' >= 0
    shift_const = float(c @ lb)
    a_rows = np.zeros((m, n))
    rhs = np.zeros(m)
    rels = []
    flipped = np.zeros(m, dtype=bool)
    for i, (a, rel, b) in enumerate(problem.constraints):
        a_rows[i] = a
        rhs[i] = b - a @ lb
        rels.append(rel)
    for i in range(m):
        if rhs[i] < 0:
            a_rows[i] = -a_rows[i]
            rhs[i] = -rhs[i]
            rels[i] = {LE: GE, GE: LE, EQ: EQ}[rels[i]]
            flipped[i] = True

    # augmented columns: structural | slack/surplus | artificial
    slack_cols = [i for i in range(m) if rels[i] == LE]
    surplus_cols = [i for i in range(m) if rels[i] == GE]
    art_rows = [i for i in range(m) if rels[i] != LE]
    n_slack = len(slack_cols) + len(surplus_cols)
    n_art = len(art_rows)
    total = n + n_slack + n_art

    A = np.zeros((m, total))
    A[:, :n] = a_rows
    col = n
    slack_col_of_row = {}
    for i in slack_cols:
        A[i, col] = 1.0
        slack_col_of_row[i] = col
        col += 1
    for i in surplus_cols:
        A[i, col] = -1.0
        col += 1
    art_col_of_row = {}
    for i in art_rows:
        A[i, col] = 1.0
        art_col_of_row[i] = col
        col += 1

    basis = np.empty(m, dtype=int)
    for i in range(m):
        basis[i] = art_col_of_row.get(i, slack_col_of_row.get(i, -1))
    if np.any(basis < 0):
        raise NumericalFailure("internal: row without initial basic column")

    tableau = np.hstack([A, rhs.reshape(-1, 1)])
    iter_cap = 2000 + 200 * (m + total)
    iterations = 0

    def pivot(tab, basis_, row, col_):
        tab[row] /= tab[row, col_]
        for r in range(tab.shape[0]):
            if r != row and abs(tab[r, col_]) > 0:
                tab[r] -= tab[r, col_] * tab[row]
        basis_[row] = col_

    def run_phase(tab, basis_, costs, banned):
        """Maximize costs'x on the tableau; Bland's rule; returns status."""
        nonlocal iterations
        while True:
            iterations += 1
            if iterations > iter_cap:
                raise NumericalFailure("simplex iteration cap exceeded")
            cb = costs[basis_]
            reduced = costs - cb @ tab[:, :-1]
            entering = -1
            for j in range(total):
                if banned[j]:
                    continue
                if reduced[j] > _PIVOT_TOL:
                    entering = j
                    break  # Bland: lowest index
            if entering < 0:
                return "optimal"
            col_vals = tab[:, entering]
            best_ratio, leave = None, -1
            for r in range(m):
                if col_vals[r] > _PIVOT_TOL:
                    ratio = tab[r, -1] / col_vals[r]
                    if (
                        best_ratio is None
                        or ratio < best_ratio - _PIVOT_TOL
                        or (abs(ratio - best_ratio) <= _PIVOT_TOL and basis_[r] < basis_[leave])
                    ):
                        best_ratio, leave = ratio, r
            if leave < 0:
                return "unbounded"
            pivot(tab, basis_, leave, entering)

    banned = np.zeros(total, dtype=bool)
    if n_art:
        phase1_costs = np.zeros(total)
        for i in art_rows:
            phase1_costs[art_col_of_row[i]] = -1.0
        status = run_phase(tableau, basis, phase1_costs, banned)
        if status == "unbounded":
            raise NumericalFailure("phase-1 unbounded: internal error")
        infeas = -(phase1_costs[basis] @ tableau[:, -1])
        if infeas > _FEAS_TOL:
            return LpSolution(status=LpStatus.INFEASIBLE, iterations=iterations)
        # drive remaining artificial variables out of the basis
        art_set = set(art_col_of_row.values())
        for r in range(m):
            if basis[r] in art_set:
                pivot_col = -1
                for j in range(n + n_slack):
                    if abs(tableau[r, j]) > _PIVOT_TOL:
                        pivot_col = j
                        break
                if pivot_col >= 0:
                    pivot(tableau, basis, r, pivot_col)
                # else: redundant row; keep the artificial basic at zero level
        for j in art_set:
            banned[j] = True

    phase2_costs = np.zeros(total)
    phase2_costs[:n] = c
    status = run_phase(tableau, basis, phase2_costs, banned)
    if status == "unbounded":
        return LpSolution(status=LpStatus.UNBOUNDED, iterations=iterations)

    x_aug = np.zeros(total)
    x_aug[basis] = tableau[:, -1]
    x = x_aug[:n] + lb
    objective = float(c @ x_aug[:n]) + shift_const

    # duals: solve B'y = c_B on the original augmented system
    B = A[:, basis]
    cb = phase2_costs[basis]
    try:
        y = np.linalg.solve(B.T, cb)
    except np.linalg.LinAlgError:
        y, *_ = np.linalg.lstsq(B.T, cb, rcond=None)
    duals = np.where(flipped, -y, y)

    return LpSolution(
        status=LpStatus.OPTIMAL,
        x=x,
        duals=duals,
        objective=objective,
        iterations=iterations,
    )
