"""Dense two-phase tableau simplex.

Solves ``min c^T x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` with
``x >= 0`` except for variables flagged free. Pricing is steepest-edge until
``10 * (rows + cols)`` pivots have been spent, after which Bland's rule takes
over so the method terminates on degenerate problems. The returned optimum is
re-solved from the final basis and certified through primal feasibility, dual
feasibility and complementary slackness residuals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from robustmean.errors import DimensionMismatchError, SolverError, UnboundedProblemError

LOGGER = logging.getLogger(__name__)

PIVOT_TOL = 1e-12
CERTIFY_TOL = 1e-9


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int
    used_bland: bool
    primal_residual: float
    dual_infeasibility: float
    cs_residual: float
    basis: List[int] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return max(self.primal_residual, self.dual_infeasibility, self.cs_residual) <= CERTIFY_TOL


@dataclass
class _StandardForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n_orig: int
    free: np.ndarray
    neg_index: dict


def _to_standard_form(
    c: np.ndarray,
    A_ub: Optional[np.ndarray],
    b_ub: Optional[np.ndarray],
    A_eq: Optional[np.ndarray],
    b_eq: Optional[np.ndarray],
    free: np.ndarray,
) -> _StandardForm:
    n = c.shape[0]
    blocks_A: list[np.ndarray] = []
    blocks_b: list[np.ndarray] = []
    n_ub = 0
    if A_ub is not None:
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.asarray(b_ub, dtype=float).reshape(-1)
        if A_ub.shape[1] != n or A_ub.shape[0] != b_ub.shape[0]:
            raise DimensionMismatchError("inequality block does not match the objective")
        n_ub = A_ub.shape[0]
    if A_eq is not None:
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.asarray(b_eq, dtype=float).reshape(-1)
        if A_eq.shape[1] != n or A_eq.shape[0] != b_eq.shape[0]:
            raise DimensionMismatchError("equality block does not match the objective")

    free_idx = [j for j in range(n) if free[j]]
    neg_index = {j: n + k for k, j in enumerate(free_idx)}
    width = n + len(free_idx) + n_ub

    def _expand(block: np.ndarray) -> np.ndarray:
        out = np.zeros((block.shape[0], width))
        out[:, :n] = block
        for j, k in neg_index.items():
            out[:, k] = -block[:, j]
        return out

    if A_ub is not None and b_ub is not None:
        rows = _expand(A_ub)
        rows[:, n + len(free_idx):] = np.eye(n_ub)
        blocks_A.append(rows)
        blocks_b.append(b_ub)
    if A_eq is not None and b_eq is not None:
        blocks_A.append(_expand(A_eq))
        blocks_b.append(b_eq)
    if not blocks_A:
        raise DimensionMismatchError("linear program has no constraints")

    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)
    c_std = np.zeros(width)
    c_std[:n] = c
    for j, k in neg_index.items():
        c_std[k] = -c[j]
    return _StandardForm(A=A, b=b, c=c_std, n_orig=n, free=free, neg_index=neg_index)


class _Tableau:
    def __init__(self, A: np.ndarray, b: np.ndarray, basis: List[int]) -> None:
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = list(basis)
        self.m = m
        self.n = n
        self.iterations = 0
        self.used_bland = False

    def set_objective(self, cost: np.ndarray) -> None:
        self.T[self.m, : self.n] = cost
        self.T[self.m, self.n] = 0.0
        for row, var in enumerate(self.basis):
            coefficient = self.T[self.m, var]
            if coefficient != 0.0:
                self.T[self.m] -= coefficient * self.T[row]

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] /= T[row, col]
        column = T[:, col].copy()
        column[row] = 0.0
        T -= np.outer(column, T[row])
        self.basis[row] = col
        self.iterations += 1

    def _entering(self, allowed: np.ndarray, bland: bool, tol: float) -> Optional[int]:
        reduced = self.T[self.m, : self.n]
        candidates = np.flatnonzero((reduced < -tol) & allowed)
        if candidates.size == 0:
            return None
        if bland:
            return int(candidates[0])
        norms = np.sqrt(1.0 + np.sum(self.T[: self.m, candidates] ** 2, axis=0))
        return int(candidates[np.argmin(reduced[candidates] / norms)])

    def _leaving(self, col: int, bland: bool) -> Optional[int]:
        column = self.T[: self.m, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if rows.size == 0:
            return None
        ratios = self.T[rows, self.n] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        if bland or ties.size == 1:
            return int(min(ties, key=lambda r: self.basis[r]))
        return int(ties[np.argmax(column[ties])])

    def optimize(self, allowed: np.ndarray, *, tol: float, bland_after: int, max_iter: int) -> None:
        steps = 0
        while True:
            bland = steps >= bland_after
            if bland and not self.used_bland:
                LOGGER.debug("simplex switching to Bland's rule after %s pivots", steps)
                self.used_bland = True
            col = self._entering(allowed, bland, tol)
            if col is None:
                return
            row = self._leaving(col, bland)
            if row is None:
                raise UnboundedProblemError("objective is unbounded below")
            self.pivot(row, col)
            steps += 1
            if steps > max_iter:
                raise SolverError(f"simplex did not terminate within {max_iter} pivots")


def solve_lp(
    c: Sequence[float],
    A_ub: Optional[np.ndarray] = None,
    b_ub: Optional[Sequence[float]] = None,
    A_eq: Optional[np.ndarray] = None,
    b_eq: Optional[Sequence[float]] = None,
    *,
    free: Optional[Sequence[bool]] = None,
    tol: float = 1e-10,
    max_iter: int = 50_000,
) -> LPResult:
    """Minimise ``c^T x`` over the given polyhedron."""

    c_arr = np.asarray(c, dtype=float).reshape(-1)
    free_mask = np.zeros(c_arr.shape[0], dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if free_mask.shape != c_arr.shape:
        raise DimensionMismatchError("free-variable mask does not match the objective")

    form = _to_standard_form(
        c_arr,
        None if A_ub is None else np.asarray(A_ub, dtype=float),
        None if b_ub is None else np.asarray(b_ub, dtype=float),
        None if A_eq is None else np.asarray(A_eq, dtype=float),
        None if b_eq is None else np.asarray(b_eq, dtype=float),
        free_mask,
    )
    A, b = form.A.copy(), form.b.copy()
    negative = b < 0
    A[negative] *= -1.0
    b[negative] *= -1.0
    m, n = A.shape
    bland_after = 10 * (m + n)

    # Phase 1: artificial identity block.
    tableau = _Tableau(np.hstack([A, np.eye(m)]), b, basis=list(range(n, n + m)))
    phase_one_cost = np.concatenate([np.zeros(n), np.ones(m)])
    tableau.set_objective(phase_one_cost)
    tableau.optimize(np.ones(n + m, dtype=bool), tol=tol, bland_after=bland_after, max_iter=max_iter)
    infeasibility = -tableau.T[m, n + m]
    if infeasibility > 1e-8 * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise SolverError(f"linear program is infeasible (phase-one residual {infeasibility:.3g})")

    redundant: list[int] = []
    for row, var in enumerate(list(tableau.basis)):
        if var < n:
            continue
        weights = np.abs(tableau.T[row, :n])
        if weights.max(initial=0.0) > 1e-9:
            tableau.pivot(row, int(np.argmax(weights)))
        else:
            redundant.append(row)
    if redundant:
        keep = [r for r in range(m) if r not in redundant]
        LOGGER.debug("dropping %s redundant constraint rows", len(redundant))
        T = tableau.T
        tableau.T = np.vstack([T[keep], T[m:m + 1]])
        tableau.basis = [tableau.basis[r] for r in keep]
        tableau.m = len(keep)
        A = A[keep]
        b = b[keep]
        m = len(keep)

    # Phase 2 on the original columns only.
    tableau.T = np.hstack([tableau.T[:, :n], tableau.T[:, -1:]])
    tableau.n = n
    tableau.set_objective(form.c)
    tableau.optimize(np.ones(n, dtype=bool), tol=tol, bland_after=bland_after, max_iter=max_iter)

    basis = list(tableau.basis)
    B = A[:, basis]
    x_std = np.zeros(n)
    x_std[basis] = np.linalg.solve(B, b)
    duals = np.linalg.solve(B.T, form.c[basis])
    reduced = form.c - A.T @ duals
    primal_residual = float(np.max(np.abs(A @ x_std - b), initial=0.0))
    primal_residual = max(primal_residual, float(max(0.0, -x_std.min(initial=0.0))))
    dual_infeasibility = float(max(0.0, -reduced.min(initial=0.0)))
    cs_residual = float(np.max(np.abs(x_std * reduced), initial=0.0))

    x = x_std[: form.n_orig].copy()
    for j, k in form.neg_index.items():
        x[j] -= x_std[k]
    result = LPResult(
        x=x,
        objective=float(c_arr @ x),
        iterations=tableau.iterations,
        used_bland=tableau.used_bland,
        primal_residual=primal_residual,
        dual_infeasibility=dual_infeasibility,
        cs_residual=cs_residual,
        basis=basis,
    )
    if not result.certified:
        LOGGER.debug(
            "simplex optimum not certified",
            extra={
                "fields": {
                    "primal_residual": primal_residual,
                    "dual_infeasibility": dual_infeasibility,
                    "cs_residual": cs_residual,
                }
            },
        )
    return result


__all__ = ["CERTIFY_TOL", "LPResult", "solve_lp"]
