"""Diagnostic decomposition of the asynchronous update direction.

With g the (negated) subgradient of f and g' the direction the server would
follow if honest y were exact, a sampled update splits as
``a_i sign(y(i) - a_i^T x) = g' + eps + M`` where eps collects the honest
estimation error and M is a martingale difference.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from robustmean.errors import DimensionMismatchError, InvalidParameterError
from robustmean.services.problem import SensingProblem, sign_vector


@dataclass(frozen=True)
class Decomposition:
    g: np.ndarray
    g_prime: np.ndarray
    eps: np.ndarray


@dataclass(frozen=True)
class LemmaSlack:
    """rhs - lhs of both inequalities; nonnegative means the inequality holds."""

    drift: float
    estimation: float

    def holds(self, tol: float = 1e-12) -> bool:
        return self.drift >= -tol and self.estimation >= -tol


def _check(problem: SensingProblem, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] != problem.d or y.shape[0] != problem.N:
        raise DimensionMismatchError(
            f"x has length {x.shape[0]} and y {y.shape[0]}; expected {problem.d} and {problem.N}"
        )
    return x, y


def decomposition(x: np.ndarray, y: np.ndarray, problem: SensingProblem) -> Decomposition:
    x, y = _check(problem, x, y)
    A, N = problem.A, problem.N
    Ax = A @ x
    truth_signs = sign_vector(problem.EY - Ax)
    estimate_signs = sign_vector(y - Ax)
    honest = problem.honest_mask

    g = A.T @ truth_signs / N
    mixed = np.where(honest, truth_signs, estimate_signs)
    g_prime = A.T @ mixed / N
    eps = A.T @ np.where(honest, estimate_signs - truth_signs, 0.0) / N
    return Decomposition(g=g, g_prime=g_prime, eps=eps)


def martingale_increment(x: np.ndarray, y: np.ndarray, i: int, problem: SensingProblem) -> np.ndarray:
    """M = a_i sign(y(i) - a_i^T x) - g' - eps for a sampled worker i."""
    x, y = _check(problem, x, y)
    if not 0 <= i < problem.N:
        raise InvalidParameterError(f"worker {i} outside [0, {problem.N})")
    parts = decomposition(x, y, problem)
    a_i = problem.A[i]
    return a_i * np.sign(y[i] - a_i @ x) - parts.g_prime - parts.eps


def check_lemma_inequalities(
    problem: SensingProblem, K: float, x: np.ndarray, y: np.ndarray
) -> LemmaSlack:
    """Slacks of (x - EX)^T g' <= (1/K)(x - EX)^T g and (x - EX)^T eps <= (2/N)||y - EY||_{1,honest}."""
    x, y = _check(problem, x, y)
    parts = decomposition(x, y, problem)
    offset = x - problem.mu_true
    honest_l1 = float(np.abs(y - problem.EY)[problem.honest_mask].sum())
    drift = float(offset @ parts.g) / K - float(offset @ parts.g_prime)
    estimation = 2.0 * honest_l1 / problem.N - float(offset @ parts.eps)
    return LemmaSlack(drift=drift, estimation=estimation)


def check_cross_ratio(A: np.ndarray, m: int, K: float, x: np.ndarray) -> float:
    """min over |S| = m of (K-1) sum_{S^c}|a_j x| - (K+1) sum_S |a_j x|."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    magnitudes = np.abs(A @ np.asarray(x, dtype=float))
    total = float(magnitudes.sum())
    worst = np.inf
    for subset in itertools.combinations(range(A.shape[0]), m):
        inside = float(magnitudes[list(subset)].sum())
        worst = min(worst, (K - 1.0) * (total - inside) - (K + 1.0) * inside)
    return float(worst)


__all__ = [
    "Decomposition",
    "LemmaSlack",
    "check_cross_ratio",
    "check_lemma_inequalities",
    "decomposition",
    "martingale_increment",
]
