"""Robustness margin eta of a sensing matrix and the derived constant K.

For an adversary budget ``m`` the margin is

    eta = min_{|S| = m} min_{||x|| = 1} (1/N) [ sum_{j not in S} |a_j x| - sum_{j in S} |a_j x| ].

For fixed S the bracket is piecewise linear and positively homogeneous. On the
relative interior of any cell of the hyperplane arrangement {a_j x = 0} lying in
a flat L it equals c^T x for a sign-dependent c, so a minimiser on the sphere is
either ``-P_L c / ||P_L c||`` or an extreme ray of the arrangement. The exact
mode enumerates flats (null spaces of up to d-1 rows) and sign patterns and
evaluates the true objective at every such candidate; each candidate is a unit
vector, so the enumeration can only over-estimate if a minimiser were missed,
and none is.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from robustmean.errors import InvalidParameterError, RecoverabilityError

LOGGER = logging.getLogger(__name__)

STRICT_TOL = 1e-9
EXACT_MAX_ROWS = 12
EXACT_MAX_COLS = 4

METHOD_EXACT = "exact-enumeration"
METHOD_MULTISTART = "multistart"


@dataclass
class Witness:
    subset: Tuple[int, ...]
    direction: np.ndarray


@dataclass
class RecoverabilityReport:
    eta: float
    K: float
    holds_A2: bool
    method: str
    certified: bool
    m: int
    N: int
    A_bar: float
    witness: Optional[Witness] = None
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        payload = {
            "eta": self.eta,
            "K": self.K,
            "holds_A2": self.holds_A2,
            "method": self.method,
            "certified": self.certified,
            "m": self.m,
            "N": self.N,
            "A_bar": self.A_bar,
        }
        if self.witness is not None:
            payload["witness_subset"] = list(self.witness.subset)
            payload["witness_direction"] = [float(v) for v in self.witness.direction]
        payload.update(self.meta)
        return payload


def margin_objective(A: np.ndarray, subset: Sequence[int], X: np.ndarray) -> np.ndarray:
    """(1/N)[sum_{S^c} |a_j x| - sum_S |a_j x|] for each column of ``X``."""
    N = A.shape[0]
    weights = np.ones(N)
    weights[list(subset)] = -1.0
    return weights @ np.abs(A @ X) / N


def worst_case_margin(A: np.ndarray, m: int, x: np.ndarray) -> Tuple[float, Tuple[int, ...]]:
    """min over |S| = m of the margin at ``x``; the worst S holds the m largest |a_j x|."""
    N = A.shape[0]
    magnitudes = np.abs(A @ x)
    if m == 0:
        return float(magnitudes.sum() / N), ()
    order = np.argsort(-magnitudes, kind="stable")
    subset = tuple(sorted(int(j) for j in order[:m]))
    value = (magnitudes.sum() - 2.0 * magnitudes[list(subset)].sum()) / N
    return float(value), subset


def _null_basis(rows: np.ndarray, d: int) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.eye(d)
    _, singular, vt = np.linalg.svd(rows)
    rank = int(np.sum(singular > 1e-10 * max(1.0, singular.max(initial=0.0))))
    return vt[rank:].T


def _flats(A: np.ndarray, support: Sequence[int]) -> Iterator[np.ndarray]:
    """Orthonormal bases of the distinct nontrivial flats cut out by up to d-1 rows."""
    d = A.shape[1]
    seen: set[bytes] = set()
    for size in range(0, d):
        for rows in itertools.combinations(support, size):
            basis = _null_basis(A[list(rows)], d)
            if basis.shape[1] == 0:
                continue
            key = np.round(basis @ basis.T, 9).tobytes()
            if key in seen:
                continue
            seen.add(key)
            yield basis


def _sign_patterns(count: int) -> np.ndarray:
    """All sign vectors in {-1, +1}^count with a fixed leading +1 (the objective is even)."""
    if count == 0:
        return np.ones((1, 0))
    tail = np.array(list(itertools.product((1.0, -1.0), repeat=count - 1))).reshape(-1, count - 1)
    return np.hstack([np.ones((tail.shape[0], 1)), tail])


def _normalize_columns(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(X, axis=0)
    keep = norms > 1e-12
    return X[:, keep] / norms[keep], keep


def _exact_eta(A: np.ndarray, m: int) -> Tuple[float, Tuple[int, ...], np.ndarray, int]:
    N, d = A.shape
    support = [j for j in range(N) if np.any(A[j] != 0.0)]
    patterns = _sign_patterns(len(support))
    signed_rows = np.zeros((patterns.shape[0], N))
    signed_rows[:, support] = patterns

    flats = list(_flats(A, support))
    best_value = math.inf
    best_subset: Tuple[int, ...] = ()
    best_x = np.eye(d)[:, 0]
    evaluated = 0

    for subset in itertools.combinations(range(N), m):
        weights = np.ones(N)
        weights[list(subset)] = -1.0
        C = (signed_rows * weights) @ A  # one linear piece per sign pattern
        for basis in flats:
            projector = basis @ basis.T
            candidates = [basis]
            interior, _ = _normalize_columns(-(projector @ C.T))
            candidates.append(interior)
            X = np.hstack(candidates)
            values = weights @ np.abs(A @ X) / N
            evaluated += X.shape[1]
            index = int(np.argmin(values))
            if values[index] < best_value:
                best_value = float(values[index])
                best_subset = tuple(subset)
                best_x = X[:, index].copy()
    return best_value, best_subset, best_x, evaluated


def _polish(A: np.ndarray, m: int, x: np.ndarray) -> Tuple[float, np.ndarray]:
    """Snap a near-optimal point onto nearby arrangement rays and cell critical points."""
    N, d = A.shape
    best_value, subset = worst_case_margin(A, m, x)
    best_x = x
    norms = np.linalg.norm(A, axis=1)
    support = np.flatnonzero(norms > 0)
    if support.size == 0:
        return best_value, best_x
    closeness = np.abs(A[support] @ x) / norms[support]
    nearest = support[np.argsort(closeness, kind="stable")[: min(d + 1, support.size)]]
    weights = np.ones(N)
    weights[list(subset)] = -1.0
    c = (weights * np.sign(A @ x)) @ A
    for size in range(0, d):
        for rows in itertools.combinations(nearest, size):
            basis = _null_basis(A[list(rows)], d)
            if basis.shape[1] == 0:
                continue
            candidates = [basis]
            critical = -(basis @ (basis.T @ c))
            if np.linalg.norm(critical) > 1e-12:
                candidates.append((critical / np.linalg.norm(critical))[:, None])
            for column in np.hstack(candidates).T:
                value, _ = worst_case_margin(A, m, column)
                if value < best_value:
                    best_value, best_x = value, column.copy()
    return best_value, best_x


def _multistart_eta(
    A: np.ndarray, m: int, *, starts: int, iterations: int, seed: int
) -> Tuple[float, Tuple[int, ...], np.ndarray]:
    N, d = A.shape
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    best_value = math.inf
    best_x = np.eye(d)[:, 0]
    for start in range(starts):
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
        incumbent_value, _ = worst_case_margin(A, m, x)
        incumbent = x.copy()
        for k in range(1, iterations + 1):
            _, subset = worst_case_margin(A, m, x)
            weights = np.ones(N)
            weights[list(subset)] = -1.0
            g = (weights * np.sign(A @ x)) @ A / N
            tangent = g - (g @ x) * x
            norm = np.linalg.norm(tangent)
            if norm < 1e-14:
                break
            x = x - (0.5 / math.sqrt(k)) * tangent / norm
            x /= np.linalg.norm(x)
            value, _ = worst_case_margin(A, m, x)
            if value < incumbent_value:
                incumbent_value, incumbent = value, x.copy()
        polished_value, polished = _polish(A, m, incumbent)
        if polished_value < best_value:
            best_value, best_x = polished_value, polished
        LOGGER.debug("multistart restart %s reached %.12g", start, polished_value)
    _, subset = worst_case_margin(A, m, best_x)
    return best_value, subset, best_x


def compute_eta(
    A: np.ndarray,
    m: int,
    *,
    method: str = "auto",
    starts: int = 200,
    iterations: int = 400,
    seed: int = 0,
) -> RecoverabilityReport:
    """Margin eta with K and the (A2) verdict.

    ``method`` is ``"exact"``, ``"multistart"`` or ``"auto"`` (exact when the
    matrix is small enough, N <= 12 and d <= 4).
    """

    A = np.atleast_2d(np.asarray(A, dtype=float))
    N, d = A.shape
    if not 0 <= m < N:
        raise InvalidParameterError(f"adversary budget m={m} must satisfy 0 <= m < N={N}")
    if method not in {"auto", "exact", "multistart"}:
        raise InvalidParameterError(f"unknown eta method '{method}'")
    A_bar = float(np.max(np.linalg.norm(A, axis=1)))

    if not np.any(A != 0.0):
        direction = np.eye(d)[:, 0]
        return RecoverabilityReport(
            eta=0.0,
            K=math.inf,
            holds_A2=False,
            method=METHOD_EXACT,
            certified=True,
            m=m,
            N=N,
            A_bar=0.0,
            witness=Witness(subset=tuple(range(m)), direction=direction),
        )

    small = N <= EXACT_MAX_ROWS and d <= EXACT_MAX_COLS
    use_exact = method == "exact" or (method == "auto" and small)
    if method == "exact" and not small:
        raise InvalidParameterError(
            f"exact enumeration supports N <= {EXACT_MAX_ROWS} and d <= {EXACT_MAX_COLS}; "
            f"got {N}x{d}, use multistart"
        )

    meta: dict = {}
    if use_exact:
        eta, subset, direction, evaluated = _exact_eta(A, m)
        meta["candidates_evaluated"] = evaluated
        label, certified = METHOD_EXACT, True
    else:
        eta, subset, direction = _multistart_eta(A, m, starts=starts, iterations=iterations, seed=seed)
        meta["starts"] = starts
        label, certified = METHOD_MULTISTART, False
        LOGGER.warning(
            "eta from multistart is an upper bound and not certified",
            extra={"fields": {"eta_upper": eta, "N": N, "d": d, "m": m}},
        )

    holds = eta > STRICT_TOL
    K = 2.0 * m * A_bar / (N * eta) + 1.0 if holds else math.inf
    return RecoverabilityReport(
        eta=float(eta),
        K=float(K),
        holds_A2=bool(holds),
        method=label,
        certified=certified,
        m=m,
        N=N,
        A_bar=A_bar,
        witness=Witness(subset=tuple(subset), direction=direction / np.linalg.norm(direction)),
        meta=meta,
    )


def robustness_K(report: RecoverabilityReport, A: np.ndarray, m: int) -> float:
    if report.eta <= 0 or not report.holds_A2:
        raise RecoverabilityError(report.eta)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N = A.shape[0]
    A_bar = float(np.max(np.linalg.norm(A, axis=1)))
    return 2.0 * m * A_bar / (N * report.eta) + 1.0


def cross_ratio_violations(A: np.ndarray, m: int, K: float, X: np.ndarray, *, tol: float = 1e-9) -> int:
    """Count (S, x) pairs breaking (K-1) sum_{S^c}|a_j x| >= (K+1) sum_S |a_j x|."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N = A.shape[0]
    points = np.atleast_2d(np.asarray(X, dtype=float))
    magnitudes = np.abs(A @ points.T)
    total = magnitudes.sum(axis=0)
    violations = 0
    for subset in itertools.combinations(range(N), m):
        inside = magnitudes[list(subset)].sum(axis=0)
        outside = total - inside
        lhs = (K - 1.0) * outside
        rhs = (K + 1.0) * inside
        violations += int(np.sum(lhs < rhs - tol * np.maximum(1.0, np.abs(rhs))))
    return violations


__all__: List[str] = [
    "METHOD_EXACT",
    "METHOD_MULTISTART",
    "RecoverabilityReport",
    "STRICT_TOL",
    "Witness",
    "compute_eta",
    "cross_ratio_violations",
    "margin_objective",
    "robustness_K",
    "worst_case_margin",
]
