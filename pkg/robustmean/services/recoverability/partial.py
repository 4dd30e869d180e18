"""Partial recovery: certify the relaxed condition and solve the l1 fit.

When the sensing matrix misses full recoverability, the component of the mean
along span(U) may still be identifiable. The relaxed condition asks, for every
row set K with |K| <= q and every alpha != 0,

    inf_beta ( sum_{i not in K} |g_i| - sum_{i in K} |g_i| ) > 0,   g = A(U alpha + V beta).

The infimum is not convex because of the subtracted magnitudes; writing
``-|g_i| = min_{s_i = +-1} -s_i g_i`` splits it into 2^|K| linear programs.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from robustmean.errors import DimensionMismatchError, InvalidParameterError, UnboundedProblemError
from robustmean.services.recoverability.eta import STRICT_TOL
from robustmean.services.recoverability.simplex import LPResult, solve_lp

LOGGER = logging.getLogger(__name__)

METHOD_SIGN_ENUMERATION = "exact-sign-enumeration"
METHOD_SAMPLED = "sampled-net"


@dataclass(frozen=True, eq=False)
class PartialStructure:
    U: np.ndarray
    V: np.ndarray
    q: int

    def __post_init__(self) -> None:
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.asarray(self.V, dtype=float)
        if U.shape[0] == 1 and U.shape[1] > 1:
            U = U.T
        if V.ndim == 1:
            V = V.reshape(-1, 1) if V.size else np.zeros((U.shape[0], 0))
        d = U.shape[0]
        if V.shape[0] != d:
            raise DimensionMismatchError(f"U has {d} rows but V has {V.shape[0]}")
        if U.shape[1] + V.shape[1] != d:
            raise InvalidParameterError(
                f"U and V must split R^{d}: got r={U.shape[1]}, s={V.shape[1]}"
            )
        if U.shape[1] == 0:
            raise InvalidParameterError("U must have at least one column")
        if np.linalg.matrix_rank(np.hstack([U, V])) < d:
            raise InvalidParameterError("span(U) and span(V) do not form a direct sum equal to R^d")
        if self.q < 0:
            raise InvalidParameterError(f"sparsity budget q must be nonnegative, got {self.q}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def r(self) -> int:
        return int(self.U.shape[1])

    @property
    def s(self) -> int:
        return int(self.V.shape[1])


@dataclass
class PartialVerdict:
    holds: bool
    certified: bool
    margin: float
    method: str
    witness_subset: Optional[Tuple[int, ...]] = None
    witness_alpha: Optional[np.ndarray] = None
    witness_beta: Optional[np.ndarray] = None
    lp_solves: int = 0
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        payload = {
            "holds_A2_prime": self.holds,
            "certified": self.certified,
            "margin": self.margin,
            "method": self.method,
            "lp_solves": self.lp_solves,
        }
        if self.witness_subset is not None:
            payload["witness_subset"] = list(self.witness_subset)
        if self.witness_alpha is not None:
            payload["witness_alpha"] = [float(v) for v in self.witness_alpha]
        if self.witness_beta is not None:
            payload["witness_beta"] = [float(v) for v in self.witness_beta]
        return payload


def _inner_infimum(
    AU_alpha: np.ndarray, AV: np.ndarray, subset: Tuple[int, ...]
) -> Tuple[float, Optional[np.ndarray], int]:
    """inf over beta of sum_{K^c}|g| - sum_K |g|; returns (value, beta, LP count)."""
    N, s = AV.shape
    inside = list(subset)
    outside = [i for i in range(N) if i not in subset]
    best = math.inf
    best_beta: Optional[np.ndarray] = None
    solves = 0
    for signs in itertools.product((1.0, -1.0), repeat=len(inside)):
        sigma = np.asarray(signs)
        constant = -float(sigma @ AU_alpha[inside]) if inside else 0.0
        beta_cost = -(sigma @ AV[inside]) if inside else np.zeros(s)

        if not outside:
            value = constant if np.allclose(beta_cost, 0.0) else -math.inf
            beta = np.zeros(s)
        else:
            k = len(outside)
            cost = np.concatenate([beta_cost, np.ones(k)])
            block = AV[outside]
            identity = np.eye(k)
            A_ub = np.vstack([np.hstack([block, -identity]), np.hstack([-block, -identity])])
            b_ub = np.concatenate([-AU_alpha[outside], AU_alpha[outside]])
            free = np.concatenate([np.ones(s, dtype=bool), np.zeros(k, dtype=bool)])
            solves += 1
            try:
                result = solve_lp(cost, A_ub, b_ub, free=free)
            except UnboundedProblemError:
                value, beta = -math.inf, None
            else:
                value = constant + result.objective
                beta = result.x[:s]
        if value < best:
            best, best_beta = value, beta
    return best, best_beta, solves


def _alpha_net(r: int, samples: int, seed: int) -> Tuple[np.ndarray, bool]:
    if r == 1:
        return np.array([[1.0], [-1.0]]), True
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    axes = np.vstack([np.eye(r), -np.eye(r)])
    draws = rng.standard_normal((samples, r))
    draws /= np.linalg.norm(draws, axis=1, keepdims=True)
    return np.vstack([axes, draws]), False


def check_A2_prime(
    A: np.ndarray,
    struct: PartialStructure,
    *,
    tol: float = STRICT_TOL,
    net_samples: int = 256,
    seed: int = 0,
) -> PartialVerdict:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N, d = A.shape
    if struct.U.shape[0] != d:
        raise DimensionMismatchError(f"structure is {struct.U.shape[0]}-dimensional, A has {d} columns")

    AU = A @ struct.U
    AV = A @ struct.V
    net, exact = _alpha_net(struct.r, net_samples, seed)

    margin = math.inf
    witness: Tuple[Optional[Tuple[int, ...]], Optional[np.ndarray], Optional[np.ndarray]] = (None, None, None)
    solves = 0
    for size in range(0, min(struct.q, N) + 1):
        for subset in itertools.combinations(range(N), size):
            for alpha in net:
                value, beta, count = _inner_infimum(AU @ alpha, AV, subset)
                solves += count
                if value < margin:
                    margin = value
                    witness = (subset, alpha.copy(), beta)

    holds = margin > tol
    if not exact:
        LOGGER.warning(
            "relaxed condition checked on a sampled alpha net; result is not certified",
            extra={"fields": {"r": struct.r, "samples": net_samples}},
        )
    return PartialVerdict(
        holds=bool(holds),
        certified=exact,
        margin=float(margin),
        method=METHOD_SIGN_ENUMERATION if exact else METHOD_SAMPLED,
        witness_subset=witness[0],
        witness_alpha=witness[1],
        witness_beta=witness[2],
        lp_solves=solves,
    )


@dataclass
class L1Fit:
    alpha: np.ndarray
    beta: np.ndarray
    residual: float
    certified: bool
    lp: LPResult


def l1_fit(A: np.ndarray, U: np.ndarray, V: np.ndarray, y: np.ndarray) -> L1Fit:
    """Exact minimiser of ||A(U alpha + V beta) - y||_1 through its LP reformulation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    U = np.asarray(U, dtype=float).reshape(A.shape[1], -1)
    V = np.asarray(V, dtype=float)
    V = V.reshape(A.shape[1], -1) if V.size else np.zeros((A.shape[1], 0))
    y = np.asarray(y, dtype=float).reshape(-1)
    N = A.shape[0]
    if y.shape[0] != N:
        raise DimensionMismatchError(f"y has length {y.shape[0]}, A has {N} rows")

    M = A @ np.hstack([U, V])
    width = M.shape[1]
    identity = np.eye(N)
    cost = np.concatenate([np.zeros(width), np.ones(N)])
    A_ub = np.vstack([np.hstack([M, -identity]), np.hstack([-M, -identity])])
    b_ub = np.concatenate([y, -y])
    free = np.concatenate([np.ones(width, dtype=bool), np.zeros(N, dtype=bool)])
    result = solve_lp(cost, A_ub, b_ub, free=free)

    coefficients = result.x[:width]
    r = U.shape[1]
    alpha, beta = coefficients[:r], coefficients[r:]
    residual = float(np.abs(M @ coefficients - y).sum())
    return L1Fit(alpha=alpha, beta=beta, residual=residual, certified=result.certified, lp=result)


__all__: List[str] = [
    "L1Fit",
    "METHOD_SAMPLED",
    "METHOD_SIGN_ENUMERATION",
    "PartialStructure",
    "PartialVerdict",
    "check_A2_prime",
    "l1_fit",
]
