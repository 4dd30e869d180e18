"""Robust aggregation rules over a list of d-vectors."""

from __future__ import annotations

import logging
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from robustmean.errors import DimensionMismatchError, InvalidParameterError

LOGGER = logging.getLogger(__name__)

WEISZFELD_MAX_ITER = 100
WEISZFELD_TOL = 1e-10
WEISZFELD_EPS = 1e-12


class Rule(str, Enum):
    KRUM = "krum"
    CM = "cm"
    CTM = "ctm"
    RFA = "rfa"
    RAGE_APPROX = "rage-approx"


def l2_gradient(a_j: np.ndarray, x: np.ndarray, y_j: float) -> np.ndarray:
    """a_j (a_j^T x - y_j)."""
    a_j = np.asarray(a_j, dtype=float)
    x = np.asarray(x, dtype=float)
    if a_j.shape != x.shape:
        raise DimensionMismatchError(f"row has shape {a_j.shape}, x has {x.shape}")
    return a_j * (float(a_j @ x) - float(y_j))


def momentum_update(m_prev: np.ndarray, grad: np.ndarray, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"momentum coefficient {gamma} outside [0, 1]")
    return (1.0 - gamma) * np.asarray(grad, dtype=float) + gamma * np.asarray(m_prev, dtype=float)


def _stack(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if len(vectors) == 0:
        raise InvalidParameterError("cannot aggregate an empty list")
    stacked = np.vstack([np.asarray(v, dtype=float).reshape(-1) for v in vectors])
    return stacked


def krum(vectors: Sequence[np.ndarray], f: int) -> np.ndarray:
    V = _stack(vectors)
    count = V.shape[0]
    if count < 2 * f + 3:
        raise InvalidParameterError(f"krum needs at least 2f+3={2 * f + 3} vectors, got {count}")
    neighbours = count - f - 2
    diffs = V[:, None, :] - V[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diffs, diffs)
    scores = np.empty(count)
    for i in range(count):
        others = np.delete(sq[i], i)
        scores[i] = np.sort(others)[:neighbours].sum()
    # argmin returns the first index on ties
    return V[int(np.argmin(scores))].copy()


def coordinate_median(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return np.median(_stack(vectors), axis=0)


def trimmed_mean(vectors: Sequence[np.ndarray], f: int) -> np.ndarray:
    V = _stack(vectors)
    count = V.shape[0]
    if count <= 2 * f:
        raise InvalidParameterError(f"trimmed mean with f={f} needs more than {2 * f} vectors")
    ordered = np.sort(V, axis=0)
    return ordered[f : count - f].mean(axis=0)


def geometric_median_objective(V: np.ndarray, z: np.ndarray) -> float:
    return float(np.linalg.norm(V - z, axis=1).sum())


def weiszfeld(
    vectors: Sequence[np.ndarray],
    *,
    max_iter: int = WEISZFELD_MAX_ITER,
    tol: float = WEISZFELD_TOL,
    eps: float = WEISZFELD_EPS,
) -> Tuple[np.ndarray, List[float]]:
    """Geometric median by Weiszfeld iteration; returns the point and the objective history."""
    V = _stack(vectors)
    z = V.mean(axis=0)
    history = [geometric_median_objective(V, z)]
    for _ in range(max_iter):
        distances = np.maximum(np.linalg.norm(V - z, axis=1), eps)
        weights = 1.0 / distances
        z_next = weights @ V / weights.sum()
        step = float(np.linalg.norm(z_next - z))
        z = z_next
        history.append(geometric_median_objective(V, z))
        if step < tol:
            break
    return z, history


def geometric_median(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return weiszfeld(vectors)[0]


def rage_approx(vectors: Sequence[np.ndarray], f: int) -> np.ndarray:
    """Distance filter: drop the vector farthest from the running mean f times, average the rest."""
    V = _stack(vectors)
    if V.shape[0] <= f:
        raise InvalidParameterError(f"rage-approx with f={f} needs more than {f} vectors")
    survivors = list(range(V.shape[0]))
    for _ in range(f):
        centre = V[survivors].mean(axis=0)
        distances = np.linalg.norm(V[survivors] - centre, axis=1)
        survivors.pop(int(np.argmax(distances)))
    return V[survivors].mean(axis=0)


def aggregate(rule: Rule, vectors: Sequence[np.ndarray], f: int) -> np.ndarray:
    rule = Rule(rule)
    if f < 0:
        raise InvalidParameterError(f"budget must be nonnegative, got {f}")
    if rule is Rule.KRUM:
        return krum(vectors, f)
    if rule is Rule.CM:
        return coordinate_median(vectors)
    if rule is Rule.CTM:
        return trimmed_mean(vectors, f)
    if rule is Rule.RFA:
        return geometric_median(vectors)
    return rage_approx(vectors, f)


def minimum_inputs(rule: Rule, f: int) -> int:
    """Smallest vector count the rule accepts under budget f."""
    rule = Rule(rule)
    if rule is Rule.KRUM:
        return 2 * f + 3
    if rule is Rule.CTM:
        return 2 * f + 1
    if rule is Rule.RAGE_APPROX:
        return f + 1
    return 1


__all__ = [
    "Rule",
    "WEISZFELD_EPS",
    "WEISZFELD_MAX_ITER",
    "WEISZFELD_TOL",
    "aggregate",
    "coordinate_median",
    "geometric_median",
    "geometric_median_objective",
    "krum",
    "l2_gradient",
    "minimum_inputs",
    "momentum_update",
    "rage_approx",
    "trimmed_mean",
    "weiszfeld",
]
