"""Strategies for corrupt workers.

Attacks act at two levels: the measurement level (the scalar Y a worker sends
to the two-timescale estimator) and the momentum level (the vector a corrupt
worker contributes to a robust aggregator). The Baruch-style attack places the
corrupt contribution on the worker's own sensing direction, scaled to sit near
mean-plus-one-standard-deviation of the honest contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, Optional

import numpy as np

from robustmean.errors import InvalidParameterError
from robustmean.services.problem import SensingProblem


class AttackKind(str, Enum):
    BARUCH = "baruch"
    CONSTANT = "constant"
    SIGN_FLIP = "sign_flip"
    RANDOM_LARGE = "random_large"


class AttackLevel(str, Enum):
    MEASUREMENT = "measurement"
    MOMENTUM = "momentum"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    target_workers: FrozenSet[int] = frozenset()
    value: float = 0.0
    scale: float = 1000.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "target_workers", frozenset(int(w) for w in self.target_workers))
        if self.kind is AttackKind.RANDOM_LARGE and self.scale <= 0:
            raise InvalidParameterError("random_large attack needs a positive scale")

    def validate_for(self, problem: SensingProblem) -> None:
        stray = self.target_workers - problem.adversary_set
        if stray:
            raise InvalidParameterError(
                f"attack targets {sorted(stray)} which are not in the adversary set"
            )

    def targets(self, problem: SensingProblem) -> FrozenSet[int]:
        """Workers driven by this attack; an empty target set means every adversarial worker."""
        return self.target_workers or problem.adversary_set

    def descriptor(self, level: AttackLevel = AttackLevel.MOMENTUM) -> str:
        """Label written to every output row; the measurement-level Baruch variant is marked."""
        if self.kind is AttackKind.BARUCH:
            return "baruch-y" if level is AttackLevel.MEASUREMENT else "baruch"
        if self.kind is AttackKind.CONSTANT:
            return f"constant({self.value:g})"
        if self.kind is AttackKind.RANDOM_LARGE:
            return f"random_large({self.scale:g})"
        return self.kind.value


@dataclass
class AttackContext:
    """Read-only snapshot handed to the adversary at one iteration."""

    problem: SensingProblem
    worker: int
    x: np.ndarray
    rng: np.random.Generator
    honest_momenta: Optional[np.ndarray] = None
    gamma: float = 0.0
    m_prev: Optional[np.ndarray] = None


def baruch_scale(a_w: np.ndarray, honest_momenta: np.ndarray) -> float:
    """Least-squares c minimising ||c a_w - (mean + std)|| over honest momenta.

    The standard deviation is the population one (divide by the count).
    """
    a_w = np.asarray(a_w, dtype=float)
    snapshot = np.atleast_2d(np.asarray(honest_momenta, dtype=float))
    if snapshot.shape[0] == 0:
        raise InvalidParameterError("Baruch attack needs at least one honest momentum")
    norm_sq = float(a_w @ a_w)
    if norm_sq == 0.0:
        raise InvalidParameterError("Baruch attack needs a nonzero sensing row")
    target = snapshot.mean(axis=0) + snapshot.std(axis=0, ddof=0)
    return float(a_w @ target) / norm_sq


def honest_snapshot(problem: SensingProblem, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rows a_j (a_j^T x - y(j)) for the honest workers; the measurement-level attack reads these."""
    honest = list(problem.honest)
    A_h = problem.A[honest]
    residual = A_h @ np.asarray(x, dtype=float) - np.asarray(y, dtype=float)[honest]
    return A_h * residual[:, None]


def passive_report(problem: SensingProblem, worker: int, rng: np.random.Generator) -> float:
    """What an adversarial worker outside the attack's targets sends: a genuine-looking sample."""
    X = problem.mu_true + problem.sigma * rng.standard_normal(problem.d)
    return float(problem.A[worker] @ X)


def measurement_attack(spec: AttackSpec, ctx: AttackContext) -> float:
    a_w = ctx.problem.A[ctx.worker]
    if spec.kind is AttackKind.BARUCH:
        if ctx.honest_momenta is None:
            raise InvalidParameterError("Baruch attack needs the honest snapshot")
        c = baruch_scale(a_w, ctx.honest_momenta)
        # a_w (a_w^T x - Y) = c a_w
        return float(a_w @ ctx.x) - c
    if spec.kind is AttackKind.CONSTANT:
        return float(spec.value)
    if spec.kind is AttackKind.SIGN_FLIP:
        return -passive_report(ctx.problem, ctx.worker, ctx.rng)
    return float(spec.scale * ctx.rng.standard_normal())


def momentum_attack(spec: AttackSpec, ctx: AttackContext) -> np.ndarray:
    """Corrupt momentum for the Baruch attack.

    The worker controls only the scalar its gradient is built from, so the
    reachable momenta form the line ``base - u p``; the closest point to
    ``c a_w`` on it is returned (exact when gamma = 0).
    """
    if spec.kind is not AttackKind.BARUCH:
        raise InvalidParameterError(f"{spec.kind.value} acts at the measurement level")
    if ctx.honest_momenta is None:
        raise InvalidParameterError("Baruch attack needs the honest momenta")
    if not 0.0 <= ctx.gamma <= 1.0:
        raise InvalidParameterError(f"momentum coefficient {ctx.gamma} outside [0, 1]")
    a_w = ctx.problem.A[ctx.worker]
    c = baruch_scale(a_w, ctx.honest_momenta)
    target = c * a_w
    m_prev = np.zeros_like(a_w) if ctx.m_prev is None else np.asarray(ctx.m_prev, dtype=float)

    p = (1.0 - ctx.gamma) * a_w
    base = (1.0 - ctx.gamma) * a_w * float(a_w @ ctx.x) + ctx.gamma * m_prev
    p_norm_sq = float(p @ p)
    if ctx.gamma == 0.0:
        return target
    if p_norm_sq == 0.0:
        return base
    u = float(p @ (base - target)) / p_norm_sq
    return base - u * p


def attack_value(spec: AttackSpec, ctx: AttackContext, level: AttackLevel = AttackLevel.MEASUREMENT):
    if ctx.worker not in ctx.problem.adversary_set:
        raise InvalidParameterError(f"worker {ctx.worker} is honest")
    if level is AttackLevel.MOMENTUM and spec.kind is AttackKind.BARUCH:
        return momentum_attack(spec, ctx)
    return measurement_attack(spec, ctx)


__all__ = [
    "AttackContext",
    "AttackKind",
    "AttackLevel",
    "AttackSpec",
    "attack_value",
    "baruch_scale",
    "honest_snapshot",
    "measurement_attack",
    "momentum_attack",
    "passive_report",
]
