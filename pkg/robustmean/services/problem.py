"""The sensing world: problem definition, projection boxes, stepsizes and random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, Optional, Protocol, Sequence, Tuple

import numpy as np

from robustmean.errors import DimensionMismatchError, InvalidParameterError


def _as_matrix(value: object) -> np.ndarray:
    array = np.array(value, dtype=float)
    if array.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {array.shape}")
    array.setflags(write=False)
    return array


def _as_vector(value: object) -> np.ndarray:
    array = np.array(value, dtype=float).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SensingProblem:
    """Sensing matrix, ground-truth mean, noise level and adversarial roles."""

    A: np.ndarray
    mu_true: np.ndarray
    sigma: float = 0.0
    adversary_set: FrozenSet[int] = frozenset()
    m: int = 0

    def __post_init__(self) -> None:
        A = _as_matrix(self.A)
        mu = _as_vector(self.mu_true)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "mu_true", mu)
        object.__setattr__(self, "adversary_set", frozenset(int(j) for j in self.adversary_set))
        N, d = A.shape
        if N < 1 or d < 1:
            raise InvalidParameterError("sensing matrix needs at least one row and one column")
        if mu.shape[0] != d:
            raise DimensionMismatchError(f"mu_true has length {mu.shape[0]}, A has {d} columns")
        if not np.all(np.isfinite(A)):
            raise InvalidParameterError("sensing matrix entries must be finite")
        if not np.any(A != 0.0):
            raise InvalidParameterError("sensing matrix must have at least one nonzero row")
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise InvalidParameterError(f"sigma must be a finite nonnegative number, got {self.sigma}")
        if not 0 <= self.m <= N:
            raise InvalidParameterError(f"adversary budget m={self.m} must lie in [0, {N}]")
        if len(self.adversary_set) > self.m:
            raise InvalidParameterError(
                f"{len(self.adversary_set)} adversaries exceed the budget m={self.m}"
            )
        for worker in self.adversary_set:
            if not 0 <= worker < N:
                raise InvalidParameterError(f"adversarial worker {worker} outside [0, {N})")

    @property
    def N(self) -> int:
        return int(self.A.shape[0])

    @property
    def d(self) -> int:
        return int(self.A.shape[1])

    @property
    def EY(self) -> np.ndarray:
        """True measurement means A @ mu_true; only the simulator reads this."""
        return self.A @ self.mu_true

    @property
    def honest(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.N) if j not in self.adversary_set)

    @property
    def honest_mask(self) -> np.ndarray:
        mask = np.ones(self.N, dtype=bool)
        for j in self.adversary_set:
            mask[j] = False
        return mask

    @property
    def A_bar(self) -> float:
        return float(np.max(np.linalg.norm(self.A, axis=1)))

    @property
    def mu_bar(self) -> float:
        return float(np.max(np.abs(self.mu_true)))

    @property
    def sigma_bar(self) -> float:
        return float(self.sigma)

    def is_adversarial(self, worker: int) -> bool:
        return worker in self.adversary_set

    def scaled(self, factor: float) -> "SensingProblem":
        return SensingProblem(
            A=self.A * factor,
            mu_true=self.mu_true,
            sigma=self.sigma,
            adversary_set=self.adversary_set,
            m=self.m,
        )


@dataclass(frozen=True, eq=False)
class BoxProjection:
    """Axis-aligned box [lo, hi]; the only projection set supported."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = _as_vector(self.lo)
        hi = _as_vector(self.hi)
        if lo.shape != hi.shape:
            raise DimensionMismatchError(f"box bounds differ in length: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise InvalidParameterError("box requires lo <= hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, low: float, high: float, d: int) -> "BoxProjection":
        return cls(lo=np.full(d, float(low)), hi=np.full(d, float(high)))

    @property
    def d(self) -> int:
        return int(self.lo.shape[0])

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def contains(self, x: np.ndarray, *, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def diameter_from(self, x0: np.ndarray) -> float:
        """D_X: the largest distance from ``x0`` to a point of the box (attained at a corner)."""
        x0 = np.asarray(x0, dtype=float)
        reach = np.maximum(np.abs(self.hi - x0), np.abs(x0 - self.lo))
        return float(np.linalg.norm(reach))


def validate_box_for(problem: SensingProblem, box: BoxProjection) -> None:
    if box.d != problem.d:
        raise DimensionMismatchError(f"box has dimension {box.d}, problem has {problem.d}")
    if not box.contains(problem.mu_true):
        raise InvalidParameterError("the projection box must contain mu_true")


def project_box(x: np.ndarray, box: BoxProjection) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != box.lo.shape:
        raise DimensionMismatchError(f"point has shape {x.shape}, box has {box.lo.shape}")
    return np.clip(x, box.lo, box.hi)


def sign(r: float) -> int:
    if r > 0:
        return 1
    if r < 0:
        return -1
    return 0


def sign_vector(values: np.ndarray) -> np.ndarray:
    """Vectorised ``sign``; exact zero maps to 0."""
    return np.sign(np.asarray(values, dtype=float))


# --- Stepsizes --------------------------------------------------------------


class Regime(str, Enum):
    CONST_CONST = "const_const"
    CONST_DECAY = "const_decay"
    DECAY_DECAY = "decay_decay"
    POWER_LAW = "power_law"
    CUSTOM = "custom"


@dataclass(frozen=True)
class StepsizeSchedule:
    """One of the rate-theorem stepsize regimes, a power law, or custom callables."""

    regime: Regime
    n: Optional[int] = None
    r: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    alpha_fn: Optional[Callable[[int], float]] = field(default=None, compare=False)
    beta_fn: Optional[Callable[[int], float]] = field(default=None, compare=False)

    @classmethod
    def const_const(cls, n: int, r: float) -> "StepsizeSchedule":
        schedule = cls(Regime.CONST_CONST, n=n, r=r)
        schedule._const_beta()
        return schedule

    @classmethod
    def const_decay(cls, n: int) -> "StepsizeSchedule":
        if n < 1:
            raise InvalidParameterError(f"constant-alpha schedule needs n >= 1, got {n}")
        return cls(Regime.CONST_DECAY, n=n)

    @classmethod
    def decay_decay(cls) -> "StepsizeSchedule":
        return cls(Regime.DECAY_DECAY)

    @classmethod
    def power_law(cls, a: float, b: float) -> "StepsizeSchedule":
        if a <= 0 or b <= 0:
            raise InvalidParameterError("power-law exponents must be positive")
        return cls(Regime.POWER_LAW, a=a, b=b)

    @classmethod
    def custom(
        cls, alpha_fn: Callable[[int], float], beta_fn: Callable[[int], float]
    ) -> "StepsizeSchedule":
        return cls(Regime.CUSTOM, alpha_fn=alpha_fn, beta_fn=beta_fn)

    @classmethod
    def for_statement(cls, statement: int, n: int, r: float = 0.5) -> "StepsizeSchedule":
        if statement == 1:
            return cls.const_const(n, r)
        if statement == 2:
            return cls.const_decay(n)
        if statement == 3:
            return cls.decay_decay()
        raise InvalidParameterError(f"unknown rate statement {statement}")

    @property
    def horizon(self) -> Optional[int]:
        if self.regime in (Regime.CONST_CONST, Regime.CONST_DECAY):
            return self.n
        return None

    def _const_beta(self) -> float:
        n, r = self.n, self.r
        if n is None or n < 3:
            raise InvalidParameterError(f"constant-constant schedule needs n >= 3, got {n}")
        if r is None or not 0 < r < 1:
            raise InvalidParameterError(f"tail fraction r must lie in (0, 1), got {r}")
        numerator = math.log(n) - 2.0 * math.log(math.log(n))
        if numerator <= 0:
            raise InvalidParameterError(f"ln n - 2 ln ln n is not positive for n={n}")
        beta = numerator / (2.0 * r * n)
        if beta > 1.0:
            raise InvalidParameterError(f"beta={beta:.4g} exceeds 1 for n={n}, r={r}")
        return beta


def stepsizes_at(sched: StepsizeSchedule, t: int) -> Tuple[float, float]:
    if t < 0:
        raise InvalidParameterError(f"iteration index must be nonnegative, got {t}")
    horizon = sched.horizon
    if horizon is not None and t > horizon:
        raise InvalidParameterError(f"t={t} exceeds the schedule horizon n={horizon}")

    if sched.regime is Regime.CONST_CONST:
        assert sched.n is not None
        return 1.0 / math.sqrt(sched.n), sched._const_beta()
    if sched.regime is Regime.CONST_DECAY:
        assert sched.n is not None
        return 1.0 / math.sqrt(sched.n), 1.0 / (t + 1)
    if sched.regime is Regime.DECAY_DECAY:
        return 1.0 / math.sqrt(t + 1), 1.0 / (t + 1)
    if sched.regime is Regime.POWER_LAW:
        assert sched.a is not None and sched.b is not None
        return float((t + 1) ** -sched.a), float((t + 1) ** -sched.b)

    assert sched.alpha_fn is not None and sched.beta_fn is not None
    alpha, beta = float(sched.alpha_fn(t)), float(sched.beta_fn(t))
    if not (0 < alpha <= 1 and 0 < beta <= 1):
        raise InvalidParameterError(f"custom stepsizes ({alpha}, {beta}) at t={t} leave (0, 1]")
    return alpha, beta


def stepsize_arrays(sched: StepsizeSchedule, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """alpha_t and beta_t for t = 0..n."""
    pairs = [stepsizes_at(sched, t) for t in range(n + 1)]
    alphas = np.fromiter((p[0] for p in pairs), dtype=float, count=n + 1)
    betas = np.fromiter((p[1] for p in pairs), dtype=float, count=n + 1)
    return alphas, betas


def check_stepsize_assumption(a: float, b: float) -> bool:
    """Whether (t+1)^-a, (t+1)^-b belongs to the admissible power-law family."""
    return (2.0 / 3.0 < a <= 1.0) and (0.5 < b <= 1.0) and (2.0 * (1.0 - a) < b < a)


def tail_start(n: int, r: float) -> int:
    if not 0 < r < 1:
        raise InvalidParameterError(f"tail fraction r must lie in (0, 1), got {r}")
    return int(math.ceil(r * n))


def tail_weights(alphas: Sequence[float]) -> np.ndarray:
    window = np.asarray(alphas, dtype=float)
    if window.size == 0:
        raise InvalidParameterError("tail window is empty")
    if np.any(window <= 0):
        raise InvalidParameterError("tail weights need strictly positive stepsizes")
    return window / window.sum()


# --- Randomness --------------------------------------------------------------


@dataclass(frozen=True)
class RandomSource:
    """A (seed, stream-id) pair naming one independent counter-based stream."""

    seed: int
    stream_id: int

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.stream_id < 0:
            raise InvalidParameterError(f"stream id must be nonnegative, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(sequence))


class StreamBank:
    """Lazily created generators for one trial: one per worker, server and adversary."""

    def __init__(self, seed: int, trial: int, n_workers: int) -> None:
        self.seed = int(seed)
        self.trial = int(trial)
        self.n_workers = int(n_workers)
        self._generators: Dict[int, np.random.Generator] = {}

    def stream_id(self, slot: int) -> int:
        return self.trial * (self.n_workers + 2) + slot

    def _get(self, slot: int) -> np.random.Generator:
        generator = self._generators.get(slot)
        if generator is None:
            generator = RandomSource(self.seed, self.stream_id(slot)).generator()
            self._generators[slot] = generator
        return generator

    def worker(self, j: int) -> np.random.Generator:
        if not 0 <= j < self.n_workers:
            raise InvalidParameterError(f"worker {j} outside [0, {self.n_workers})")
        return self._get(j)

    def server(self) -> np.random.Generator:
        return self._get(self.n_workers)

    def adversary(self) -> np.random.Generator:
        return self._get(self.n_workers + 1)


# --- Sampling ----------------------------------------------------------------


class NoiseModel(Protocol):
    def draw(self, rng: np.random.Generator, d: int) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianNoise:
    """Isotropic N(0, sigma^2 I) perturbation of X."""

    sigma: float

    def draw(self, rng: np.random.Generator, d: int) -> np.ndarray:
        return self.sigma * rng.standard_normal(d)


def sample_measurement(
    problem: SensingProblem,
    worker: int,
    rng: np.random.Generator,
    noise: Optional[NoiseModel] = None,
) -> float:
    if not 0 <= worker < problem.N:
        raise InvalidParameterError(f"worker {worker} outside [0, {problem.N})")
    if problem.is_adversarial(worker):
        raise InvalidParameterError(f"worker {worker} is adversarial; the adversary supplies its value")
    model = noise if noise is not None else GaussianNoise(problem.sigma)
    X = problem.mu_true + model.draw(rng, problem.d)
    return float(problem.A[worker] @ X)


def honest_workers(problem: SensingProblem, workers: Iterable[int]) -> list[int]:
    return [j for j in workers if not problem.is_adversarial(j)]


__all__ = [
    "BoxProjection",
    "GaussianNoise",
    "NoiseModel",
    "RandomSource",
    "Regime",
    "SensingProblem",
    "StepsizeSchedule",
    "StreamBank",
    "check_stepsize_assumption",
    "honest_workers",
    "project_box",
    "sample_measurement",
    "sign",
    "sign_vector",
    "stepsize_arrays",
    "stepsizes_at",
    "tail_start",
    "tail_weights",
    "validate_box_for",
]
