"""Momentum-corrected l2 baselines with bucketing and buffered wrappers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from robustmean.errors import InvalidParameterError
from robustmean.services.adversary import (
    AttackContext,
    AttackKind,
    AttackLevel,
    AttackSpec,
    attack_value,
)
from robustmean.services.aggregators.rules import (
    Rule,
    aggregate,
    minimum_inputs,
)
from robustmean.services.estimator.steps import (
    Mode,
    Trajectory,
    TrajectoryRecorder,
    async_y_update,
    sync_y_update,
    worker_report,
)
from robustmean.services.problem import (
    BoxProjection,
    SensingProblem,
    StepsizeSchedule,
    StreamBank,
    project_box,
    stepsizes_at,
    validate_box_for,
)

LOGGER = logging.getLogger(__name__)


class Wrapper(str, Enum):
    NONE = "none"
    BUCKETING = "bucketing"
    BUFFERED = "buffered"


@dataclass(frozen=True)
class AggregatorSpec:
    rule: Rule
    wrapper: Wrapper = Wrapper.NONE
    s: int = 1
    budget: int = 0
    gamma_power: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rule", Rule(self.rule))
        object.__setattr__(self, "wrapper", Wrapper(self.wrapper))
        if self.s < 1:
            raise InvalidParameterError(f"bucket/buffer size s must be at least 1, got {self.s}")
        if self.budget < 0:
            raise InvalidParameterError(f"byzantine budget must be nonnegative, got {self.budget}")
        if self.gamma_power is not None and self.gamma_power <= 0:
            raise InvalidParameterError("momentum exponent must be positive")

    @classmethod
    def with_default_momentum(
        cls, rule: Rule, mode: Mode, wrapper: Wrapper = Wrapper.NONE, s: int = 1, budget: int = 0
    ) -> "AggregatorSpec":
        """gamma_t = (t+1)^-0.9 for synchronous bucketing, zero everywhere else."""
        power = 0.9 if Mode(mode) is Mode.SYNC and Wrapper(wrapper) is Wrapper.BUCKETING else None
        return cls(rule=rule, wrapper=wrapper, s=s, budget=budget, gamma_power=power)

    def gamma_at(self, t: int) -> float:
        if self.gamma_power is None:
            return 0.0
        return float((t + 1) ** -self.gamma_power)

    def group_count(self, N: int) -> int:
        if self.wrapper is Wrapper.NONE:
            return N
        return int(math.ceil(N / self.s))

    def validate_for(self, N: int, mode: Mode) -> None:
        mode = Mode(mode)
        if self.wrapper is Wrapper.BUCKETING and mode is not Mode.SYNC:
            raise InvalidParameterError("bucketing wraps the synchronous baseline only")
        if self.wrapper is Wrapper.BUFFERED and mode is not Mode.ASYNC:
            raise InvalidParameterError("buffered aggregation wraps the asynchronous baseline only")
        needed = minimum_inputs(self.rule, self.budget)
        groups = self.group_count(N)
        if groups < needed:
            raise InvalidParameterError(
                f"{self.rule.value} with budget {self.budget} needs {needed} inputs; "
                f"{self.wrapper.value} with s={self.s} leaves {groups}"
            )

    @property
    def descriptor(self) -> str:
        if self.wrapper is Wrapper.NONE:
            return self.rule.value
        return f"{self.rule.value}+{self.wrapper.value}({self.s})"


def bucket_partition(count: int, s: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Random permutation cut into ceil(count/s) contiguous buckets; the last may be short."""
    if s < 1:
        raise InvalidParameterError(f"bucket size must be at least 1, got {s}")
    order = rng.permutation(count)
    return [order[start : start + s] for start in range(0, count, s)]


def bucketing_aggregate(
    rule: Rule, vectors: np.ndarray, s: int, budget: int, rng: np.random.Generator
) -> np.ndarray:
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    means = [V[bucket].mean(axis=0) for bucket in bucket_partition(V.shape[0], s, rng)]
    return aggregate(rule, means, budget)


class BufferBank:
    """Fixed partition of workers into ceil(N/s) buffers; the latest report per worker wins."""

    def __init__(self, n_workers: int, s: int) -> None:
        if s < 1:
            raise InvalidParameterError(f"buffer size must be at least 1, got {s}")
        self.n_workers = n_workers
        self.s = s
        self.count = int(math.ceil(n_workers / s))
        self._reports: List[Dict[int, np.ndarray]] = [{} for _ in range(self.count)]

    def buffer_of(self, worker: int) -> int:
        if not 0 <= worker < self.n_workers:
            raise InvalidParameterError(f"worker {worker} outside [0, {self.n_workers})")
        return worker // self.s

    def members(self, buffer: int) -> range:
        return range(buffer * self.s, min(self.n_workers, (buffer + 1) * self.s))

    def submit(self, worker: int, momentum: np.ndarray) -> None:
        self._reports[self.buffer_of(worker)][worker] = np.asarray(momentum, dtype=float)

    def ready(self) -> bool:
        return all(self._reports)

    def means(self) -> List[np.ndarray]:
        return [np.mean(list(reports.values()), axis=0) for reports in self._reports]

    def clear(self) -> None:
        for reports in self._reports:
            reports.clear()


@dataclass
class BaselineState:
    x: np.ndarray
    y: np.ndarray
    momenta: np.ndarray
    buffers: Optional[BufferBank] = None
    t: int = 0
    emits: int = 0

    @classmethod
    def initial(
        cls,
        problem: SensingProblem,
        box: BoxProjection,
        spec: AggregatorSpec,
        x0: Optional[np.ndarray] = None,
    ) -> "BaselineState":
        x = box.center.copy() if x0 is None else np.array(x0, dtype=float)
        if not box.contains(x):
            raise InvalidParameterError("x0 must lie in the projection box")
        buffers = BufferBank(problem.N, spec.s) if spec.wrapper is Wrapper.BUFFERED else None
        return cls(
            x=x,
            y=np.zeros(problem.N),
            momenta=np.zeros((problem.N, problem.d)),
            buffers=buffers,
        )


def buffered_step(
    state: BaselineState,
    reports: Iterable[Tuple[int, np.ndarray]],
    spec: AggregatorSpec,
    alpha: float,
    box: Optional[BoxProjection] = None,
) -> Optional[np.ndarray]:
    """Feed reports into the buffers; returns the new x when at least one emit happened."""
    if state.buffers is None:
        raise InvalidParameterError("state has no buffers; use the buffered wrapper")
    emitted: Optional[np.ndarray] = None
    for worker, momentum in reports:
        state.buffers.submit(worker, momentum)
        if not state.buffers.ready():
            continue
        update = aggregate(spec.rule, state.buffers.means(), spec.budget)
        state.buffers.clear()
        x_next = state.x - alpha * update
        state.x = project_box(x_next, box) if box is not None else x_next
        state.emits += 1
        emitted = state.x
    return emitted


def _corrupt_momentum(
    problem: SensingProblem,
    worker: int,
    adversary: AttackSpec,
    x: np.ndarray,
    honest_momenta: np.ndarray,
    gamma: float,
    m_prev: np.ndarray,
    streams: StreamBank,
) -> np.ndarray:
    ctx = AttackContext(
        problem=problem,
        worker=worker,
        x=x,
        rng=streams.adversary(),
        honest_momenta=honest_momenta,
        gamma=gamma,
        m_prev=m_prev,
    )
    return np.asarray(attack_value(adversary, ctx, AttackLevel.MOMENTUM), dtype=float)


def _momentum_targets(problem: SensingProblem, adversary: Optional[AttackSpec]) -> frozenset:
    # only the Baruch attack writes momenta directly; the others corrupt the reported Y
    if adversary is None or adversary.kind is not AttackKind.BARUCH:
        return frozenset()
    return adversary.targets(problem)


def current_momenta(
    state: BaselineState,
    problem: SensingProblem,
    spec: AggregatorSpec,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
) -> np.ndarray:
    """Every worker's momentum at the current (x, y); Baruch targets get the attacked value."""
    A = problem.A
    gamma = spec.gamma_at(state.t)
    grads = A * (A @ state.x - state.y)[:, None]
    momenta = (1.0 - gamma) * grads + gamma * state.momenta

    targets = _momentum_targets(problem, adversary)
    if targets:
        assert adversary is not None
        honest = momenta[problem.honest_mask]
        for w in sorted(targets):
            momenta[w] = _corrupt_momentum(
                problem, w, adversary, state.x, honest, gamma, state.momenta[w], streams
            )
    return momenta


def _sync_baseline_step(
    state: BaselineState,
    problem: SensingProblem,
    spec: AggregatorSpec,
    box: BoxProjection,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
    alpha: float,
    beta: float,
) -> None:
    x_old, y_old = state.x, state.y
    momenta = current_momenta(state, problem, spec, adversary, streams)
    state.momenta = momenta

    if spec.wrapper is Wrapper.BUCKETING:
        update = bucketing_aggregate(spec.rule, momenta, spec.s, spec.budget, streams.server())
    else:
        update = aggregate(spec.rule, list(momenta), spec.budget)
    state.x = project_box(x_old - alpha * update, box)

    Y = np.array(
        [worker_report(problem, j, x_old, y_old, adversary, streams) for j in range(problem.N)]
    )
    state.y = sync_y_update(y_old, Y, beta)


def _async_baseline_step(
    state: BaselineState,
    problem: SensingProblem,
    spec: AggregatorSpec,
    box: BoxProjection,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
    alpha: float,
    beta: float,
) -> None:
    # gradients and momenta are refreshed for all workers at x_n; only the Y report is per-worker
    x_old, y_old = state.x, state.y
    i = int(streams.server().integers(problem.N))
    momenta = current_momenta(state, problem, spec, adversary, streams)
    state.momenta = momenta

    if spec.wrapper is Wrapper.BUFFERED:
        buffered_step(state, [(i, momenta[i])], spec, alpha, box)
    else:
        update = aggregate(spec.rule, list(momenta), spec.budget)
        state.x = project_box(x_old - alpha * update, box)

    Y = worker_report(problem, i, x_old, y_old, adversary, streams)
    state.y = async_y_update(y_old, i, Y, beta, problem.N)


def baseline_step(
    state: BaselineState,
    problem: SensingProblem,
    spec: AggregatorSpec,
    mode: Mode,
    box: BoxProjection,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
    alpha: float,
    beta: float,
) -> BaselineState:
    """One server iteration in ``mode``; advances ``state.t``."""
    step = _async_baseline_step if Mode(mode) is Mode.ASYNC else _sync_baseline_step
    step(state, problem, spec, box, adversary, streams, alpha, beta)
    state.t += 1
    return state


def run_baseline(
    problem: SensingProblem,
    spec: AggregatorSpec,
    mode: Mode,
    sched: StepsizeSchedule,
    box: BoxProjection,
    adversary: Optional[AttackSpec] = None,
    *,
    n: int,
    r: float = 0.5,
    streams: Optional[StreamBank] = None,
    seed: int = 0,
    trial: int = 0,
    x0: Optional[np.ndarray] = None,
    checkpoints: Optional[Iterable[int]] = None,
) -> Trajectory:
    """Gradient, momentum, wrapper, aggregate, descent, projection; y follows the estimator's rule."""
    mode = Mode(mode)
    validate_box_for(problem, box)
    spec.validate_for(problem.N, mode)
    if adversary is not None:
        adversary.validate_for(problem)
    if spec.rule is Rule.RAGE_APPROX:
        LOGGER.warning(
            "rage-approx is a distance-filtering approximation, not the published rule",
            extra={"fields": {"rule": spec.rule.value}},
        )
    bank = streams if streams is not None else StreamBank(seed, trial, problem.N)
    recorder = TrajectoryRecorder(
        problem,
        mode,
        n=n,
        r=r,
        checkpoints=checkpoints,
        method=spec.descriptor,
        attack="none" if adversary is None else adversary.descriptor(AttackLevel.MOMENTUM),
    )

    state = BaselineState.initial(problem, box, spec, x0)
    for t in range(n + 1):
        alpha, beta = stepsizes_at(sched, t)
        recorder.observe(t, alpha, state.x, state.y)
        baseline_step(state, problem, spec, mode, box, adversary, bank, alpha, beta)
    return recorder.finish(state.x, state.y)


__all__ = [
    "AggregatorSpec",
    "BaselineState",
    "BufferBank",
    "Wrapper",
    "baseline_step",
    "bucket_partition",
    "bucketing_aggregate",
    "buffered_step",
    "current_momenta",
    "run_baseline",
]
