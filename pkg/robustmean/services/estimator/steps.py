"""Two-timescale l1 estimator: state, objectives, the two step rules and the run loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, List, Optional, Sequence

import numpy as np

from robustmean.errors import DimensionMismatchError, InvalidParameterError
from robustmean.services.adversary import (
    AttackContext,
    AttackKind,
    AttackLevel,
    AttackSpec,
    attack_value,
    honest_snapshot,
    passive_report,
)
from robustmean.services.problem import (
    BoxProjection,
    SensingProblem,
    StepsizeSchedule,
    StreamBank,
    project_box,
    sample_measurement,
    sign,
    sign_vector,
    stepsizes_at,
    tail_start,
    tail_weights,
    validate_box_for,
)

LOGGER = logging.getLogger(__name__)


class Mode(str, Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass
class EstimatorState:
    """Iterate x, measurement-mean estimates y, counter t and the tail accumulator."""

    x: np.ndarray
    y: np.ndarray
    t: int = 0
    tail_sum: Optional[np.ndarray] = None
    tail_weight: float = 0.0

    @classmethod
    def initial(
        cls,
        problem: SensingProblem,
        box: BoxProjection,
        x0: Optional[np.ndarray] = None,
        y0: Optional[np.ndarray] = None,
    ) -> "EstimatorState":
        x = box.center.copy() if x0 is None else np.array(x0, dtype=float).reshape(-1)
        if x.shape[0] != problem.d:
            raise DimensionMismatchError(f"x0 has length {x.shape[0]}, problem has d={problem.d}")
        if not box.contains(x):
            raise InvalidParameterError("x0 must lie in the projection box")
        y = np.zeros(problem.N) if y0 is None else np.array(y0, dtype=float).reshape(-1)
        if y.shape[0] != problem.N:
            raise DimensionMismatchError(f"y0 has length {y.shape[0]}, problem has N={problem.N}")
        return cls(x=x, y=y, t=0, tail_sum=np.zeros(problem.d), tail_weight=0.0)

    def accumulate_tail(self, alpha: float) -> None:
        base = np.zeros_like(self.x) if self.tail_sum is None else self.tail_sum
        self.tail_sum = base + alpha * self.x
        self.tail_weight += alpha

    def tail_average(self) -> np.ndarray:
        if self.tail_sum is None or self.tail_weight <= 0.0:
            raise InvalidParameterError("tail window has not started")
        return self.tail_sum / self.tail_weight


def objective_f(A: np.ndarray, EY: np.ndarray, x: np.ndarray) -> float:
    """(1/N) ||Ax - EY||_1."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    residual = _residual(A, EY, x)
    return float(np.abs(residual).sum() / A.shape[0])


def objective_l2(A: np.ndarray, EY: np.ndarray, x: np.ndarray) -> float:
    """(1/N) sum_j (a_j^T x - EY(j))^2, the objective the baselines descend."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    residual = _residual(A, EY, x)
    return float(residual @ residual / A.shape[0])


def _residual(A: np.ndarray, EY: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    EY = np.asarray(EY, dtype=float).reshape(-1)
    if A.shape[1] != x.shape[0]:
        raise DimensionMismatchError(f"x has length {x.shape[0]}, A has {A.shape[1]} columns")
    if A.shape[0] != EY.shape[0]:
        raise DimensionMismatchError(f"EY has length {EY.shape[0]}, A has {A.shape[0]} rows")
    return A @ x - EY


def async_y_update(y: np.ndarray, i: int, Y: float, beta: float, N: int) -> np.ndarray:
    # every coordinate decays; only i receives the N-scaled sample
    updated = (1.0 - beta) * np.asarray(y, dtype=float)
    updated[i] += beta * N * Y
    return updated


def sync_y_update(y: np.ndarray, Y: np.ndarray, beta: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y + beta * (np.asarray(Y, dtype=float) - y)


def worker_report(
    problem: SensingProblem,
    worker: int,
    x: np.ndarray,
    y: np.ndarray,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
) -> float:
    """Y_{t+1}(worker): a genuine sample for honest workers, the adversary's choice otherwise."""
    if not problem.is_adversarial(worker):
        return sample_measurement(problem, worker, streams.worker(worker))
    if adversary is None or worker not in adversary.targets(problem):
        return passive_report(problem, worker, streams.worker(worker))
    snapshot = honest_snapshot(problem, x, y) if adversary.kind is AttackKind.BARUCH else None
    ctx = AttackContext(
        problem=problem,
        worker=worker,
        x=x,
        rng=streams.adversary(),
        honest_momenta=snapshot,
    )
    return float(attack_value(adversary, ctx, AttackLevel.MEASUREMENT))


def _check_state(state: EstimatorState, problem: SensingProblem) -> None:
    if state.x.shape != (problem.d,) or state.y.shape != (problem.N,):
        raise DimensionMismatchError(
            f"state shapes x{state.x.shape}, y{state.y.shape} do not fit N={problem.N}, d={problem.d}"
        )


def async_step(
    state: EstimatorState,
    problem: SensingProblem,
    sched: StepsizeSchedule,
    box: BoxProjection,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
    *,
    index: Optional[int] = None,
) -> EstimatorState:
    """One asynchronous iteration. ``index`` overrides the server's uniform draw."""
    _check_state(state, problem)
    alpha, beta = stepsizes_at(sched, state.t)
    i = int(streams.server().integers(problem.N)) if index is None else int(index)
    a_i = problem.A[i]

    # x moves with the pre-update y
    x_next = project_box(state.x + alpha * a_i * sign(float(state.y[i] - a_i @ state.x)), box)
    Y = worker_report(problem, i, state.x, state.y, adversary, streams)
    y_next = async_y_update(state.y, i, Y, beta, problem.N)
    return replace(state, x=x_next, y=y_next, t=state.t + 1)


def sync_step(
    state: EstimatorState,
    problem: SensingProblem,
    sched: StepsizeSchedule,
    box: BoxProjection,
    adversary: Optional[AttackSpec],
    streams: StreamBank,
) -> EstimatorState:
    _check_state(state, problem)
    alpha, beta = stepsizes_at(sched, state.t)
    A = problem.A
    direction = A.T @ sign_vector(state.y - A @ state.x)
    x_next = project_box(state.x + alpha * direction, box)
    Y = np.array(
        [worker_report(problem, j, state.x, state.y, adversary, streams) for j in range(problem.N)]
    )
    y_next = sync_y_update(state.y, Y, beta)
    return replace(state, x=x_next, y=y_next, t=state.t + 1)


def checkpoint_grid(n: int, points: int = 25) -> List[int]:
    """Geometric checkpoints in [1, n] plus 0 and n."""
    if n < 1:
        return [0]
    raw = np.round(10.0 ** np.linspace(0.0, math.log10(n), points)).astype(int)
    return sorted({0, n, *(int(v) for v in raw if 0 < v <= n)})


@dataclass
class Trajectory:
    mode: Mode
    n: int
    r: float
    k: int
    t: np.ndarray
    f_x: np.ndarray
    f_xtail: np.ndarray
    f_l2: np.ndarray
    err_x: np.ndarray
    y_err: np.ndarray
    y_history: np.ndarray
    x_final: np.ndarray
    y_final: np.ndarray
    x_tail: np.ndarray
    f_tail_final: float
    err_tail_final: float
    method: str = "estimator"
    attack: str = "none"


class TrajectoryRecorder:
    """Collects checkpoint rows and alpha-weighted prefix sums of the iterates.

    Rows describe the state entering iteration t. ``f_xtail`` at a checkpoint
    c averages the window ceil(r c)..c; the final tail average covers k..n.
    """

    def __init__(
        self,
        problem: SensingProblem,
        mode: Mode,
        *,
        n: int,
        r: float,
        checkpoints: Optional[Iterable[int]] = None,
        method: str = "estimator",
        attack: str = "none",
    ) -> None:
        if n < 1:
            raise InvalidParameterError(f"horizon n must be at least 1, got {n}")
        self.problem = problem
        self.mode = Mode(mode)
        self.n = n
        self.r = r
        self.k = tail_start(n, r)
        self.method = method
        self.attack = attack
        requested = list(checkpoints) if checkpoints is not None else checkpoint_grid(n)
        self._record = {c for c in requested if 0 <= c <= n} | {n}
        self._EY = problem.EY
        self._honest = problem.honest_mask
        self._cum_x = np.zeros((n + 2, problem.d))
        self._cum_w = np.zeros(n + 2)
        self._rows: dict[str, list] = {
            key: [] for key in ("t", "f_x", "f_xtail", "f_l2", "err_x", "y_err", "y")
        }

    def observe(self, t: int, alpha: float, x: np.ndarray, y: np.ndarray) -> None:
        self._cum_x[t + 1] = self._cum_x[t] + alpha * x
        self._cum_w[t + 1] = self._cum_w[t] + alpha
        if t not in self._record:
            return
        A, EY = self.problem.A, self._EY
        window_x = self._window(int(math.ceil(self.r * t)), t)
        rows = self._rows
        rows["t"].append(t)
        rows["f_x"].append(objective_f(A, EY, x))
        rows["f_xtail"].append(objective_f(A, EY, window_x))
        rows["f_l2"].append(objective_l2(A, EY, x))
        rows["err_x"].append(float(np.linalg.norm(x - self.problem.mu_true)))
        rows["y_err"].append(float(np.max(np.abs(y - EY)[self._honest], initial=0.0)))
        rows["y"].append(np.array(y, dtype=float))
        LOGGER.debug(
            "checkpoint",
            extra={
                "fields": {
                    "t": t,
                    "method": self.method,
                    "mode": self.mode.value,
                    "f_x": rows["f_x"][-1],
                }
            },
        )

    def _window(self, start: int, stop: int) -> np.ndarray:
        weight = self._cum_w[stop + 1] - self._cum_w[start]
        return (self._cum_x[stop + 1] - self._cum_x[start]) / weight

    def finish(
        self, x_final: np.ndarray, y_final: np.ndarray, x_tail: Optional[np.ndarray] = None
    ) -> Trajectory:
        tail = self._window(self.k, self.n) if x_tail is None else np.asarray(x_tail, dtype=float)
        rows = self._rows
        return Trajectory(
            mode=self.mode,
            n=self.n,
            r=self.r,
            k=self.k,
            t=np.asarray(rows["t"], dtype=int),
            f_x=np.asarray(rows["f_x"]),
            f_xtail=np.asarray(rows["f_xtail"]),
            f_l2=np.asarray(rows["f_l2"]),
            err_x=np.asarray(rows["err_x"]),
            y_err=np.asarray(rows["y_err"]),
            y_history=np.vstack(rows["y"]),
            x_final=np.asarray(x_final, dtype=float),
            y_final=np.asarray(y_final, dtype=float),
            x_tail=tail,
            f_tail_final=objective_f(self.problem.A, self._EY, tail),
            err_tail_final=float(np.linalg.norm(tail - self.problem.mu_true)),
            method=self.method,
            attack=self.attack,
        )


def run(
    problem: SensingProblem,
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
    y0: Optional[np.ndarray] = None,
    checkpoints: Optional[Iterable[int]] = None,
) -> Trajectory:
    """Apply the step for t = 0..n and tail-average x_k..x_n with weights alpha_t."""
    mode = Mode(mode)
    validate_box_for(problem, box)
    if adversary is not None:
        adversary.validate_for(problem)
    bank = streams if streams is not None else StreamBank(seed, trial, problem.N)
    step = async_step if mode is Mode.ASYNC else sync_step
    recorder = TrajectoryRecorder(
        problem,
        mode,
        n=n,
        r=r,
        checkpoints=checkpoints,
        attack="none" if adversary is None else adversary.descriptor(AttackLevel.MEASUREMENT),
    )

    state = EstimatorState.initial(problem, box, x0, y0)
    for t in range(n + 1):
        alpha_t, _ = stepsizes_at(sched, t)
        recorder.observe(t, alpha_t, state.x, state.y)
        if t >= recorder.k:
            state.accumulate_tail(alpha_t)
        state = step(state, problem, sched, box, adversary, bank)

    return recorder.finish(state.x, state.y, x_tail=state.tail_average())


def honest_y_errors(problem: SensingProblem, y: np.ndarray) -> np.ndarray:
    """|y(j) - EY(j)| on honest coordinates, in index order."""
    y = np.asarray(y, dtype=float)
    return np.abs(y - problem.EY)[problem.honest_mask]


def tail_average(xs: Sequence[np.ndarray], alphas: Sequence[float]) -> np.ndarray:
    """alpha-weighted average of a window of iterates."""
    weights = tail_weights(alphas)
    stacked = np.vstack([np.asarray(x, dtype=float) for x in xs])
    if stacked.shape[0] != weights.shape[0]:
        raise DimensionMismatchError("iterate window and stepsize window differ in length")
    return weights @ stacked


__all__ = [
    "EstimatorState",
    "Mode",
    "Trajectory",
    "TrajectoryRecorder",
    "async_step",
    "async_y_update",
    "checkpoint_grid",
    "honest_y_errors",
    "objective_f",
    "objective_l2",
    "run",
    "sync_step",
    "sync_y_update",
    "tail_average",
    "worker_report",
]
