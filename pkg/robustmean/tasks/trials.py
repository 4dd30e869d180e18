"""Trial execution: one seeded simulation per trial index, optionally in a process pool."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, List, Optional, Sequence, Tuple

from config import Settings
from robustmean.metrics import trial_duration, trials_active, trials_total
from robustmean.services.aggregators import run_baseline
from robustmean.services.estimator import Trajectory, run
from robustmean.services.experiment_config import Experiment

LOGGER = logging.getLogger(__name__)


def run_trial(
    experiment: Experiment, trial: int, checkpoints: Optional[Sequence[int]] = None
) -> Tuple[Trajectory, float]:
    """Run a single trial and return its trajectory with the elapsed wall time."""
    config = experiment.config
    n, r, seed = config.run.n, config.run.r, config.run.seed
    sched = experiment.schedule(n)
    started = time.perf_counter()
    if experiment.aggregator is None:
        trajectory = run(
            experiment.problem,
            experiment.mode,
            sched,
            experiment.box,
            experiment.attack,
            n=n,
            r=r,
            seed=seed,
            trial=trial,
            checkpoints=checkpoints,
        )
    else:
        trajectory = run_baseline(
            experiment.problem,
            experiment.aggregator,
            experiment.mode,
            sched,
            experiment.box,
            experiment.attack,
            n=n,
            r=r,
            seed=seed,
            trial=trial,
            checkpoints=checkpoints,
        )
    return trajectory, time.perf_counter() - started


def _record(experiment: Experiment, trial: int, trajectory: Trajectory, elapsed: float) -> None:
    trials_total.labels(method=experiment.method, mode=experiment.mode.value).inc()
    trial_duration.labels(method=experiment.method).observe(elapsed)
    LOGGER.info(
        "trial finished",
        extra={
            "fields": {
                "trial": trial,
                "method": experiment.method,
                "mode": experiment.mode.value,
                "attack": trajectory.attack,
                "seconds": round(elapsed, 4),
                "f_tail_final": trajectory.f_tail_final,
            }
        },
    )


def run_trials(
    experiment: Experiment,
    *,
    trials: Optional[int] = None,
    checkpoints: Optional[Iterable[int]] = None,
    max_workers: Optional[int] = None,
) -> List[Trajectory]:
    """Run trials 0..trials-1 and return their trajectories in trial order.

    Each trial draws from its own disjoint random streams, so the result does
    not depend on ``max_workers`` or on completion order.
    """
    count = experiment.config.run.trials if trials is None else trials
    grid = None if checkpoints is None else sorted(set(checkpoints))
    workers = max_workers if max_workers is not None else Settings.MAX_WORKERS
    workers = max(1, min(int(workers), count))

    results: List[Trajectory] = []
    if workers == 1:
        for trial in range(count):
            trials_active.inc()
            try:
                trajectory, elapsed = run_trial(experiment, trial, grid)
            finally:
                trials_active.dec()
            _record(experiment, trial, trajectory, elapsed)
            results.append(trajectory)
        return results

    LOGGER.debug("starting process pool", extra={"fields": {"workers": workers, "trials": count}})
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_trial, experiment, trial, grid) for trial in range(count)]
        trials_active.inc(count)
        try:
            # collected in submission order
            for trial, future in enumerate(futures):
                trajectory, elapsed = future.result()
                trials_active.dec()
                _record(experiment, trial, trajectory, elapsed)
                results.append(trajectory)
        except BaseException:
            trials_active.set(0)
            for future in futures:
                future.cancel()
            raise
    return results


__all__ = ["run_trial", "run_trials"]
