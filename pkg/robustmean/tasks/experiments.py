"""Experiment orchestration: multi-trial runs, rate fits, method comparisons and the tomography demo."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from config import Settings
from robustmean.errors import ConfigError, InvalidParameterError, RecoverabilityError
from robustmean.metrics import export_metrics
from robustmean.services.adversary import AttackKind
from robustmean.services.estimator import (
    Mode,
    RateConstants,
    Trajectory,
    checkpoint_grid,
    derive_rate_constants,
    theorem_bound,
)
from robustmean.services.estimator.bounds import STATEMENT_MIN_N
from robustmean.services.experiment_config import (
    DEFAULT_RATE_CHECKPOINTS,
    Experiment,
    ExperimentConfig,
    build_experiment,
    config_from_mapping,
)
from robustmean.services.matrix_io import load_matrix
from robustmean.services.recoverability import RecoverabilityReport, compute_eta
from robustmean.tasks.trials import run_trials

LOGGER = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 2
CSV_COLUMNS = (
    "trial",
    "t",
    "f_x",
    "f_xtail",
    "err_x_l2",
    "max_honest_y_err",
    "bound_value",
    # descriptors; rule is empty for the estimator
    "rule",
    "method",
    "attack",
    "mode",
    "f_l2",
)
MIN_FIT_POINTS = 5
STATEMENT_FOR_SCHEDULE = {"s1": 1, "s2": 2, "s3": 3}
DATA_DIR = Path(__file__).resolve().parents[2] / "experiments"

# Modelling choices recorded next to every run.
DECISIONS = {
    "sync_direction": "sum_j a_j sign(.) without 1/N",
    "x0": "box center",
    "y0": "zeros",
    "baruch_std": "population",
    "baruch_measurement_level": "Y = a_w^T x - c",
    "baseline_projection": True,
    "idle_adversaries": "passive honest-style report",
}

_METRICS = (
    ("f_x", "f_x"),
    ("f_xtail", "f_xtail"),
    ("f_l2", "f_l2"),
    ("err_x", "err_x"),
    ("y_err", "y_err"),
)


# --- Statistics --------------------------------------------------------------


def mean_and_se(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean over axis 0 and its standard error; the error is zero for a single trial."""
    values = np.asarray(samples, dtype=float)
    mean = values.mean(axis=0)
    count = values.shape[0]
    if count < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(count)


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    points: int
    excluded: List[float] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.excluded)

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "points": self.points,
            "excluded": list(self.excluded),
            "flagged": self.flagged,
        }


def fit_rate(checkpoints: Iterable[Tuple[float, float]]) -> RateFit:
    """Least-squares line through (ln n, ln value).

    Points whose value is not strictly positive cannot be logged; they are
    dropped and listed in ``excluded``.
    """
    points = [(float(n), float(v)) for n, v in checkpoints]
    if len(points) < MIN_FIT_POINTS:
        raise InvalidParameterError(
            f"rate fit needs at least {MIN_FIT_POINTS} checkpoints, got {len(points)}"
        )
    usable = [(n, v) for n, v in points if n > 0 and v > 0 and math.isfinite(v)]
    excluded = [n for n, v in points if not (n > 0 and v > 0 and math.isfinite(v))]
    if excluded:
        LOGGER.warning(
            "excluded nonpositive values from rate fit",
            extra={"fields": {"excluded": excluded}},
        )
    if len(usable) < 2:
        raise InvalidParameterError("fewer than two positive checkpoints remain for the rate fit")

    log_n = np.log([n for n, _ in usable])
    log_v = np.log([v for _, v in usable])
    design = np.column_stack([log_n, np.ones_like(log_n)])
    (slope, intercept), *_ = np.linalg.lstsq(design, log_v, rcond=None)
    residual = float(np.sqrt(np.mean((design @ np.array([slope, intercept]) - log_v) ** 2)))
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        residual=residual,
        points=len(usable),
        excluded=excluded,
    )


# --- Reports -----------------------------------------------------------------


@dataclass
class RunReport:
    """Per-checkpoint trial statistics of one experiment."""

    method: str
    attack: str
    mode: str
    n: int
    trials: int
    t: np.ndarray
    means: Dict[str, np.ndarray]
    errors: Dict[str, np.ndarray]
    bound: Optional[np.ndarray]
    rate: Optional[RateFit]
    final_error: float
    final_error_se: float
    final_f_tail: float
    final_f_tail_se: float
    metadata: Dict[str, Any]
    csv_path: Optional[Path] = None
    meta_path: Optional[Path] = None
    series_paths: List[Path] = field(default_factory=list)

    def mean(self, metric: str) -> np.ndarray:
        return self.means[metric]

    def se(self, metric: str) -> np.ndarray:
        return self.errors[metric]

    def at(self, metric: str, t: int) -> Tuple[float, float]:
        index = int(np.flatnonzero(self.t == t)[0])
        return float(self.means[metric][index]), float(self.errors[metric][index])


def _plain(value: Any) -> Any:
    """Convert numpy scalars, arrays, enums and tuples into YAML-safe builtins."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_plain(v) for v in items]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    return value


def _format(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def _stack(trajectories: Sequence[Trajectory], metric: str) -> np.ndarray:
    return np.vstack([getattr(trajectory, metric) for trajectory in trajectories])


def _rate_grid(config: ExperimentConfig) -> List[int]:
    requested = config.run.rate_checkpoints or list(DEFAULT_RATE_CHECKPOINTS)
    return sorted({c for c in requested if 1 <= c <= config.run.n})


def _checkpoints(config: ExperimentConfig) -> List[int]:
    base = config.run.checkpoints or checkpoint_grid(config.run.n)
    return sorted({c for c in base if 0 <= c <= config.run.n} | set(_rate_grid(config)) | {config.run.n})


def _recoverability(experiment: Experiment) -> RecoverabilityReport:
    problem = experiment.problem
    return compute_eta(problem.A, problem.m)


def _bound_series(
    experiment: Experiment, t: np.ndarray
) -> Tuple[Optional[np.ndarray], Optional[RateConstants], Optional[RecoverabilityReport], str]:
    """Theorem bound at each checkpoint, or ``None`` with the reason it does not apply."""
    config = experiment.config
    statement = STATEMENT_FOR_SCHEDULE.get(config.run.schedule)
    if experiment.aggregator is not None:
        return None, None, None, "baseline methods carry no rate bound"
    report = _recoverability(experiment)
    if statement is None:
        return None, None, report, f"schedule {config.run.schedule} is outside the rate statements"
    try:
        consts = derive_rate_constants(
            experiment.problem, experiment.box, None, None, experiment.mode, report
        )
    except RecoverabilityError as exc:
        LOGGER.warning("no rate bound: %s", exc, extra={"fields": {"eta": exc.eta}})
        return None, None, report, str(exc)

    n, r = config.run.n, config.run.r
    values = np.full(t.shape, np.nan)
    for index, checkpoint in enumerate(t):
        checkpoint = int(checkpoint)
        if checkpoint < STATEMENT_MIN_N[statement]:
            continue
        # constant-alpha schedules are tuned to the horizon only
        if statement in (1, 2) and checkpoint != n:
            continue
        values[index] = theorem_bound(statement, consts, checkpoint, r)
    return values, consts, report, "ok"


def _summarise(experiment: Experiment, trajectories: Sequence[Trajectory]) -> RunReport:
    config = experiment.config
    t = trajectories[0].t
    means: Dict[str, np.ndarray] = {}
    errors: Dict[str, np.ndarray] = {}
    for name, attribute in _METRICS:
        means[name], errors[name] = mean_and_se(_stack(trajectories, attribute))

    bound, consts, eta_report, bound_note = _bound_series(experiment, t)

    rate: Optional[RateFit] = None
    rate_note = "ok"
    rate_points = [(c, float(means["f_xtail"][np.flatnonzero(t == c)[0]])) for c in _rate_grid(config)]
    if len(rate_points) >= MIN_FIT_POINTS:
        rate = fit_rate(rate_points)
    else:
        rate_note = f"only {len(rate_points)} rate checkpoints within n={config.run.n}"

    final_err, final_err_se = mean_and_se(np.array([[tr.err_x[-1]] for tr in trajectories]))
    final_f, final_f_se = mean_and_se(np.array([[tr.f_tail_final] for tr in trajectories]))
    attack = trajectories[0].attack
    metadata: Dict[str, Any] = {
        "schema_version": CSV_SCHEMA_VERSION,
        "method": experiment.method,
        "descriptor": trajectories[0].method,
        "attack": attack,
        "mode": experiment.mode.value,
        "schedule": config.baseline.schedule if experiment.aggregator else config.run.schedule,
        "n": config.run.n,
        "r": config.run.r,
        "k": trajectories[0].k,
        "trials": len(trajectories),
        "seed": config.run.seed,
        "problem": {
            "N": experiment.problem.N,
            "d": experiment.problem.d,
            "m": experiment.problem.m,
            "sigma": experiment.problem.sigma,
            "adversaries": experiment.problem.adversary_set,
            "scale": config.problem.scale,
        },
        "box": {"lo": experiment.box.lo, "hi": experiment.box.hi},
        "constants": consts.as_dict() if consts is not None else None,
        "recoverability": eta_report.as_dict() if eta_report is not None else None,
        "bound": bound_note,
        "rate_fit": rate.as_dict() if rate is not None else rate_note,
        "decisions": DECISIONS,
    }
    report = RunReport(
        method=experiment.method,
        attack=attack,
        mode=experiment.mode.value,
        n=config.run.n,
        trials=len(trajectories),
        t=t,
        means=means,
        errors=errors,
        bound=bound,
        rate=rate,
        final_error=float(final_err[0]),
        final_error_se=float(final_err_se[0]),
        final_f_tail=float(final_f[0]),
        final_f_tail_se=float(final_f_se[0]),
        metadata=_plain(metadata),
    )
    return report


# --- Output ------------------------------------------------------------------


def write_csv(path: Path, trajectories: Sequence[Trajectory], bound: Optional[np.ndarray]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# robustmean-csv schema={CSV_SCHEMA_VERSION}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for trial, trajectory in enumerate(trajectories):
            rule = "" if trajectory.method == "estimator" else trajectory.method.partition("+")[0]
            for index, t in enumerate(trajectory.t):
                writer.writerow(
                    [
                        trial,
                        int(t),
                        _format(trajectory.f_x[index]),
                        _format(trajectory.f_xtail[index]),
                        _format(trajectory.err_x[index]),
                        _format(trajectory.y_err[index]),
                        _format(None if bound is None else bound[index]),
                        rule,
                        trajectory.method,
                        trajectory.attack,
                        trajectory.mode.value,
                        _format(trajectory.f_l2[index]),
                    ]
                )


def write_series(directory: Path, name: str, t: np.ndarray, values: np.ndarray) -> Path:
    """Two-column (n, value) text file; NaN rows are skipped."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.dat"
    lines = [f"# n {name}"]
    for checkpoint, value in zip(t, values):
        if math.isfinite(float(value)):
            lines.append(f"{int(checkpoint)} {float(value)!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_series_index(directory: Path, series: Sequence[Path], *, name: str = "index.gp") -> Path:
    """gnuplot script plotting every series on log-log axes."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    lines = ["set logscale xy", "set xlabel 'n'"]
    if series:
        entries = [f"'{p.name}' using 1:2 with lines title '{p.stem}'" for p in series]
        lines.append("plot " + ", \\\n     ".join(entries))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _series_name(label: str) -> str:
    return label.replace("+", "_").replace("(", "").replace(")", "")


def _output_path(config: ExperimentConfig, out: Optional[Union[str, Path]]) -> Path:
    if out is not None:
        return Path(out)
    if config.output.path:
        return Path(config.output.path)
    return Path(Settings.OUTPUT_DIR or "results") / f"{_series_name(config.method_label)}.csv"


def _discard(paths: Iterable[Path]) -> None:
    if Settings.KEEP_PARTIAL_OUTPUT:
        return
    for path in paths:
        try:
            path.unlink()
        except FileNotFoundError:
            continue
        except OSError as exc:
            LOGGER.warning("could not remove partial output %s: %s", path, exc)


def run_experiment(
    config: ExperimentConfig,
    *,
    out: Optional[Union[str, Path]] = None,
    series_dir: Optional[Union[str, Path]] = None,
    max_workers: Optional[int] = None,
    metrics_out: Optional[str] = None,
) -> RunReport:
    """Run every trial of ``config``, write the CSV and its YAML side-car, return the summary."""
    experiment = build_experiment(config)
    trajectories = run_trials(experiment, checkpoints=_checkpoints(config), max_workers=max_workers)
    report = _summarise(experiment, trajectories)
    bound = report.bound

    csv_path = _output_path(config, out)
    meta_path = csv_path.with_name(csv_path.stem + ".meta.yaml")
    written: List[Path] = []
    try:
        written.append(csv_path)
        write_csv(csv_path, trajectories, bound)
        written.append(meta_path)
        meta_path.write_text(yaml.safe_dump(report.metadata, sort_keys=True), encoding="utf-8")

        directory = series_dir or config.output.series_dir
        if directory is not None:
            target = Path(directory)
            label = _series_name(report.method)
            series = []
            for metric in ("f_xtail", "err_x"):
                series.append(target / f"{label}-{metric}.dat")
                written.append(series[-1])
                write_series(target, f"{label}-{metric}", report.t, report.mean(metric))
            if bound is not None:
                series.append(target / f"{label}-bound.dat")
                written.append(series[-1])
                write_series(target, f"{label}-bound", report.t, bound)
            written.append(target / "index.gp")
            write_series_index(target, series)
            report.series_paths = series
    except BaseException:
        _discard(written)
        raise

    report.csv_path, report.meta_path = csv_path, meta_path
    export_metrics(metrics_out or Settings.METRICS_FILE)
    LOGGER.info(
        "experiment finished",
        extra={
            "fields": {
                "method": report.method,
                "attack": report.attack,
                "trials": report.trials,
                "final_error": report.final_error,
                "slope": report.rate.slope if report.rate else None,
                "csv": str(csv_path),
            }
        },
    )
    return report


# --- Method comparison -------------------------------------------------------


@dataclass
class MethodResult:
    label: str
    descriptor: str
    attack: str
    final_error: float
    final_error_se: float
    final_f_tail: float
    final_f_tail_se: float
    rank: int = 0
    series_path: Optional[Path] = None


@dataclass
class ComparisonReport:
    results: List[MethodResult]
    n: int
    trials: int
    index_path: Optional[Path] = None

    @property
    def ranking(self) -> List[str]:
        return [result.label for result in self.results]

    def result(self, label: str) -> MethodResult:
        for entry in self.results:
            if entry.label == label:
                return entry
        raise KeyError(label)


def _same_problem(first: Experiment, other: Experiment) -> List[Tuple[str, str]]:
    issues = []
    a, b = first.problem, other.problem
    if a.A.shape != b.A.shape or not np.array_equal(a.A, b.A):
        issues.append(("problem.A", "sensing matrices differ"))
    if not np.array_equal(a.mu_true, b.mu_true):
        issues.append(("problem.mu_true", "ground-truth means differ"))
    if a.sigma != b.sigma or a.m != b.m or a.adversary_set != b.adversary_set:
        issues.append(("problem", "noise level or adversary roles differ"))
    if not (np.array_equal(first.box.lo, other.box.lo) and np.array_equal(first.box.hi, other.box.hi)):
        issues.append(("box", "projection boxes differ"))
    if first.config.run.n != other.config.run.n:
        issues.append(("run.n", "horizons differ"))
    if first.mode is not other.mode:
        issues.append(("run.mode", "modes differ"))
    return issues


def compare_methods(
    configs: Sequence[ExperimentConfig],
    *,
    series_dir: Optional[Union[str, Path]] = None,
    max_workers: Optional[int] = None,
) -> ComparisonReport:
    """Run each config on the shared problem and rank methods by final mean ||x_n - EX||."""
    if not configs:
        raise InvalidParameterError("nothing to compare")
    experiments = [build_experiment(config) for config in configs]
    for index, experiment in enumerate(experiments[1:], start=1):
        issues = _same_problem(experiments[0], experiment)
        if issues:
            raise ConfigError(f"config {index} does not share the first config's problem", issues=issues)

    labels: List[str] = []
    for experiment in experiments:
        label = experiment.method
        suffix = 2
        while label in labels:
            label = f"{experiment.method}-{suffix}"
            suffix += 1
        labels.append(label)

    target = Path(series_dir) if series_dir is not None else None
    results: List[MethodResult] = []
    series_files: List[Path] = []
    for label, experiment in zip(labels, experiments):
        trajectories = run_trials(
            experiment, checkpoints=_checkpoints(experiment.config), max_workers=max_workers
        )
        err, err_se = mean_and_se(np.array([[tr.err_x[-1]] for tr in trajectories]))
        f_tail, f_tail_se = mean_and_se(np.array([[tr.f_tail_final] for tr in trajectories]))
        entry = MethodResult(
            label=label,
            descriptor=trajectories[0].method,
            attack=trajectories[0].attack,
            final_error=float(err[0]),
            final_error_se=float(err_se[0]),
            final_f_tail=float(f_tail[0]),
            final_f_tail_se=float(f_tail_se[0]),
        )
        if target is not None:
            mean_err, _ = mean_and_se(_stack(trajectories, "err_x"))
            entry.series_path = write_series(target, _series_name(label), trajectories[0].t, mean_err)
            series_files.append(entry.series_path)
        results.append(entry)

    ordered = sorted(enumerate(results), key=lambda pair: (pair[1].final_error, pair[0]))
    ranked = []
    for rank, (_, entry) in enumerate(ordered, start=1):
        entry.rank = rank
        ranked.append(entry)

    index_path = write_series_index(target, series_files) if target is not None else None
    LOGGER.info(
        "comparison finished",
        extra={"fields": {"ranking": [entry.label for entry in ranked]}},
    )
    return ComparisonReport(
        results=ranked,
        n=configs[0].run.n,
        trials=configs[0].run.trials,
        index_path=index_path,
    )


# --- Tomography ---------------------------------------------------------------


@dataclass
class TomographyReport:
    A: np.ndarray
    recoverability: RecoverabilityReport
    theta_star: np.ndarray
    theta_hat: np.ndarray
    t: np.ndarray
    theta_error: np.ndarray
    link_means_star: np.ndarray
    link_means_hat: np.ndarray

    @property
    def link_errors(self) -> np.ndarray:
        return np.abs(self.link_means_hat - self.link_means_star)

    def as_dict(self) -> dict:
        return _plain(
            {
                "A": self.A,
                "eta": self.recoverability.eta,
                "K": self.recoverability.K,
                "certified": self.recoverability.certified,
                "theta_star": self.theta_star,
                "theta_hat": self.theta_hat,
                "theta_error": dict(zip((int(v) for v in self.t), self.theta_error.tolist())),
                "link_means_star": self.link_means_star,
                "link_means_hat": self.link_means_hat,
                "link_errors": self.link_errors,
            }
        )


def tomography_demo(
    data_dir: Optional[Union[str, Path]] = None,
    *,
    n: int = 10_000,
    sigma: float = 1.0,
    trials: int = 1,
    seed: int = 0,
    mode: Mode = Mode.ASYNC,
    attack: Optional[AttackKind] = None,
    adversary: int = 6,
    max_workers: Optional[int] = None,
) -> TomographyReport:
    """Compose A = P B, certify it for one adversary, estimate theta and map back to link means."""
    directory = Path(data_dir) if data_dir is not None else DATA_DIR
    problem: Dict[str, Any] = {
        "P": str(directory / "P.txt"),
        "B": str(directory / "B.txt"),
        "mu_true": str(directory / "mu_true.txt"),
        "sigma": sigma,
        "m": 1,
    }
    if (directory / "A.txt").exists():
        problem["A"] = str(directory / "A.txt")
    mapping: Dict[str, Any] = {
        "problem": problem,
        "box": {"lo": [0.0], "hi": [30.0]},
        "run": {"mode": Mode(mode).value, "schedule": "s3", "n": n, "trials": trials, "seed": seed},
    }
    if attack is not None:
        problem["adversaries"] = [adversary]
        mapping["attack"] = {"kind": AttackKind(attack).value}
    config = config_from_mapping(mapping, source="tomography-demo")
    experiment = build_experiment(config)

    A = experiment.problem.A
    report = compute_eta(A, 1)
    if not report.holds_A2:
        raise RecoverabilityError(report.eta, "composed tomography matrix fails the m=1 condition")

    trajectories = run_trials(experiment, checkpoints=_checkpoints(config), max_workers=max_workers)
    theta_error, _ = mean_and_se(_stack(trajectories, "err_x"))
    theta_hat = np.mean([trajectory.x_tail for trajectory in trajectories], axis=0)
    B = load_matrix(directory / "B.txt")
    theta_star = experiment.problem.mu_true
    LOGGER.info(
        "tomography demo finished",
        extra={
            "fields": {
                "eta": report.eta,
                "initial_error": float(theta_error[0]),
                "final_error": float(theta_error[-1]),
                "attack": "none" if attack is None else AttackKind(attack).value,
            }
        },
    )
    return TomographyReport(
        A=A,
        recoverability=report,
        theta_star=theta_star,
        theta_hat=theta_hat,
        t=trajectories[0].t,
        theta_error=theta_error,
        link_means_star=B @ theta_star,
        link_means_hat=B @ theta_hat,
    )


__all__ = [
    "CSV_COLUMNS",
    "CSV_SCHEMA_VERSION",
    "ComparisonReport",
    "DATA_DIR",
    "DECISIONS",
    "MIN_FIT_POINTS",
    "MethodResult",
    "RateFit",
    "RunReport",
    "TomographyReport",
    "compare_methods",
    "fit_rate",
    "mean_and_se",
    "run_experiment",
    "tomography_demo",
    "write_csv",
    "write_series",
    "write_series_index",
]
