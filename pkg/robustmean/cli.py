"""Command-line front-end for the simulation lab.

Exit codes: 0 success, 1 usage or configuration error, 2 a checked condition
fails, 3 the answer could not be certified, 4 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml

from config import Settings
from robustmean.errors import (
    EXIT_CONDITION_FAILED,
    EXIT_NOT_CERTIFIED,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    ConfigError,
    DimensionMismatchError,
    InvalidParameterError,
    RecoverabilityError,
)
from robustmean.logging import configure_logging
from robustmean.services.adversary import AttackKind
from robustmean.services.aggregators import Rule, Wrapper
from robustmean.services.estimator import Mode
from robustmean.services.experiment_config import (
    BASELINE_SCHEDULES,
    ESTIMATOR_SCHEDULES,
    ExperimentConfig,
    build_experiment,
    config_from_mapping,
    load_config,
)
from robustmean.services.matrix_io import load_matrix, load_vector
from robustmean.services.recoverability import (
    PartialStructure,
    check_A2_prime,
    compose_tomography,
    compute_eta,
    l1_fit,
)
from robustmean.tasks.experiments import compare_methods, run_experiment, tomography_demo

try:  # pragma: no cover - optional dependency
    import sentry_sdk
except Exception:  # pragma: no cover - optional dependency
    sentry_sdk = None

LOGGER = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(payload: Any) -> None:
    sys.stdout.write(yaml.safe_dump(payload, sort_keys=False))


def _floats(values: np.ndarray) -> List[float]:
    return [float(v) for v in np.asarray(values).reshape(-1)]


def _basis(path: str, d: int) -> np.ndarray:
    """Basis vectors stored as columns, or as rows when that is the only reading that fits."""
    matrix = load_matrix(path)
    if matrix.shape[0] != d and matrix.shape[1] == d:
        return matrix.T
    return matrix


def _sensing_matrix(args: argparse.Namespace) -> np.ndarray:
    if args.P or args.B:
        if not (args.P and args.B):
            raise ConfigError("--P and --B must be given together")
        return compose_tomography(load_matrix(args.P), load_matrix(args.B))
    if not args.A:
        raise ConfigError("give --A or both --P and --B")
    return load_matrix(args.A)


# --- Subcommands ---------------------------------------------------------------


def _check_nsp(args: argparse.Namespace) -> int:
    A = _sensing_matrix(args)
    report = compute_eta(A, args.m, method=args.method, starts=args.starts, seed=args.seed)
    _emit(
        {
            "eta": report.eta,
            "K": report.K,
            "holds_A2": report.holds_A2,
            "certified": report.certified,
            "method": report.method,
            "witness_subset": list(report.witness.subset) if report.witness else None,
        }
    )
    if not report.holds_A2:
        return EXIT_CONDITION_FAILED
    return EXIT_OK if report.certified else EXIT_NOT_CERTIFIED


def _report_summary(report: Any) -> dict:
    return {
        "method": report.method,
        "attack": report.attack,
        "mode": report.mode,
        "trials": report.trials,
        "final_error": report.final_error,
        "final_error_se": report.final_error_se,
        "final_f_tail": report.final_f_tail,
        "slope": report.rate.slope if report.rate else None,
        "csv": str(report.csv_path),
    }


def _with_overrides(config: ExperimentConfig, updates: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    """Layer command-line values over ``config``; ``None`` means not given. Revalidates the result."""
    given = {
        section: {key: value for key, value in values.items() if value is not None}
        for section, values in updates.items()
    }
    given = {section: values for section, values in given.items() if values}
    if not given:
        return config
    payload = config.model_dump()
    for section, values in given.items():
        payload[section].update(values)
    updated = config_from_mapping(payload, source="command line", base_dir=config.base_dir)
    build_experiment(updated)
    return updated


def _with_trials(config: ExperimentConfig, trials: Optional[int]) -> ExperimentConfig:
    return _with_overrides(config, {"run": {"trials": trials}})


def _with_problem(config: ExperimentConfig, problem_path: str) -> ExperimentConfig:
    """Take the problem, box and attack sections from another config file."""
    source = load_config(problem_path)
    problem = source.problem.model_copy(
        update={
            key: str(source.resolve(value).resolve())
            for key in ("A", "P", "B", "mu_true")
            if (value := getattr(source.problem, key)) is not None
        }
    )
    updated = config.model_copy(update={"problem": problem, "box": source.box, "attack": source.attack})
    return config_from_mapping(updated.model_dump(), source=problem_path, base_dir=config.base_dir)


def _load_run_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None and args.problem is None:
        raise ConfigError("give a config file or --problem")
    if args.config is None:
        return load_config(args.problem)
    if args.problem is None:
        return load_config(args.config)
    # the run config may name no matrices of its own
    config = _with_problem(load_config(args.config, check_files=False), args.problem)
    build_experiment(config)
    return config


def _run_estimator(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    if config.run.method != "estimator":
        LOGGER.warning(
            "config names a baseline; running the estimator instead",
            extra={"fields": {"baseline": config.method_label}},
        )
        config = config.with_method("estimator")
    config = _with_overrides(
        config,
        {
            "run": {
                "mode": args.mode,
                "schedule": args.schedule,
                "n": args.n,
                "r": args.r,
                "seed": args.seed,
                "trials": args.trials,
            }
        },
    )
    report = run_experiment(
        config,
        out=args.out,
        series_dir=args.series_dir,
        max_workers=args.workers,
        metrics_out=args.metrics_out,
    )
    _emit(_report_summary(report))
    return EXIT_OK


def _baseline_labels(config: ExperimentConfig, args: argparse.Namespace) -> List[str]:
    if args.rule or args.wrapper:
        return [config.method_label]
    if args.methods:
        return [label.strip() for label in args.methods.split(",") if label.strip()]
    labels = [label for label in config.compare.methods if label != "estimator"]
    if labels:
        return labels
    if config.run.method == "baseline":
        return [config.method_label]
    raise ConfigError("no baseline to run: set compare.methods, baseline.rule, --rule or --methods")


def _run_baselines(args: argparse.Namespace) -> int:
    if args.rule or args.wrapper:
        if args.methods:
            raise ConfigError("--methods cannot be combined with --rule or --wrapper")
    config = _with_overrides(
        _load_run_config(args),
        {
            "run": {
                "method": "baseline" if args.rule or args.wrapper else None,
                "mode": args.mode,
                "n": args.n,
                "seed": args.seed,
                "trials": args.trials,
            },
            "baseline": {
                "rule": args.rule,
                "wrapper": args.wrapper,
                "s": args.s,
                "schedule": args.schedule_x,
            },
        },
    )
    labels = _baseline_labels(config, args)
    if args.out and len(labels) != 1:
        raise ConfigError(f"--out names one CSV but {len(labels)} baselines were requested; use --out-dir")
    out_dir = Path(args.out_dir)
    summaries = []
    for label in labels:
        variant = config.with_method(label)
        report = run_experiment(
            variant,
            out=Path(args.out) if args.out else out_dir / f"{label.replace('+', '_')}.csv",
            series_dir=args.series_dir,
            max_workers=args.workers,
            metrics_out=args.metrics_out,
        )
        summaries.append(_report_summary(report))
    _emit(summaries)
    return EXIT_OK


def _comparison_configs(paths: Sequence[str], trials: Optional[int]) -> List[ExperimentConfig]:
    configs = [_with_trials(load_config(path), trials) for path in paths]
    if len(configs) == 1 and configs[0].compare.methods:
        return [configs[0].with_method(label) for label in configs[0].compare.methods]
    return configs


def _compare(args: argparse.Namespace) -> int:
    configs = _comparison_configs(args.configs, args.trials)
    report = compare_methods(configs, series_dir=args.series_dir, max_workers=args.workers)
    _emit(
        [
            {
                "rank": entry.rank,
                "method": entry.label,
                "descriptor": entry.descriptor,
                "attack": entry.attack,
                "final_error": entry.final_error,
                "final_error_se": entry.final_error_se,
                "final_f_tail": entry.final_f_tail,
                "final_f_tail_se": entry.final_f_tail_se,
            }
            for entry in report.results
        ]
    )
    return EXIT_OK


def _recover_partial(args: argparse.Namespace) -> int:
    A = _sensing_matrix(args)
    d = A.shape[1]
    U = _basis(args.U, d)
    V = _basis(args.V, d) if args.V else np.zeros((d, 0))
    structure = PartialStructure(U=U, V=V, q=args.q)
    verdict = check_A2_prime(A, structure, net_samples=args.net_samples, seed=args.seed)
    payload: dict = verdict.as_dict()
    if args.y:
        fit = l1_fit(A, structure.U, structure.V, load_vector(args.y))
        payload["fit"] = {
            "alpha": _floats(fit.alpha),
            "beta": _floats(fit.beta),
            "residual": fit.residual,
            "certified": fit.certified,
        }
    _emit(payload)
    if not verdict.holds:
        return EXIT_CONDITION_FAILED
    return EXIT_OK if verdict.certified else EXIT_NOT_CERTIFIED


def _tomography(args: argparse.Namespace) -> int:
    try:
        report = tomography_demo(
            args.data_dir,
            n=args.n,
            sigma=args.sigma,
            trials=args.trials,
            seed=args.seed,
            mode=Mode(args.mode),
            attack=AttackKind(args.attack) if args.attack else None,
            max_workers=args.workers,
        )
    except RecoverabilityError as exc:
        LOGGER.error("%s", exc)
        return EXIT_CONDITION_FAILED
    _emit(report.as_dict())
    return EXIT_OK


# --- Parser --------------------------------------------------------------------


def _add_matrix_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--A", help="Sensing matrix file")
    parser.add_argument("--P", help="Path-link matrix file (used with --B)")
    parser.add_argument("--B", help="Link structure matrix file (used with --P)")


def _add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--problem", help="Config file supplying the problem, box and attack sections")
    parser.add_argument("--mode", choices=[mode.value for mode in Mode], help="Override run.mode")
    parser.add_argument("--n", type=int, help="Override run.n, the horizon")
    parser.add_argument("--seed", type=int, help="Override run.seed")


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trials", type=int, help="Override run.trials")
    parser.add_argument("--workers", type=int, help="Parallel trial processes (default ROBUSTMEAN_MAX_WORKERS)")
    parser.add_argument("--series-dir", help="Directory for two-column plot series")
    parser.add_argument("--metrics-out", help="Write Prometheus metrics to this textfile")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustmean", description="Robust distributed mean estimation lab")
    parser.add_argument("--log-level", help="Override ROBUSTMEAN_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    nsp = commands.add_parser("check-nsp", help="Compute eta and check the recoverability condition")
    _add_matrix_arguments(nsp)
    nsp.add_argument("--m", type=int, required=True, help="Adversary budget")
    nsp.add_argument("--method", choices=("auto", "exact", "multistart"), default="auto")
    nsp.add_argument("--starts", type=int, default=200)
    nsp.add_argument("--seed", type=int, default=0)
    nsp.set_defaults(handler=_check_nsp)

    estimator = commands.add_parser("run-estimator", help="Run the two-timescale estimator from a config")
    estimator.add_argument("config", nargs="?")
    estimator.add_argument("--schedule", choices=ESTIMATOR_SCHEDULES, help="Override run.schedule")
    estimator.add_argument("--r", type=float, help="Override run.r, the tail-average fraction")
    estimator.add_argument("--out", help="CSV output path")
    _add_experiment_arguments(estimator)
    _add_run_arguments(estimator)
    estimator.set_defaults(handler=_run_estimator)

    baselines = commands.add_parser("run-baselines", help="Run robust-aggregation baselines from a config")
    baselines.add_argument("config", nargs="?")
    baselines.add_argument("--rule", choices=[rule.value for rule in Rule], help="Override baseline.rule")
    baselines.add_argument("--wrapper", choices=[wrapper.value for wrapper in Wrapper])
    baselines.add_argument("--s", type=int, help="Bucket or buffer size")
    baselines.add_argument("--schedule-x", choices=BASELINE_SCHEDULES, help="Override baseline.schedule")
    baselines.add_argument("--methods", help="Comma separated labels such as cm,ctm+bucketing")
    baselines.add_argument("--out", help="CSV output path when a single baseline runs")
    baselines.add_argument("--out-dir", default=Settings.OUTPUT_DIR)
    _add_experiment_arguments(baselines)
    _add_run_arguments(baselines)
    baselines.set_defaults(handler=_run_baselines)

    compare = commands.add_parser("compare", help="Rank methods on a shared problem")
    compare.add_argument("configs", nargs="+")
    _add_run_arguments(compare)
    compare.set_defaults(handler=_compare)

    partial = commands.add_parser("recover-partial", help="Check the relaxed condition and fit alpha")
    _add_matrix_arguments(partial)
    partial.add_argument("--U", required=True, help="Basis of the recoverable component")
    partial.add_argument("--V", help="Basis of the nuisance component")
    partial.add_argument("--q", type=int, required=True, help="Corruption sparsity")
    partial.add_argument("--y", help="Observation vector to fit")
    partial.add_argument("--net-samples", type=int, default=256)
    partial.add_argument("--seed", type=int, default=0)
    partial.set_defaults(handler=_recover_partial)

    tomography = commands.add_parser("tomography-demo", help="Estimate link delays through A = P B")
    tomography.add_argument("--data-dir", help="Directory holding P.txt, B.txt and mu_true.txt")
    tomography.add_argument("--n", type=int, default=10_000)
    tomography.add_argument("--sigma", type=float, default=1.0)
    tomography.add_argument("--trials", type=int, default=1)
    tomography.add_argument("--seed", type=int, default=0)
    tomography.add_argument("--mode", choices=[mode.value for mode in Mode], default=Mode.ASYNC.value)
    tomography.add_argument("--attack", choices=[kind.value for kind in AttackKind])
    tomography.add_argument("--workers", type=int)
    tomography.set_defaults(handler=_tomography)
    return parser


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    configure_logging(args.log_level)
    dsn = os.getenv("SENTRY_DSN")
    if sentry_sdk and dsn:
        sentry_sdk.init(dsn=dsn)

    try:
        return int(args.handler(args))
    except (ConfigError, DimensionMismatchError, InvalidParameterError) as exc:
        LOGGER.error("%s", exc, extra={"fields": {"command": args.command}})
        return EXIT_USAGE
    except Exception:
        LOGGER.exception("command failed", extra={"fields": {"command": args.command}})
        if sentry_sdk and dsn:
            sentry_sdk.capture_exception()
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
