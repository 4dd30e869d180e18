"""Experiment configuration: flat ``section.key = value`` text validated by pydantic.

Example::

    problem.A = A.txt
    problem.mu_true = mu_true.txt
    problem.sigma = 100
    problem.m = 1
    problem.adversaries = 6
    box.lo = 0
    box.hi = 30
    attack.kind = baruch
    run.mode = async
    run.n = 10000
    run.trials = 10

Matrix paths are resolved relative to the config file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from robustmean.errors import CompositionMismatchError, ConfigError, RobustMeanError
from robustmean.services.adversary import AttackKind, AttackSpec
from robustmean.services.aggregators import AggregatorSpec, Rule, Wrapper
from robustmean.services.estimator import Mode
from robustmean.services.matrix_io import load_matrix, load_vector
from robustmean.services.problem import (
    BoxProjection,
    SensingProblem,
    StepsizeSchedule,
    validate_box_for,
)
from robustmean.services.recoverability import compose_tomography

LOGGER = logging.getLogger(__name__)

ESTIMATOR_SCHEDULES = ("s1", "s2", "s3", "sqrt", "pow09")
BASELINE_SCHEDULES = ("sqrt", "pow09")
DEFAULT_RATE_CHECKPOINTS = (100, 316, 1000, 3162, 10000)


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [part for part in value.replace(",", " ").split() if part]
    return value


IntList = Annotated[List[int], BeforeValidator(_split_list)]
FloatList = Annotated[List[float], BeforeValidator(_split_list)]
NameList = Annotated[List[str], BeforeValidator(_split_list)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemSection(_Section):
    A: Optional[str] = None
    P: Optional[str] = None
    B: Optional[str] = None
    mu_true: str
    sigma: float = Field(ge=0)
    m: int = Field(default=0, ge=0)
    adversaries: IntList = Field(default_factory=list)
    scale: float = 1.0

    @model_validator(mode="after")
    def _needs_sensing_matrix(self) -> "ProblemSection":
        if self.A is None and (self.P is None or self.B is None):
            raise ValueError("give problem.A or both problem.P and problem.B")
        if (self.P is None) != (self.B is None):
            raise ValueError("problem.P and problem.B must be given together")
        if self.scale == 0:
            raise ValueError("problem.scale must be nonzero")
        if len(set(self.adversaries)) > self.m:
            raise ValueError("more adversarial workers than the budget problem.m")
        return self


class BoxSection(_Section):
    lo: FloatList
    hi: FloatList


class AttackSection(_Section):
    kind: Optional[AttackKind] = None
    value: float = 0.0
    scale: float = Field(default=1000.0, gt=0)
    targets: IntList = Field(default_factory=list)

    @field_validator("kind", mode="before")
    @classmethod
    def _none_means_no_attack(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in {"", "none"}:
            return None
        return value


class RunSection(_Section):
    mode: Mode = Mode.ASYNC
    method: Literal["estimator", "baseline"] = "estimator"
    schedule: str = "s3"
    n: int = Field(ge=1)
    r: float = Field(default=0.5, gt=0.0, lt=1.0)
    trials: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    checkpoints: IntList = Field(default_factory=list)
    rate_checkpoints: IntList = Field(default_factory=list)

    @field_validator("schedule")
    @classmethod
    def _known_schedule(cls, value: str) -> str:
        if value not in ESTIMATOR_SCHEDULES:
            raise ValueError(f"schedule must be one of {', '.join(ESTIMATOR_SCHEDULES)}")
        return value


class BaselineSection(_Section):
    rule: Rule = Rule.CM
    wrapper: Wrapper = Wrapper.NONE
    s: int = Field(default=1, ge=1)
    schedule: Literal["sqrt", "pow09"] = "sqrt"
    gamma: Union[Literal["default", "none"], float] = "default"


class CompareSection(_Section):
    methods: NameList = Field(default_factory=list)


class OutputSection(_Section):
    path: Optional[str] = None
    series_dir: Optional[str] = None


class ExperimentConfig(_Section):
    problem: ProblemSection
    box: BoxSection
    attack: AttackSection = Field(default_factory=AttackSection)
    run: RunSection
    baseline: BaselineSection = Field(default_factory=BaselineSection)
    compare: CompareSection = Field(default_factory=CompareSection)
    output: OutputSection = Field(default_factory=OutputSection)
    base_dir: str = "."

    @model_validator(mode="after")
    def _cross_section(self) -> "ExperimentConfig":
        stray = set(self.attack.targets) - set(self.problem.adversaries)
        if stray:
            raise ValueError(f"attack.targets {sorted(stray)} are not listed in problem.adversaries")
        if self.attack.kind is not None and not self.problem.adversaries:
            raise ValueError("attack.kind is set but problem.adversaries is empty")
        return self

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def method_label(self) -> str:
        if self.run.method == "estimator":
            return "estimator"
        if self.baseline.wrapper is Wrapper.NONE:
            return self.baseline.rule.value
        return f"{self.baseline.rule.value}+{self.baseline.wrapper.value}"

    def with_method(self, label: str) -> "ExperimentConfig":
        """Copy of this config running ``label``: ``estimator``, ``<rule>`` or ``<rule>+<wrapper>``."""
        if label == "estimator":
            return self.model_copy(update={"run": self.run.model_copy(update={"method": "estimator"})})
        rule_text, _, wrapper_text = label.partition("+")
        try:
            rule = Rule(rule_text)
            wrapper = Wrapper(wrapper_text) if wrapper_text else Wrapper.NONE
        except ValueError as exc:
            raise ConfigError(f"unknown method '{label}'", issues=[("compare.methods", str(exc))]) from exc
        return self.model_copy(
            update={
                "run": self.run.model_copy(update={"method": "baseline"}),
                "baseline": self.baseline.model_copy(update={"rule": rule, "wrapper": wrapper}),
            }
        )


def parse_flat(text: str, *, source: str = "<string>") -> Dict[str, Dict[str, str]]:
    """Parse ``section.key = value`` lines into nested dicts; ``#`` comments and blanks are skipped."""
    nested: Dict[str, Dict[str, str]] = {}
    seen: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError("expected 'section.key = value'", line=lineno, path=source)
        section, dot, name = key.partition(".")
        if not dot or not section or not name or "." in name:
            raise ConfigError(f"key '{key}' is not of the form section.key", line=lineno, path=source)
        if key in seen:
            raise ConfigError(
                f"duplicate key '{key}' (first set on line {seen[key]})", line=lineno, path=source
            )
        seen[key] = lineno
        nested.setdefault(section, {})[name] = value.strip()
    return nested


def _issues(exc: ValidationError) -> List[tuple[str, str]]:
    issues = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error.get("loc", ()))
        issues.append((location or "config", error.get("msg", "invalid value")))
    return issues


def config_from_mapping(data: Dict[str, Any], *, source: str = "<mapping>", base_dir: str = ".") -> ExperimentConfig:
    payload = dict(data)
    payload.setdefault("base_dir", base_dir)
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError("invalid configuration", issues=_issues(exc), path=source) from exc


def load_config(path: Union[str, Path], *, check_files: bool = True) -> ExperimentConfig:
    """Read, parse and validate a config file; unknown keys are rejected."""
    file_path = Path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=str(file_path)) from exc
    nested = parse_flat(text, source=str(file_path))
    config = config_from_mapping(nested, source=str(file_path), base_dir=str(file_path.parent))
    if check_files:
        build_experiment(config)
    LOGGER.debug("loaded config", extra={"fields": {"path": str(file_path)}})
    return config


@dataclass(frozen=True, eq=False)
class Experiment:
    """Materialised config: numeric problem, box, attack and (for baselines) aggregator spec."""

    config: ExperimentConfig
    problem: SensingProblem
    box: BoxProjection
    attack: Optional[AttackSpec]
    aggregator: Optional[AggregatorSpec]

    @property
    def mode(self) -> Mode:
        return self.config.run.mode

    @property
    def method(self) -> str:
        return self.config.method_label

    def schedule(self, n: int) -> StepsizeSchedule:
        name = self.config.run.schedule if self.aggregator is None else self.config.baseline.schedule
        return build_schedule(name, n, self.config.run.r)


def build_schedule(name: str, n: int, r: float = 0.5) -> StepsizeSchedule:
    if name == "s1":
        return StepsizeSchedule.const_const(n, r)
    if name == "s2":
        return StepsizeSchedule.const_decay(n)
    if name == "s3":
        return StepsizeSchedule.decay_decay()
    if name == "sqrt":
        return StepsizeSchedule.power_law(0.5, 1.0)
    if name == "pow09":
        return StepsizeSchedule.power_law(0.9, 1.0)
    raise ConfigError(f"unknown schedule '{name}'", issues=[("run.schedule", name)])


def _box(section: BoxSection, d: int) -> BoxProjection:
    def expand(values: List[float], key: str) -> np.ndarray:
        if len(values) == 1:
            return np.full(d, values[0])
        if len(values) != d:
            raise ConfigError(
                "box bounds do not match the problem dimension",
                issues=[(key, f"expected 1 or {d} values, got {len(values)}")],
            )
        return np.asarray(values, dtype=float)

    return BoxProjection(lo=expand(section.lo, "box.lo"), hi=expand(section.hi, "box.hi"))


def load_sensing_matrix(config: ExperimentConfig) -> np.ndarray:
    section = config.problem
    A_file = load_matrix(config.resolve(section.A)) if section.A else None
    if section.P and section.B:
        composed = compose_tomography(
            load_matrix(config.resolve(section.P)), load_matrix(config.resolve(section.B))
        )
        if A_file is not None and (A_file.shape != composed.shape or not np.array_equal(A_file, composed)):
            raise CompositionMismatchError(
                "problem.A disagrees with problem.P @ problem.B",
                issues=[("problem.A", "entries differ from the composed matrix")],
            )
        return composed
    assert A_file is not None
    return A_file


def build_experiment(config: ExperimentConfig) -> Experiment:
    section = config.problem
    try:
        A = load_sensing_matrix(config) * section.scale
        mu_true = load_vector(config.resolve(section.mu_true))
        problem = SensingProblem(
            A=A,
            mu_true=mu_true,
            sigma=section.sigma,
            adversary_set=frozenset(section.adversaries),
            m=section.m,
        )
        box = _box(config.box, problem.d)
        validate_box_for(problem, box)
        attack = None
        if config.attack.kind is not None:
            attack = AttackSpec(
                kind=config.attack.kind,
                target_workers=frozenset(config.attack.targets),
                value=config.attack.value,
                scale=config.attack.scale,
            )
            attack.validate_for(problem)
        aggregator = None
        if config.run.method == "baseline":
            aggregator = _aggregator(config, problem)
            aggregator.validate_for(problem.N, config.run.mode)
        if config.run.schedule == "s1":
            StepsizeSchedule.const_const(config.run.n, config.run.r)
    except ConfigError:
        raise
    except RobustMeanError as exc:
        raise ConfigError("configuration does not describe a valid experiment", issues=[("config", str(exc))]) from exc
    return Experiment(config=config, problem=problem, box=box, attack=attack, aggregator=aggregator)


def _aggregator(config: ExperimentConfig, problem: SensingProblem) -> AggregatorSpec:
    baseline = config.baseline
    if baseline.gamma == "default":
        return AggregatorSpec.with_default_momentum(
            baseline.rule, config.run.mode, baseline.wrapper, baseline.s, problem.m
        )
    power = None if baseline.gamma == "none" else float(baseline.gamma)
    return AggregatorSpec(
        rule=baseline.rule, wrapper=baseline.wrapper, s=baseline.s, budget=problem.m, gamma_power=power
    )


__all__ = [
    "BASELINE_SCHEDULES",
    "DEFAULT_RATE_CHECKPOINTS",
    "ESTIMATOR_SCHEDULES",
    "Experiment",
    "ExperimentConfig",
    "build_experiment",
    "build_schedule",
    "config_from_mapping",
    "load_config",
    "load_sensing_matrix",
    "parse_flat",
]
