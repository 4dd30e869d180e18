"""Robust-aggregation baselines."""

from .baseline import (
    AggregatorSpec,
    BaselineState,
    BufferBank,
    Wrapper,
    baseline_step,
    bucket_partition,
    bucketing_aggregate,
    buffered_step,
    current_momenta,
    run_baseline,
)
from .rules import (
    Rule,
    aggregate,
    coordinate_median,
    geometric_median,
    krum,
    l2_gradient,
    momentum_update,
    rage_approx,
    trimmed_mean,
    weiszfeld,
)

__all__ = [
    "AggregatorSpec",
    "BaselineState",
    "BufferBank",
    "Rule",
    "Wrapper",
    "aggregate",
    "baseline_step",
    "bucket_partition",
    "bucketing_aggregate",
    "buffered_step",
    "coordinate_median",
    "current_momenta",
    "geometric_median",
    "krum",
    "l2_gradient",
    "momentum_update",
    "rage_approx",
    "run_baseline",
    "trimmed_mean",
    "weiszfeld",
]
