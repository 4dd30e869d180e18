"""Prometheus instruments for trial execution.

Metrics live in a dedicated registry so repeated imports in tests never clash
with the default global one.
"""

from __future__ import annotations

import logging
from typing import Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

LOGGER = logging.getLogger(__name__)

REGISTRY = CollectorRegistry()

trials_total = Counter(
    "robustmean_trials_total",
    "Completed simulation trials",
    ["method", "mode"],
    registry=REGISTRY,
)
trial_duration = Histogram(
    "robustmean_trial_duration_seconds",
    "Wall-clock duration of a single trial",
    ["method"],
    registry=REGISTRY,
)
trials_active = Gauge(
    "robustmean_trials_active",
    "Trials currently executing in this process",
    registry=REGISTRY,
)


def export_metrics(path: Optional[str]) -> bool:
    """Write the registry to ``path`` in the Prometheus textfile format."""

    if not path:
        return False
    try:
        write_to_textfile(path, REGISTRY)
    except OSError as exc:
        LOGGER.warning("Could not write metrics file %s: %s", path, exc)
        return False
    return True


__all__ = ["REGISTRY", "export_metrics", "trial_duration", "trials_active", "trials_total"]
