"""Exception hierarchy shared by the services, the harness and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONDITION_FAILED = 2
EXIT_NOT_CERTIFIED = 3
EXIT_RUNTIME = 4


class RobustMeanError(Exception):
    """Base class for all errors raised by robustmean."""


class DimensionMismatchError(RobustMeanError, ValueError):
    """Raised when vector or matrix shapes do not line up."""


class InvalidParameterError(RobustMeanError, ValueError):
    """Raised when a parameter lies outside its admissible range."""


class RecoverabilityError(RobustMeanError):
    """Raised when a quantity needs eta > 0 but the sensing matrix does not provide it."""

    def __init__(self, eta: float, message: str | None = None) -> None:
        self.eta = float(eta)
        super().__init__(message or f"recoverability margin eta={self.eta:.6g} is not positive")


class SolverError(RobustMeanError):
    """Raised when the LP engine cannot produce a certified optimum."""


class UnboundedProblemError(SolverError):
    """Raised when a minimisation LP is unbounded below."""


@dataclass(eq=False)
class ConfigError(RobustMeanError):
    """Raised for unreadable or invalid experiment configuration."""

    message: str
    issues: List[Tuple[str, str]] = field(default_factory=list)
    line: Optional[int] = None
    path: Optional[str] = None

    def __str__(self) -> str:
        prefix = self.path or "config"
        if self.line is not None:
            prefix = f"{prefix}:{self.line}"
        if not self.issues:
            return f"{prefix}: {self.message}"
        details = "; ".join(f"{location}: {text}" for location, text in self.issues)
        return f"{prefix}: {self.message} ({details})"


class CompositionMismatchError(ConfigError):
    """Raised when a shipped A file disagrees with the product P @ B."""


__all__ = [
    "CompositionMismatchError",
    "ConfigError",
    "DimensionMismatchError",
    "EXIT_CONDITION_FAILED",
    "EXIT_NOT_CERTIFIED",
    "EXIT_OK",
    "EXIT_RUNTIME",
    "EXIT_USAGE",
    "InvalidParameterError",
    "RecoverabilityError",
    "RobustMeanError",
    "SolverError",
    "UnboundedProblemError",
]
