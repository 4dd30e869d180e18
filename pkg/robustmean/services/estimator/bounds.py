"""Closed-form rate bounds and the constants they are built from."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from robustmean.errors import InvalidParameterError
from robustmean.services.estimator.steps import Mode
from robustmean.services.problem import BoxProjection, SensingProblem
from robustmean.services.recoverability import RecoverabilityReport, robustness_K

STATEMENT_MIN_N = {1: 3, 2: 1, 3: 2}


@dataclass(frozen=True)
class RateConstants:
    K: float
    D_X: float
    A_bar: float
    C_N: float
    Delta: float
    E0_y: float
    eta: float
    mode: Mode
    N: int
    m: int

    def as_dict(self) -> dict:
        payload = asdict(self)
        payload["mode"] = Mode(self.mode).value
        return payload


def delta_for(problem: SensingProblem, mode: Mode) -> float:
    d, A_bar = problem.d, problem.A_bar
    if Mode(mode) is Mode.ASYNC:
        return math.sqrt(d * A_bar**2 * (problem.sigma_bar**2 + problem.mu_bar**2))
    return math.sqrt(d * A_bar**2 * problem.sigma_bar**2)


def c_n_for(N: int, m: int, mode: Mode) -> float:
    if Mode(mode) is Mode.ASYNC:
        return 2.0 * (N - m) / math.sqrt(N)
    return 2.0 * (N - m) / N


def derive_rate_constants(
    problem: SensingProblem,
    box: BoxProjection,
    x0: Optional[np.ndarray],
    y0: Optional[np.ndarray],
    mode: Mode,
    eta_report: RecoverabilityReport,
) -> RateConstants:
    """Every constant the rate bounds need, computed from ground truth."""
    mode = Mode(mode)
    x_start = box.center if x0 is None else np.asarray(x0, dtype=float)
    y_start = np.zeros(problem.N) if y0 is None else np.asarray(y0, dtype=float)
    honest = problem.honest_mask
    E0_y = float(np.max(np.abs(y_start - problem.EY)[honest], initial=0.0))
    K = 1.0 if problem.m == 0 else robustness_K(eta_report, problem.A, problem.m)
    return RateConstants(
        K=K,
        D_X=box.diameter_from(x_start),
        A_bar=problem.A_bar,
        C_N=c_n_for(problem.N, problem.m, mode),
        Delta=delta_for(problem, mode),
        E0_y=E0_y,
        eta=eta_report.eta,
        mode=mode,
        N=problem.N,
        m=problem.m,
    )


def theorem_bound(statement: int, consts: RateConstants, n: int, r: float) -> float:
    """Right-hand side of the three stepsize statements, evaluated as printed."""
    if statement not in STATEMENT_MIN_N:
        raise InvalidParameterError(f"unknown rate statement {statement}")
    if n < STATEMENT_MIN_N[statement]:
        raise InvalidParameterError(
            f"statement {statement} needs n >= {STATEMENT_MIN_N[statement]}, got {n}"
        )
    if not 0 < r < 1:
        raise InvalidParameterError(f"tail fraction r must lie in (0, 1), got {r}")

    K, D, A_bar = consts.K, consts.D_X, consts.A_bar
    noise = consts.C_N * consts.Delta
    root_n = math.sqrt(n)
    if statement == 1:
        leading = (
            2.0 * K * D**2 / (1.0 - r)
            + A_bar**2 / 2.0
            + 40.0 * r * (consts.N - consts.m) * consts.E0_y / (consts.N * (1.0 - r))
        )
        return leading / root_n + noise / math.sqrt(2.0 * r) * math.sqrt(math.log(n) / n)
    if statement == 2:
        tail = noise * (1.0 / math.sqrt(r) + 2.0 * (1.0 - math.sqrt(r))) / (1.0 - r)
        return (2.0 * K * D**2 / (1.0 - r) + A_bar**2 / 2.0 + tail) / root_n
    return (4.0 * K * D**2 + (2.0 * A_bar**2 + 4.0 * noise) * math.log(2.0 / r)) / (
        (1.0 - r) * root_n
    )


def _multiplier(mode: Mode, N: Optional[int]) -> float:
    if Mode(mode) is Mode.ASYNC:
        if N is None:
            raise InvalidParameterError("asynchronous y bounds need the worker count N")
        return float(N)
    return 1.0


def y_recursion_bound(
    E0_y: float,
    Delta: float,
    betas: Sequence[float],
    n: int,
    mode: Mode,
    *,
    N: Optional[int] = None,
) -> float:
    """Mean-square bound on an honest coordinate of y_n given beta_0..beta_{n-1}.

    (E0)^2 prod_l (1 - beta_l)^2 + c Delta^2 sum_t beta_t^2 prod_{l>t} (1 - beta_l)^2,
    with c = N asynchronously and c = 1 synchronously.
    """
    window = np.asarray(betas, dtype=float)[:n]
    if window.shape[0] != n:
        raise InvalidParameterError(f"need {n} stepsizes, got {window.shape[0]}")
    if np.any(window <= 0.0) or np.any(window > 1.0):
        raise InvalidParameterError("beta stepsizes must lie in (0, 1]")
    c = _multiplier(mode, N)
    decay = (1.0 - window) ** 2
    # suffix[t] = prod_{l >= t} (1 - beta_l)^2
    suffix = np.append(np.cumprod(decay[::-1])[::-1], 1.0)
    bias = E0_y**2 * suffix[0]
    variance = c * Delta**2 * float(np.sum(window**2 * suffix[1:]))
    return float(bias + variance)


def y_error_bound(
    E0_y: float,
    Delta: float,
    beta: Optional[float],
    n: int,
    mode: Mode,
    *,
    N: Optional[int] = None,
) -> float:
    """Closed-form root-mean-square y error: constant ``beta`` or, when None, beta_t = 1/(t+1)."""
    if n < 1:
        raise InvalidParameterError(f"n must be at least 1, got {n}")
    c = _multiplier(mode, N)
    if beta is None:
        return math.sqrt(c) * Delta / math.sqrt(n)
    if not 0 < beta <= 1:
        raise InvalidParameterError(f"beta must lie in (0, 1], got {beta}")
    return (1.0 - beta) ** n * E0_y + math.sqrt(c * beta) * Delta


def generic_x_bound(
    consts: RateConstants, alphas: Sequence[float], y_err_l1: Sequence[float]
) -> float:
    """Tail bound in terms of the stepsizes and the honest l1 y errors over the window."""
    a = np.asarray(alphas, dtype=float)
    errors = np.asarray(y_err_l1, dtype=float)
    if a.size == 0 or a.shape != errors.shape:
        raise InvalidParameterError("alphas and y errors must be nonempty and aligned")
    numerator = (
        2.0 * consts.K * consts.D_X**2
        + float(np.sum(2.0 * a / consts.N * errors))
        + float(np.sum(a**2)) * consts.A_bar**2 / 2.0
    )
    return numerator / float(a.sum())


__all__ = [
    "RateConstants",
    "STATEMENT_MIN_N",
    "c_n_for",
    "delta_for",
    "derive_rate_constants",
    "generic_x_bound",
    "theorem_bound",
    "y_error_bound",
    "y_recursion_bound",
]
