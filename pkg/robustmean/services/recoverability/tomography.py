"""Structured sensing for network tomography: A = P B."""

from __future__ import annotations

import numpy as np

from robustmean.errors import DimensionMismatchError, InvalidParameterError


def compose_tomography(P: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Effective sensing matrix for path delays P x with link means x = B theta."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if P.shape[1] != B.shape[0]:
        raise DimensionMismatchError(
            f"path-link matrix has {P.shape[1]} links but structure matrix has {B.shape[0]} rows"
        )
    if not np.all((P == 0.0) | (P == 1.0)):
        raise InvalidParameterError("path-link matrix entries must be 0 or 1")
    return P @ B


def shared_mean_structure(n_links: int, shared: int) -> np.ndarray:
    """B for links whose first ``shared`` entries have one common mean; the rest are free."""
    if not 1 <= shared <= n_links:
        raise InvalidParameterError(f"shared block size {shared} outside [1, {n_links}]")
    free = n_links - shared
    B = np.zeros((n_links, free + 1))
    B[:shared, 0] = 1.0
    B[shared:, 1:] = np.eye(free)
    return B


__all__ = ["compose_tomography", "shared_mean_structure"]
