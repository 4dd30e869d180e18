"""Plain-text matrix format: one row per line, whitespace-separated decimals."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from robustmean.errors import ConfigError

PathLike = Union[str, Path]


def parse_matrix(text: str, *, source: str = "<string>") -> np.ndarray:
    """Parse matrix text; ``#`` starts a comment, blank lines are skipped."""

    rows: list[list[float]] = []
    width: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values = [float(token) for token in line.split()]
        except ValueError as exc:
            raise ConfigError(f"not a number: {exc}", line=lineno, path=source) from exc
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ConfigError(
                f"row has {len(values)} entries, expected {width}", line=lineno, path=source
            )
        rows.append(values)
    if not rows:
        raise ConfigError("matrix file is empty", path=source)
    return np.asarray(rows, dtype=float)


def load_matrix(path: PathLike) -> np.ndarray:
    file_path = Path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read matrix file: {exc}", path=str(file_path)) from exc
    return parse_matrix(text, source=str(file_path))


def load_vector(path: PathLike) -> np.ndarray:
    """Load a vector stored either as one row or as one column."""

    matrix = load_matrix(path)
    if matrix.shape[0] == 1 or matrix.shape[1] == 1:
        return matrix.reshape(-1)
    raise ConfigError(f"expected a vector, got shape {matrix.shape}", path=str(path))


def format_matrix(matrix: np.ndarray) -> str:
    array = np.atleast_2d(np.asarray(matrix, dtype=float))
    return "\n".join(" ".join(repr(float(value)) for value in row) for row in array) + "\n"


def save_matrix(path: PathLike, matrix: np.ndarray) -> None:
    Path(path).write_text(format_matrix(matrix), encoding="utf-8")


__all__ = ["format_matrix", "load_matrix", "load_vector", "parse_matrix", "save_matrix"]
