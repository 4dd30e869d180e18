import sys
from pathlib import Path

# Ensure the root of the repository is on PYTHONPATH
sys.path.append(str(Path(__file__).resolve().parents[1]))

import numpy as np
import pytest

from robustmean.services.problem import BoxProjection, SensingProblem

DATA_DIR = Path(__file__).resolve().parents[1] / "experiments"

TOMOGRAPHY_A = np.array(
    [
        [2, 0, 0, 1],
        [2, 1, 0, 0],
        [2, 0, 1, 0],
        [2, 1, 0, 1],
        [2, 1, 1, 0],
        [2, 0, 1, 1],
        [2, 1, 1, 1],
    ],
    dtype=float,
)
MU_TRUE = np.array([5.47, 7.88, 11.51, 13.58])
REMARK_A = np.array([[1, 0], [1, 0], [1, 0], [1, -1], [1, 1]], dtype=float)


@pytest.fixture()
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture()
def tomography_A() -> np.ndarray:
    return TOMOGRAPHY_A.copy()


@pytest.fixture()
def honest_problem() -> SensingProblem:
    return SensingProblem(A=TOMOGRAPHY_A, mu_true=MU_TRUE, sigma=1.0, m=1)


@pytest.fixture()
def attacked_problem() -> SensingProblem:
    return SensingProblem(A=TOMOGRAPHY_A, mu_true=MU_TRUE, sigma=1.0, adversary_set=frozenset({6}), m=1)


@pytest.fixture()
def box() -> BoxProjection:
    return BoxProjection.cube(0.0, 30.0, 4)


@pytest.fixture()
def write_config(tmp_path: Path):
    """Write a config next to copies of the shipped matrices."""
    for matrix in ("A.txt", "P.txt", "B.txt", "mu_true.txt"):
        (tmp_path / matrix).write_text((DATA_DIR / matrix).read_text(encoding="utf-8"), encoding="utf-8")

    def _write(body: str, name: str = "experiment.cfg") -> Path:
        path = tmp_path / name
        path.write_text(body, encoding="utf-8")
        return path

    return _write
