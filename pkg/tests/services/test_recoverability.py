from __future__ import annotations

import math

import numpy as np
import pytest

from robustmean.errors import DimensionMismatchError, InvalidParameterError, RecoverabilityError
from robustmean.services.matrix_io import load_matrix
from robustmean.services.recoverability import (
    METHOD_EXACT,
    PartialStructure,
    check_A2_prime,
    compose_tomography,
    compute_eta,
    cross_ratio_violations,
    l1_fit,
    robustness_K,
    shared_mean_structure,
    worst_case_margin,
)

REMARK_A = np.array([[1, 0], [1, 0], [1, 0], [1, -1], [1, 1]], dtype=float)


def _grid_eta(A: np.ndarray, m: int, angles: int = 2000) -> float:
    theta = np.linspace(0.0, 2 * np.pi, angles, endpoint=False)
    return min(worst_case_margin(A, m, np.array([math.cos(a), math.sin(a)]))[0] for a in theta)


def test_identity_margin_without_adversaries():
    report = compute_eta(np.eye(2), 0, method="exact")
    assert report.eta == pytest.approx(0.5, abs=1e-12)
    assert report.holds_A2
    assert report.K == pytest.approx(1.0)
    assert report.method == METHOD_EXACT
    assert report.certified


def test_identity_margin_with_one_adversary_fails():
    report = compute_eta(np.eye(2), 1, method="exact")
    assert report.eta == pytest.approx(-0.5, abs=1e-12)
    assert not report.holds_A2
    assert math.isinf(report.K)
    with pytest.raises(RecoverabilityError):
        robustness_K(report, np.eye(2), 1)


@pytest.mark.parametrize("m", [0, 1])
def test_identity_margin_matches_grid_oracle(m):
    assert compute_eta(np.eye(2), m, method="exact").eta == pytest.approx(_grid_eta(np.eye(2), m), abs=1e-6)


def test_tomography_matrix_certifies_one_adversary(tomography_A):
    report = compute_eta(tomography_A, 1)
    assert report.holds_A2
    assert report.certified
    assert report.eta > 0
    A_bar = float(np.max(np.linalg.norm(tomography_A, axis=1)))
    assert report.A_bar == pytest.approx(A_bar)
    assert robustness_K(report, tomography_A, 1) == pytest.approx(2 * A_bar / (7 * report.eta) + 1)
    assert report.K == pytest.approx(robustness_K(report, tomography_A, 1))


def test_exact_margin_is_a_lower_bound_on_sampled_points(tomography_A):
    eta = compute_eta(tomography_A, 1, method="exact").eta
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 5000))
    X /= np.linalg.norm(X, axis=0)
    sampled = min(worst_case_margin(tomography_A, 1, X[:, k])[0] for k in range(X.shape[1]))
    assert eta <= sampled + 1e-12
    multistart = compute_eta(tomography_A, 1, method="multistart", starts=20, iterations=200)
    assert not multistart.certified
    assert eta <= multistart.eta + 1e-12


@pytest.mark.parametrize("scale", [2.0, -3.0, 0.5])
def test_margin_is_absolutely_homogeneous(tomography_A, scale):
    eta = compute_eta(tomography_A, 1, method="exact").eta
    assert compute_eta(scale * tomography_A, 1, method="exact").eta == pytest.approx(abs(scale) * eta, rel=1e-9)


def test_margin_does_not_grow_with_the_budget(tomography_A):
    etas = [compute_eta(tomography_A, m, method="exact").eta for m in range(tomography_A.shape[0])]
    assert all(later <= earlier + 1e-12 for earlier, later in zip(etas, etas[1:]))


def _small_cases():
    rng = np.random.default_rng(12)
    return [
        ("identity-0", np.eye(2), 0),
        ("identity-1", np.eye(2), 1),
        ("remark", REMARK_A, 1),
        ("gaussian-6x3", rng.normal(size=(6, 3)), 1),
    ]


@pytest.mark.parametrize("name, A, m", _small_cases(), ids=[case[0] for case in _small_cases()])
def test_multistart_matches_exact_in_low_dimension(name, A, m):
    exact = compute_eta(A, m, method="exact")
    multistart = compute_eta(A, m, method="multistart")
    assert not multistart.certified
    assert multistart.eta == pytest.approx(exact.eta, abs=1e-6)


def test_cross_ratio_holds_for_computed_K(tomography_A):
    report = compute_eta(tomography_A, 1)
    rng = np.random.default_rng(2)
    assert cross_ratio_violations(tomography_A, 1, report.K, rng.normal(size=(200, 4))) == 0


def test_robustness_K_is_one_without_adversaries(tomography_A):
    report = compute_eta(tomography_A, 0)
    assert robustness_K(report, tomography_A, 0) == pytest.approx(1.0)


def test_compute_eta_argument_checks():
    with pytest.raises(InvalidParameterError):
        compute_eta(np.eye(2), 2)
    with pytest.raises(InvalidParameterError):
        compute_eta(np.ones((13, 2)), 1, method="exact")


def test_remark_matrix_fails_full_condition_but_passes_relaxed():
    assert not compute_eta(REMARK_A, 1).holds_A2
    verdict = check_A2_prime(REMARK_A, PartialStructure(U=[[1.0], [0.0]], V=[[0.0], [1.0]], q=1))
    assert verdict.holds
    assert verdict.certified
    assert verdict.margin > 0


def test_relaxed_condition_for_identity_with_no_corruption():
    verdict = check_A2_prime(np.eye(2), PartialStructure(U=[[1.0], [0.0]], V=[[0.0], [1.0]], q=0))
    assert verdict.holds


def test_relaxed_condition_fails_when_q_too_large():
    verdict = check_A2_prime(REMARK_A, PartialStructure(U=[[1.0], [0.0]], V=[[0.0], [1.0]], q=2))
    assert not verdict.holds
    assert verdict.witness_subset is not None


def test_partial_structure_validation():
    with pytest.raises(InvalidParameterError):
        PartialStructure(U=[[1.0], [0.0]], V=[[2.0], [0.0]], q=1)
    with pytest.raises(DimensionMismatchError):
        PartialStructure(U=[[1.0], [0.0]], V=[[0.0], [1.0], [0.0]], q=1)
    with pytest.raises(InvalidParameterError):
        PartialStructure(U=[[1.0], [0.0]], V=[[0.0], [1.0]], q=-1)


def test_l1_fit_recovers_alpha_under_one_sparse_corruption():
    y = REMARK_A @ np.array([3.0, 2.0]) + 4.0 * np.eye(5)[1]
    fit = l1_fit(REMARK_A, [[1.0], [0.0]], [[0.0], [1.0]], y)
    assert fit.alpha[0] == pytest.approx(3.0, abs=1e-8)
    assert fit.residual == pytest.approx(4.0, abs=1e-8)
    assert fit.certified


def test_l1_fit_is_exact_for_every_single_corruption():
    rng = np.random.default_rng(9)
    for _ in range(10):
        alpha_star, beta_star = rng.uniform(-5.0, 5.0, size=2)
        clean = REMARK_A @ np.array([alpha_star, beta_star])
        for support in range(5):
            for magnitude in rng.uniform(-20.0, 20.0, size=20):
                y = clean + magnitude * np.eye(5)[support]
                fit = l1_fit(REMARK_A, [[1.0], [0.0]], [[0.0], [1.0]], y)
                assert fit.alpha[0] == pytest.approx(alpha_star, abs=1e-8)


def test_l1_fit_can_miss_alpha_beyond_budget():
    y = REMARK_A @ np.array([3.0, 2.0]) + 10.0 * np.eye(5)[0] + 10.0 * np.eye(5)[3]
    fit = l1_fit(REMARK_A, [[1.0], [0.0]], [[0.0], [1.0]], y)
    assert fit.alpha[0] == pytest.approx(8.0, abs=1e-8)
    assert fit.residual == pytest.approx(15.0, abs=1e-8)


def test_l1_fit_exact_data_has_zero_residual(tomography_A):
    theta = np.array([1.0, 2.0, 3.0, 4.0])
    U, V = np.eye(4)[:, :1], np.eye(4)[:, 1:]
    fit = l1_fit(tomography_A, U, V, tomography_A @ theta)
    assert fit.residual == pytest.approx(0.0, abs=1e-9)
    assert fit.alpha[0] == pytest.approx(1.0, abs=1e-8)


def test_composed_tomography_matrix_matches_shipped_file(data_dir, tomography_A):
    composed = compose_tomography(load_matrix(data_dir / "P.txt"), load_matrix(data_dir / "B.txt"))
    assert np.array_equal(composed, tomography_A)
    assert np.array_equal(load_matrix(data_dir / "A.txt"), tomography_A)


def test_compose_tomography_edge_cases(data_dir):
    P = load_matrix(data_dir / "P.txt")
    assert np.array_equal(compose_tomography(P, np.eye(8)), P)
    assert not np.any(compose_tomography(np.zeros((7, 8)), load_matrix(data_dir / "B.txt")))
    with pytest.raises(DimensionMismatchError):
        compose_tomography(P, np.eye(4))
    with pytest.raises(InvalidParameterError):
        compose_tomography(P * 2.0, np.eye(8))


def test_shared_mean_structure_equals_shipped_B(data_dir):
    B = shared_mean_structure(8, 5)
    assert np.array_equal(B, load_matrix(data_dir / "B.txt"))
    link_means = B @ np.array([5.47, 7.88, 11.51, 13.58])
    assert np.all(link_means[:5] == 5.47)
