from __future__ import annotations

import math

import numpy as np
import pytest

from robustmean.errors import DimensionMismatchError, InvalidParameterError
from robustmean.services.problem import (
    BoxProjection,
    RandomSource,
    SensingProblem,
    StepsizeSchedule,
    StreamBank,
    check_stepsize_assumption,
    project_box,
    sample_measurement,
    sign,
    sign_vector,
    stepsize_arrays,
    stepsizes_at,
    tail_start,
    tail_weights,
    validate_box_for,
)


def test_sample_measurement_without_noise_is_the_row_dot_mean(honest_problem):
    problem = SensingProblem(A=honest_problem.A, mu_true=honest_problem.mu_true, sigma=0.0)
    rng = StreamBank(0, 0, problem.N).worker(0)

    assert sample_measurement(problem, 0, rng) == pytest.approx(24.52, abs=1e-12)


def test_sample_measurement_zero_row_reports_zero():
    problem = SensingProblem(A=[[0.0, 0.0], [1.0, 1.0]], mu_true=[3.0, 4.0], sigma=0.0)
    assert sample_measurement(problem, 0, StreamBank(1, 0, 2).worker(0)) == 0.0


def test_sample_measurement_refuses_adversarial_worker(attacked_problem):
    with pytest.raises(InvalidParameterError):
        sample_measurement(attacked_problem, 6, StreamBank(0, 0, 7).worker(6))


def test_sample_measurement_mean_matches_expectation(honest_problem):
    rng = StreamBank(3, 0, honest_problem.N).worker(2)
    draws = [sample_measurement(honest_problem, 2, rng) for _ in range(4000)]
    # a_2 = (2, 0, 1, 0); std of a_2^T X is sqrt(5)
    assert np.mean(draws) == pytest.approx(honest_problem.EY[2], abs=4 * math.sqrt(5) / math.sqrt(4000))


def test_problem_rejects_inconsistent_inputs():
    with pytest.raises(DimensionMismatchError):
        SensingProblem(A=np.eye(2), mu_true=[1.0, 2.0, 3.0])
    with pytest.raises(InvalidParameterError):
        SensingProblem(A=np.eye(3), mu_true=[1.0, 2.0, 3.0], adversary_set=frozenset({0, 1}), m=1)
    with pytest.raises(InvalidParameterError):
        SensingProblem(A=np.zeros((2, 2)), mu_true=[0.0, 0.0])
    with pytest.raises(InvalidParameterError):
        SensingProblem(A=np.eye(2), mu_true=[0.0, 0.0], sigma=-1.0)


def test_problem_derived_quantities(attacked_problem):
    assert attacked_problem.N == 7
    assert attacked_problem.d == 4
    assert attacked_problem.honest == (0, 1, 2, 3, 4, 5)
    assert attacked_problem.honest_mask.tolist() == [True] * 6 + [False]
    assert attacked_problem.A_bar == pytest.approx(math.sqrt(7))
    assert attacked_problem.mu_bar == pytest.approx(13.58)
    assert attacked_problem.scaled(10.0).A_bar == pytest.approx(10 * math.sqrt(7))


def test_project_box_clamps_coordinates():
    box = BoxProjection.cube(0.0, 30.0, 2)
    assert project_box(np.array([-1.0, 5.0]), box).tolist() == [0.0, 5.0]
    assert project_box(np.array([31.0, 31.0]), box).tolist() == [30.0, 30.0]
    inside = np.array([3.0, 29.5])
    assert np.array_equal(project_box(inside, box), inside)


def test_project_box_is_non_expansive():
    box = BoxProjection(lo=np.array([0.0, -1.0, 2.0]), hi=np.array([1.0, 1.0, 5.0]))
    rng = np.random.default_rng(11)
    for _ in range(500):
        u, v = rng.normal(scale=10.0, size=(2, 3))
        projected = np.linalg.norm(project_box(u, box) - project_box(v, box))
        assert projected <= np.linalg.norm(u - v) + 1e-12


def test_box_validation_and_diameter(honest_problem, box):
    validate_box_for(honest_problem, box)
    assert box.diameter_from(box.center) == pytest.approx(30.0)
    with pytest.raises(InvalidParameterError):
        validate_box_for(honest_problem, BoxProjection.cube(0.0, 10.0, 4))
    with pytest.raises(DimensionMismatchError):
        validate_box_for(honest_problem, BoxProjection.cube(0.0, 30.0, 3))
    with pytest.raises(InvalidParameterError):
        BoxProjection(lo=np.array([1.0]), hi=np.array([0.0]))


def test_sign_is_zero_at_zero():
    assert sign(2.5) == 1
    assert sign(0.0) == 0
    assert sign(-3.0) == -1
    assert sign_vector(np.array([2.0, 0.0, -0.5])).tolist() == [1.0, 0.0, -1.0]


def test_stepsizes_for_each_regime():
    alpha, beta = stepsizes_at(StepsizeSchedule.const_const(100, 0.5), 17)
    assert alpha == pytest.approx(0.1)
    assert beta == pytest.approx((math.log(100) - 2 * math.log(math.log(100))) / 100)
    assert beta == pytest.approx(0.0155, abs=1e-4)

    assert stepsizes_at(StepsizeSchedule.decay_decay(), 0) == (1.0, 1.0)
    assert stepsizes_at(StepsizeSchedule.const_decay(400), 3) == pytest.approx((0.05, 0.25))
    assert stepsizes_at(StepsizeSchedule.power_law(0.9, 1.0), 9) == pytest.approx((10**-0.9, 0.1))


def test_stepsize_schedule_guards():
    with pytest.raises(InvalidParameterError):
        StepsizeSchedule.const_const(2, 0.5)
    with pytest.raises(InvalidParameterError):
        stepsizes_at(StepsizeSchedule.const_decay(10), 11)
    with pytest.raises(InvalidParameterError):
        stepsizes_at(StepsizeSchedule.custom(lambda t: 2.0, lambda t: 0.5), 0)


def test_stepsize_arrays_cover_zero_to_n():
    alphas, betas = stepsize_arrays(StepsizeSchedule.decay_decay(), 3)
    assert alphas == pytest.approx([1.0, 1 / math.sqrt(2), 1 / math.sqrt(3), 0.5])
    assert betas == pytest.approx([1.0, 0.5, 1 / 3, 0.25])


def test_check_stepsize_assumption():
    assert check_stepsize_assumption(0.9, 0.8)
    assert not check_stepsize_assumption(1.0, 1.0)
    assert not check_stepsize_assumption(0.5, 0.6)


def test_tail_weights_and_start():
    assert tail_weights([0.3] * 4) == pytest.approx([0.25] * 4)
    assert tail_weights([0.7]) == pytest.approx([1.0])
    assert tail_weights([1.0, 1 / math.sqrt(2)]) == pytest.approx([0.585786, 0.414213], abs=1e-6)
    assert tail_start(100, 0.5) == 50
    assert tail_start(7, 0.5) == 4
    with pytest.raises(InvalidParameterError):
        tail_weights([])


def test_stream_bank_ids_are_disjoint_across_trials():
    first, second = StreamBank(5, 0, 7), StreamBank(5, 1, 7)
    ids = {first.stream_id(slot) for slot in range(9)} | {second.stream_id(slot) for slot in range(9)}
    assert len(ids) == 18
    assert second.stream_id(0) == 9


def test_random_streams_are_reproducible_and_independent():
    a = StreamBank(42, 0, 3).worker(1).standard_normal(5)
    b = StreamBank(42, 0, 3).worker(1).standard_normal(5)
    c = StreamBank(42, 0, 3).worker(2).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(InvalidParameterError):
        RandomSource(-1, 0)
