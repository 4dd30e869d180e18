from __future__ import annotations

import numpy as np
import pytest

from robustmean.errors import DimensionMismatchError, InvalidParameterError
from robustmean.services.adversary import AttackKind, AttackSpec
from robustmean.services.aggregators import (
    AggregatorSpec,
    BaselineState,
    BufferBank,
    Rule,
    Wrapper,
    baseline_step,
    aggregate,
    bucket_partition,
    bucketing_aggregate,
    buffered_step,
    coordinate_median,
    krum,
    l2_gradient,
    momentum_update,
    rage_approx,
    run_baseline,
    trimmed_mean,
    weiszfeld,
)
from robustmean.services.estimator import Mode
from robustmean.services.problem import BoxProjection, SensingProblem, StepsizeSchedule, StreamBank


def test_l2_gradient_examples():
    a = np.array([2.0, 0.0, 0.0, 1.0])
    assert np.allclose(l2_gradient(a, np.zeros(4), 24.52), [-49.04, 0.0, 0.0, -24.52])
    assert np.allclose(l2_gradient(np.zeros(4), np.ones(4), 3.0), 0.0)
    mu = np.array([5.47, 7.88, 11.51, 13.58])
    assert np.allclose(l2_gradient(a, mu, a @ mu), 0.0)
    with pytest.raises(DimensionMismatchError):
        l2_gradient(a, np.zeros(3), 1.0)


def test_momentum_update_examples():
    grad, previous = np.array([0.0, 2.0]), np.array([2.0, 0.0])
    assert np.allclose(momentum_update(previous, grad, 0.5), [1.0, 1.0])
    assert np.allclose(momentum_update(previous, grad, 0.0), grad)
    assert np.allclose(momentum_update(previous, grad, 1.0), previous)
    with pytest.raises(InvalidParameterError):
        momentum_update(previous, grad, 1.5)


def test_rule_examples():
    assert np.allclose(coordinate_median([(1, 5), (2, 4), (9, 0)]), [2.0, 4.0])
    assert np.allclose(trimmed_mean([[1.0], [2.0], [100.0]], 1), [2.0])
    z, _ = weiszfeld([(-1.0, 0.0), (1.0, 0.0), (0.0, 0.0)])
    assert np.allclose(z, [0.0, 0.0], atol=1e-8)


def test_krum_picks_the_first_of_the_cluster():
    v, w = np.array([1.0, 1.0]), np.array([100.0, -100.0])
    assert np.array_equal(krum([v, v, v, v, w], 1), v)
    with pytest.raises(InvalidParameterError):
        krum([v, v, v, v], 1)


def test_krum_matches_brute_force_scores():
    rng = np.random.default_rng(0)
    V = rng.normal(size=(9, 3))
    f = 2
    scores = []
    for i in range(9):
        distances = sorted(float(np.sum((V[i] - V[j]) ** 2)) for j in range(9) if j != i)
        scores.append(sum(distances[: 9 - f - 2]))
    assert np.array_equal(krum(list(V), f), V[int(np.argmin(scores))])


@pytest.mark.parametrize("rule", [Rule.CM, Rule.CTM, Rule.RFA])
def test_rules_ignore_input_order(rule):
    rng = np.random.default_rng(1)
    V = rng.normal(size=(7, 4))
    permuted = V[rng.permutation(7)]
    assert np.allclose(aggregate(rule, list(V), 1), aggregate(rule, list(permuted), 1), atol=1e-8)


@pytest.mark.parametrize("rule", list(Rule))
def test_rules_follow_translations(rule):
    rng = np.random.default_rng(2)
    V = rng.normal(size=(7, 3))
    shift = np.array([5.0, -3.0, 0.5])
    assert np.allclose(aggregate(rule, list(V + shift), 1), aggregate(rule, list(V), 1) + shift, atol=1e-6)


@pytest.mark.parametrize("rule", list(Rule))
def test_unanimous_inputs_aggregate_to_themselves(rule):
    v = np.array([0.3, -1.2, 4.0])
    assert np.allclose(aggregate(rule, [v] * 7, 1), v)


def test_weiszfeld_objective_never_increases():
    rng = np.random.default_rng(3)
    _, history = weiszfeld(list(rng.normal(size=(11, 3)) * [1.0, 5.0, 0.1]))
    assert all(later <= earlier + 1e-12 for earlier, later in zip(history, history[1:]))


def test_rage_approx_drops_the_outlier():
    vectors = [np.zeros(2), np.zeros(2), np.ones(2) * 0.1, np.array([50.0, 50.0])]
    assert np.allclose(rage_approx(vectors, 1), [0.1 / 3, 0.1 / 3])


def test_aggregate_rejects_empty_input():
    with pytest.raises(InvalidParameterError):
        aggregate(Rule.CM, [], 0)


# --- bucketing -------------------------------------------------------------------


def test_bucket_partition_sizes():
    buckets = bucket_partition(7, 3, np.random.default_rng(0))
    assert [len(b) for b in buckets] == [3, 3, 1]
    assert sorted(np.concatenate(buckets).tolist()) == list(range(7))


def test_bucketing_with_one_bucket_is_the_mean():
    rng = np.random.default_rng(4)
    V = rng.normal(size=(7, 2))
    assert np.allclose(bucketing_aggregate(Rule.CM, V, 7, 0, rng), V.mean(axis=0))


def test_bucketing_with_singletons_matches_the_rule():
    rng = np.random.default_rng(5)
    V = rng.normal(size=(7, 2))
    assert np.allclose(bucketing_aggregate(Rule.CM, V, 1, 0, rng), coordinate_median(list(V)))


# --- buffers ---------------------------------------------------------------------


def _buffered_state(N: int, s: int, d: int = 2) -> BaselineState:
    return BaselineState(x=np.zeros(d), y=np.zeros(N), momenta=np.zeros((N, d)), buffers=BufferBank(N, s))


def test_buffer_trigger_trace():
    spec = AggregatorSpec(Rule.CM, Wrapper.BUFFERED, s=3)
    state = _buffered_state(7, 3)
    assert [list(state.buffers.members(b)) for b in range(3)] == [[0, 1, 2], [3, 4, 5], [6]]

    assert buffered_step(state, [(0, np.ones(2)), (3, np.ones(2))], spec, 0.5) is None
    assert state.emits == 0
    emitted = buffered_step(state, [(6, np.ones(2))], spec, 0.5)
    assert emitted is not None
    assert np.allclose(state.x, [-0.5, -0.5])
    assert state.emits == 1
    assert not state.buffers.ready()


def test_single_buffer_emits_on_every_report():
    spec = AggregatorSpec(Rule.CM, Wrapper.BUFFERED, s=1)
    state = _buffered_state(1, 1)
    for k in range(3):
        assert buffered_step(state, [(0, np.ones(2))], spec, 1.0) is not None
    assert state.emits == 3


def test_latest_report_per_worker_wins():
    bank = BufferBank(7, 3)
    bank.submit(0, np.array([10.0]))
    bank.submit(0, np.array([2.0]))
    bank.submit(1, np.array([4.0]))
    bank.submit(3, np.array([0.0]))
    bank.submit(6, np.array([1.0]))
    assert bank.ready()
    assert np.allclose(bank.means(), [[3.0], [0.0], [1.0]])


def test_buffered_step_needs_buffers():
    state = BaselineState(x=np.zeros(2), y=np.zeros(7), momenta=np.zeros((7, 2)))
    with pytest.raises(InvalidParameterError):
        buffered_step(state, [], AggregatorSpec(Rule.CM), 0.1)


# --- specs -----------------------------------------------------------------------


def test_spec_descriptor_and_default_momentum():
    spec = AggregatorSpec.with_default_momentum(Rule.CM, Mode.SYNC, Wrapper.BUCKETING, s=3, budget=1)
    assert spec.descriptor == "cm+bucketing(3)"
    assert spec.gamma_at(0) == pytest.approx(1.0)
    assert spec.gamma_at(9) == pytest.approx(10**-0.9)
    plain = AggregatorSpec.with_default_momentum(Rule.KRUM, Mode.ASYNC)
    assert plain.descriptor == "krum"
    assert plain.gamma_at(5) == 0.0


def test_spec_validation_against_worker_count():
    AggregatorSpec(Rule.KRUM, budget=1).validate_for(7, Mode.SYNC)
    with pytest.raises(InvalidParameterError):
        AggregatorSpec(Rule.KRUM, Wrapper.BUCKETING, s=3, budget=1).validate_for(7, Mode.SYNC)
    with pytest.raises(InvalidParameterError):
        AggregatorSpec(Rule.CM, Wrapper.BUCKETING, s=3).validate_for(7, Mode.ASYNC)
    with pytest.raises(InvalidParameterError):
        AggregatorSpec(Rule.CM, Wrapper.BUFFERED, s=3).validate_for(7, Mode.SYNC)
    with pytest.raises(InvalidParameterError):
        AggregatorSpec(Rule.CM, s=0)


# --- runs ------------------------------------------------------------------------


def _common_row_problem() -> SensingProblem:
    return SensingProblem(A=np.tile([1.0, 0.5], (7, 1)), mu_true=[2.0, 4.0])


@pytest.mark.parametrize("rule", list(Rule))
def test_baseline_converges_when_workers_agree(rule):
    problem = _common_row_problem()
    sched = StepsizeSchedule.custom(lambda t: 0.1, lambda t: 1.0 / (t + 1))
    trajectory = run_baseline(
        problem,
        AggregatorSpec(rule, budget=1),
        Mode.SYNC,
        sched,
        BoxProjection.cube(0.0, 10.0, 2),
        n=300,
    )
    assert trajectory.f_x[-1] < 1e-6
    assert trajectory.method == rule.value


def test_bucketed_baseline_converges_when_workers_agree():
    spec = AggregatorSpec.with_default_momentum(Rule.CTM, Mode.SYNC, Wrapper.BUCKETING, s=3, budget=0)
    sched = StepsizeSchedule.custom(lambda t: 0.1, lambda t: 1.0 / (t + 1))
    trajectory = run_baseline(
        _common_row_problem(), spec, Mode.SYNC, sched, BoxProjection.cube(0.0, 10.0, 2), n=400
    )
    assert trajectory.f_x[-1] < 1e-4


def test_baseline_runs_are_reproducible(attacked_problem, box):
    spec = AggregatorSpec(Rule.CM, Wrapper.BUFFERED, s=3, budget=1)
    attack = AttackSpec(AttackKind.BARUCH)
    sched = StepsizeSchedule.power_law(0.5, 1.0)
    first = run_baseline(attacked_problem, spec, Mode.ASYNC, sched, box, attack, n=400, seed=3)
    second = run_baseline(attacked_problem, spec, Mode.ASYNC, sched, box, attack, n=400, seed=3)
    assert np.array_equal(first.x_tail, second.x_tail)
    assert first.attack == "baruch"
    assert first.method == "cm+buffered(3)"


def test_async_step_refreshes_every_worker_momentum(honest_problem, box):
    spec = AggregatorSpec(Rule.CM, budget=1)
    state = BaselineState.initial(honest_problem, box, spec)
    streams = StreamBank(0, 0, honest_problem.N)
    A = honest_problem.A
    for t in range(6):
        x_n, y_n = state.x.copy(), state.y.copy()
        baseline_step(state, honest_problem, spec, Mode.ASYNC, box, None, streams, 0.05, 1.0 / (t + 1))
        np.testing.assert_allclose(state.momenta, A * (A @ x_n - y_n)[:, None])
    assert state.t == 6


def test_async_step_corrupts_only_the_attacked_rows(attacked_problem, box):
    spec = AggregatorSpec(Rule.CM, budget=1)
    state = BaselineState.initial(attacked_problem, box, spec)
    streams = StreamBank(0, 0, attacked_problem.N)
    A = attacked_problem.A
    honest = attacked_problem.honest_mask
    for t in range(4):
        x_n, y_n = state.x.copy(), state.y.copy()
        baseline_step(
            state, attacked_problem, spec, Mode.ASYNC, box, AttackSpec(AttackKind.BARUCH), streams, 0.05, 1.0 / (t + 1)
        )
        expected = A * (A @ x_n - y_n)[:, None]
        np.testing.assert_allclose(state.momenta[honest], expected[honest])
    assert not np.allclose(state.momenta[6], (A * (A @ x_n - y_n)[:, None])[6])
