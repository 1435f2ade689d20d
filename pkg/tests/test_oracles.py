"""
Oracoli di sicurezza e di coerenza su task set casuali
"""

import math
import os
import time
from fractions import Fraction

import pytest

from conftest import hi, lo
from core.errors import InfeasibleLoModeError, ModelError
from core.model import compute_utilizations, validate_task_set
from core.schedulability import (
    assignment_within_bound,
    direct_utilization_bound,
    feasibility_test,
    lo_utilization,
    per_switch_reduction_bound,
    prepare_context,
    validate_service_assignment,
)
from core.simulator import replay_check, simulate
from core.tuning import DroppingOffTuning, ModeState, make_strategy
from services.experiments import ExperimentConfig, run_experiment
from services.tracegen import (
    GeneratorParams,
    derive_seed,
    enumerate_overrun_traces,
    generate_task_set,
    generate_trace,
    make_rng,
)
from storage.file_manager import dumps_canonical

SMALL_PERIODS = [4, 6, 8, 12]


def random_small_set(rng, max_hi=3, max_lo=3):
    """Set con periodi armonici piccoli; None se non valido o non fattibile"""
    tasks = []
    for index in range(int(rng.integers(1, max_hi + 1))):
        period = int(rng.choice(SMALL_PERIODS))
        wcet_lo = int(rng.integers(1, period // 2 + 1))
        wcet_hi = int(rng.integers(wcet_lo + 1, period + 1))
        tasks.append(hi(f"h{index}", period, wcet_lo, wcet_hi))
    for index in range(int(rng.integers(1, max_lo + 1))):
        period = int(rng.choice(SMALL_PERIODS))
        tasks.append(lo(f"l{index}", period, int(rng.integers(1, period // 2 + 1))))

    task_set = compute_utilizations(tasks)
    if validate_task_set(task_set):
        return None
    try:
        ctx = prepare_context(task_set)
    except (InfeasibleLoModeError, ModelError):
        return None
    if not feasibility_test(ctx, task_set):
        return None
    return task_set, ctx


def draw_small_sets(seed, count, attempts=200000):
    rng = make_rng(seed)
    sets = []
    for _ in range(attempts):
        drawn = random_small_set(rng)
        if drawn is not None:
            sets.append(drawn)
            if len(sets) == count:
                return sets
    raise AssertionError(f"solo {len(sets)} set fattibili su {attempts} tentativi")


def random_context(rng):
    """Set con 1-5 task HI e 1-5 task LO; None se il modo LO non e' schedulabile"""
    tasks = []
    for index in range(int(rng.integers(1, 6))):
        period = int(rng.integers(10, 101))
        wcet_lo = int(rng.integers(1, max(2, period // 8)))
        tasks.append(hi(f"h{index}", period, wcet_lo, int(rng.integers(wcet_lo + 1, period + 1))))
    for index in range(int(rng.integers(1, 6))):
        period = int(rng.integers(10, 101))
        tasks.append(lo(f"l{index}", period, int(rng.integers(1, max(2, period // 8)))))
    task_set = compute_utilizations(tasks)
    try:
        return task_set, prepare_context(task_set)
    except (InfeasibleLoModeError, ModelError):
        return None


# =================== COERENZA DELLA FORMA CHIUSA ===================

def check_closed_form(seed, cases):
    rng = make_rng(seed)
    checked = 0
    while checked < cases:
        drawn = random_context(rng)
        if drawn is None:
            continue
        task_set, ctx = drawn
        hi_ids = [task.id for task in task_set.hi_tasks]
        order = [hi_ids[i] for i in rng.permutation(len(hi_ids))]
        order = order[: int(rng.integers(1, len(order) + 1))]

        iterated = task_set.u_lo_lo
        for k, task_id in enumerate(order, start=1):
            if task_id in ctx.compensation_set:
                iterated += per_switch_reduction_bound(ctx, task_set, task_id)
            assert iterated == direct_utilization_bound(ctx, task_set, order[:k])
        shuffled = [order[i] for i in rng.permutation(len(order))]
        assert direct_utilization_bound(ctx, task_set, shuffled) == iterated
        checked += 1


def test_closed_form_consistency():
    check_closed_form(101, 1000)


@pytest.mark.slow
def test_closed_form_consistency_full():
    check_closed_form(102, 10**4)


def test_tuning_states_stay_within_direct_bound():
    rng = make_rng(103)
    checked = 0
    while checked < 300:
        drawn = random_context(rng)
        if drawn is None:
            continue
        task_set, ctx = drawn
        if not feasibility_test(ctx, task_set):
            continue
        hi_ids = [task.id for task in task_set.hi_tasks]
        order = [hi_ids[i] for i in rng.permutation(len(hi_ids))]
        for name in ("uniform", "drop", "static"):
            strategy = make_strategy(name, task_set, ctx)
            state = ModeState.initial(task_set)
            for task_id in order:
                changes = strategy.on_switch(state, task_id)
                state.apply_switch(task_set, task_id, Fraction(0), changes)
                assert assignment_within_bound(ctx, task_set, state.switched_ids, state.z)
        checked += 1


def switch_sequences(seed, cases):
    """Set fattibili con un ordine casuale di overrun di tutti i task HI"""
    rng = make_rng(seed)
    produced = 0
    while produced < cases:
        drawn = random_context(rng)
        if drawn is None or not feasibility_test(drawn[1], drawn[0]):
            continue
        task_set, ctx = drawn
        hi_ids = [task.id for task in task_set.hi_tasks]
        produced += 1
        yield rng, task_set, ctx, [hi_ids[i] for i in rng.permutation(len(hi_ids))]


def shed(rng, task_set, levels, amount):
    """Toglie esattamente `amount` di utilizzo LO, in ordine casuale di task"""
    new = dict(levels)
    lo_tasks = list(task_set.lo_tasks)
    for index in rng.permutation(len(lo_tasks)):
        if amount == 0:
            break
        task = lo_tasks[index]
        take = min(new[task.id] * task.u_lo, amount)
        new[task.id] -= take / task.u_lo
        amount -= take
    assert amount == 0
    return new


@pytest.mark.parametrize("name", ["uniform", "drop"])
def test_strategies_meet_switch_condition_on_random_sequences(name):
    for _, task_set, ctx, order in switch_sequences(104, 300):
        strategy = make_strategy(name, task_set, ctx)
        state = ModeState.initial(task_set)
        for task_id in order:
            previous = dict(state.z)
            state.apply_switch(task_set, task_id, Fraction(0), strategy.on_switch(state, task_id))
            if name == "drop" and strategy.exhausted:
                assert all(level == 0 for level in state.z.values())
            else:
                assert validate_service_assignment(ctx, task_set, previous, state.z, task_id)
            assert strategy.switch_admissible(previous, state, task_id)
            assert assignment_within_bound(ctx, task_set, state.switched_ids, state.z)
        if name == "uniform":
            assert state.u_lo_k == direct_utilization_bound(ctx, task_set, order)


def test_chained_switch_condition_matches_closed_form():
    for rng, task_set, ctx, order in switch_sequences(105, 300):
        levels = {task.id: Fraction(1) for task in task_set.lo_tasks}
        for k, task_id in enumerate(order, start=1):
            needed = max(Fraction(0), -ctx.reduction(task_id))
            tight = shed(rng, task_set, levels, needed)
            assert validate_service_assignment(ctx, task_set, levels, tight, task_id)
            assert lo_utilization(task_set, tight) == direct_utilization_bound(ctx, task_set, order[:k])
            assert assignment_within_bound(ctx, task_set, order[:k], tight)
            if needed > 0:
                loose = shed(rng, task_set, levels, needed / 2)
                assert not validate_service_assignment(ctx, task_set, levels, loose, task_id)
                assert not assignment_within_bound(ctx, task_set, order[:k], loose)
            levels = tight


# =================== SICUREZZA ===================

def check_exhaustive(seed, sets, cap):
    for task_set, ctx in draw_small_sets(seed, sets):
        horizon = 2 * task_set.hyperperiod()
        for trace in enumerate_overrun_traces(task_set, horizon, cap):
            for strategy in ("uniform", "drop"):
                report = simulate(task_set, ctx, trace, strategy)
                assert report.hi_deadline_misses == 0, (task_set.to_dict(), report.first_hi_miss)
                assert report.lo_budget_misses == 0, task_set.to_dict()


def test_exhaustive_safety_small_sets():
    check_exhaustive(201, 10, 100)


@pytest.mark.slow
def test_exhaustive_safety():
    check_exhaustive(202, 200, 2000)


@pytest.mark.slow
def test_randomized_safety_at_experiment_scale():
    config = ExperimentConfig(
        u_bounds=["0.75", "0.8", "0.85", "0.9"],
        sets_per_bound=50,
        horizon=10**6,
        overrun_prob=0.1,
        strategies=["uniform", "drop"],
        master_seed=2024,
        require_schedulable=True,
        jobs=os.cpu_count() or 1,
    )
    result = run_experiment(config)
    assert result.failures == []
    for row in result.summary:
        assert row["hi_deadline_misses"] == 0
        assert row["lo_budget_misses"] == 0
        assert row["bound_violations"] == 0


def test_randomized_safety_on_generated_sets():
    checked = 0
    index = 0
    while checked < 5:
        task_set = generate_task_set(GeneratorParams(u_bound="0.85", seed=derive_seed(301, 0, index, 0)))
        index += 1
        try:
            ctx = prepare_context(task_set)
        except InfeasibleLoModeError:
            continue
        if not feasibility_test(ctx, task_set):
            continue
        trace = generate_trace(task_set, 20000, 0.2, derive_seed(301, 0, index, 1))
        for strategy in ("uniform", "drop", "static"):
            report = simulate(task_set, ctx, trace, strategy)
            assert report.hi_deadline_misses == 0
            assert report.lo_budget_misses == 0
            assert report.bound_violations == 0
        checked += 1


# =================== LIMITI DI DEGRADAZIONE ===================

def check_degradation_bounds(table1, table1_ctx, horizon):
    trace = generate_trace(table1, horizon, 0.1, seed=404)
    report = simulate(table1, table1_ctx, trace, "uniform")
    assert report.hi_deadline_misses == 0
    assert report.bound_violations == 0
    for event in report.mode_switch_events:
        assert event.z_min == event.z_max == 1 - Fraction(event.k, 4)
    for k, histogram in report.per_k_service_samples.items():
        assert all(1 - Fraction(k, 4) <= value <= 1 for value in histogram)
    for k, histogram in report.per_k_suspended_samples.items():
        assert all(1 - Fraction(k, 4) <= value < 1 - Fraction(k - 1, 4) for value in histogram)


def test_degradation_bounds(table1, table1_ctx):
    check_degradation_bounds(table1, table1_ctx, 10**5)


@pytest.mark.slow
def test_degradation_bounds_long_horizon(table1, table1_ctx):
    check_degradation_bounds(table1, table1_ctx, 2 * 10**6)


@pytest.mark.slow
def test_five_hi_tasks_rarely_reach_last_level():
    config = ExperimentConfig(
        u_bounds=["0.85"],
        sets_per_bound=20,
        horizon=10**5,
        overrun_prob=0.1,
        strategies=["uniform"],
        exact_hi_tasks=5,
        master_seed=7,
        require_schedulable=True,
        jobs=os.cpu_count() or 1,
    )
    result = run_experiment(config)
    shares = {row["k"]: row["job_share"] for row in result.degradation}
    assert shares.get(5, 0.0) < sum(shares.get(k, 0.0) for k in (1, 2, 3))


# =================== DETERMINISMO ===================

def check_determinism(seed, cases):
    strategies = ["uniform", "drop", "static", "edfvd"]
    rng = make_rng(seed)
    for case in range(cases):
        task_set, ctx = draw_small_sets([seed, case], 1)[0]
        trace = generate_trace(task_set, 500, float(rng.uniform(0, 0.5)), derive_seed(seed, 0, case, 1))
        strategy = strategies[case % len(strategies)]
        first = simulate(task_set, ctx, trace, strategy)
        assert replay_check(task_set, ctx, trace, strategy, first)
        second = simulate(task_set, ctx, trace, strategy)
        assert dumps_canonical(first.to_dict()) == dumps_canonical(second.to_dict())


def test_determinism():
    check_determinism(501, 10)


@pytest.mark.slow
def test_determinism_full():
    check_determinism(502, 100)


# =================== COMPLESSITA' ===================

def drop_strategy_with(n):
    period = 10**6
    tasks = [hi("h", period, 100000, 200000)]
    tasks += [lo(f"l{index:05d}", period, period // (2 * n)) for index in range(n)]
    task_set = compute_utilizations(tasks)
    return DroppingOffTuning(task_set, prepare_context(task_set)), task_set.u_lo_lo


def best_select_time(n, calls=2000, repeats=5):
    strategy, u_lo_lo = drop_strategy_with(n)
    reductions = [u_lo_lo * Fraction(i, calls + 1) for i in range(1, calls + 1)]
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for needed in reductions:
            strategy.select(needed)
        best = min(best, time.perf_counter() - start)
    return best


def test_drop_selection_is_logarithmic():
    small = best_select_time(100)
    large = best_select_time(10**4)
    assert large / small < 10
