from fractions import Fraction

import pytest

from conftest import hi, lo
from core.errors import AdmissibilityError, InfeasibleTuningError, NoLoTasksError, ValidationError
from core.model import compute_utilizations
from core.schedulability import direct_utilization_bound, lo_utilization, prepare_context, validate_service_assignment
from core.tuning import (
    ClassicEdfVd,
    DroppingOffTuning,
    ModeState,
    StaticDegradation,
    UniformTuning,
    build_drop_table,
    dropping_off_next,
    make_strategy,
    required_reduction,
    static_degradation_level,
    uniform_level_envelope,
    uniform_levels_table,
    uniform_next_level,
)

HI_IDS = ["t1", "t2", "t3", "t4"]


def test_uniform_first_switch(table1, table1_ctx):
    assert uniform_next_level(table1_ctx, table1, Fraction(1), "t1") == Fraction(3, 4)


def test_uniform_last_switch_reaches_zero(table1, table1_ctx):
    assert uniform_next_level(table1_ctx, table1, Fraction(1, 4), "t4") == 0


def test_uniform_margin_task_keeps_level(smoke, smoke_ctx):
    assert uniform_next_level(smoke_ctx, smoke, Fraction(1), "t1") == 1


def test_uniform_requires_lo_tasks():
    task_set = compute_utilizations([hi("h", 10, 3, 5)])
    with pytest.raises(NoLoTasksError):
        uniform_next_level(prepare_context(task_set), task_set, Fraction(1), "h")


def test_uniform_levels_table(table1, table1_ctx):
    rows = uniform_levels_table(table1_ctx, table1, HI_IDS)
    assert [row["z"] for row in rows] == [Fraction(3, 4), Fraction(1, 2), Fraction(1, 4), Fraction(0)]
    assert [row["budgets"]["t5"] for row in rows] == [Fraction(45, 2), 15, Fraction(15, 2), 0]
    assert [row["budgets"]["t6"] for row in rows] == [Fraction(225, 4), Fraction(75, 2), Fraction(75, 4), 0]
    assert [row["u_lo_k"] for row in rows] == [Fraction(3, 10), Fraction(1, 5), Fraction(1, 10), 0]
    for k, row in enumerate(rows, start=1):
        assert row["z"] == 1 - Fraction(k, 4)


def test_uniform_levels_pass_switch_condition(table1, table1_ctx):
    prev = {"t5": Fraction(1), "t6": Fraction(1)}
    for row in uniform_levels_table(table1_ctx, table1, HI_IDS):
        new = {"t5": row["z"], "t6": row["z"]}
        assert validate_service_assignment(table1_ctx, table1, prev, new, row["task"])
        prev = new


def test_static_level(table1, table1_ctx, smoke, smoke_ctx):
    assert static_degradation_level(table1_ctx, table1) == 0
    assert static_degradation_level(smoke_ctx, smoke) == 1


def test_static_level_matches_uniform_after_all_compensation_tasks(table1, table1_ctx):
    level = Fraction(1)
    for task_id in sorted(table1_ctx.compensation_set):
        level = uniform_next_level(table1_ctx, table1, level, task_id)
    assert level == static_degradation_level(table1_ctx, table1)


def test_two_overruns_give_half_level(table1, table1_ctx):
    level = uniform_next_level(table1_ctx, table1, Fraction(1), "t1")
    assert uniform_next_level(table1_ctx, table1, level, "t2") == Fraction(1, 2)


def test_drop_table_order(table1):
    assert build_drop_table(table1) == ["t5", "t6"]
    tied = compute_utilizations([hi("h", 10, 1, 2), lo("b", 10, 1), lo("a", 20, 2), lo("c", 10, 3)])
    assert build_drop_table(tied) == ["a", "b", "c"]


def test_dropping_off_first_switch(table1, table1_ctx):
    state = ModeState.initial(table1)
    levels = dropping_off_next(table1_ctx, table1, state, "t1", build_drop_table(table1))
    assert levels == {"t5": 0, "t6": 1}


def test_dropping_off_margin_task_changes_nothing(smoke, smoke_ctx):
    state = ModeState.initial(smoke)
    assert dropping_off_next(smoke_ctx, smoke, state, "t1", build_drop_table(smoke)) == {"t2": 1}
    assert DroppingOffTuning(smoke, smoke_ctx).on_switch(state, "t1") == {}


def test_dropping_off_sequence_on_table1(table1, table1_ctx):
    strategy = DroppingOffTuning(table1, table1_ctx)
    state = ModeState.initial(table1)
    utilizations = []
    for task_id in HI_IDS:
        changes = strategy.on_switch(state, task_id)
        state.apply_switch(table1, task_id, Fraction(0), changes)
        utilizations.append(state.u_lo_k)
        assert state.u_lo_k <= direct_utilization_bound(table1_ctx, table1, state.switched_ids)
    assert utilizations == [Fraction(1, 4), 0, 0, 0]
    assert state.z == {"t5": 0, "t6": 0}

    strategy.reset()
    state.reset(table1)
    assert strategy.on_switch(state, "t3") == {"t5": 0}


def test_dropping_off_respects_mandatory_floor():
    task_set = compute_utilizations([hi("h", 10, 2, 6), lo("a", 10, 2, Fraction(1, 2)), lo("b", 10, 3)])
    ctx = prepare_context(task_set)
    state = ModeState.initial(task_set)
    assert dropping_off_next(ctx, task_set, state, "h", build_drop_table(task_set)) == {
        "a": Fraction(1, 2), "b": 0
    }
    assert DroppingOffTuning(task_set, ctx).on_switch(state, "h") == {"a": Fraction(1, 2), "b": 0}


def test_dropping_off_cannot_cover_reduction(table1):
    locked = table1.with_mandatory({"t5": 1, "t6": 1})
    ctx = prepare_context(locked)
    state = ModeState.initial(locked)
    with pytest.raises(InfeasibleTuningError):
        dropping_off_next(ctx, locked, state, "t1", build_drop_table(locked))
    with pytest.raises(InfeasibleTuningError):
        DroppingOffTuning(locked, ctx).on_switch(state, "t1")


def test_drop_selection_is_a_prefix_range(table1, table1_ctx):
    strategy = DroppingOffTuning(table1, table1_ctx)
    assert strategy.select(Fraction(0)) == (0, 0)
    assert strategy.select(Fraction(1, 10)) == (0, 1)
    assert strategy.select(Fraction(1, 5)) == (0, 2)
    strategy.pointer = 1
    assert strategy.select(Fraction(1, 10)) == (1, 2)
    with pytest.raises(InfeasibleTuningError):
        strategy.select(Fraction(3, 10))


def test_static_strategy_acts_once(table1, table1_ctx):
    strategy = StaticDegradation(table1, table1_ctx)
    state = ModeState.initial(table1)
    changes = strategy.on_switch(state, "t1")
    assert changes == {"t5": 0, "t6": 0}
    state.apply_switch(table1, "t1", Fraction(0), changes)
    assert strategy.on_switch(state, "t2") == {}


def test_uniform_strategy_changes_only_levels_that_move(table1, table1_ctx):
    strategy = UniformTuning(table1, table1_ctx)
    state = ModeState.initial(table1)
    assert strategy.on_switch(state, "t1") == {"t5": Fraction(3, 4), "t6": Fraction(3, 4)}


def test_classic_strategy_drops_everything(table1):
    strategy = ClassicEdfVd(table1, None)
    assert strategy.global_trigger
    assert strategy.on_switch(ModeState.initial(table1), "t1") == {"t5": 0, "t6": 0}


def test_mode_state_bookkeeping(table1):
    state = ModeState.initial(table1)
    assert state.k == 0 and state.u_lo_k == Fraction(2, 5)
    state.apply_switch(table1, "t1", Fraction(3), {"t5": Fraction(1, 2)})
    assert state.k == 1
    assert state.u_lo_k == Fraction(1, 2) * Fraction(3, 20) + Fraction(1, 4)
    with pytest.raises(AdmissibilityError):
        state.apply_switch(table1, "t1", Fraction(4), {})
    with pytest.raises(AdmissibilityError):
        state.apply_switch(table1, "t2", Fraction(4), {"t5": Fraction(3, 4)})
    state.reset(table1)
    assert state.k == 0 and state.z == {"t5": 1, "t6": 1}


def test_make_strategy(table1, table1_ctx):
    assert isinstance(make_strategy("uniform", table1, table1_ctx), UniformTuning)
    assert isinstance(make_strategy("edfvd", table1, None), ClassicEdfVd)
    with pytest.raises(ValidationError):
        make_strategy("fastest", table1, table1_ctx)
    with pytest.raises(ValidationError):
        make_strategy("drop", table1, None)
    assert make_strategy("drop", table1, table1_ctx) is not make_strategy("drop", table1, table1_ctx)


def five_light_lo_tasks():
    tasks = [hi("h1", 100, 15, 35), hi("h2", 100, 15, 35)]
    tasks += [lo(f"l{index}", 100, 8) for index in range(1, 6)]
    task_set = compute_utilizations(tasks)
    return task_set, prepare_context(task_set)


def floored_set():
    task_set = compute_utilizations([
        hi("h1", 20, 2, 7), hi("h2", 20, 2, 7), lo("a", 10, 2, Fraction(1, 2)), lo("b", 10, 3),
    ])
    return task_set, prepare_context(task_set)


def test_required_reduction(table1_ctx, smoke_ctx):
    assert required_reduction(table1_ctx, "t1") == Fraction(1, 10)
    assert required_reduction(smoke_ctx, "t1") == 0
    with pytest.raises(ValidationError):
        required_reduction(table1_ctx, "t5")


def test_drop_sheds_full_reduction_at_every_switch():
    task_set, ctx = five_light_lo_tasks()
    assert ctx.x == Fraction(1, 2) and ctx.phi["h1"] == Fraction(-1, 20)
    strategy = DroppingOffTuning(task_set, ctx)
    state = ModeState.initial(task_set)
    utilizations = []
    for task_id in ("h1", "h2"):
        previous = dict(state.z)
        changes = strategy.on_switch(state, task_id)
        state.apply_switch(task_set, task_id, Fraction(0), changes)
        assert validate_service_assignment(ctx, task_set, previous, state.z, task_id)
        assert strategy.switch_admissible(previous, state, task_id)
        utilizations.append(state.u_lo_k)
    # 6/25 - 1/10 = 7/50 e' il massimo ammesso dopo il secondo switch
    assert utilizations == [Fraction(6, 25), Fraction(2, 25)]
    assert state.z == {"l1": 0, "l2": 0, "l3": 0, "l4": 0, "l5": 1}


def test_dropping_off_next_sheds_full_reduction():
    task_set, ctx = five_light_lo_tasks()
    table = build_drop_table(task_set)
    state = ModeState.initial(task_set)
    for task_id in ("h1", "h2"):
        levels = dropping_off_next(ctx, task_set, state, task_id, table)
        assert validate_service_assignment(ctx, task_set, state.z, levels, task_id)
        changes = {key: value for key, value in levels.items() if value != state.z[key]}
        state.apply_switch(task_set, task_id, Fraction(0), changes)
    assert state.u_lo_k == Fraction(2, 25)


def test_drop_exhausted_table_falls_back_to_floor_state(table1, table1_ctx):
    strategy = DroppingOffTuning(table1, table1_ctx)
    state = ModeState.initial(table1)
    for task_id in ("t1", "t2"):
        previous = dict(state.z)
        state.apply_switch(table1, task_id, Fraction(0), strategy.on_switch(state, task_id))
        assert not strategy.exhausted
        assert validate_service_assignment(table1_ctx, table1, previous, state.z, task_id)

    previous = dict(state.z)
    state.apply_switch(table1, "t3", Fraction(0), strategy.on_switch(state, "t3"))
    assert strategy.exhausted
    assert not validate_service_assignment(table1_ctx, table1, previous, state.z, "t3")
    assert strategy.switch_admissible(previous, state, "t3")
    assert dropping_off_next(table1_ctx, table1, state, "t4", build_drop_table(table1)) == {"t5": 0, "t6": 0}

    strategy.reset()
    assert not strategy.exhausted


def test_uniform_sheds_only_above_mandatory_floor():
    task_set, ctx = floored_set()
    assert ctx.phi["h1"] == Fraction(-1, 10)
    strategy = UniformTuning(task_set, ctx)
    state = ModeState.initial(task_set)
    expected = [
        ({"a": Fraction(19, 24), "b": Fraction(7, 12)}, Fraction(1, 3)),
        ({"a": Fraction(7, 12), "b": Fraction(1, 6)}, Fraction(1, 6)),
    ]
    for task_id, (levels, u_lo_k) in zip(("h1", "h2"), expected):
        previous = dict(state.z)
        state.apply_switch(task_set, task_id, Fraction(0), strategy.on_switch(state, task_id))
        assert state.z == levels and state.u_lo_k == u_lo_k
        assert validate_service_assignment(ctx, task_set, previous, state.z, task_id)


def test_uniform_levels_table_with_mandatory_floor():
    task_set, ctx = floored_set()
    rows = uniform_levels_table(ctx, task_set, ["h1", "h2"])
    assert [row["z"] for row in rows] == [Fraction(7, 12), Fraction(1, 6)]
    assert [row["u_lo_k"] for row in rows] == [Fraction(1, 3), Fraction(1, 6)]
    assert rows[1]["budgets"] == {"a": Fraction(7, 6), "b": Fraction(1, 2)}


def test_static_level_with_mandatory_floor():
    task_set, ctx = floored_set()
    assert static_degradation_level(ctx, task_set) == Fraction(1, 6)
    changes = StaticDegradation(task_set, ctx).on_switch(ModeState.initial(task_set), "h1")
    assert changes == {"a": Fraction(7, 12), "b": Fraction(1, 6)}
    assert lo_utilization(task_set, changes) == direct_utilization_bound(ctx, task_set, ["h1", "h2"])


def test_uniform_level_envelope(table1, table1_ctx):
    lower, upper = uniform_level_envelope(table1_ctx, table1)
    assert lower == upper == [1 - Fraction(k, 4) for k in range(5)]
