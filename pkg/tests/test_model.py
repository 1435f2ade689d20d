from fractions import Fraction

import pytest

from conftest import TABLE1_DATA, hi, lo
from core.errors import ValidationError
from core.model import (
    compute_utilizations,
    format_rational,
    parse_rational,
    require_valid,
    task_set_from_dict,
    validate_task_set,
)


def codes(report):
    return {entry["code"] for entry in report}


def test_table1_aggregates(table1):
    assert table1.u_lo_lo == Fraction(2, 5)
    assert table1.u_hi_lo == Fraction(3, 10)
    assert table1.u_hi_hi == Fraction(4, 5)
    assert table1.u_lo_man == 0


def test_full_utilization_lo_task():
    task_set = compute_utilizations([lo("a", 10, 10)])
    assert task_set.u_lo_lo == 1
    assert task_set.u_hi_lo == 0
    assert task_set.u_hi_hi == 0


def test_smoke_aggregates(smoke):
    assert (smoke.u_lo_lo, smoke.u_hi_lo, smoke.u_hi_hi) == (Fraction(2, 5), Fraction(1, 5), Fraction(2, 5))


def test_aggregates_are_permutation_invariant(table1):
    shuffled = compute_utilizations(reversed(table1.tasks))
    assert (shuffled.u_lo_lo, shuffled.u_hi_lo, shuffled.u_hi_hi) == (table1.u_lo_lo, table1.u_hi_lo, table1.u_hi_hi)


def test_table1_is_valid(table1):
    assert validate_task_set(table1) == []
    assert require_valid(table1) is table1


def test_equal_wcets_on_hi_task_is_reported():
    report = validate_task_set(compute_utilizations([hi("h", 10, 4, 4), lo("l", 10, 1)]))
    assert "wcet_order" in codes(report)
    assert any("C^LO < C^HI required" in entry["message"] for entry in report)


def test_mandatory_level_out_of_range_is_reported():
    report = validate_task_set(compute_utilizations([hi("h", 10, 1, 2), lo("l", 10, 1, Fraction(3, 2))]))
    assert "z_mandatory_range" in codes(report)
    assert any("z^man ∈ [0,1]" in entry["message"] for entry in report)


def test_other_invariants_are_reported():
    report = validate_task_set(compute_utilizations([
        hi("h", 10, 2, 12),
        lo("l", 10, 11),
        hi("m", 10, 0, 3),
    ]))
    assert {"wcet_hi_le_period", "wcet_lo_le_period", "wcet_lo_positive"} <= codes(report)


def test_duplicate_ids_rejected():
    with pytest.raises(ValidationError) as excinfo:
        compute_utilizations([lo("a", 10, 1), lo("a", 20, 1)])
    assert codes(excinfo.value.violations) == {"duplicate_id"}


def test_empty_set_rejected():
    with pytest.raises(ValidationError):
        compute_utilizations([])


def test_require_valid_raises_with_violations():
    with pytest.raises(ValidationError) as excinfo:
        require_valid(compute_utilizations([hi("h", 10, 4, 4)]))
    assert "wcet_order" in codes(excinfo.value.violations)


@pytest.mark.parametrize("raw, expected", [
    (3, Fraction(3)),
    ("3/10", Fraction(3, 10)),
    ("22.5", Fraction(45, 2)),
    (0.1, Fraction(1, 10)),
    (Fraction(1, 3), Fraction(1, 3)),
])
def test_parse_rational(raw, expected):
    assert parse_rational(raw) == expected


@pytest.mark.parametrize("raw", [True, "1/-2", "abc", "1/0", None, float("nan")])
def test_parse_rational_rejects(raw):
    with pytest.raises(ValidationError):
        parse_rational(raw)


def test_format_rational():
    assert format_rational(Fraction(4, 2)) == 2
    assert format_rational(Fraction(45, 2)) == "45/2"


def test_task_set_from_json_form(table1):
    loaded = task_set_from_dict(TABLE1_DATA, name="table1")
    assert loaded == table1
    assert loaded.task("t5").z_mandatory == 0


def test_task_set_from_dict_rejects_bad_input():
    with pytest.raises(ValidationError):
        task_set_from_dict({"tasks": [{"id": "a", "period": 10, "criticality": "MID", "wcet_lo": 1}]})
    with pytest.raises(ValidationError):
        task_set_from_dict({"tasks": [{"id": "a", "period": 10}]})
    with pytest.raises(ValidationError):
        task_set_from_dict({"jobs": []})


def test_fingerprint_tracks_content(table1, smoke):
    assert table1.fingerprint() == task_set_from_dict(TABLE1_DATA).fingerprint()
    assert table1.fingerprint() != smoke.fingerprint()


def test_hyperperiod(table1):
    assert table1.hyperperiod() == 600
    assert compute_utilizations([lo("a", Fraction(3, 2), 1), lo("b", 2, 1)]).hyperperiod() == 6


def test_with_mandatory(table1):
    updated = table1.with_mandatory({"t5": "1/2"})
    assert updated.task("t5").z_mandatory == Fraction(1, 2)
    assert updated.u_lo_man == Fraction(3, 40)
    assert table1.u_lo_man == 0

    with pytest.raises(ValidationError):
        table1.with_mandatory({"t1": "1/2"})
    with pytest.raises(ValidationError):
        table1.with_mandatory({"zz": "1/2"})


def test_unknown_task_lookup(table1):
    with pytest.raises(ValidationError):
        table1.task("zz")
