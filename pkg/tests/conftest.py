"""
Fixture condivise: il task set dell'esempio motivazionale e il set di smoke test
"""

import json
from fractions import Fraction

import pytest

from core.model import Criticality, McTask, compute_utilizations
from core.schedulability import prepare_context

TABLE1_DATA = {
    "tasks": [
        {"id": "t1", "period": 40, "criticality": "HI", "wcet_lo": 3, "wcet_hi": 8},
        {"id": "t2", "period": 40, "criticality": "HI", "wcet_lo": 3, "wcet_hi": 8},
        {"id": "t3", "period": 40, "criticality": "HI", "wcet_lo": 3, "wcet_hi": 8},
        {"id": "t4", "period": 40, "criticality": "HI", "wcet_lo": 3, "wcet_hi": 8},
        {"id": "t5", "period": 200, "criticality": "LO", "wcet_lo": 30, "z_mandatory": 0.0},
        {"id": "t6", "period": 300, "criticality": "LO", "wcet_lo": 75},
    ]
}

SMOKE_DATA = {
    "tasks": [
        {"id": "t1", "period": 10, "criticality": "HI", "wcet_lo": 2, "wcet_hi": 4},
        {"id": "t2", "period": 10, "criticality": "LO", "wcet_lo": 4},
    ]
}


def hi(task_id, period, wcet_lo, wcet_hi):
    return McTask(task_id, Fraction(period), Criticality.HI, Fraction(wcet_lo), Fraction(wcet_hi))


def lo(task_id, period, wcet_lo, z_mandatory=0):
    return McTask(task_id, Fraction(period), Criticality.LO, Fraction(wcet_lo), None, Fraction(z_mandatory))


@pytest.fixture
def table1():
    return compute_utilizations(
        [hi("t1", 40, 3, 8), hi("t2", 40, 3, 8), hi("t3", 40, 3, 8), hi("t4", 40, 3, 8),
         lo("t5", 200, 30), lo("t6", 300, 75)],
        name="table1",
    )


@pytest.fixture
def table1_ctx(table1):
    return prepare_context(table1)


@pytest.fixture
def smoke():
    return compute_utilizations([hi("t1", 10, 2, 4), lo("t2", 10, 4)], name="smoke")


@pytest.fixture
def smoke_ctx(smoke):
    return prepare_context(smoke)


@pytest.fixture
def table1_file(tmp_path):
    path = tmp_path / "table1.json"
    path.write_text(json.dumps(TABLE1_DATA))
    return str(path)


@pytest.fixture
def smoke_file(tmp_path):
    path = tmp_path / "smoke.json"
    path.write_text(json.dumps(SMOKE_DATA))
    return str(path)
