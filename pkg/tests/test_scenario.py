import math

import pytest
from hypothesis import given, strategies as st

from fixscreen import DefectSpec, SweepPlan, case_count, default_scenario_grid, default_sweep_plan
from fixscreen.scenario import CRACK, LOOSENING, Scenario


def test_default_plan_shape():
    plan = default_sweep_plan(8)
    assert len(plan.frequencies) == 300
    assert plan.frequencies[0] == 1000.0 and plan.frequencies[-1] == 300000.0
    assert plan.shape == (64, 300)


def test_desk_stride():
    plan = default_sweep_plan(8, stride=10)
    assert plan.frequencies == tuple(10000.0 * k for k in range(1, 31))


@given(stride=st.integers(1, 300))
def test_stride_ends_on_last_frequency(stride):
    plan = default_sweep_plan(8, stride)
    assert plan.frequencies[-1] == 300000.0
    assert len(plan.frequencies) == math.ceil(300 / stride)


def test_grid_counts():
    grid = default_scenario_grid()
    assert len(grid) == 37
    assert sum(s.label == LOOSENING for s in grid) == 24
    assert sum(s.label == CRACK for s in grid) == 12
    assert grid[0].defect is None
    assert [s.config_id for s in grid] == list(range(37))


def test_grid_ordering_is_stable():
    grid = default_scenario_grid()
    assert grid[1].defect == DefectSpec.loosening(math.pi, 0.25e-3, 0.25)
    assert grid[25].defect == DefectSpec.crack(math.pi / 2, 0.5e-3)
    assert grid[36].defect == DefectSpec.crack(math.pi, 2e-3)
    assert default_scenario_grid() == grid


def test_case_counts():
    grid = default_scenario_grid()
    assert case_count(grid, default_sweep_plan()) == 88_800
    assert case_count(grid, default_sweep_plan(stride=10)) == 8_880
    assert case_count([Scenario(0, None)], SweepPlan([1e3], [0], [0, 1], 2)) == 1


@pytest.mark.parametrize("bad", [
    dict(frequencies=[], actuators=[0], receivers=[0]),
    dict(frequencies=[2e3, 1e3], actuators=[0], receivers=[0]),
    dict(frequencies=[-1.0], actuators=[0], receivers=[0]),
    dict(frequencies=[1e3], actuators=[0, 0], receivers=[0]),
    dict(frequencies=[1e3], actuators=[9], receivers=[0]),
])
def test_plan_validation(bad):
    with pytest.raises(ValueError):
        SweepPlan(sensor_count=8, **bad)


def test_channel_numbering():
    plan = default_sweep_plan(8, 10)
    assert plan.channel(plan.row(3, 5)) == (3, 5)
    assert plan.channel(63) == (7, 7)


def test_plan_round_trip_and_hash():
    plan = default_sweep_plan(8, 10)
    again = SweepPlan.from_dict(plan.to_dict())
    assert again == plan and again.plan_hash == plan.plan_hash
    assert default_sweep_plan(8, 5).plan_hash != plan.plan_hash


@pytest.mark.parametrize("kwargs", [
    dict(kind="crack", angle=0.0),
    dict(kind="crack", angle=0.0, diameter=-1e-3),
    dict(kind="loosening", angle=0.0, thickness=1e-3, arc_length=0.0),
    dict(kind="loosening", angle=0.0, thickness=1e-3, arc_length=1.5),
    dict(kind="bubble", angle=0.0, diameter=1e-3),
])
def test_defect_validation(kwargs):
    with pytest.raises(ValueError):
        DefectSpec(**kwargs)


def test_defect_round_trip():
    d = DefectSpec.loosening(math.pi / 2, 0.5e-3, 0.75)
    assert DefectSpec.from_dict(d.to_dict()) == d
    assert "0.5mm" in d.label()
