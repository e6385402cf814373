import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_timetabling.ean import (Activity, BudgetMode, Event, InfeasibleBudgetError,
                                    PeriodicEan, Scenario, UncertaintySet, check_scenario,
                                    nominal_travel_time, periodic_duration, restrict_to_copy,
                                    rollout, sample_scenario, scenario_domain, scenario_rollout,
                                    timetable_durations, validate_ean)
from robust_timetabling.instances import EXAMPLE_TIMES, two_line_example, generate_instance

from helpers import random_timetable, small_network


def one_line(lower=10, upper=14, weight=1.0, period=60):
    events = [Event("a", "departure", "X", "L", 1.0), Event("b", "arrival", "Y", "L", 1.0)]
    return PeriodicEan(events, [Activity("a>b", "drive", "a", "b", lower, upper, weight)], period)


def test_periodic_duration_examples():
    assert periodic_duration(50, 5, 3, 60) == 15
    assert periodic_duration(0, 0, 0, 60) == 0
    assert periodic_duration(0, 0, 1, 60) == 60


@given(st.integers(0, 59), st.integers(0, 59), st.integers(0, 200))
def test_periodic_duration_properties(pi, pj, lower):
    d = periodic_duration(pi, pj, lower, 60)
    assert lower <= d < lower + 60
    assert (d - (pj - pi)) % 60 == 0


def test_example_is_valid_and_has_no_slack():
    ean = two_line_example()
    assert validate_ean(ean) == []
    tt = timetable_durations(ean, EXAMPLE_TIMES)
    assert tt.feasible
    assert all(tt.slack(a) == 0 for a in ean.dw_activities)
    assert sorted(tt.durations[a.id] for a in ean.change_activities) == [10, 10, 56]


def test_validate_flags_structural_errors():
    ean = one_line()
    bad = ean.replace_activities([Activity("x", "change", "a", "b", 1)])
    msgs = " ".join(str(v) for v in validate_ean(bad))
    assert "arrival to a departure" in msgs and "same line" in msgs
    inverted = ean.replace_activities([Activity("a>b", "drive", "a", "b", 5, 3)])
    assert any("L_a > U_a" in str(v) for v in validate_ean(inverted))
    ghost = ean.replace_activities([Activity("a>c", "drive", "a", "c", 1)])
    assert any("unknown event" in str(v) for v in validate_ean(ghost))


@pytest.mark.parametrize("kind", ["toy", "grid"])
def test_generated_instances_are_valid(kind):
    inst = generate_instance(kind, 0)
    assert validate_ean(inst.ean) == []
    assert all(a.weight >= 0 for a in inst.ean.activities)


def test_timetable_rejects_bad_times():
    ean = one_line()
    with pytest.raises(ValueError):
        timetable_durations(ean, {"a": 0})
    with pytest.raises(ValueError):
        timetable_durations(ean, {"a": 0, "b": 60})
    tt = timetable_durations(ean, {"a": 0, "b": 30})
    assert not tt.feasible and tt.violations


def test_nominal_travel_time():
    ean = one_line(weight=3.0)
    tt = timetable_durations(ean, {"a": 55, "b": 7})
    assert tt.durations["a>b"] == 12
    assert tt.offsets["a>b"] == 1
    assert nominal_travel_time(ean, tt) == 36.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5), st.floats(0, 20), st.integers(0, 2**32 - 1))
def test_sampled_scenarios_respect_the_set(sigma, rho, seed):
    ean = small_network(0)
    ev, act = scenario_domain(ean)
    for mode in BudgetMode:
        unc = UncertaintySet(sigma, rho, mode)
        if mode is BudgetMode.EXACT and rho > sigma * (len(ev) + len(act)):
            with pytest.raises(InfeasibleBudgetError):
                sample_scenario(unc, ev, act, seed)
            continue
        s = sample_scenario(unc, ev, act, seed)
        assert check_scenario(s, unc, ean) == []


def test_sampling_is_deterministic_per_seed():
    ean = small_network(1)
    ev, act = scenario_domain(ean)
    unc = UncertaintySet(2.0, 3.0)
    assert sample_scenario(unc, ev, act, 7) == sample_scenario(unc, ev, act, 7)
    assert sample_scenario(unc, ev, act, 7) != sample_scenario(unc, ev, act, 8)


def test_check_scenario_rejects_change_delay():
    ean = two_line_example()
    ch = ean.change_activities[0].id
    assert check_scenario(Scenario({}, {ch: 1.0}), UncertaintySet(5, 5), ean)
    assert check_scenario(Scenario({"1_H_dep": 6.0}), UncertaintySet(5, 10))
    assert check_scenario(Scenario({"1_H_dep": 3.0}), UncertaintySet(5, 10, BudgetMode.EXACT))


def test_rollout_copies_and_durations():
    ean = two_line_example()
    tt = timetable_durations(ean, EXAMPLE_TIMES)
    aper = rollout(ean, tt, (0, 120))
    # closed horizon: an event at time 0 has copies at 0, 60 and 120
    assert len(aper.copies_of("1_GOE_dep")) == 3
    assert len(aper.copies_of("1_H_arr")) == 2
    for a in aper.activities:
        src, tgt = aper.event_by_key[a.source], aper.event_by_key[a.target]
        periodic = ean.activity_by_id[a.key[0]]
        assert tgt.time - src.time == tt.durations[periodic.id]


def test_rollout_warns_on_short_horizon():
    ean = one_line()
    tt = timetable_durations(ean, {"a": 0, "b": 10})
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rollout(ean, tt, (0, 30))
    assert w


def test_scenario_rollout_round_trip():
    ean = small_network(2)
    tt = random_timetable(ean, 2)
    aper = rollout(ean, tt, (0, 40))
    ev, act = scenario_domain(ean)
    s = sample_scenario(UncertaintySet(1.0, 3.0), ev, act, 1)
    back = restrict_to_copy(scenario_rollout(s, aper), 1)
    assert back.close_to(s)


def test_scenario_helpers():
    s = Scenario({"x": 1.0}, {"y": 2.5})
    assert s.total == 3.5 and s.max_entry == 2.5 and not s.is_zero
    assert Scenario().is_zero
    assert s.scaled(2).total == 7.0
    assert s.close_to(Scenario({"x": 1.0, "z": 0.0}, {"y": 2.5}))
    assert math.isclose(UncertaintySet(1, 5, BudgetMode.EXACT, 8).budget, 40)
    with pytest.raises(ValueError):
        UncertaintySet(-1, 1)


def test_instances_are_deterministic_and_scaled():
    a, b = generate_instance("toy", 3), generate_instance("toy", 3)
    assert a.ean == b.ean
    assert 60 <= len(a.ean.events) <= 120
    assert a.uncertainty.rho == 5 and a.uncertainty.sigma == 50
    grid = generate_instance("grid", 0)
    stations = {e.station for e in grid.ean.events}
    assert len(stations) == 25
    assert grid.passenger_cutoff == 10 and grid.uncertainty.sigma == 100
    assert np.all([a.weight >= 1 for a in grid.ean.change_activities])


def test_bahn_builds():
    inst = generate_instance("bahn", 0)
    assert validate_ean(inst.ean) == []
    assert len({e.station for e in inst.ean.events}) <= 250
    assert len(inst.ean.events) > 1000
