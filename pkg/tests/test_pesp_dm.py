import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_timetabling.dm import (DelaySolution, aperiodic_no_wait, build_pdm, check_dm_solution,
                                   check_pdm_solution, dm_objective, no_wait_propagate,
                                   pdm_objective, representative, solve_dm, solve_pdm, tau)
from robust_timetabling.ean import (EventKind, aperiodic_domain, Scenario, UncertaintySet, nominal_travel_time,
                                    rollout, sample_scenario, scenario_domain, scenario_rollout,
                                    timetable_durations)
from robust_timetabling.instances import EXAMPLE_TIMES, two_line_example, generate_instance
from robust_timetabling.pesp import (apply_passenger_cutoff, match_heuristic, pesp_objective,
                                     solve_pesp)

from helpers import random_timetable, small_network


def brute_force_pesp(ean):
    ids = [e.id for e in ean.events]
    best = math.inf
    for times in itertools.product(range(ean.period), repeat=len(ids)):
        tt = timetable_durations(ean, dict(zip(ids, times)))
        if tt.feasible:
            best = min(best, nominal_travel_time(ean, tt))
    return best


@pytest.mark.parametrize("seed", [1, 4, 7])
def test_pesp_matches_enumeration(seed):
    ean = small_network(seed, period=5)
    assert len(ean.events) == 6
    res = solve_pesp(ean)
    assert res.timetable.feasible
    assert res.objective == pytest.approx(brute_force_pesp(ean))
    assert pesp_objective(ean, res.timetable) == pytest.approx(res.objective)


@pytest.mark.parametrize("seed", range(3))
def test_match_is_feasible_zero_buffer_and_not_below_pesp(seed):
    inst = generate_instance("toy", seed)
    tt = match_heuristic(inst.ean)
    assert tt.feasible
    assert all(tt.slack(a) == 0 for a in inst.ean.dw_activities)
    assert nominal_travel_time(inst.ean, tt) >= solve_pesp(inst.ean).objective - 1e-6
    assert match_heuristic(inst.ean).times == tt.times


def test_passenger_cutoff_drops_light_changes_only():
    inst = generate_instance("grid", 0)
    reduced = apply_passenger_cutoff(inst.ean, 10)
    kept = {a.id for a in reduced.activities}
    for a in inst.ean.activities:
        assert (a.id in kept) == (not a.is_change or a.weight > 10)


# -- periodic delay management --------------------------------------------

def brute_force_pdm(ean, tt, s):
    """Integer event delays suffice: for fixed offsets the rows are difference constraints."""
    T = ean.period
    ids = [e.id for e in ean.events]
    hi = int(s.total) + T
    best = math.inf
    ranges = [range(int(math.ceil(s.event(e))), hi + 1) for e in ids]
    for ds in itertools.product(*ranges):
        d = dict(zip(ids, ds))
        total, ok = 0.0, True
        for a in ean.activities:
            pi_a = tt.durations[a.id]
            diff = d[a.target] - d[a.source]
            need = a.lower + s.activity(a.id)
            if a.is_change:
                da = representative(pi_a + diff, a.lower, T) - pi_a
            else:
                da = diff
                if pi_a + da < need:
                    ok = False
                    break
            total += a.weight * da
        if ok:
            total += sum(e.weight * d[e.id] for e in ean.departure_events)
            best = min(best, total)
    return best


@pytest.mark.parametrize("seed", [1, 4])
def test_pdm_matches_enumeration(seed):
    ean = small_network(seed, period=4)
    tt = random_timetable(ean, seed)
    ev, act = scenario_domain(ean)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        s = Scenario({k: float(rng.integers(0, 2)) for k in ev},
                     {k: float(rng.integers(0, 2)) for k in act[:1]})
        sol = solve_pdm(ean, tt, s)
        assert check_pdm_solution(ean, tt, s, sol) == []
        assert sol.objective == pytest.approx(brute_force_pdm(ean, tt, s))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 10**6), st.floats(0, 4))
def test_no_wait_is_feasible_and_bounds_pdm(net, seed, rho):
    ean = small_network(net)
    tt = random_timetable(ean, seed)
    ev, act = scenario_domain(ean)
    s = sample_scenario(UncertaintySet(2.0, rho), ev, act, seed)
    nw = no_wait_propagate(ean, tt, s)
    assert check_pdm_solution(ean, tt, s, nw) == []
    assert nw.objective == pytest.approx(pdm_objective(ean, nw))
    assert solve_pdm(ean, tt, s).objective <= nw.objective + 1e-6
    assert tau(ean, tt, nw) >= nominal_travel_time(ean, tt) - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 10**6), st.floats(0.1, 2.0))
def test_no_wait_event_delays_monotone_in_scenario(net, seed, factor):
    ean = small_network(net)
    tt = random_timetable(ean, seed)
    ev, act = scenario_domain(ean)
    s = sample_scenario(UncertaintySet(2.0, 3.0), ev, act, seed)
    lo, hi = sorted([s, s.scaled(factor)], key=lambda x: x.total)
    d_lo = no_wait_propagate(ean, tt, lo).event_delays
    d_hi = no_wait_propagate(ean, tt, hi).event_delays
    assert all(d_lo[e] <= d_hi[e] + 1e-9 for e in d_lo)


def test_zero_scenario_gives_nominal():
    ean = two_line_example()
    tt = timetable_durations(ean, EXAMPLE_TIMES)
    nw = no_wait_propagate(ean, tt, Scenario())
    assert nw.objective == 0
    assert solve_pdm(ean, tt, Scenario()).objective == pytest.approx(0)


def test_cutoff_on_pdm():
    ean = two_line_example()
    tt = timetable_durations(ean, EXAMPLE_TIMES)
    s = Scenario({"1_H_arr": 8.0})
    full = solve_pdm(ean, tt, s)
    cut = solve_pdm(ean, tt, s, cutoff=full.objective + 100)
    assert check_pdm_solution(ean, tt, s, cut) == []
    assert cut.objective <= full.objective + 100 + 1e-6


# -- aperiodic delay management -------------------------------------------

def brute_force_dm(aper, s):
    times = {e.key: e.time for e in aper.events}
    changes = [a for a in aper.activities if a.is_change]
    order = sorted(aper.events, key=lambda e: e.time)
    best = math.inf
    for ys in itertools.product((0, 1), repeat=len(changes)):
        dropped = {a.key for a, y in zip(changes, ys) if y}
        # least delays meeting every kept row: longest paths in time order
        d = {e.key: s.event(e.key) for e in aper.events}
        for _ in range(len(order)):
            changed = False
            for a in aper.activities:
                if a.key in dropped:
                    continue
                need = a.lower + (0 if a.is_change else s.activity(a.key))
                lo = d[a.source] + need - (times[a.target] - times[a.source])
                if lo > d[a.target] + 1e-12:
                    d[a.target], changed = lo, True
            if not changed:
                break
        val = sum(e.weight * d[e.key] for e in aper.events if e.kind is EventKind.ARRIVAL)
        val += sum(a.weight * aper.period for a in changes if a.key in dropped)
        best = min(best, val)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_dm_matches_enumeration(seed):
    ean = two_line_example()
    tt = timetable_durations(ean, EXAMPLE_TIMES)
    aper = rollout(ean, tt, (0, 100))
    n_changes = sum(a.is_change for a in aper.activities)
    assert 0 < n_changes <= 10
    rng = np.random.default_rng(seed)
    ev, act = scenario_domain(ean)
    s = Scenario({k: float(rng.integers(0, 12)) for k in rng.choice(ev, 2)},
                 {k: float(rng.integers(0, 12)) for k in rng.choice(act, 2)})
    s_aper = scenario_rollout(s, aper)
    sol = solve_dm(aper, s_aper)
    assert check_dm_solution(aper, s_aper, sol) == []
    assert sol.objective == pytest.approx(dm_objective(aper, sol))
    assert sol.objective == pytest.approx(brute_force_dm(aper, s_aper))


def test_dm_never_beats_zero_and_no_wait_start_is_feasible():
    inst = generate_instance("toy", 1)
    tt = solve_pesp(inst.ean).timetable
    aper = rollout(inst.ean, tt, (0, 120))
    ev, act = aperiodic_domain(aper)
    s = sample_scenario(UncertaintySet(50, 10), ev, act, 0)
    d0, y0 = aperiodic_no_wait(aper, s)
    nw = DelaySolution(d0, dropped=y0)
    assert check_dm_solution(aper, s, nw) == []
    sol = solve_dm(aper, s)
    assert 0 <= sol.objective <= dm_objective(aper, nw) + 1e-6


def test_pdm_model_names_are_stable():
    ean = two_line_example()
    tt = timetable_durations(ean, EXAMPLE_TIMES)
    m = build_pdm(ean, tt, Scenario())
    assert m.name == "pdm"
    assert m.has_var("d[1_H_arr]") and m.has_var("z[1_H_arr->2_H_dep]")
