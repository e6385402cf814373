import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_timetabling.dm import no_wait_propagate, solve_pdm, tau
from robust_timetabling.ean import (BudgetMode, Scenario, UncertaintySet, check_scenario,
                                    nominal_travel_time, sample_scenario, scenario_domain,
                                    timetable_durations)
from robust_timetabling.pesp import solve_pesp
from robust_timetabling.robust import (build_fwc, cutting_plane, greedy_scenario, in_pool,
                                       iterative_heuristic, solve_fwc, solve_master, zero_scenario)

from helpers import brute_force_worst, random_timetable, small_network


def all_timetables(ean):
    """Feasible timetables with the first event pinned at 0 (a global shift changes nothing)."""
    ids = [e.id for e in ean.events]
    for rest in itertools.product(range(ean.period), repeat=len(ids) - 1):
        tt = timetable_durations(ean, dict(zip(ids, (0,) + rest)))
        if tt.feasible:
            yield tt


@pytest.mark.parametrize("seed", [0, 3, 5])
def test_fwc_matches_brute_force(seed):
    ean = small_network(seed, period=8)
    tt = random_timetable(ean, seed)
    unc = UncertaintySet(2.0, 2.0)
    wc = solve_fwc(ean, tt, unc, resolution=0.5, mip_gap=0)
    best, _ = brute_force_worst(ean, tt, 2.0, 2.0)
    assert wc.outcome.objective == pytest.approx(best, abs=1e-4)
    assert wc.value == pytest.approx(best, abs=1e-4)
    assert check_scenario(wc.scenario, unc, ean) == []


HALVES = st.integers(0, 12).map(lambda u: u / 2)


def on_half_grid(s: Scenario) -> Scenario:
    return Scenario({k: math.floor(2 * v) / 2 for k, v in s.event_delays.items()},
                    {k: math.floor(2 * v) / 2 for k, v in s.activity_delays.items()})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5), st.integers(0, 10**6), HALVES, HALVES)
def test_fwc_dominates_grid_scenarios(net, seed, sigma, rho):
    # with integer timetables, scenarios on the 0.5 grid keep change durations
    # inside the window the program uses at resolution 0.5
    ean = small_network(net)
    tt = random_timetable(ean, seed)
    unc = UncertaintySet(sigma, rho)
    wc = solve_fwc(ean, tt, unc, resolution=0.5)
    ev, act = scenario_domain(ean)
    s = on_half_grid(sample_scenario(unc, ev, act, seed))
    assert wc.upper >= tau(ean, tt, no_wait_propagate(ean, tt, s)) - 1e-6
    g = greedy_scenario(ean, tt, unc)
    assert check_scenario(g, unc, ean) == []
    assert wc.upper >= tau(ean, tt, no_wait_propagate(ean, tt, on_half_grid(g))) - 1e-6


def test_fwc_zero_budget_is_nominal():
    ean = small_network(2)
    tt = random_timetable(ean, 2)
    wc = solve_fwc(ean, tt, UncertaintySet(3.0, 0.0))
    assert wc.value == pytest.approx(nominal_travel_time(ean, tt))
    assert wc.scenario.is_zero


def test_fwc_exact_budget_mode():
    ean = small_network(0)
    tt = random_timetable(ean, 0)
    unc = UncertaintySet(1.0, 2.5, BudgetMode.EXACT)
    wc = solve_fwc(ean, tt, unc)
    assert wc.scenario.total == pytest.approx(2.5)
    assert build_fwc(ean, tt, unc).name == "fwc"


@pytest.mark.parametrize("seed", [1, 4])
def test_masters_match_enumeration(seed):
    ean = small_network(seed, period=5)
    ev, act = scenario_domain(ean)
    s = sample_scenario(UncertaintySet(2.0, 2.0), ev, act, seed)
    pool = [zero_scenario(), s]
    tts = list(all_timetables(ean))
    want_nw = min(max(tau(ean, tt, no_wait_propagate(ean, tt, x)) for x in pool) for tt in tts)
    want_dm = min(nominal_travel_time(ean, tt) + solve_pdm(ean, tt, s).objective for tt in tts)
    got_nw = solve_master(ean, pool, "frpt", mip_gap=0)
    got_dm = solve_master(ean, pool, "rpt", mip_gap=0)
    assert got_nw.value == pytest.approx(want_nw, abs=1e-6)
    assert got_dm.value == pytest.approx(want_dm, abs=1e-6)
    assert got_dm.value <= got_nw.value + 1e-6


def test_master_over_zero_pool_is_pesp():
    ean = small_network(0)
    pesp = solve_pesp(ean).objective
    for kind in ("frpt", "rpt"):
        assert solve_master(ean, [zero_scenario()], kind, mip_gap=0).value == pytest.approx(pesp)


def test_cutting_plane_reaches_enumerated_robust_optimum():
    ean = small_network(1, period=5)
    unc = UncertaintySet(2.0, 3.0)
    want = min(solve_fwc(ean, tt, unc, mip_gap=0).value for tt in all_timetables(ean))
    tt, ub, state = cutting_plane(ean, unc, eps=1e-6, mip_gap=0)
    assert state.stop_reason == "converged"
    assert ub == pytest.approx(want, abs=1e-6)
    assert solve_fwc(ean, tt, unc, mip_gap=0).value == pytest.approx(ub, abs=1e-6)


def test_cutting_plane_trace_and_limits():
    ean = small_network(0)
    unc = UncertaintySet(2.0, 3.0)
    tt, ub, state = cutting_plane(ean, unc, iter_cap=2, mip_gap=0)
    assert 1 <= state.k <= 2 and len(state.trace) == len(state.lb) == state.k
    assert all(r.lb <= r.ub + 1e-6 for r in state.trace)
    assert tt.feasible and state.timetable is tt
    with pytest.raises(ValueError):
        cutting_plane(ean, unc, eps=0)


def test_iterative_heuristic_is_deterministic_and_bounded():
    ean = small_network(3)
    unc = UncertaintySet(2.0, 3.0)
    tt1, lb1, st1 = iterative_heuristic(ean, unc, n_iter=3, n_samples=10, seed=5, mip_gap=0)
    tt2, lb2, st2 = iterative_heuristic(ean, unc, n_iter=3, n_samples=10, seed=5, mip_gap=0,
                                        jobs=2)
    assert tt1.times == tt2.times and lb1 == lb2
    assert [s.event_delays for s in st1.pool] == [s.event_delays for s in st2.pool]
    _, ub, _ = cutting_plane(ean, unc, eps=1e-6, mip_gap=0)
    assert lb1 <= ub + 1e-6
    assert st1.lb == sorted(st1.lb)
    with pytest.raises(ValueError):
        iterative_heuristic(ean, unc, n_iter=0)


def test_pool_membership():
    s = Scenario({"a": 1.0})
    assert in_pool(Scenario({"a": 1.0 + 1e-12}), [s])
    assert not in_pool(Scenario({"a": 1.5}), [s])
    assert in_pool(zero_scenario(), [Scenario()])
