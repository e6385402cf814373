"""Delay management on aperiodic and periodic networks.

``build_dm`` is the classical wait-depart model on a rolled-out network,
``build_pdm`` its periodic counterpart where missed connections show up as
change activities that are one period longer, and ``no_wait_propagate`` the
closed-form propagation when no train ever waits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

from .ean import (FEAS_TOL, AperiodicEan, EventKind, PeriodicEan, Scenario, Timetable,
                  nominal_travel_time)
from .milp import Domain, MilpModel, SolveOutcome, Status, quicksum, solve


@dataclass
class DelaySolution:
    """Propagated delays with the integer decisions that produced them."""

    event_delays: dict[Hashable, float]
    activity_delays: dict[Hashable, float] = field(default_factory=dict)
    modulo: dict[Hashable, int] = field(default_factory=dict)      # periodic changes
    dropped: dict[Hashable, int] = field(default_factory=dict)     # aperiodic changes, 1 = missed
    objective: float = 0.0
    status: Status | None = None


def representative(raw: float, lower: float, period: int) -> float:
    """The value in ``[lower, lower + T)`` congruent to ``raw`` modulo ``T``."""
    k = math.floor((raw - lower + 1e-9) / period)
    return raw - k * period


# --------------------------------------------------------------------------
# periodic
# --------------------------------------------------------------------------

def no_wait_propagate(ean: PeriodicEan, tt: Timetable, s: Scenario) -> DelaySolution:
    """Delays when trains never wait for feeders.

    Start events keep their source delay; along a line the delay is
    ``max(d_i + s_a - slack_a, s_j)``.  Change activities get the shortest
    duration not below ``L_a`` that is consistent with the resulting event
    delays.
    """
    T = ean.period
    d: dict[str, float] = {}
    for e in ean.propagation_order:
        a = ean.incoming_dw.get(e)
        if a is None:
            d[e] = s.event(e)
        else:
            slack = tt.durations[a.id] - a.lower
            d[e] = max(d[a.source] + s.activity(a.id) - slack, s.event(e))
    da, z = {}, {}
    for a in ean.activities:
        diff = d[a.target] - d[a.source]
        if a.is_change:
            pi_a = tt.durations[a.id]
            rep = representative(pi_a + diff, a.lower, T)
            da[a.id] = rep - pi_a
            z[a.id] = int(round((da[a.id] - diff) / T))
        else:
            da[a.id] = diff
    sol = DelaySolution(d, da, z)
    sol.objective = pdm_objective(ean, sol)
    return sol


def pdm_objective(ean: PeriodicEan, d: DelaySolution) -> float:
    """sum_a w_a d_a + sum_{departures} w_i d_i."""
    return float(sum(a.weight * d.activity_delays[a.id] for a in ean.activities)
                 + sum(e.weight * d.event_delays[e.id] for e in ean.departure_events))


def tau(ean: PeriodicEan, tt: Timetable, d: DelaySolution) -> float:
    """Travel time after delays: sum_a w_a (pi_a + d_a) + sum_{departures} w_i d_i."""
    return nominal_travel_time(ean, tt) + pdm_objective(ean, d)


def check_pdm_solution(ean: PeriodicEan, tt: Timetable, s: Scenario, d: DelaySolution,
                       tol: float = FEAS_TOL) -> list[str]:
    """Independent re-check that ``d`` lies in the feasible delay set for ``(tt, s)``."""
    T = ean.period
    problems = []
    for e in ean.events:
        if d.event_delays[e.id] < s.event(e.id) - tol:
            problems.append(f"event {e.id}: d={d.event_delays[e.id]} < s={s.event(e.id)}")
    for a in ean.activities:
        diff = d.event_delays[a.target] - d.event_delays[a.source]
        da = d.activity_delays[a.id]
        if a.is_change:
            k = (da - diff) / T
            if abs(k - round(k)) > tol:
                problems.append(f"change {a.id}: d_a - (d_j - d_i) not a multiple of T")
            if s.activity(a.id):
                problems.append(f"change {a.id}: carries source delay")
        elif abs(da - diff) > tol:
            problems.append(f"activity {a.id}: d_a != d_j - d_i")
        if tt.durations[a.id] + da < a.lower + s.activity(a.id) - tol:
            problems.append(f"activity {a.id}: pi_a + d_a below L_a + s_a")
    return problems


def delay_bound(s: Scenario, period: int) -> float:
    """Upper bound used for delay variables: no optimal plan delays anything further."""
    return s.total + period


def build_pdm(ean: PeriodicEan, tt: Timetable, s: Scenario) -> MilpModel:
    """Periodic delay management for a fixed timetable and scenario."""
    T = ean.period
    D = delay_bound(s, T)
    m = MilpModel("pdm")
    d = {e.id: m.add_var(f"d[{e.id}]", s.event(e.id), max(D, s.event(e.id)))
         for e in ean.events}
    da = {}
    for a in ean.activities:
        pi_a = tt.durations[a.id]
        da[a.id] = v = m.add_var(f"da[{a.id}]", -D, math.inf)
        if a.is_change:
            z_lo = math.floor((a.lower - pi_a - D) / T) - 1
            z_hi = math.ceil((a.lower + T - pi_a + D) / T) + 1
            z = m.add_var(f"z[{a.id}]", z_lo, z_hi, Domain.INTEGER)
            m.add(v == d[a.target] - d[a.source] + T * z, f"mod[{a.id}]")
        else:
            m.add(v == d[a.target] - d[a.source], f"diff[{a.id}]")
        m.add(v >= a.lower + s.activity(a.id) - pi_a, f"dur[{a.id}]")
    m.minimize(quicksum([a.weight * da[a.id] for a in ean.activities if a.weight]
                        + [e.weight * d[e.id] for e in ean.departure_events if e.weight]))
    return m


def pdm_start(ean: PeriodicEan, sol: DelaySolution) -> dict[str, float]:
    start = {f"d[{e}]": v for e, v in sol.event_delays.items()}
    start.update({f"da[{a}]": v for a, v in sol.activity_delays.items()})
    start.update({f"z[{a}]": float(v) for a, v in sol.modulo.items()})
    return start


def extract_pdm(ean: PeriodicEan, m: MilpModel, out: SolveOutcome) -> DelaySolution:
    d = {e.id: out[m.var(f"d[{e.id}]")] for e in ean.events}
    da = {a.id: out[m.var(f"da[{a.id}]")] for a in ean.activities}
    z = {a.id: int(round(out[m.var(f"z[{a.id}]")])) for a in ean.change_activities}
    return DelaySolution(d, da, z, objective=out.objective, status=out.status)


def solve_pdm(ean: PeriodicEan, tt: Timetable, s: Scenario, time_limit: float | None = None,
              cutoff: float | None = None) -> DelaySolution:
    """Solve periodic delay management, warm-started from the no-wait plan.

    ``cutoff`` is on the P-DM objective (not on tau): the solve may stop as
    soon as a plan at or below it is known.
    """
    m = build_pdm(ean, tt, s)
    m.time_limit = time_limit
    m.cutoff = cutoff
    start = pdm_start(ean, no_wait_propagate(ean, tt, s))
    m.start = {m.var(k).index: v for k, v in start.items()}
    out = solve(m)
    if not out.status.has_incumbent:
        raise RuntimeError(f"periodic delay management returned {out.status.value}")
    return extract_pdm(ean, m, out)


# --------------------------------------------------------------------------
# aperiodic
# --------------------------------------------------------------------------

def build_dm(aper: AperiodicEan, s: Scenario, big_m: float | None = None) -> MilpModel:
    """Wait-depart delay management on a rolled-out network.

    Objective: delay of alighting passengers at arrival events plus one
    period for every passenger on a dropped connection.
    """
    T = aper.period
    M = big_m if big_m is not None else s.total + T
    m = MilpModel("dm")
    d = {e.key: m.add_var(f"d[{e.key[0]}@{e.key[1]}]", s.event(e.key)) for e in aper.events}
    times = {e.key: e.time for e in aper.events}
    y = {}
    for a in aper.activities:
        span = times[a.target] - times[a.source]
        diff = d[a.target] - d[a.source]
        name = f"{a.key[0]}@{a.key[1]}"
        if a.is_change:
            y[a.key] = yv = m.add_var(f"y[{name}]", domain=Domain.BINARY)
            m.add(M * yv + diff >= a.lower - span, f"ch[{name}]")
        else:
            m.add(diff >= a.lower + s.activity(a.key) - span, f"dw[{name}]")
    m.minimize(quicksum(
        [e.weight * d[e.key] for e in aper.events if e.kind is EventKind.ARRIVAL and e.weight]
        + [a.weight * T * y[a.key] for a in aper.activities if a.is_change and a.weight]))
    return m


def aperiodic_no_wait(aper: AperiodicEan, s: Scenario) -> tuple[dict, dict]:
    """No-wait delays on a rolled-out network and the connections they break."""
    times = {e.key: e.time for e in aper.events}
    incoming = {a.target: a for a in aper.activities if not a.is_change}
    outgoing = {a.source: a for a in aper.activities if not a.is_change}
    d = {}
    for e in aper.events:
        if e.key in incoming:
            continue
        key = e.key
        d[key] = s.event(key)
        while key in outgoing:
            a = outgoing[key]
            slack = times[a.target] - times[a.source] - a.lower
            d[a.target] = max(d[key] + s.activity(a.key) - slack, s.event(a.target))
            key = a.target
    y = {}
    for a in aper.activities:
        if a.is_change:
            dur = times[a.target] + d[a.target] - times[a.source] - d[a.source]
            y[a.key] = 1 if dur < a.lower - FEAS_TOL else 0
    return d, y


def solve_dm(aper: AperiodicEan, s: Scenario, time_limit: float | None = None) -> DelaySolution:
    m = build_dm(aper, s)
    m.time_limit = time_limit
    d0, y0 = aperiodic_no_wait(aper, s)
    start = {m.var(f"d[{k[0]}@{k[1]}]").index: v for k, v in d0.items()}
    start.update({m.var(f"y[{k[0]}@{k[1]}]").index: float(v) for k, v in y0.items()})
    m.start = start
    out = solve(m)
    if not out.status.has_incumbent:
        raise RuntimeError(f"delay management returned {out.status.value}")
    d = {e.key: out[m.var(f"d[{e.key[0]}@{e.key[1]}]")] for e in aper.events}
    y = {a.key: int(round(out[m.var(f"y[{a.key[0]}@{a.key[1]}]")]))
         for a in aper.activities if a.is_change}
    return DelaySolution(d, dropped=y, objective=out.objective, status=out.status)


def aperiodic_nominal(aper: AperiodicEan) -> float:
    times = {e.key: e.time for e in aper.events}
    return float(sum(a.weight * (times[a.target] - times[a.source]) for a in aper.activities))


def check_dm_solution(aper: AperiodicEan, s: Scenario, sol: DelaySolution,
                      tol: float = FEAS_TOL) -> list[str]:
    """Re-check delay-management rows for a solution (missed changes exempt)."""
    times = {e.key: e.time for e in aper.events}
    d = sol.event_delays
    problems = []
    for e in aper.events:
        if d[e.key] < s.event(e.key) - tol:
            problems.append(f"event {e.key}: d below source delay")
    for a in aper.activities:
        dur = times[a.target] + d[a.target] - times[a.source] - d[a.source]
        need = a.lower + (0.0 if a.is_change else s.activity(a.key))
        if a.is_change and sol.dropped.get(a.key):
            continue
        if dur < need - tol:
            problems.append(f"activity {a.key}: duration {dur} < {need}")
    return problems


def dm_objective(aper: AperiodicEan, sol: DelaySolution) -> float:
    """Recompute the delay-management objective from a solution."""
    T = aper.period
    arr = sum(e.weight * sol.event_delays[e.key] for e in aper.events if e.kind is EventKind.ARRIVAL)
    missed = sum(a.weight * T * sol.dropped.get(a.key, 0) for a in aper.activities if a.is_change)
    return float(arr + missed)


def delay_solution_rows(sol: DelaySolution) -> list[tuple[str, str, float]]:
    """Rows ``(element_kind, element_id, delay)`` for CSV export."""
    def fmt(k):
        return f"{k[0]}@{k[1]}" if isinstance(k, tuple) and len(k) == 2 else (
            "@".join(map(str, k)) if isinstance(k, tuple) else str(k))
    rows = [("event", fmt(k), v) for k, v in sol.event_delays.items()]
    rows += [("activity", fmt(k), v) for k, v in sol.activity_delays.items()]
    return rows


__all__ = [
    "DelaySolution", "aperiodic_no_wait", "aperiodic_nominal", "build_dm", "build_pdm",
    "check_dm_solution", "check_pdm_solution", "delay_solution_rows", "dm_objective",
    "extract_pdm", "no_wait_propagate", "pdm_objective", "pdm_start", "representative",
    "solve_dm", "solve_pdm", "tau",
]
