"""Robust timetabling against a budgeted set of source delays.

Two routes are implemented.  The cutting-plane loop alternates a timetable
master over a finite scenario pool, with trains following the no-wait rule,
and a worst-case program that searches the full uncertainty set for the
scenario hurting the current timetable most.  The sampling heuristic uses a
master with optimal delay management per scenario and finds new scenarios by
sampling and solving periodic delay management.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dm import DelaySolution, delay_bound, no_wait_propagate, solve_pdm, tau
from .ean import (BudgetMode, PeriodicEan, Scenario, Timetable, UncertaintySet, nominal_travel_time,
                  sample_scenario, scenario_domain)
from .milp import Domain, MilpModel, SolveOutcome, Status, quicksum, solve
from .pesp import (InfeasibleTimetableError, add_timetable_block, apply_start, extract_timetable,
                   timetable_start)

log = logging.getLogger(__name__)

DEDUP_TOL = 1e-9


def zero_scenario() -> Scenario:
    return Scenario({}, {})


def in_pool(s: Scenario, pool, tol: float = DEDUP_TOL) -> bool:
    return any(s.close_to(p, tol) for p in pool)


# --------------------------------------------------------------------------
# shared building blocks
# --------------------------------------------------------------------------

def _const(x) -> bool:
    return isinstance(x, (int, float))


def _add_no_wait(m: MilpModel, ean: PeriodicEan, tag: str, s_ev, s_act, slack, slack_max,
                 d_max: float, s_max: float) -> dict:
    """Delay variables forced onto the no-wait rule.

    ``s_ev``/``s_act`` map ids to constants or variables, ``slack`` maps dw
    activity ids to a constant or an expression bounded by ``slack_max``.
    Events whose delay is forced by constant data are returned as floats.
    """
    d: dict = {}
    bound: dict[str, float] = {}
    for e in ean.propagation_order:
        se = s_ev(e)
        a = ean.incoming_dw.get(e)
        if a is None:
            d[e] = se
            bound[e] = se if _const(se) else s_max
            continue
        sa = s_act(a.id)
        i = a.source
        # with constant source delays, a known-small upstream bound fixes d_j = s_j
        if _const(se) and _const(sa) and bound[i] + sa <= se:
            d[e] = float(se)
            bound[e] = float(se)
            continue
        fixed = _const(se) and _const(sa)
        bound[e] = min(d_max, max(bound[i] + sa, se)) if fixed else d_max
        dj = m.add_var(f"{tag}d[{e}]", 0.0, bound[e])
        w = m.add_var(f"{tag}w[{a.id}]", domain=Domain.BINARY)
        push = d[i] + sa - slack[a.id]
        m.add(dj >= push, f"{tag}nw_lo[{a.id}]")
        m.add(dj >= se, f"{tag}src[{e}]")
        # w = 1 selects d_j = s_j, w = 0 selects d_j = push
        big1 = (se if _const(se) else s_max) + slack_max[a.id]
        big2 = bound[e] - (se if _const(se) else 0.0)
        m.add(dj <= push + big1 * w, f"{tag}nw_a[{a.id}]")
        m.add(dj <= se + big2 * (1 - w), f"{tag}nw_b[{a.id}]")
        d[e] = dj
    return d


def _change_rep(m: MilpModel, tag: str, a, dur, d, T: int, d_span: float, window: float | None):
    """Expression ``dur_a + d_j - d_i + T k`` with its lower (and optional upper) row."""
    diff = d[a.target] - d[a.source] if not (_const(d[a.target]) and _const(d[a.source])) \
        else float(d[a.target] - d[a.source])
    if _const(diff) and diff == 0 and window is None:
        return dur      # the timetable block already keeps dur_a >= L_a
    lo_dur, hi_dur = (dur, dur) if _const(dur) else (a.lower, a.lower + T - 1)
    k_lo = math.floor((a.lower - hi_dur - d_span) / T)
    k_hi = math.ceil((a.lower + T - lo_dur + d_span) / T)
    k = m.add_var(f"{tag}k[{a.id}]", k_lo, k_hi, Domain.INTEGER)
    rep = dur + diff + T * k
    m.add(rep >= a.lower, f"{tag}rep_lo[{a.id}]")
    if window is not None:
        m.add(rep <= a.lower + T - window, f"{tag}rep_up[{a.id}]")
    return rep


def _tau_expr(ean: PeriodicEan, dur, d, rep):
    """sum_dw w_a (dur_a + d_j - d_i) + sum_change w_a rep_a + sum_dep w_i d_i."""
    terms = []
    for a in ean.activities:
        if not a.weight:
            continue
        if a.is_change:
            terms.append(a.weight * rep[a.id])
        else:
            terms.append(a.weight * (dur[a.id] + d[a.target] - d[a.source]))
    terms += [e.weight * d[e.id] for e in ean.departure_events if e.weight]
    return quicksum(terms)


# --------------------------------------------------------------------------
# worst case for a fixed timetable
# --------------------------------------------------------------------------

def build_fwc(ean: PeriodicEan, tt: Timetable, unc: UncertaintySet,
              resolution: float = 1.0) -> MilpModel:
    """Scenario maximising travel time when no train waits, for timetable ``tt``.

    Changes are kept in the window ``[L_a, L_a + T - resolution]``; with
    integral timetables and scenario values on a grid of step ``resolution``
    every change duration lies there.
    """
    if not tt.feasible:
        raise InfeasibleTimetableError("worst case needs a feasible timetable")
    T = ean.period
    B = float(unc.budget)
    s_max = min(float(unc.sigma), B)
    m = MilpModel("fwc")
    ev_keys, act_keys = scenario_domain(ean)
    s_e = {k: m.add_var(f"s[{k}]", 0.0, s_max) for k in ev_keys}
    s_a = {k: m.add_var(f"sa[{k}]", 0.0, s_max) for k in act_keys}
    total = quicksum(list(s_e.values()) + list(s_a.values()))
    if unc.mode is BudgetMode.EXACT:
        m.add(total == B, "budget")
    else:
        m.add(total <= B, "budget")
    slack = {a.id: float(tt.durations[a.id] - a.lower) for a in ean.dw_activities}
    d = _add_no_wait(m, ean, "", s_e.__getitem__, s_a.__getitem__, slack, slack, B, s_max)
    dur = {a.id: float(tt.durations[a.id]) for a in ean.activities}
    rep = {a.id: _change_rep(m, "", a, dur[a.id], d, T, B, resolution)
           for a in ean.change_activities}
    m.maximize(_tau_expr(ean, dur, d, rep))
    return m


def greedy_scenario(ean: PeriodicEan, tt: Timetable, unc: UncertaintySet) -> Scenario:
    """Pile budget in chunks of sigma on whichever element raises no-wait travel time most."""
    ev_keys, act_keys = scenario_domain(ean)
    left = float(unc.budget)
    ev, act = {}, {}
    current = no_wait_propagate(ean, tt, Scenario(ev, act)).objective
    while left > 1e-12:
        chunk = min(float(unc.sigma), left)
        best, best_val = None, -math.inf
        for tag, keys, table in (("e", ev_keys, ev), ("a", act_keys, act)):
            for k in keys:
                room = unc.sigma - table.get(k, 0.0)
                if room <= 1e-12:
                    continue
                step = min(chunk, room)
                trial = dict(table)
                trial[k] = trial.get(k, 0.0) + step
                s = Scenario(trial, act) if tag == "e" else Scenario(ev, trial)
                val = no_wait_propagate(ean, tt, s).objective
                if val > best_val + 1e-12:
                    best, best_val = (tag, k, step), val
        if best is None or (unc.mode is BudgetMode.AT_MOST and best_val <= current):
            break
        tag, k, step = best
        table = ev if tag == "e" else act
        table[k] = table.get(k, 0.0) + step
        left -= step
        current = best_val
    return Scenario(ev, act)


def fwc_start(ean: PeriodicEan, tt: Timetable, s: Scenario, tag: str = "",
              scenario_vars: bool = True) -> dict[str, float]:
    """Variable values for the no-wait block implied by ``s`` (a feasible warm start)."""
    T = ean.period
    nw = no_wait_propagate(ean, tt, s)
    d = nw.event_delays
    start: dict[str, float] = {}
    if scenario_vars:
        ev_keys, act_keys = scenario_domain(ean)
        start.update({f"s[{k}]": s.event(k) for k in ev_keys})
        start.update({f"sa[{k}]": s.activity(k) for k in act_keys})
    for a in ean.dw_activities:
        j = a.target
        start[f"{tag}d[{j}]"] = d[j]
        push = d[a.source] + s.activity(a.id) - (tt.durations[a.id] - a.lower)
        start[f"{tag}w[{a.id}]"] = 0.0 if push >= s.event(j) else 1.0
    for a in ean.change_activities:
        diff = d[a.target] - d[a.source]
        rep = tt.durations[a.id] + nw.activity_delays[a.id]
        start[f"{tag}k[{a.id}]"] = float(round((rep - tt.durations[a.id] - diff) / T))
    return start


@dataclass
class WorstCase:
    scenario: Scenario
    delays: DelaySolution
    value: float                # travel time under ``scenario`` with no-wait delays
    outcome: SolveOutcome

    @property
    def status(self) -> Status:
        return self.outcome.status

    @property
    def upper(self) -> float:
        """A valid upper bound on the worst case, also when the solve was cut short."""
        bound = self.outcome.bound
        if bound is None or not math.isfinite(bound):
            return self.value
        return max(self.value, bound)


def _clean(v: float, hi: float) -> float:
    if v < 1e-9:
        return 0.0
    return min(v, hi)


def solve_fwc(ean: PeriodicEan, tt: Timetable, unc: UncertaintySet, cutoff: float | None = None,
              time_limit: float | None = None, resolution: float = 1.0,
              mip_gap: float = 1e-4) -> WorstCase:
    """Solve the worst-case program, warm-started from :func:`greedy_scenario`.

    ``cutoff`` lets the solver stop once a scenario with travel time at
    least ``cutoff`` is known.
    """
    m = build_fwc(ean, tt, unc, resolution)
    m.time_limit = time_limit
    m.mip_gap = mip_gap
    m.cutoff = cutoff
    s0 = greedy_scenario(ean, tt, unc)
    apply_start(m, fwc_start(ean, tt, s0))
    out = solve(m)
    if not out.status.has_incumbent:
        raise RuntimeError(f"worst-case program returned {out.status.value}")
    ev_keys, act_keys = scenario_domain(ean)
    hi = min(unc.sigma, unc.budget)
    ev = {k: _clean(out[m.var(f"s[{k}]")], hi) for k in ev_keys}
    act = {k: _clean(out[m.var(f"sa[{k}]")], hi) for k in act_keys}
    s = Scenario({k: v for k, v in ev.items() if v}, {k: v for k, v in act.items() if v})
    nw = no_wait_propagate(ean, tt, s)
    return WorstCase(s, nw, tau(ean, tt, nw), out)


# --------------------------------------------------------------------------
# masters over a scenario pool
# --------------------------------------------------------------------------

def _slack_exprs(ean, dur):
    return {a.id: dur[a.id] - a.lower for a in ean.dw_activities}


def build_frpt_master(ean: PeriodicEan, pool) -> MilpModel:
    """Timetable minimising the worst no-wait travel time over ``pool``."""
    T = ean.period
    m = MilpModel("frpt")
    _, _, dur = add_timetable_block(m, ean)
    slack = _slack_exprs(ean, dur)
    slack_max = {a.id: min(a.upper, a.lower + T - 1) - a.lower for a in ean.dw_activities}
    t = m.add_var("t", -math.inf, math.inf)
    for n, s in enumerate(pool):
        tag = f"s{n}."
        d = _add_no_wait(m, ean, tag, s.event, s.activity, slack, slack_max,
                         max(s.total, 0.0), s.max_entry)
        rep = {a.id: _change_rep(m, tag, a, dur[a.id], d, T, s.total, None)
               for a in ean.change_activities}
        m.add(t >= _tau_expr(ean, dur, d, rep), f"{tag}tau")
    m.minimize(1 * t)
    return m


def build_rpt_master(ean: PeriodicEan, pool) -> MilpModel:
    """Timetable minimising the worst travel time over ``pool`` under optimal delay management."""
    T = ean.period
    m = MilpModel("rpt")
    _, _, dur = add_timetable_block(m, ean)
    t = m.add_var("t", -math.inf, math.inf)
    for n, s in enumerate(pool):
        tag = f"s{n}."
        D = delay_bound(s, T)
        if s.is_zero:
            d = {e.id: 0.0 for e in ean.events}
        else:
            d = {e.id: m.add_var(f"{tag}d[{e.id}]", s.event(e.id), max(D, s.event(e.id)))
                 for e in ean.events}
        for a in ean.dw_activities:
            if not s.is_zero:
                m.add(dur[a.id] + d[a.target] - d[a.source] >= a.lower + s.activity(a.id),
                      f"{tag}dw[{a.id}]")
        rep = {a.id: _change_rep(m, tag, a, dur[a.id], d, T, D, None)
               for a in ean.change_activities}
        m.add(t >= _tau_expr(ean, dur, d, rep), f"{tag}tau")
    m.minimize(1 * t)
    return m


def _master_start(ean: PeriodicEan, tt: Timetable, pool, kind: str,
                  delays: dict[int, DelaySolution] | None = None) -> dict[str, float]:
    """Start values for a master from timetable ``tt``.

    Scenarios use no-wait delays unless ``delays`` holds a plan for their pool
    index (optimal-dispatching master only).
    """
    start = timetable_start(ean, tt)
    worst = -math.inf
    for n, s in enumerate(pool):
        tag = f"s{n}."
        if kind == "frpt":
            nw = no_wait_propagate(ean, tt, s)
            worst = max(worst, tau(ean, tt, nw))
            start.update(fwc_start(ean, tt, s, tag, scenario_vars=False))
            continue
        sol = (delays or {}).get(n) or no_wait_propagate(ean, tt, s)
        worst = max(worst, tau(ean, tt, sol))
        start.update({f"{tag}d[{e}]": v for e, v in sol.event_delays.items()})
        for a in ean.change_activities:
            diff = sol.event_delays[a.target] - sol.event_delays[a.source]
            k = sol.modulo.get(a.id)
            if k is None:
                k = round((sol.activity_delays[a.id] - diff) / ean.period)
            start[f"{tag}k[{a.id}]"] = float(k)
    start["t"] = worst
    return start


def _master_delays(ean: PeriodicEan, m: MilpModel, out: SolveOutcome, pool) -> dict[int, DelaySolution]:
    """Delay plans of the optimal-dispatching master, per pool index."""
    T = ean.period
    plans = {}
    for n, s in enumerate(pool):
        tag = f"s{n}."
        if s.is_zero:
            continue
        d = {e.id: out[m.var(f"{tag}d[{e.id}]")] for e in ean.events}
        da, z = {}, {}
        for a in ean.activities:
            diff = d[a.target] - d[a.source]
            if a.is_change:
                name = f"{tag}k[{a.id}]"
                z[a.id] = int(round(out[m.var(name)])) if m.has_var(name) else 0
                da[a.id] = diff + T * z[a.id]
            else:
                da[a.id] = diff
        plans[n] = DelaySolution(d, da, z)
    return plans


@dataclass
class MasterResult:
    timetable: Timetable
    value: float
    outcome: SolveOutcome
    delays: dict[int, DelaySolution] = field(default_factory=dict)  # rpt master only

    @property
    def lower(self) -> float:
        """The optimum when proven, else the solver's dual bound."""
        if self.outcome.status is Status.OPTIMAL or self.outcome.bound is None:
            return self.value
        return min(self.value, self.outcome.bound)


def solve_master(ean: PeriodicEan, pool, kind: str = "frpt", start: Timetable | None = None,
                 time_limit: float | None = None, mip_gap: float = 1e-4,
                 start_delays: dict[int, DelaySolution] | None = None) -> MasterResult:
    """Solve the no-wait (``frpt``) or optimal-dispatching (``rpt``) master over ``pool``.

    ``start`` warm-starts from a timetable; for ``rpt`` the delay plans in
    ``start_delays`` (valid for ``start``) replace the default no-wait plans.
    """
    m = build_frpt_master(ean, pool) if kind == "frpt" else build_rpt_master(ean, pool)
    m.time_limit = time_limit
    m.mip_gap = mip_gap
    if start is not None:
        apply_start(m, _master_start(ean, start, pool, kind, start_delays))
    out = solve(m)
    if not out.status.has_incumbent:
        raise InfeasibleTimetableError(f"{kind} master returned {out.status.value}")
    plans = _master_delays(ean, m, out, pool) if kind == "rpt" else {}
    return MasterResult(extract_timetable(ean, m, out), out.objective, out, plans)


# --------------------------------------------------------------------------
# run state
# --------------------------------------------------------------------------

@dataclass
class TraceRow:
    k: int
    lb: float
    ub: float
    wall_seconds: float
    pool_size: int
    master_value: float = math.nan
    master_status: str = ""
    search_status: str = ""


@dataclass
class RobustRunState:
    """Bounds, scenario pool and timings of a robustification run."""

    pool: list[Scenario] = field(default_factory=list)
    timetable: Timetable | None = None
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)
    trace: list[TraceRow] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def k(self) -> int:
        return len(self.trace)

    def record(self, lb, ub, wall, master_value=math.nan, master_status="", search_status=""):
        self.lb.append(lb)
        self.ub.append(ub)
        self.wall.append(wall)
        self.trace.append(TraceRow(len(self.trace) + 1, lb, ub, wall, len(self.pool),
                                   master_value, master_status, search_status))


# --------------------------------------------------------------------------
# cutting planes
# --------------------------------------------------------------------------

def cutting_plane(ean: PeriodicEan, unc: UncertaintySet, s_nom: Scenario | None = None,
                  eps: float = 1e-3, iter_cap: int = 20, step_time_limit: float | None = 60.0,
                  start: Timetable | None = None, resolution: float = 1.0,
                  mip_gap: float = 1e-4):
    """Alternate the no-wait master and the worst-case program until the bounds meet.

    Returns ``(timetable, ub, state)`` where ``timetable`` is the master
    solution whose worst case gave the final upper bound ``ub``.  Steps cut
    short by ``step_time_limit`` contribute solver bounds rather than
    incumbent values, so ``lb`` and ``ub`` stay valid; the incumbent master
    values are kept in the trace.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    state = RobustRunState(pool=[s_nom if s_nom is not None else zero_scenario()])
    lb, ub = -math.inf, math.inf
    best = None
    prev = start
    t0 = time.perf_counter()
    while ub - lb > eps and state.k < iter_cap:
        master = solve_master(ean, state.pool, "frpt", prev, step_time_limit, mip_gap)
        prev = master.timetable
        lb = max(lb, master.lower)      # the pool only grows
        wc = solve_fwc(ean, master.timetable, unc, cutoff=ub if math.isfinite(ub) else None,
                       time_limit=step_time_limit, resolution=resolution, mip_gap=mip_gap)
        if wc.status is not Status.CUTOFF_TRIGGERED and wc.upper < ub:
            ub, best = wc.upper, master.timetable
        new = not in_pool(wc.scenario, state.pool)
        if new:
            state.pool.append(wc.scenario)
        state.record(lb, ub, time.perf_counter() - t0, master.value,
                     master.outcome.status.value, wc.status.value)
        log.info("cutting plane k=%d lb=%.3f ub=%.3f pool=%d", state.k, lb, ub, len(state.pool))
        if not new and ub - lb > eps:
            state.stop_reason = "no new scenario"
            break
    if not state.stop_reason:
        state.stop_reason = "converged" if ub - lb <= eps else "iteration cap"
    state.timetable = best if best is not None else prev
    return state.timetable, ub, state


# --------------------------------------------------------------------------
# sampling heuristic
# --------------------------------------------------------------------------

def _sample_value(ean, tt, s, ub, time_limit):
    """``(travel time, plan)`` of ``s`` under optimal delay management, or None if provably <= ub."""
    nw = no_wait_propagate(ean, tt, s)
    base = nominal_travel_time(ean, tt)
    if base + nw.objective <= ub:
        return None
    sol = solve_pdm(ean, tt, s, time_limit=time_limit, cutoff=ub - base if ub > 0 else None)
    if sol.status is Status.CUTOFF_TRIGGERED:
        return None
    return base + sol.objective, sol


def iterative_heuristic(ean: PeriodicEan, unc: UncertaintySet, s_nom: Scenario | None = None,
                        n_iter: int = 20, n_samples: int = 100, pdm_time_limit: float | None = 10.0,
                        step_time_limit: float | None = 60.0, seed=0, start: Timetable | None = None,
                        mip_gap: float = 1e-4, jobs: int = 1):
    """Grow the pool with the worst of ``n_samples`` sampled scenarios per round.

    Returns ``(timetable, lb, state)``: the last master solution and its
    objective (the solver's dual bound if the master was cut short).
    Samples are drawn from ``unc`` with a seed sequence derived from ``seed``.
    """
    if n_iter < 1 or n_samples < 1:
        raise ValueError("n_iter and n_samples must be positive")
    state = RobustRunState(pool=[s_nom if s_nom is not None else zero_scenario()])
    ev_keys, act_keys = scenario_domain(ean)
    seeds = np.random.SeedSequence(seed).spawn(n_iter)
    prev, lb = start, -math.inf
    plans: dict[int, DelaySolution] = {}
    t0 = time.perf_counter()
    for k in range(n_iter):
        master = solve_master(ean, state.pool, "rpt", prev, step_time_limit, mip_gap, plans)
        prev, lb, plans = master.timetable, max(lb, master.lower), master.delays
        status = master.outcome.status.value
        if k == n_iter - 1:
            # a scenario found now could not influence the returned timetable
            state.record(lb, math.nan, time.perf_counter() - t0, master.value, status)
            state.stop_reason = "iteration limit"
            break
        rng = np.random.default_rng(seeds[k])
        samples = [sample_scenario(unc, ev_keys, act_keys, rng) for _ in range(n_samples)]
        ub, worst, worst_plan = 0.0, None, None
        batch = max(1, int(jobs))
        with ThreadPoolExecutor(max_workers=batch) if batch > 1 else _Serial() as pool:
            for lo in range(0, len(samples), batch):
                chunk = [s for s in samples[lo:lo + batch]]
                vals = list(pool.map(lambda s, u=ub: None if in_pool(s, state.pool)
                                     else _sample_value(ean, prev, s, u, pdm_time_limit), chunk))
                for s, v in zip(chunk, vals):
                    if v is not None and v[0] > ub:
                        (ub, worst_plan), worst = v, s
        if worst is None:
            state.record(lb, ub, time.perf_counter() - t0, master.value, status)
            state.stop_reason = "no new scenario"
            break
        # the sampled plan is valid for ``prev`` and warm-starts the next master
        plans[len(state.pool)] = worst_plan
        state.pool.append(worst)
        state.record(lb, ub, time.perf_counter() - t0, master.value, status)
        log.info("heuristic k=%d lb=%.3f sampled worst=%.3f", state.k, lb, ub)
    state.timetable = prev
    return prev, lb, state


class _Serial:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


__all__ = [
    "MasterResult", "RobustRunState", "TraceRow", "WorstCase", "build_frpt_master", "build_fwc",
    "build_rpt_master", "cutting_plane", "fwc_start", "greedy_scenario", "in_pool",
    "iterative_heuristic", "solve_fwc", "solve_master", "zero_scenario",
]
