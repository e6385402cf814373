"""Nominal periodic timetabling: the PESP integer program and a zero-buffer heuristic."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ean import Activity, PeriodicEan, Timetable, timetable_durations, nominal_travel_time
from .milp import Domain, MilpModel, SolveOutcome, quicksum, solve


class InfeasibleTimetableError(RuntimeError):
    pass


def effective_upper(a: Activity, period: int) -> float:
    """Upper bound used in models; windows spanning a full period lose nothing when capped."""
    return min(a.upper, a.lower + period - 1)


def add_timetable_block(m: MilpModel, ean: PeriodicEan, prefix: str = ""):
    """Add event-time and modulo variables with the PESP window rows to ``m``.

    Drive and wait activities form node-disjoint line paths, a spanning
    forest, so their modulo parameter can be fixed to zero: line start
    events live in ``[0, T-1]`` and every later event of the line runs on
    unwrapped.  Only change activities keep an integer modulo variable.
    Returns ``(pi, z, dur)``: event-time vars, change modulo vars and, per
    activity, the affine duration expression.
    """
    T = ean.period
    pi, lo, hi = {}, {}, {}
    for e in ean.propagation_order:
        a = ean.incoming_dw.get(e)
        if a is None:
            lo[e], hi[e] = 0, T - 1
        else:
            lo[e] = lo[a.source] + a.lower
            hi[e] = hi[a.source] + effective_upper(a, T)
        pi[e] = m.add_var(f"{prefix}pi[{e}]", lo[e], hi[e], Domain.INTEGER)
    z, dur = {}, {}
    for a in ean.activities:
        up = effective_upper(a, T)
        if a.is_change:
            z_lo = math.ceil((a.lower - (hi[a.target] - lo[a.source])) / T)
            z_hi = math.floor((up - (lo[a.target] - hi[a.source])) / T)
            z[a.id] = m.add_var(f"{prefix}z[{a.id}]", z_lo, z_hi, Domain.INTEGER)
            d = pi[a.target] - pi[a.source] + T * z[a.id]
        else:
            d = pi[a.target] - pi[a.source]
        dur[a.id] = d
        m.add(d >= a.lower, f"{prefix}lo[{a.id}]")
        m.add(d <= up, f"{prefix}up[{a.id}]")
    return pi, z, dur


def unwrapped_times(ean: PeriodicEan, tt: Timetable) -> dict[str, float]:
    """Event times with line starts in ``[0, T)`` and later events summed along the line."""
    times = {}
    for e in ean.propagation_order:
        a = ean.incoming_dw.get(e)
        times[e] = tt.times[e] if a is None else times[a.source] + tt.durations[a.id]
    return times


def timetable_start(ean: PeriodicEan, tt: Timetable, prefix: str = "") -> dict[str, float]:
    """Variable-name -> value warm start for a block built by :func:`add_timetable_block`."""
    T = ean.period
    times = unwrapped_times(ean, tt)
    start = {f"{prefix}pi[{e}]": float(t) for e, t in times.items()}
    for a in ean.change_activities:
        start[f"{prefix}z[{a.id}]"] = float(round(
            (tt.durations[a.id] - times[a.target] + times[a.source]) / T))
    return start


def build_pesp(ean: PeriodicEan) -> MilpModel:
    """PESP: minimise sum_a w_a (pi_j - pi_i + z_a T) subject to the activity windows."""
    m = MilpModel("pesp")
    _, _, dur = add_timetable_block(m, ean)
    m.minimize(quicksum(a.weight * dur[a.id] for a in ean.activities if a.weight))
    return m


def extract_timetable(ean: PeriodicEan, m: MilpModel, outcome: SolveOutcome, prefix: str = "") -> Timetable:
    times = {e.id: int(round(outcome[m.var(f"{prefix}pi[{e.id}]")])) % ean.period for e in ean.events}
    return timetable_durations(ean, times)


def apply_start(m: MilpModel, start: dict[str, float]) -> None:
    m.start = {m.var(k).index: v for k, v in start.items() if m.has_var(k)}


@dataclass
class PespResult:
    timetable: Timetable
    outcome: SolveOutcome
    model: MilpModel

    @property
    def objective(self) -> float:
        return self.outcome.objective


def solve_pesp(ean: PeriodicEan, time_limit: float | None = None,
               start: Timetable | None = None, mip_gap: float = 1e-4) -> PespResult:
    m = build_pesp(ean)
    m.time_limit = time_limit
    m.mip_gap = mip_gap
    if start is not None:
        apply_start(m, timetable_start(ean, start))
    out = solve(m)
    if not out.status.has_incumbent:
        raise InfeasibleTimetableError(f"PESP solve returned {out.status.value}")
    return PespResult(extract_timetable(ean, m, out), out, m)


# --------------------------------------------------------------------------
# zero-buffer heuristic
# --------------------------------------------------------------------------

def _line_layout(ean: PeriodicEan) -> dict[str, dict[str, int]]:
    """Line label -> {event id: time relative to the line start} with zero buffers."""
    layout = {}
    events = ean.event_by_id
    for start, path in ean.line_paths.items():
        rel = {start: 0}
        for prev, nxt in zip(path, path[1:]):
            a = ean.outgoing_dw[prev]
            rel[nxt] = rel[prev] + int(a.lower)
        layout[events[start].line] = rel
    return layout


def match_heuristic(ean: PeriodicEan, seed=None, improve: bool = True,
                    max_passes: int = 50) -> Timetable:
    """Zero-buffer timetable with greedily merged line offsets.

    Every drive and wait activity runs at its lower bound, so each line is a
    rigid block that can only be shifted.  Starting from the line with the
    heaviest change traffic, the line with the most change weight towards the
    already placed cluster is added next, at the shift (scanned over all ``T``
    values) minimising the weighted change durations to the cluster.  Ties go
    to the lowest line label, or to a seeded random order when ``seed`` is
    given.  With ``improve`` the merged offsets are then polished line by
    line: each line is re-shifted against all others until no single shift
    lowers the weighted change durations.
    """
    T = ean.period
    events = ean.event_by_id
    layout = _line_layout(ean)
    lines = sorted(layout)
    if seed is not None:
        rank = {l: i for i, l in enumerate(np.random.default_rng(seed).permutation(lines))}
    else:
        rank = {l: i for i, l in enumerate(lines)}

    for a in ean.dw_activities:
        if a.lower > a.upper:
            raise InfeasibleTimetableError(f"activity {a.id}: zero buffer violates its window")

    # change activities between each ordered pair of lines
    between: dict[tuple[str, str], list[Activity]] = {}
    for a in ean.change_activities:
        key = (events[a.source].line, events[a.target].line)
        between.setdefault(key, []).append(a)

    def links_of(line: str, cluster) -> list[Activity]:
        return [a for other in cluster if other != line
                for key in ((line, other), (other, line)) for a in between.get(key, ())]

    def cost_at(line: str, links: list[Activity], o: int) -> float:
        """Weighted change durations of ``links`` with ``line`` shifted to ``o``."""
        cost = 0.0
        for a in links:
            src_line, tgt_line = events[a.source].line, events[a.target].line
            ts = ((o if src_line == line else offset[src_line]) + layout[src_line][a.source]) % T
            tj = ((o if tgt_line == line else offset[tgt_line]) + layout[tgt_line][a.target]) % T
            d = a.lower + (tj - ts - a.lower) % T
            if d > a.upper:
                return math.inf
            cost += a.weight * d
        return cost

    def best_shift(line: str, links: list[Activity]):
        best, best_cost = None, math.inf
        for o in range(T):
            cost = cost_at(line, links, o)
            if cost < best_cost - 1e-9:
                best, best_cost = o, cost
        return best, best_cost

    def weight_between(line: str, cluster: set[str]) -> float:
        return sum(a.weight for other in cluster for key in ((line, other), (other, line))
                   for a in between.get(key, ()))

    total_weight = {l: sum(a.weight for (x, y), acts in between.items() if l in (x, y) for a in acts)
                    for l in lines}
    offset: dict[str, int] = {}
    first = min(lines, key=lambda l: (-total_weight[l], rank[l]))
    offset[first] = 0
    placed = {first}
    while len(placed) < len(lines):
        rest = [l for l in lines if l not in placed]
        nxt = min(rest, key=lambda l: (-weight_between(l, placed), rank[l]))
        best, _ = best_shift(nxt, links_of(nxt, placed))
        if best is None:
            raise InfeasibleTimetableError(f"no feasible shift for line {nxt}")
        offset[nxt] = best
        placed.add(nxt)

    order = sorted(lines, key=lambda l: rank[l])
    for _ in range(max_passes if improve else 0):
        moved = False
        for line in order:
            links = links_of(line, lines)
            if not links:
                continue
            best, best_cost = best_shift(line, links)
            if best is not None and best_cost < cost_at(line, links, offset[line]) - 1e-9:
                offset[line] = best
                moved = True
        if not moved:
            break

    times = {}
    for line, rel in layout.items():
        for e, t in rel.items():
            times[e] = (offset[line] + t) % T
    tt = timetable_durations(ean, times)
    if not tt.feasible:
        raise InfeasibleTimetableError("; ".join(tt.violations))
    return tt


def apply_passenger_cutoff(ean: PeriodicEan, cutoff: float) -> PeriodicEan:
    """Drop change activities carrying ``cutoff`` or fewer passengers."""
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative")
    kept = [a for a in ean.activities if not a.is_change or a.weight > cutoff]
    return ean.replace_activities(kept)


def pesp_objective(ean: PeriodicEan, tt: Timetable) -> float:
    return nominal_travel_time(ean, tt)


__all__ = [
    "InfeasibleTimetableError", "PespResult", "add_timetable_block", "apply_passenger_cutoff",
    "build_pesp", "extract_timetable", "match_heuristic", "pesp_objective", "solve_pesp",
    "timetable_start", "apply_start", "effective_upper", "unwrapped_times",
]
