"""Periodic event-activity networks, timetables, uncertainty sets and rollout.

All event and activity identifiers are opaque strings.  Times of a periodic
timetable are integer minutes in ``[0, T-1]``; delays are floats.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

FEAS_TOL = 1e-6


class EventKind(str, Enum):
    DEPARTURE = "departure"
    ARRIVAL = "arrival"


class ActivityKind(str, Enum):
    DRIVE = "drive"
    WAIT = "wait"
    CHANGE = "change"


@dataclass(frozen=True)
class Event:
    id: str
    kind: EventKind
    station: str
    line: str
    weight: float = 0.0  # boarding (departure) or alighting (arrival) passengers

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))


@dataclass(frozen=True)
class Activity:
    id: str
    kind: ActivityKind
    source: str
    target: str
    lower: float
    upper: float = math.inf
    weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ActivityKind(self.kind))

    @property
    def is_change(self) -> bool:
        return self.kind is ActivityKind.CHANGE


@dataclass(frozen=True)
class Violation:
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.element}: {self.message}"


@dataclass(frozen=True)
class PeriodicEan:
    """A periodic event-activity network with period ``period`` (minutes)."""

    events: tuple[Event, ...]
    activities: tuple[Activity, ...]
    period: int = 60

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "activities", tuple(self.activities))

    @cached_property
    def event_by_id(self) -> dict[str, Event]:
        return {e.id: e for e in self.events}

    @cached_property
    def activity_by_id(self) -> dict[str, Activity]:
        return {a.id: a for a in self.activities}

    @cached_property
    def dw_activities(self) -> tuple[Activity, ...]:
        return tuple(a for a in self.activities if not a.is_change)

    @cached_property
    def change_activities(self) -> tuple[Activity, ...]:
        return tuple(a for a in self.activities if a.is_change)

    @cached_property
    def incoming_dw(self) -> dict[str, Activity]:
        """Event id -> its (unique, in a valid EAN) incoming drive/wait activity."""
        return {a.target: a for a in self.dw_activities}

    @cached_property
    def outgoing_dw(self) -> dict[str, Activity]:
        return {a.source: a for a in self.dw_activities}

    @cached_property
    def start_events(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.events if e.id not in self.incoming_dw)

    @cached_property
    def line_paths(self) -> dict[str, tuple[str, ...]]:
        """Start event id -> ordered event ids along its drive/wait path."""
        paths = {}
        for start in self.start_events:
            path = [start]
            seen = {start}
            while path[-1] in self.outgoing_dw:
                nxt = self.outgoing_dw[path[-1]].target
                if nxt in seen:
                    break
                path.append(nxt)
                seen.add(nxt)
            paths[start] = tuple(path)
        return paths

    @cached_property
    def propagation_order(self) -> tuple[str, ...]:
        """Events ordered so every drive/wait predecessor comes first."""
        return tuple(e for path in self.line_paths.values() for e in path)

    @cached_property
    def departure_events(self) -> tuple[Event, ...]:
        return tuple(e for e in self.events if e.kind is EventKind.DEPARTURE)

    @property
    def passengers(self) -> float:
        """Passengers per period, counted as boardings at departure events."""
        return float(sum(e.weight for e in self.departure_events))

    def replace_activities(self, activities: Iterable[Activity]) -> "PeriodicEan":
        return PeriodicEan(self.events, tuple(activities), self.period)

    def replace_events(self, events: Iterable[Event]) -> "PeriodicEan":
        return PeriodicEan(tuple(events), self.activities, self.period)


def validate_ean(ean: PeriodicEan) -> list[Violation]:
    """Check the structural invariants of a periodic EAN.

    Returns one :class:`Violation` per problem; an empty list means the
    network is valid.
    """
    out: list[Violation] = []
    T = ean.period
    if T < 2:
        out.append(Violation("period", f"period must be >= 2, got {T}"))

    ids = [e.id for e in ean.events]
    if len(set(ids)) != len(ids):
        out.append(Violation("events", "duplicate event ids"))
    aids = [a.id for a in ean.activities]
    if len(set(aids)) != len(aids):
        out.append(Violation("activities", "duplicate activity ids"))
    for e in ean.events:
        if e.weight < 0:
            out.append(Violation(f"event {e.id}", f"negative weight {e.weight}"))

    events = ean.event_by_id
    in_count: dict[str, int] = {}
    out_count: dict[str, int] = {}
    for a in ean.activities:
        el = f"activity {a.id}"
        if a.source not in events or a.target not in events:
            out.append(Violation(el, "references unknown event"))
            continue
        if a.lower < 0:
            out.append(Violation(el, f"negative lower bound {a.lower}"))
        if a.lower > a.upper:
            out.append(Violation(el, f"L_a > U_a ({a.lower} > {a.upper})"))
        if a.weight < 0:
            out.append(Violation(el, f"negative weight {a.weight}"))
        src, tgt = events[a.source], events[a.target]
        if a.is_change:
            if src.kind is not EventKind.ARRIVAL or tgt.kind is not EventKind.DEPARTURE:
                out.append(Violation(el, "change must connect an arrival to a departure"))
            if src.line == tgt.line:
                out.append(Violation(el, "change connects events of the same line"))
        else:
            if src.line != tgt.line:
                out.append(Violation(el, "drive/wait activity leaves its line"))
            expected = (EventKind.DEPARTURE, EventKind.ARRIVAL) if a.kind is ActivityKind.DRIVE \
                else (EventKind.ARRIVAL, EventKind.DEPARTURE)
            if (src.kind, tgt.kind) != expected:
                out.append(Violation(el, f"{a.kind.value} activity has wrong endpoint kinds"))
            in_count[a.target] = in_count.get(a.target, 0) + 1
            out_count[a.source] = out_count.get(a.source, 0) + 1

    for eid, c in in_count.items():
        if c > 1:
            out.append(Violation(f"event {eid}", "line paths not node-disjoint (several incoming drive/wait activities)"))
    for eid, c in out_count.items():
        if c > 1:
            out.append(Violation(f"event {eid}", "line paths not node-disjoint (several outgoing drive/wait activities)"))

    if not ean.start_events and ean.events:
        out.append(Violation("events", "no start events: drive/wait activities contain a cycle"))
    covered = {e for p in ean.line_paths.values() for e in p}
    missing = [e for e in ids if e not in covered]
    if missing:
        out.append(Violation("events", f"events on a drive/wait cycle or unreachable: {missing[:5]}"))
    for start, path in ean.line_paths.items():
        lines = {events[e].line for e in path if e in events}
        if len(lines) > 1:
            out.append(Violation(f"line starting at {start}", "path mixes several line labels"))
    line_starts: dict[str, int] = {}
    for start in ean.start_events:
        line = events[start].line
        line_starts[line] = line_starts.get(line, 0) + 1
    for line, c in line_starts.items():
        if c > 1:
            out.append(Violation(f"line {line}", f"line consists of {c} separate paths"))
    return out


@dataclass(frozen=True)
class Timetable:
    """Event times modulo the period plus derived activity durations."""

    period: int
    times: Mapping[str, int]
    offsets: Mapping[str, int]
    durations: Mapping[str, int]
    violations: tuple[str, ...] = ()

    @property
    def feasible(self) -> bool:
        return not self.violations

    def slack(self, activity: Activity) -> float:
        return self.durations[activity.id] - activity.lower


def periodic_duration(pi_i: float, pi_j: float, lower: float, period: int) -> float:
    """Smallest value >= ``lower`` congruent to ``pi_j - pi_i`` modulo ``period``."""
    return lower + (pi_j - pi_i - lower) % period


def timetable_durations(ean: PeriodicEan, times: Mapping[str, int]) -> Timetable:
    """Derive modulo offsets and durations for a vector of event times.

    Each duration is the smallest value not below ``L_a`` congruent to
    ``pi_j - pi_i``.  Activities whose duration then exceeds ``U_a`` are listed
    in ``Timetable.violations``.
    """
    T = ean.period
    clean: dict[str, int] = {}
    for e in ean.events:
        if e.id not in times:
            raise ValueError(f"no time given for event {e.id}")
        t = times[e.id]
        if int(t) != t or not 0 <= t <= T - 1:
            raise ValueError(f"time of event {e.id} must be an integer in [0, {T - 1}], got {t}")
        clean[e.id] = int(t)
    offsets, durations, bad = {}, {}, []
    for a in ean.activities:
        pi_i, pi_j = clean[a.source], clean[a.target]
        dur = periodic_duration(pi_i, pi_j, a.lower, T)
        if dur != int(dur):
            raise ValueError(f"activity {a.id}: non-integer lower bound {a.lower}")
        dur = int(dur)
        durations[a.id] = dur
        offsets[a.id] = (dur - (pi_j - pi_i)) // T
        if dur > a.upper + FEAS_TOL:
            bad.append(f"activity {a.id}: no duration in [{a.lower}, {a.upper}] congruent to {pi_j - pi_i} mod {T}")
    return Timetable(T, clean, offsets, durations, tuple(bad))


def nominal_travel_time(ean: PeriodicEan, tt: Timetable) -> float:
    """Weighted sum of activity durations, sum_a w_a * pi_a."""
    return float(sum(a.weight * tt.durations[a.id] for a in ean.activities))


# --------------------------------------------------------------------------
# uncertainty
# --------------------------------------------------------------------------

class BudgetMode(str, Enum):
    AT_MOST = "budget_at_most"
    EXACT = "budget_exact"


@dataclass(frozen=True)
class UncertaintySet:
    """Scenarios with entries in ``[0, sigma]`` and total ``<= rho`` (or ``== rho * periods``)."""

    sigma: float
    rho: float
    mode: BudgetMode = BudgetMode.AT_MOST
    periods: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", BudgetMode(self.mode))
        if self.sigma < 0 or self.rho < 0:
            raise ValueError("sigma and rho must be nonnegative")

    @property
    def budget(self) -> float:
        return self.rho * self.periods if self.mode is BudgetMode.EXACT else self.rho


class InfeasibleBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Source delays; entries that are absent are zero.

    Keys are event ids / drive-wait activity ids on a periodic network, or
    rolled-out keys on an aperiodic one.
    """

    event_delays: Mapping[Hashable, float] = field(default_factory=dict)
    activity_delays: Mapping[Hashable, float] = field(default_factory=dict)

    def event(self, key) -> float:
        return self.event_delays.get(key, 0.0)

    def activity(self, key) -> float:
        return self.activity_delays.get(key, 0.0)

    @property
    def total(self) -> float:
        return float(sum(self.event_delays.values()) + sum(self.activity_delays.values()))

    @property
    def max_entry(self) -> float:
        vals = list(self.event_delays.values()) + list(self.activity_delays.values())
        return float(max(vals)) if vals else 0.0

    @property
    def is_zero(self) -> bool:
        return self.max_entry == 0.0

    def close_to(self, other: "Scenario", tol: float = 1e-9) -> bool:
        for mine, theirs in ((self.event_delays, other.event_delays),
                             (self.activity_delays, other.activity_delays)):
            for k in set(mine) | set(theirs):
                if abs(mine.get(k, 0.0) - theirs.get(k, 0.0)) > tol:
                    return False
        return True

    def scaled(self, factor: float) -> "Scenario":
        return Scenario({k: v * factor for k, v in self.event_delays.items()},
                        {k: v * factor for k, v in self.activity_delays.items()})


def check_scenario(s: Scenario, unc: UncertaintySet, ean: PeriodicEan | None = None,
                   tol: float = FEAS_TOL) -> list[str]:
    """List the ways ``s`` violates ``unc`` (and, given ``ean``, the no-change-delay rule)."""
    problems = []
    for name, table in (("event", s.event_delays), ("activity", s.activity_delays)):
        for k, v in table.items():
            if v < -tol or v > unc.sigma + tol:
                problems.append(f"{name} {k}: delay {v} outside [0, {unc.sigma}]")
    if unc.mode is BudgetMode.EXACT:
        if abs(s.total - unc.budget) > tol * max(1.0, unc.budget):
            problems.append(f"total {s.total} != budget {unc.budget}")
    elif s.total > unc.budget + tol:
        problems.append(f"total {s.total} > budget {unc.budget}")
    if ean is not None:
        for k, v in s.activity_delays.items():
            a = ean.activity_by_id.get(k)
            if a is not None and a.is_change and v != 0:
                problems.append(f"change activity {k} carries source delay {v}")
    return problems


def scenario_domain(ean: PeriodicEan) -> tuple[list[str], list[str]]:
    """Elements that may carry source delay: all events and drive/wait activities."""
    return [e.id for e in ean.events], [a.id for a in ean.dw_activities]


def _spread(total: float, n: int, sigma: float, rng: np.random.Generator,
            extra_free_cell: bool) -> np.ndarray:
    cells = n + 1 if extra_free_cell else n
    x = rng.exponential(size=cells)
    x *= total / x.sum()
    cap = np.full(cells, sigma, dtype=float)
    if extra_free_cell:
        cap[-1] = np.inf
    for _ in range(50):
        over = x > cap
        excess = float(np.sum(x[over] - cap[over]))
        x[over] = cap[over]
        if excess <= 1e-6:
            break
        free = x < cap
        if not free.any():
            break
        x[free] += excess / free.sum()
    np.minimum(x, cap, out=x)
    if not extra_free_cell:
        # absorb rounding left over from the redistribution rounds
        gap = total - x.sum()
        free = x < cap
        if free.any() and abs(gap) > 0:
            x[free] += gap / free.sum()
            np.clip(x, 0, cap, out=x)
    return x[:n]


def sample_scenario(unc: UncertaintySet, event_keys: Sequence[Hashable],
                    activity_keys: Sequence[Hashable], seed=None) -> Scenario:
    """Draw a random scenario from ``unc`` over the given elements.

    Exponential variates are normalised to the budget, clipped at sigma and the
    clipped mass is spread over the remaining entries.  In ``budget_at_most``
    mode one extra uncapped dummy cell takes part in the draw and its share is
    discarded, so totals fall below the budget.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keys = [("e", k) for k in event_keys] + [("a", k) for k in activity_keys]
    n = len(keys)
    budget = unc.budget
    if unc.mode is BudgetMode.EXACT and budget > unc.sigma * n + 1e-9:
        raise InfeasibleBudgetError(
            f"budget {budget} exceeds sigma*|domain| = {unc.sigma * n}")
    if n == 0 or budget == 0 or unc.sigma == 0:
        return Scenario({}, {})
    x = _spread(budget, n, unc.sigma, rng, extra_free_cell=unc.mode is BudgetMode.AT_MOST)
    ev, act = {}, {}
    for (tag, k), v in zip(keys, x):
        if v > 0:
            (ev if tag == "e" else act)[k] = float(v)
    return Scenario(ev, act)


# --------------------------------------------------------------------------
# rollout
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AperiodicEvent:
    key: tuple[str, int]  # (periodic event id, period index n)
    kind: EventKind
    weight: float
    time: float


@dataclass(frozen=True)
class AperiodicActivity:
    key: tuple[str, int, int]  # (periodic activity id, n, m)
    kind: ActivityKind
    source: tuple[str, int]
    target: tuple[str, int]
    lower: float
    weight: float

    @property
    def is_change(self) -> bool:
        return self.kind is ActivityKind.CHANGE


@dataclass(frozen=True)
class AperiodicEan:
    period: int
    horizon: tuple[float, float]
    events: tuple[AperiodicEvent, ...]
    activities: tuple[AperiodicActivity, ...]

    @cached_property
    def event_by_key(self) -> dict[tuple[str, int], AperiodicEvent]:
        return {e.key: e for e in self.events}

    @property
    def n_periods(self) -> float:
        lo, hi = self.horizon
        return (hi - lo) / self.period

    def copies_of(self, event_id: str) -> list[tuple[str, int]]:
        return [e.key for e in self.events if e.key[0] == event_id]


def rollout(ean: PeriodicEan, tt: Timetable, horizon: tuple[float, float] = (0, 480)) -> AperiodicEan:
    """Expand a periodic network and timetable over the closed horizon ``[L, U]``.

    Copy ``(e, n)`` exists iff ``L <= n*T + pi_e <= U``.  Activity copies join
    ``(i, n)`` to ``(j, m)`` when the aperiodic duration lies in the activity's
    window; windows of a full period or wider are capped at ``[L_a, L_a+T-1]``
    so that each source copy has exactly one successor copy.
    """
    lo, hi = horizon
    T = ean.period
    if hi - lo < T:
        warnings.warn("rollout horizon shorter than one period; network may be disconnected",
                      stacklevel=2)
    copies: dict[str, list[int]] = {}
    events = []
    for e in ean.events:
        p = tt.times[e.id]
        n_lo = math.ceil((lo - p) / T)
        n_hi = math.floor((hi - p) / T)
        ns = list(range(n_lo, n_hi + 1))
        copies[e.id] = ns
        for n in ns:
            events.append(AperiodicEvent((e.id, n), e.kind, e.weight, p + n * T))
    activities = []
    for a in ean.activities:
        pi_i, pi_j = tt.times[a.source], tt.times[a.target]
        upper = min(a.upper, a.lower + T - 1)
        targets = set(copies[a.target])
        for n in copies[a.source]:
            # all m with lower <= pi_j - pi_i + (m - n) T <= upper
            m_lo = n + math.ceil((a.lower - (pi_j - pi_i)) / T)
            m_hi = n + math.floor((upper - (pi_j - pi_i)) / T)
            for m in range(m_lo, m_hi + 1):
                if m in targets:
                    activities.append(AperiodicActivity(
                        (a.id, n, m), a.kind, (a.source, n), (a.target, m), a.lower, a.weight))
    return AperiodicEan(T, (lo, hi), tuple(events), tuple(activities))


def aperiodic_domain(aper: AperiodicEan) -> tuple[list, list]:
    return [e.key for e in aper.events], [a.key for a in aper.activities if not a.is_change]


def scenario_rollout(s: Scenario, aper: AperiodicEan) -> Scenario:
    """Copy periodic source delays onto every rolled-out repetition."""
    ev = {e.key: s.event(e.key[0]) for e in aper.events if s.event(e.key[0])}
    act = {a.key: s.activity(a.key[0]) for a in aper.activities
           if not a.is_change and s.activity(a.key[0])}
    return Scenario(ev, act)


def restrict_to_copy(s: Scenario, n: int) -> Scenario:
    """Inverse of :func:`scenario_rollout` on period index ``n``."""
    ev = {k[0]: v for k, v in s.event_delays.items() if k[1] == n}
    act = {k[0]: v for k, v in s.activity_delays.items() if k[1] == n}
    return Scenario(ev, act)
