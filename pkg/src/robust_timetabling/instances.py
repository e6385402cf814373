"""Instance construction: the two-line worked example and synthetic line networks."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .ean import Activity, ActivityKind, Event, EventKind, PeriodicEan, UncertaintySet


@dataclass(frozen=True)
class Instance:
    name: str
    ean: PeriodicEan
    uncertainty: UncertaintySet
    passenger_cutoff: float = 0.0
    seed: int | None = None


# (sigma, rho, passenger cutoff) per dataset scale
DEFAULTS = {
    "toy": (50.0, 5.0, 0.0),
    "grid": (100.0, 5.0, 10.0),
    "bahn": (5000.0, 10.0, 300.0),
}


# --------------------------------------------------------------------------
# worked example
# --------------------------------------------------------------------------

EXAMPLE_TIMES = {
    "1_GOE_dep": 0, "1_H_arr": 15, "1_H_dep": 18, "1_HH_arr": 30, "1_HH_dep": 33, "1_HB_arr": 50,
    "2_OL_dep": 35, "2_HB_arr": 57, "2_HB_dep": 0, "2_H_arr": 22, "2_H_dep": 25, "2_BS_arr": 40,
}


def two_line_example(change_lower: int = 4, buffer: int = 5, dw_weight: float = 1.0,
            change_weight: float = 1.0, departure_weight: float = 1.0,
            arrival_weight: float = 1.0) -> PeriodicEan:
    """Two lines meeting at H and HB, T = 60.

    Drive and wait lower bounds equal the example timetable's durations (no
    slack); upper bounds leave ``buffer`` minutes.  Change activities have
    lower bound ``change_lower`` and no upper bound.
    """
    stops1 = ["GOE", "H", "HH", "HB"]
    stops2 = ["OL", "HB", "H", "BS"]
    events, acts = [], []
    for line, stops in (("1", stops1), ("2", stops2)):
        seq = []
        for k, st in enumerate(stops):
            if k > 0:
                seq.append((f"{line}_{st}_arr", EventKind.ARRIVAL, st))
            if k < len(stops) - 1:
                seq.append((f"{line}_{st}_dep", EventKind.DEPARTURE, st))
        for eid, kind, st in seq:
            w = departure_weight if kind is EventKind.DEPARTURE else arrival_weight
            events.append(Event(eid, kind, st, line, w))
        for (i, ki, _), (j, _, _) in zip(seq, seq[1:]):
            dur = (EXAMPLE_TIMES[j] - EXAMPLE_TIMES[i]) % 60
            kind = ActivityKind.DRIVE if ki is EventKind.DEPARTURE else ActivityKind.WAIT
            acts.append(Activity(f"{i}->{j}", kind, i, j, dur, dur + buffer, dw_weight))
    for i, j in (("1_H_arr", "2_H_dep"), ("1_HB_arr", "2_HB_dep"), ("2_H_arr", "1_H_dep")):
        acts.append(Activity(f"{i}->{j}", ActivityKind.CHANGE, i, j, change_lower, math.inf,
                             change_weight))
    return PeriodicEan(tuple(events), tuple(acts), 60)


# --------------------------------------------------------------------------
# line networks
# --------------------------------------------------------------------------

def build_line_network(lines: dict[str, list[str]], rng: np.random.Generator, *,
                       period: int = 60, drive_lower: dict | None = None,
                       drive_range=(3, 10), drive_buffer: int = 4, wait_lower: int = 1,
                       wait_buffer: int = 3, change_lower=(2, 3), change_weight=(1, 30),
                       load_range=(10, 100), alight_share: float = 0.3,
                       change_prob: float = 1.0) -> PeriodicEan:
    """Turn directed lines (station sequences) into a periodic EAN.

    Both directions of an edge share one running time.  Changes join every
    arrival to every departure of another line at the same station, except the
    opposite direction of the same line (labels ``X+``/``X-``); with
    ``change_prob < 1`` each candidate is kept with that probability.  Passenger
    weights are flow-consistent: boardings, alightings and change flows add
    up along every train, with change flows drawn from ``change_weight`` and
    train loads targeted at ``load_range``.
    """
    drive_lower = {} if drive_lower is None else drive_lower
    ev_kind, ev_station, ev_line = {}, {}, {}
    seqs: dict[str, list[str]] = {}
    for name, stops in lines.items():
        seq = []
        for k, st in enumerate(stops):
            for kind, tag, present in ((EventKind.ARRIVAL, "arr", k > 0),
                                       (EventKind.DEPARTURE, "dep", k < len(stops) - 1)):
                if present:
                    e = f"{name}:{k}:{tag}"
                    seq.append(e)
                    ev_kind[e], ev_station[e], ev_line[e] = kind, st, name
        seqs[name] = seq

    def base(line):
        return line[:-1] if line[-1] in "+-" else line

    dw = []
    for name, stops in lines.items():
        seq = seqs[name]
        for i, j in zip(seq, seq[1:]):
            if ev_kind[i] is EventKind.DEPARTURE:
                edge = tuple(sorted((ev_station[i], ev_station[j])))
                if edge not in drive_lower:
                    drive_lower[edge] = int(rng.integers(drive_range[0], drive_range[1] + 1))
                lo = drive_lower[edge]
                dw.append([f"{i}>{j}", ActivityKind.DRIVE, i, j, lo, lo + drive_buffer])
            else:
                dw.append([f"{i}>{j}", ActivityKind.WAIT, i, j, wait_lower, wait_lower + wait_buffer])

    by_station: dict[str, list[str]] = {}
    for e, st in ev_station.items():
        by_station.setdefault(st, []).append(e)
    changes = []
    for st in sorted(by_station):
        evs = sorted(by_station[st])
        arrs = [e for e in evs if ev_kind[e] is EventKind.ARRIVAL]
        deps = [e for e in evs if ev_kind[e] is EventKind.DEPARTURE]
        for i in arrs:
            for j in deps:
                li, lj = ev_line[i], ev_line[j]
                if li == lj or base(li) == base(lj):
                    continue
                if change_prob < 1.0 and rng.random() >= change_prob:
                    continue
                lo = int(rng.integers(change_lower[0], change_lower[1] + 1))
                w = int(rng.integers(change_weight[0], change_weight[1] + 1))
                changes.append([f"{i}>{j}", ActivityKind.CHANGE, i, j, lo, math.inf, w])

    ch_in: dict[str, float] = {}
    ch_out: dict[str, float] = {}
    for c in changes:
        ch_out[c[2]] = ch_out.get(c[2], 0) + c[6]
        ch_in[c[3]] = ch_in.get(c[3], 0) + c[6]

    ev_weight: dict[str, float] = {}
    dw_weight: dict[str, float] = {}
    for name in lines:
        seq = seqs[name]
        load = 0
        for pos, e in enumerate(seq):
            if ev_kind[e] is EventKind.DEPARTURE:
                nxt = seq[pos + 1]
                target = max(int(rng.integers(load_range[0], load_range[1] + 1)),
                             load + ch_in.get(e, 0), ch_out.get(nxt, 0))
                ev_weight[e] = target - load - ch_in.get(e, 0)
                dw_weight[f"{e}>{nxt}"] = load = target
            else:
                avail = load - ch_out.get(e, 0)
                if pos == len(seq) - 1:
                    alight = avail
                else:
                    alight = int(rng.binomial(avail, alight_share))
                ev_weight[e] = alight
                if pos < len(seq) - 1:
                    load = avail - alight
                    dw_weight[f"{e}>{seq[pos + 1]}"] = load

    events = tuple(Event(e, ev_kind[e], ev_station[e], ev_line[e], float(ev_weight[e]))
                   for name in lines for e in seqs[name])
    acts = [Activity(aid, k, i, j, lo, hi, float(dw_weight[aid])) for aid, k, i, j, lo, hi in dw]
    acts += [Activity(aid, k, i, j, lo, hi, float(w)) for aid, k, i, j, lo, hi, w in changes]
    return PeriodicEan(events, tuple(acts), period)


TOY_LINES = {
    "L1": ["A", "B", "C", "D", "E"],
    "L2": ["F", "B", "C", "H"],
    "L3": ["A", "B", "F", "G", "D", "E"],
    "L4": ["H", "C", "D", "G", "F"],
}


def _both_directions(lines: dict[str, list[str]]) -> dict[str, list[str]]:
    out = {}
    for name, stops in lines.items():
        out[f"{name}+"] = list(stops)
        out[f"{name}-"] = list(reversed(stops))
    return out


def grid_lines(size: int = 5) -> dict[str, list[str]]:
    """Row and column lines over a ``size x size`` lattice of stations ``r.c``."""
    lines = {}
    for r in range(size):
        lines[f"R{r}"] = [f"{r}.{c}" for c in range(size)]
    for c in range(size):
        lines[f"C{c}"] = [f"{r}.{c}" for r in range(size)]
    return lines


def _bahn_lines(rng: np.random.Generator, n_stations: int, n_edges: int, n_lines: int):
    pts = rng.random((n_stations, 2))
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    # Prim's spanning tree, then the shortest remaining edges
    in_tree = {0}
    edges = set()
    best = dist[0].copy()
    parent = np.zeros(n_stations, dtype=int)
    best[0] = np.inf
    for _ in range(n_stations - 1):
        cand = np.where([i not in in_tree for i in range(n_stations)], best, np.inf)
        k = int(np.argmin(cand))
        edges.add(tuple(sorted((k, int(parent[k])))))
        in_tree.add(k)
        closer = dist[k] < best
        parent[closer] = k
        best = np.minimum(best, dist[k])
        best[list(in_tree)] = np.inf
    order = np.dstack(np.unravel_index(np.argsort(dist, axis=None), dist.shape))[0]
    for i, j in order:
        if len(edges) >= n_edges:
            break
        if i < j:
            edges.add((int(i), int(j)))
    adj: dict[int, list[int]] = {i: [] for i in range(n_stations)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)

    def path(a, b):
        prev = {a: None}
        q = deque([a])
        while q:
            u = q.popleft()
            if u == b:
                break
            for v in adj[u]:
                if v not in prev:
                    prev[v] = u
                    q.append(v)
        out = [b]
        while prev[out[-1]] is not None:
            out.append(prev[out[-1]])
        return out[::-1]

    lines = {}
    while len(lines) < n_lines:
        a, b = (int(x) for x in rng.choice(n_stations, 2, replace=False))
        p = path(a, b)
        if len(p) >= 6:
            lines[f"B{len(lines)}"] = [f"S{i}" for i in p]
    return lines


def generate_instance(kind: str, seed: int | None = 0, *, period: int = 60,
                      sigma: float | None = None, rho: float | None = None,
                      passenger_cutoff: float | None = None, grid_size: int = 5,
                      **weights) -> Instance:
    """Synthetic instance of the requested scale.

    ``toy``: 8 stations, 8 edges, 4 lines run in both directions.
    ``grid``: 5 x 5 lattice (40 edges) with a line along every row and column.
    ``bahn``: 250 stations, 326 edges, 60 lines; large, meant for smoke tests.
    Keyword ``weights`` are forwarded to :func:`build_line_network`.
    """
    rng = np.random.default_rng(seed)
    if kind == "toy":
        lines = _both_directions(TOY_LINES)
        weights = {"change_prob": 0.15, **weights}
    elif kind == "grid":
        lines = _both_directions(grid_lines(grid_size))
    elif kind == "bahn":
        lines = _both_directions(_bahn_lines(rng, 250, 326, 60))
        weights = {"change_prob": 0.01, "load_range": (50, 2000), "change_weight": (1, 1000),
                   **weights}
    elif kind == "example":
        ean = two_line_example()
        unc = UncertaintySet(10.0 if sigma is None else sigma, 10.0 if rho is None else rho)
        return Instance("example", ean, unc, passenger_cutoff or 0.0, seed)
    else:
        raise ValueError(f"unknown instance kind {kind!r}")
    ean = build_line_network(lines, rng, period=period, **weights)
    s0, r0, c0 = DEFAULTS[kind]
    unc = UncertaintySet(s0 if sigma is None else sigma, r0 if rho is None else rho)
    cutoff = c0 if passenger_cutoff is None else passenger_cutoff
    return Instance(f"{kind}-{seed}", ean, unc, cutoff, seed)
