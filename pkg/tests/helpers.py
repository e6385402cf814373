"""Shared fixtures: tiny random line networks and brute-force oracles."""
from __future__ import annotations

import itertools
import math

import numpy as np

from robust_timetabling.dm import no_wait_propagate, tau
from robust_timetabling.ean import PeriodicEan, Scenario, scenario_domain, timetable_durations
from robust_timetabling.instances import build_line_network
from robust_timetabling.pesp import solve_pesp

SMALL_LINES = [
    {"A": ["x", "y", "z"], "B": ["w", "y", "v"]},
    {"A": ["x", "y"], "B": ["w", "y"], "C": ["y", "v"]},
    {"A": ["x", "y", "z"], "B": ["z", "y", "w"]},
]


def small_network(seed: int, period: int = 10) -> PeriodicEan:
    rng = np.random.default_rng(seed)
    lines = SMALL_LINES[seed % len(SMALL_LINES)]
    return build_line_network(lines, rng, period=period, drive_range=(1, 3), drive_buffer=2,
                              wait_lower=1, wait_buffer=1, change_lower=(1, 2),
                              change_weight=(1, 5), load_range=(2, 10))


def random_timetable(ean: PeriodicEan, seed: int, tries: int = 2000):
    """A uniformly drawn feasible timetable, or the PESP optimum if rejection fails."""
    rng = np.random.default_rng(seed)
    ids = [e.id for e in ean.events]
    for _ in range(tries):
        tt = timetable_durations(ean, {e: int(rng.integers(ean.period)) for e in ids})
        if tt.feasible:
            return tt
    return solve_pesp(ean).timetable


def grid_scenarios(ean: PeriodicEan, sigma: float, rho: float, step: float = 0.5):
    """Every scenario with entries on the ``step`` grid, each <= sigma, total <= rho."""
    ev, act = scenario_domain(ean)
    keys = [("e", k) for k in ev] + [("a", k) for k in act]
    cap = int(math.floor(sigma / step + 1e-9))
    budget = int(math.floor(rho / step + 1e-9))

    def rec(pos, left):
        if pos == len(keys):
            yield ()
            return
        for u in range(min(cap, left) + 1):
            for rest in rec(pos + 1, left - u):
                yield (u,) + rest

    for units in rec(0, budget):
        e = {k: u * step for (t, k), u in zip(keys, units) if t == "e" and u}
        a = {k: u * step for (t, k), u in zip(keys, units) if t == "a" and u}
        yield Scenario(e, a)


def brute_force_worst(ean, tt, sigma, rho, step=0.5):
    best, arg = -math.inf, None
    for s in grid_scenarios(ean, sigma, rho, step):
        v = tau(ean, tt, no_wait_propagate(ean, tt, s))
        if v > best:
            best, arg = v, s
    return best, arg


def count_grid(n: int, cap: int, budget: int) -> int:
    return sum(1 for u in itertools.product(range(cap + 1), repeat=n) if sum(u) <= budget)
