"""Evaluate periodic timetables on a rolled-out network under sampled delays.

A timetable is rolled out over the horizon, delay scenarios whose total
equals the budget times the number of periods are drawn over the aperiodic
events and drive/wait activities, and delay management is solved for each.
Travel times are normalised per passenger trip.
"""
from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dm import aperiodic_nominal, solve_dm
from .ean import (BudgetMode, PeriodicEan, Timetable, UncertaintySet, aperiodic_domain, rollout,
                  sample_scenario, timetable_durations)
from .instances import Instance
from .io import write_rows
from .pesp import InfeasibleTimetableError, apply_passenger_cutoff, match_heuristic
from .robust import cutting_plane, iterative_heuristic

log = logging.getLogger(__name__)

ALGORITHMS = ("match", "frpt", "rpts")

# sub-seeds derived from the one configured seed
SAMPLING_SEED_OFFSET = 1
EVALUATION_SEED_OFFSET = 2


@dataclass
class EvalReport:
    """Nominal and per-scenario delayed travel time of one timetable, in minutes per trip."""

    algorithm: str
    instance: str
    nominal: float
    delayed: list[float] = field(default_factory=list)
    dm_status: list[str] = field(default_factory=list)

    @property
    def min_delayed(self) -> float:
        return min(self.delayed)

    @property
    def max_delayed(self) -> float:
        return max(self.delayed)

    @property
    def avg_delayed(self) -> float:
        return statistics.fmean(self.delayed)

    @property
    def avg_passenger_delay(self) -> float:
        return self.avg_delayed - self.nominal


def evaluation_uncertainty(unc: UncertaintySet, horizon, period: int) -> UncertaintySet:
    """Budget-exact set over the horizon: the periodic budget times (U - L) / T."""
    lo, hi = horizon
    return UncertaintySet(unc.sigma, unc.rho, BudgetMode.EXACT, (hi - lo) / period)


def scenario_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def evaluate(ean: PeriodicEan, tt: Timetable, unc: UncertaintySet, horizon=(0, 480),
             n_scenarios: int = 10, seed=0, dm_time_limit: float | None = None,
             algorithm: str = "", instance: str = "", jobs: int = 1) -> EvalReport:
    """Roll out, draw ``n_scenarios`` scenarios and solve delay management for each.

    The scenarios depend only on ``seed`` and the rolled-out network, so two
    timetables with the same event copies see the same delays.
    """
    if not tt.feasible:
        raise InfeasibleTimetableError("; ".join(tt.violations))
    lo, hi = horizon
    aper = rollout(ean, tt, horizon)
    eval_unc = evaluation_uncertainty(unc, horizon, ean.period)
    ev_keys, act_keys = aperiodic_domain(aper)
    denom = ean.passengers * (hi - lo) / ean.period
    if denom <= 0:
        raise ValueError("no passengers over the horizon")
    nominal = aperiodic_nominal(aper)
    scenarios = [sample_scenario(eval_unc, ev_keys, act_keys, np.random.default_rng(sq))
                 for sq in scenario_seeds(seed, n_scenarios)]

    def run(s):
        return solve_dm(aper, s, time_limit=dm_time_limit)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            sols = list(pool.map(run, scenarios))
    else:
        sols = [run(s) for s in scenarios]
    report = EvalReport(algorithm, instance, nominal / denom)
    for sol in sols:
        assert sol.objective >= -1e-6, "delay management cannot gain time"
        report.delayed.append((nominal + sol.objective) / denom)
        report.dm_status.append(sol.status.value)
    return report


# --------------------------------------------------------------------------
# comparing algorithms
# --------------------------------------------------------------------------

@dataclass
class EvalConfig:
    horizon: tuple[float, float] = (0, 480)
    n_scenarios: int = 10
    seed: int = 0
    dm_time_limit: float | None = 60.0
    eps: float = 1e-3
    iter_cap: int = 20
    step_time_limit: float | None = 60.0
    n_iter: int = 20
    n_samples: int = 100
    pdm_time_limit: float | None = 10.0
    jobs: int = 1


@dataclass
class AlgorithmRun:
    algorithm: str
    timetable: Timetable
    report: EvalReport
    state: object = None
    seconds: float = 0.0
    bound: float = math.nan


def timetable_for(algorithm: str, inst: Instance, cfg: EvalConfig):
    """Compute a timetable with ``algorithm`` on the cutoff-reduced network.

    Returns ``(timetable, run state or None, bound)``.
    """
    reduced = apply_passenger_cutoff(inst.ean, inst.passenger_cutoff)
    if algorithm == "match":
        return match_heuristic(reduced, seed=None), None, math.nan
    if algorithm == "frpt":
        tt, ub, state = cutting_plane(reduced, inst.uncertainty, eps=cfg.eps, iter_cap=cfg.iter_cap,
                                      step_time_limit=cfg.step_time_limit)
        return tt, state, ub
    if algorithm == "rpts":
        tt, lb, state = iterative_heuristic(reduced, inst.uncertainty, n_iter=cfg.n_iter,
                                            n_samples=cfg.n_samples,
                                            pdm_time_limit=cfg.pdm_time_limit,
                                            step_time_limit=cfg.step_time_limit,
                                            seed=cfg.seed + SAMPLING_SEED_OFFSET, jobs=cfg.jobs)
        return tt, state, lb
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")


class AlgorithmError(RuntimeError):
    def __init__(self, algorithm: str, cause: Exception):
        super().__init__(f"{algorithm}: {cause}")
        self.algorithm = algorithm


def compare_algorithms(inst: Instance, algorithms=ALGORITHMS, cfg: EvalConfig | None = None
                       ) -> list[AlgorithmRun]:
    """Timetable with each algorithm, then evaluate all on the full network."""
    cfg = cfg or EvalConfig()
    runs = []
    for name in algorithms:
        t0 = time.perf_counter()
        try:
            reduced_tt, state, bound = timetable_for(name, inst, cfg)
            # dropped changes count again in the evaluation
            tt = timetable_durations(inst.ean, reduced_tt.times)
            report = evaluate(inst.ean, tt, inst.uncertainty, cfg.horizon, cfg.n_scenarios,
                              cfg.seed + EVALUATION_SEED_OFFSET, cfg.dm_time_limit, name,
                              inst.name, cfg.jobs)
        except Exception as exc:
            raise AlgorithmError(name, exc) from exc
        runs.append(AlgorithmRun(name, tt, report, state, time.perf_counter() - t0, bound))
        log.info("%s on %s: nominal %.3f, avg delayed %.3f", name, inst.name,
                 report.nominal, report.avg_delayed)
    return runs


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------

def _f(x: float) -> str:
    return f"{x:.4f}"


def comparison_tables(reports: list[EvalReport]) -> dict[str, tuple[list[str], list[list[str]]]]:
    """The three result tables as ``name -> (header, rows)``."""
    return {
        "nominal": (["instance", "algorithm", "nominal"],
                    [[r.instance, r.algorithm, _f(r.nominal)] for r in reports]),
        "delayed": (["instance", "algorithm", "min", "max", "avg"],
                    [[r.instance, r.algorithm, _f(r.min_delayed), _f(r.max_delayed),
                      _f(r.avg_delayed)] for r in reports]),
        "passenger_delay": (["instance", "algorithm", "avg_passenger_delay"],
                            [[r.instance, r.algorithm, _f(r.avg_passenger_delay)]
                             for r in reports]),
    }


def scenario_rows(reports: list[EvalReport]) -> tuple[list[str], list[list[str]]]:
    rows = [[r.instance, r.algorithm, str(i), _f(v), st]
            for r in reports for i, (v, st) in enumerate(zip(r.delayed, r.dm_status))]
    return ["instance", "algorithm", "scenario", "delayed", "dm_status"], rows


def format_table(title: str, header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    out = [title, line, "-" * len(line)]
    out += ["  ".join(c.rjust(w) if k >= 2 else c.ljust(w) for k, (c, w) in
                      enumerate(zip(r, widths))) for r in rows]
    return "\n".join(out)


TABLE_TITLES = {
    "nominal": "Nominal travel time (minutes per trip)",
    "delayed": "Delayed travel time (minutes per trip)",
    "passenger_delay": "Average passenger delay (minutes per trip)",
}


def write_report(directory, reports: list[EvalReport]) -> dict[str, Path]:
    """Write the three tables as CSV, one per-scenario CSV and a text rendering."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    texts = []
    for name, (header, rows) in comparison_tables(reports).items():
        paths[name] = directory / f"{name}.csv"
        write_rows(paths[name], header, rows)
        texts.append(format_table(TABLE_TITLES[name], header, rows))
    header, rows = scenario_rows(reports)
    paths["scenarios"] = directory / "scenarios.csv"
    write_rows(paths["scenarios"], header, rows)
    paths["text"] = directory / "report.txt"
    paths["text"].write_text("\n\n".join(texts) + "\n")
    return paths


__all__ = [
    "ALGORITHMS", "EVALUATION_SEED_OFFSET", "SAMPLING_SEED_OFFSET", "AlgorithmError",
    "AlgorithmRun", "EvalConfig", "EvalReport",
    "compare_algorithms", "comparison_tables", "evaluate", "evaluation_uncertainty",
    "format_table", "scenario_rows", "timetable_for", "write_report",
]
