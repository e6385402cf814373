"""Delay-robust periodic timetabling.

Periodic event-activity networks and timetables (``ean``), a small MILP
layer over HiGHS (``milp``), nominal timetabling (``pesp``), delay
management (``dm``), robust timetabling by cutting planes or scenario
sampling (``robust``) and an evaluation harness (``evaluation``).
"""
from .dm import DelaySolution, no_wait_propagate, solve_dm, solve_pdm, tau
from .ean import (Activity, ActivityKind, BudgetMode, Event, EventKind, PeriodicEan, Scenario,
                  Timetable, UncertaintySet, rollout, sample_scenario, timetable_durations,
                  validate_ean)
from .evaluation import EvalConfig, EvalReport, compare_algorithms, evaluate
from .instances import Instance, generate_instance, two_line_example
from .pesp import apply_passenger_cutoff, match_heuristic, solve_pesp
from .robust import RobustRunState, cutting_plane, iterative_heuristic, solve_fwc

__version__ = "0.1.0"

__all__ = [
    "Activity", "ActivityKind", "BudgetMode", "DelaySolution", "EvalConfig", "EvalReport",
    "Event", "EventKind", "Instance", "PeriodicEan", "RobustRunState", "Scenario", "Timetable",
    "UncertaintySet", "apply_passenger_cutoff", "compare_algorithms", "cutting_plane",
    "evaluate", "generate_instance", "iterative_heuristic", "match_heuristic",
    "no_wait_propagate", "rollout", "sample_scenario", "solve_dm", "solve_fwc", "solve_pdm",
    "solve_pesp", "tau", "timetable_durations", "two_line_example", "validate_ean",
]
