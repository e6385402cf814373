import dataclasses

import pytest

from robust_timetabling.ean import (Activity, BudgetMode, Event, PeriodicEan, UncertaintySet,
                                    timetable_durations)
from robust_timetabling.evaluation import (AlgorithmError, EvalConfig, compare_algorithms,
                                           comparison_tables, evaluate, evaluation_uncertainty,
                                           write_report)
from robust_timetabling.instances import Instance, generate_instance
from robust_timetabling.pesp import match_heuristic, solve_pesp
from robust_timetabling.plotting import plot_bounds, plot_delayed


def one_activity_line(duration=12):
    events = [Event("a", "departure", "X", "L", 1.0), Event("b", "arrival", "Y", "L", 1.0)]
    ean = PeriodicEan(events, [Activity("a>b", "drive", "a", "b", duration, duration + 5, 1.0)], 60)
    return ean, timetable_durations(ean, {"a": 10, "b": 10 + duration})


def test_nominal_is_activity_duration_per_trip():
    # events at 10 and 22: k copies of each in [0, 60k], so no extra closed-interval copy
    ean, tt = one_activity_line()
    for k in (1, 4, 8):
        rep = evaluate(ean, tt, UncertaintySet(1, 0), (0, 60 * k), n_scenarios=1)
        assert rep.nominal == pytest.approx(12.0)


def test_evaluation_budget_is_exact_over_horizon():
    unc = evaluation_uncertainty(UncertaintySet(100, 5), (0, 480), 60)
    assert unc.mode is BudgetMode.EXACT and unc.budget == pytest.approx(40)


def test_delayed_not_below_nominal_and_monotone_in_rho():
    inst = generate_instance("toy", 0)
    tt = solve_pesp(inst.ean).timetable
    avgs = []
    for rho in (0.0, 2.0, 5.0):
        unc = dataclasses.replace(inst.uncertainty, rho=rho)
        rep = evaluate(inst.ean, tt, unc, (0, 120), n_scenarios=3, seed=1)
        assert all(v >= rep.nominal - 1e-9 for v in rep.delayed)
        avgs.append(rep.avg_delayed)
    assert avgs == sorted(avgs)


def test_evaluation_is_deterministic_and_parallel_safe():
    inst = generate_instance("toy", 1)
    tt = match_heuristic(inst.ean)
    a = evaluate(inst.ean, tt, inst.uncertainty, (0, 120), 3, seed=4)
    b = evaluate(inst.ean, tt, inst.uncertainty, (0, 120), 3, seed=4, jobs=3)
    assert a.delayed == pytest.approx(b.delayed, abs=1e-6)


def test_zero_budget_compare_gives_three_tables(tmp_path):
    inst = generate_instance("toy", 1, rho=0.0)
    runs = compare_algorithms(inst, ["match"], EvalConfig(horizon=(0, 120), n_scenarios=2))
    rep = runs[0].report
    assert rep.delayed == pytest.approx([rep.nominal] * 2)
    tables = comparison_tables([rep])
    assert list(tables) == ["nominal", "delayed", "passenger_delay"]
    assert tables["delayed"][0] == ["instance", "algorithm", "min", "max", "avg"]
    paths = write_report(tmp_path, [rep])
    assert "Average passenger delay" in paths["text"].read_text()
    assert len(paths["scenarios"].read_text().splitlines()) == 3


def test_compare_orders_rows_and_passenger_delay_identity(tmp_path):
    inst = generate_instance("toy", 1)
    cfg = EvalConfig(horizon=(0, 120), n_scenarios=2, iter_cap=2, step_time_limit=2,
                     n_iter=2, n_samples=5, pdm_time_limit=2, dm_time_limit=10)
    runs = compare_algorithms(inst, ["match", "frpt", "rpts"], cfg)
    assert [r.algorithm for r in runs] == ["match", "frpt", "rpts"]
    for r in runs:
        assert r.report.avg_passenger_delay == pytest.approx(r.report.avg_delayed - r.report.nominal)
        assert r.timetable.feasible
    assert plot_delayed([r.report for r in runs], tmp_path / "d.png").stat().st_size > 0
    traces = {r.algorithm: r.state.trace for r in runs if r.state}
    assert plot_bounds(traces, tmp_path / "b.png").stat().st_size > 0


def test_errors_carry_algorithm_name():
    inst = generate_instance("toy", 0)
    with pytest.raises(AlgorithmError, match="nope"):
        compare_algorithms(inst, ["nope"], EvalConfig(horizon=(0, 60), n_scenarios=1))
    bad = Instance("tight", inst.ean, UncertaintySet(0.001, 5))
    with pytest.raises(AlgorithmError, match="match"):
        compare_algorithms(bad, ["match"], EvalConfig(horizon=(0, 480), n_scenarios=1))
