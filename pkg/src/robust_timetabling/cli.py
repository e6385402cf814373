"""Command-line front end: ``robust-tt <subcommand> ...``.

An instance directory holds ``events.csv``, ``activities.csv`` and
``config.csv``.  Exit status is 0 on success, 1 when a model is infeasible
and 2 on input/output or configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .dm import aperiodic_nominal
from .ean import InfeasibleBudgetError, rollout, validate_ean
from .evaluation import (ALGORITHMS, EVALUATION_SEED_OFFSET, SAMPLING_SEED_OFFSET, AlgorithmError,
                         EvalConfig, compare_algorithms, evaluate, write_report)
from .instances import DEFAULTS, Instance, generate_instance
from .pesp import InfeasibleTimetableError, apply_passenger_cutoff, match_heuristic, solve_pesp
from .plotting import plot_bounds, plot_delayed
from .robust import cutting_plane, iterative_heuristic

log = logging.getLogger("robust_timetabling")

EXIT_OK, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def load_instance(directory) -> tuple[Instance, io.Config]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError(f"instance directory {directory} not found")
    cfg = io.read_config(directory / "config.csv")
    ean = io.read_ean(directory, cfg.period)
    problems = validate_ean(ean)
    if problems:
        raise CliError(f"invalid network: {problems[0]}")
    inst = Instance(directory.name, ean, cfg.uncertainty(), cfg.passenger_cutoff, cfg.seed)
    return inst, cfg


def parse_horizon(text: str | None, cfg: io.Config) -> tuple[float, float]:
    if text is None:
        return cfg.horizon
    parts = [p for p in text.replace(":", ",").split(",") if p.strip()]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise CliError(f"bad horizon {text!r}") from None
    if len(vals) == 1:
        return (0.0, vals[0])
    if len(vals) == 2 and vals[0] <= vals[1]:
        return (vals[0], vals[1])
    raise CliError(f"bad horizon {text!r}; use HI or LO,HI")


def eval_config(args, cfg: io.Config) -> EvalConfig:
    ec = EvalConfig(seed=cfg.seed, horizon=parse_horizon(getattr(args, "horizon", None), cfg))
    for attr, flag in (("n_scenarios", "scenarios"), ("eps", "eps"), ("iter_cap", "max_iter"),
                       ("step_time_limit", "step_time_limit"), ("n_iter", "iterations"),
                       ("n_samples", "samples"), ("pdm_time_limit", "pdm_time_limit"),
                       ("dm_time_limit", "dm_time_limit"), ("jobs", "jobs")):
        value = getattr(args, flag, None)
        if value is not None:
            ec = replace(ec, **{attr: value})
    return ec


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    inst = generate_instance(args.kind, args.seed, period=args.period, sigma=args.sigma,
                             rho=args.rho, passenger_cutoff=args.cutoff)
    out = _out_dir(args)
    io.write_ean(out, inst.ean)
    unc = inst.uncertainty
    io.write_config(out / "config.csv", io.Config(inst.ean.period, unc.sigma, unc.rho, 0.0, 480.0,
                                                  inst.passenger_cutoff, args.seed))
    print(f"{inst.name}: {len(inst.ean.events)} events, {len(inst.ean.activities)} activities "
          f"-> {out}")
    return EXIT_OK


def cmd_solve_pesp(args) -> int:
    inst, _ = load_instance(args.instance)
    reduced = apply_passenger_cutoff(inst.ean, inst.passenger_cutoff)
    res = solve_pesp(reduced, time_limit=args.time_limit)
    out = _out_dir(args)
    io.write_timetable(out / "timetable.csv", res.timetable)
    print(f"pesp objective {res.objective:.6g} ({res.outcome.status.value})")
    return EXIT_OK


def cmd_solve_match(args) -> int:
    inst, _ = load_instance(args.instance)
    reduced = apply_passenger_cutoff(inst.ean, inst.passenger_cutoff)
    tt = match_heuristic(reduced, seed=args.tie_seed)
    out = _out_dir(args)
    io.write_timetable(out / "timetable.csv", tt)
    print(f"zero-buffer objective {sum(a.weight * tt.durations[a.id] for a in reduced.activities):.6g}")
    return EXIT_OK


def cmd_robustify(args) -> int:
    inst, cfg = load_instance(args.instance)
    ec = eval_config(args, cfg)
    reduced = apply_passenger_cutoff(inst.ean, inst.passenger_cutoff)
    if args.command == "robustify-frpt":
        tt, bound, state = cutting_plane(reduced, inst.uncertainty, eps=ec.eps, iter_cap=ec.iter_cap,
                                         step_time_limit=ec.step_time_limit)
        label = "upper bound"
    else:
        tt, bound, state = iterative_heuristic(reduced, inst.uncertainty, n_iter=ec.n_iter,
                                               n_samples=ec.n_samples,
                                               pdm_time_limit=ec.pdm_time_limit,
                                               step_time_limit=ec.step_time_limit,
                                               seed=ec.seed + SAMPLING_SEED_OFFSET, jobs=ec.jobs)
        label = "lower bound"
    out = _out_dir(args)
    io.write_timetable(out / "timetable.csv", tt)
    io.write_trace(out / "trace.csv", state)
    plot_bounds({args.command.split("-")[1]: state.trace}, out / "bounds.png")
    print(f"{label} {bound:.6g} after {state.k} iteration(s) ({state.stop_reason})")
    return EXIT_OK


def cmd_rollout(args) -> int:
    inst, cfg = load_instance(args.instance)
    tt = io.read_timetable(args.timetable, inst.ean)
    aper = rollout(inst.ean, tt, parse_horizon(args.horizon, cfg))
    out = _out_dir(args)
    io.write_rows(out / "aperiodic_events.csv", ["id", "event_id", "copy", "kind", "time", "weight"],
                  [(f"{e.key[0]}@{e.key[1]}", e.key[0], e.key[1], e.kind.value, io.fmt_num(e.time),
                    io.fmt_num(e.weight)) for e in aper.events])
    io.write_rows(out / "aperiodic_activities.csv",
                  ["id", "activity_id", "kind", "source", "target", "lower", "weight"],
                  [("@".join(map(str, a.key)), a.key[0], a.kind.value,
                    f"{a.source[0]}@{a.source[1]}", f"{a.target[0]}@{a.target[1]}",
                    io.fmt_num(a.lower), io.fmt_num(a.weight)) for a in aper.activities])
    print(f"{len(aper.events)} events, {len(aper.activities)} activities, "
          f"nominal {aperiodic_nominal(aper):.6g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    inst, cfg = load_instance(args.instance)
    ec = eval_config(args, cfg)
    tt = io.read_timetable(args.timetable, inst.ean)
    if not tt.feasible:
        raise CliError(f"timetable infeasible: {tt.violations[0]}", EXIT_INFEASIBLE)
    report = evaluate(inst.ean, tt, inst.uncertainty, ec.horizon, ec.n_scenarios,
                      ec.seed + EVALUATION_SEED_OFFSET,
                      ec.dm_time_limit, args.label, inst.name, ec.jobs)
    out = _out_dir(args)
    paths = write_report(out, [report])
    plot_delayed([report], out / "delayed.png")
    print(paths["text"].read_text(), end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    inst, cfg = load_instance(args.instance)
    ec = eval_config(args, cfg)
    algos = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    unknown = [a for a in algos if a not in ALGORITHMS]
    if unknown:
        raise CliError(f"unknown algorithm(s) {', '.join(unknown)}")
    runs = compare_algorithms(inst, algos, ec)
    out = _out_dir(args)
    paths = write_report(out, [r.report for r in runs])
    for r in runs:
        io.write_timetable(out / f"timetable_{r.algorithm}.csv", r.timetable)
        if r.state is not None:
            io.write_trace(out / f"trace_{r.algorithm}.csv", r.state)
    traces = {r.algorithm: r.state.trace for r in runs if r.state is not None}
    if traces:
        plot_bounds(traces, out / "bounds.png", inst.name)
    plot_delayed([r.report for r in runs], out / "delayed.png", inst.name)
    print(paths["text"].read_text(), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-tt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic instance")
    g.add_argument("--kind", choices=sorted(DEFAULTS) + ["example"], default="toy")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--period", type=int, default=60)
    g.add_argument("--sigma", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--cutoff", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def instance_cmd(name, helptext, func):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--instance", required=True, help="instance directory")
        c.add_argument("--out", required=True, help="output directory")
        c.add_argument("--jobs", type=int, help="concurrent solves")
        c.set_defaults(func=func)
        return c

    c = instance_cmd("solve-pesp", "nominal timetable by integer programming", cmd_solve_pesp)
    c.add_argument("--time-limit", type=float)
    c = instance_cmd("solve-match", "zero-buffer greedy timetable", cmd_solve_match)
    c.add_argument("--tie-seed", type=int, help="random tie-breaking between lines")

    for name, helptext in (("robustify-frpt", "cutting planes over no-wait worst cases"),
                           ("robustify-rpts", "scenario sampling heuristic")):
        c = instance_cmd(name, helptext, cmd_robustify)
        c.add_argument("--step-time-limit", type=float, help="seconds per master or search step")
        if name == "robustify-frpt":
            c.add_argument("--eps", type=float)
            c.add_argument("--max-iter", type=int)
        else:
            c.add_argument("--iterations", type=int)
            c.add_argument("--samples", type=int)
            c.add_argument("--pdm-time-limit", type=float)

    c = instance_cmd("rollout", "expand a timetable over the horizon", cmd_rollout)
    c.add_argument("--timetable", required=True)
    c.add_argument("--horizon", help="HI or LO,HI in minutes")

    c = instance_cmd("evaluate", "delayed travel times of a timetable", cmd_evaluate)
    c.add_argument("--timetable", required=True)
    c.add_argument("--horizon", help="HI or LO,HI in minutes")
    c.add_argument("--scenarios", type=int)
    c.add_argument("--dm-time-limit", type=float)
    c.add_argument("--label", default="timetable")

    c = instance_cmd("compare", "timetable with several algorithms and evaluate all", cmd_compare)
    c.add_argument("--algorithms", default=",".join(ALGORITHMS))
    c.add_argument("--horizon", help="HI or LO,HI in minutes")
    c.add_argument("--scenarios", type=int)
    c.add_argument("--dm-time-limit", type=float)
    c.add_argument("--step-time-limit", type=float)
    c.add_argument("--eps", type=float)
    c.add_argument("--max-iter", type=int)
    c.add_argument("--iterations", type=int)
    c.add_argument("--samples", type=int)
    c.add_argument("--pdm-time-limit", type=float)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InfeasibleTimetableError, InfeasibleBudgetError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except AlgorithmError as exc:
        infeasible = isinstance(exc.__cause__, (InfeasibleTimetableError, InfeasibleBudgetError))
        print(f"{'infeasible' if infeasible else 'error'}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE if infeasible else EXIT_IO
    except (OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
