"""Semicolon-separated CSV files for instances, timetables, scenarios and run traces.

Floats are written with ``repr`` so reading a file back reproduces the
objects exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .ean import (Activity, ActivityKind, BudgetMode, Event, EventKind, PeriodicEan, Scenario,
                  Timetable, UncertaintySet, timetable_durations)

DELIM = ";"


class ConfigError(ValueError):
    """Bad or unknown entry in a config file; ``key`` names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def fmt_num(x: float) -> str:
    """Shortest text that reads back to the same float."""
    if isinstance(x, int) or (isinstance(x, float) and x.is_integer() and math.isfinite(x)):
        return str(int(x))
    if x == math.inf:
        return "inf"
    return repr(float(x))


def _read(path, header: list[str]) -> list[dict[str, str]]:
    path = Path(path)
    with path.open(newline="") as f:
        reader = csv.DictReader(f, delimiter=DELIM)
        missing = [h for h in header if h not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path.name}: missing column(s) {', '.join(missing)}")
        return list(reader)


def write_rows(path, header: list[str], rows) -> None:
    """Write ``rows`` under ``header`` as a semicolon-separated file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f, delimiter=DELIM, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------

EVENT_HEADER = ["id", "kind", "station", "line", "weight"]
ACTIVITY_HEADER = ["id", "kind", "source", "target", "lower", "upper", "weight"]


def write_events(path, ean: PeriodicEan) -> None:
    write_rows(path, EVENT_HEADER, [(e.id, e.kind.value, e.station, e.line, fmt_num(e.weight))
                                    for e in ean.events])


def write_activities(path, ean: PeriodicEan) -> None:
    write_rows(path, ACTIVITY_HEADER, [(a.id, a.kind.value, a.source, a.target, fmt_num(a.lower),
                                        fmt_num(a.upper), fmt_num(a.weight)) for a in ean.activities])


def read_events(path) -> list[Event]:
    return [Event(r["id"], EventKind(r["kind"]), r["station"], r["line"], float(r["weight"]))
            for r in _read(path, EVENT_HEADER)]


def read_activities(path) -> list[Activity]:
    return [Activity(r["id"], ActivityKind(r["kind"]), r["source"], r["target"],
                     float(r["lower"]), float(r["upper"]), float(r["weight"]))
            for r in _read(path, ACTIVITY_HEADER)]


def write_ean(directory, ean: PeriodicEan) -> None:
    directory = Path(directory)
    write_events(directory / "events.csv", ean)
    write_activities(directory / "activities.csv", ean)


def read_ean(directory, period: int = 60) -> PeriodicEan:
    directory = Path(directory)
    return PeriodicEan(tuple(read_events(directory / "events.csv")),
                       tuple(read_activities(directory / "activities.csv")), period)


# --------------------------------------------------------------------------
# timetable and scenario
# --------------------------------------------------------------------------

def write_timetable(path, tt: Timetable) -> None:
    write_rows(path, ["event_id", "time"], [(e, str(int(t))) for e, t in tt.times.items()])


def read_timetable(path, ean: PeriodicEan) -> Timetable:
    rows = _read(path, ["event_id", "time"])
    times = {r["event_id"]: int(r["time"]) for r in rows}
    missing = [e.id for e in ean.events if e.id not in times]
    if missing:
        raise ValueError(f"timetable lacks times for {len(missing)} event(s), e.g. {missing[0]}")
    return timetable_durations(ean, times)


def write_scenario(path, s: Scenario) -> None:
    rows = [("event", k, fmt_num(v)) for k, v in s.event_delays.items()]
    rows += [("activity", k, fmt_num(v)) for k, v in s.activity_delays.items()]
    write_rows(path, ["element_kind", "element_id", "delay"], rows)


def read_scenario(path) -> Scenario:
    ev, act = {}, {}
    for r in _read(path, ["element_kind", "element_id", "delay"]):
        kind = r["element_kind"]
        if kind not in ("event", "activity"):
            raise ValueError(f"unknown element kind {kind!r}")
        (ev if kind == "event" else act)[r["element_id"]] = float(r["delay"])
    return Scenario(ev, act)


def write_delay_rows(path, rows) -> None:
    write_rows(path, ["element_kind", "element_id", "delay"],
               [(k, i, fmt_num(v)) for k, i, v in rows])


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Config:
    period: int = 60
    sigma: float = 50.0
    rho: float = 5.0
    horizon_lo: float = 0.0
    horizon_hi: float = 480.0
    passenger_cutoff: float = 0.0
    seed: int = 0

    @property
    def horizon(self) -> tuple[float, float]:
        return (self.horizon_lo, self.horizon_hi)

    def uncertainty(self, mode: BudgetMode = BudgetMode.AT_MOST, periods: float = 1.0):
        return UncertaintySet(self.sigma, self.rho, mode, periods)


_CONFIG_TYPES = {f.name: f.type for f in fields(Config)}


def write_config(path, cfg: Config) -> None:
    write_rows(path, ["key", "value"],
               [(f.name, fmt_num(getattr(cfg, f.name))) for f in fields(Config)])


def read_config(path) -> Config:
    values = {}
    for r in _read(path, ["key", "value"]):
        key = r["key"].strip()
        if key not in _CONFIG_TYPES:
            raise ConfigError(key, "unknown config key")
        raw = r["value"].strip()
        try:
            if _CONFIG_TYPES[key] == "int":
                num = float(raw)
                if not num.is_integer():
                    raise ValueError
                values[key] = int(num)
            else:
                values[key] = float(raw)
        except ValueError:
            raise ConfigError(key, f"not a number: {raw!r}") from None
    cfg = Config(**values)
    if cfg.period < 2:
        raise ConfigError("period", "must be at least 2")
    for key in ("sigma", "rho", "passenger_cutoff"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be nonnegative")
    if cfg.horizon_hi < cfg.horizon_lo:
        raise ConfigError("horizon_hi", "must not be below horizon_lo")
    return cfg


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

TRACE_HEADER = ["k", "lb", "ub", "wall_seconds", "pool_size", "master_value", "master_status",
                "search_status"]


def write_trace(path, state) -> None:
    write_rows(path, TRACE_HEADER,
               [(r.k, fmt_num(r.lb), fmt_num(r.ub), fmt_num(r.wall_seconds), r.pool_size,
                 fmt_num(r.master_value), r.master_status, r.search_status) for r in state.trace])


def read_trace(path) -> list[dict]:
    out = []
    for r in _read(path, TRACE_HEADER[:5]):
        out.append({"k": int(r["k"]), "lb": float(r["lb"]), "ub": float(r["ub"]),
                    "wall_seconds": float(r["wall_seconds"]), "pool_size": int(r["pool_size"]),
                    "master_value": float(r.get("master_value") or "nan"),
                    "master_status": r.get("master_status", ""),
                    "search_status": r.get("search_status", "")})
    return out


__all__ = [
    "Config", "ConfigError", "fmt_num", "read_activities", "read_config", "read_ean", "read_events",
    "read_scenario", "read_timetable", "read_trace", "write_activities", "write_config",
    "write_delay_rows", "write_ean", "write_events", "write_rows", "write_scenario", "write_timetable",
    "write_trace",
]
