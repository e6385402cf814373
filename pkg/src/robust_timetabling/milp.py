"""Small solver-agnostic MILP modelling layer.

Models are plain containers of variables, linear rows and a linear objective.
:func:`solve` hands them to HiGHS (``highspy``) or, as a fallback, to
``scipy.optimize.milp``.  The backend is chosen with the ``ROBUST_TT_SOLVER``
environment variable (``highs`` or ``scipy``).
"""
from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

INF = math.inf
SOLVER_ENV = "ROBUST_TT_SOLVER"


class Domain(str, Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    BINARY = "binary"


class Status(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE_LIMIT_HIT = "feasible_limit_hit"
    CUTOFF_TRIGGERED = "cutoff_triggered"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"

    @property
    def has_incumbent(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE_LIMIT_HIT, Status.CUTOFF_TRIGGERED)


class MilpError(RuntimeError):
    pass


class SolverUnavailableError(MilpError):
    pass


class MalformedModelError(MilpError):
    pass


class NoIncumbentError(MilpError):
    """A limit was hit before any feasible solution was found."""


class Var:
    __slots__ = ("index", "name")

    def __init__(self, index: int, name: str):
        self.index = index
        self.name = name

    def __repr__(self):
        return f"Var({self.name})"

    def _expr(self) -> "LinExpr":
        return LinExpr({self.index: 1.0})

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return other + (-1.0) * self._expr()

    def __mul__(self, c):
        return LinExpr({self.index: float(c)})

    __rmul__ = __mul__

    def __neg__(self):
        return LinExpr({self.index: -1.0})

    def __le__(self, other):
        return self._expr() <= other

    def __ge__(self, other):
        return self._expr() >= other

    def __eq__(self, other):
        return self._expr() == other

    __hash__ = object.__hash__


def _as_expr(x) -> "LinExpr":
    if isinstance(x, LinExpr):
        return x
    if isinstance(x, Var):
        return x._expr()
    return LinExpr({}, float(x))


class LinExpr:
    """Sparse affine expression ``sum coef * var + constant``."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[int, float] | None = None, constant: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.constant = float(constant)

    def add_term(self, var: Var, coef: float) -> "LinExpr":
        """In-place accumulation; returns self."""
        if coef:
            self.terms[var.index] = self.terms.get(var.index, 0.0) + coef
        return self

    def __add__(self, other):
        o = _as_expr(other)
        out = LinExpr(self.terms, self.constant + o.constant)
        for k, v in o.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * _as_expr(other)

    def __rsub__(self, other):
        return _as_expr(other) + (-1.0) * self

    def __mul__(self, c):
        c = float(c)
        return LinExpr({k: v * c for k, v in self.terms.items()}, self.constant * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __le__(self, other):
        return Constraint.from_sides(self, "<=", other)

    def __ge__(self, other):
        return Constraint.from_sides(self, ">=", other)

    def __eq__(self, other):
        return Constraint.from_sides(self, "==", other)

    __hash__ = None

    def value(self, x: np.ndarray) -> float:
        return self.constant + sum(c * x[i] for i, c in self.terms.items())


def quicksum(items: Iterable) -> LinExpr:
    out = LinExpr()
    for it in items:
        e = _as_expr(it)
        out.constant += e.constant
        for k, v in e.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
    return out


@dataclass
class Constraint:
    terms: dict[int, float]
    sense: str  # '<=', '>=', '=='
    rhs: float
    name: str = ""

    @classmethod
    def from_sides(cls, lhs, sense, rhs) -> "Constraint":
        e = _as_expr(lhs) - _as_expr(rhs)
        return cls({k: v for k, v in e.terms.items() if v != 0.0}, sense, -e.constant)

    def activity(self, x: np.ndarray) -> float:
        return sum(c * x[i] for i, c in self.terms.items())

    def violation(self, x: np.ndarray) -> float:
        lhs = self.activity(x)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


class MilpModel:
    """Variables, linear rows, a linear objective and solve parameters."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.domain: list[Domain] = []
        self.constraints: list[Constraint] = []
        self.objective = LinExpr()
        self.sense = "min"
        self.time_limit: float | None = None
        self.cutoff: float | None = None
        self.mip_gap: float = 1e-4
        self.start: dict[int, float] | None = None
        self._by_name: dict[str, Var] = {}

    # -- building -------------------------------------------------------
    def add_var(self, name: str, lb: float = 0.0, ub: float = INF,
                domain: Domain = Domain.CONTINUOUS) -> Var:
        if name in self._by_name:
            raise MalformedModelError(f"duplicate variable name {name!r}")
        domain = Domain(domain)
        if domain is Domain.BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        v = Var(len(self.var_names), name)
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.domain.append(domain)
        self._by_name[name] = v
        return v

    def var(self, name: str) -> Var:
        return self._by_name[name]

    def has_var(self, name: str) -> bool:
        return name in self._by_name

    def add(self, constraint: Constraint, name: str = "") -> Constraint:
        if not isinstance(constraint, Constraint):
            raise MalformedModelError("add() expects a Constraint (did a comparison collapse to bool?)")
        if name:
            constraint.name = name
        self.constraints.append(constraint)
        return constraint

    def minimize(self, expr) -> None:
        self.objective, self.sense = _as_expr(expr), "min"

    def maximize(self, expr) -> None:
        self.objective, self.sense = _as_expr(expr), "max"

    def set_start(self, values: Mapping[Var, float]) -> None:
        self.start = {v.index: float(x) for v, x in values.items()}

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def is_mip(self) -> bool:
        return any(d is not Domain.CONTINUOUS for d in self.domain)

    def validate(self) -> None:
        n = self.num_vars
        for i in range(n):
            if self.lb[i] > self.ub[i]:
                raise MalformedModelError(f"variable {self.var_names[i]}: lb > ub")
        for c in self.constraints:
            if c.sense not in ("<=", ">=", "=="):
                raise MalformedModelError(f"constraint {c.name!r}: bad sense {c.sense!r}")
            for k in c.terms:
                if not 0 <= k < n:
                    raise MalformedModelError(f"constraint {c.name!r} references undeclared variable {k}")
            if not math.isfinite(c.rhs):
                raise MalformedModelError(f"constraint {c.name!r}: non-finite rhs")
        for k in self.objective.terms:
            if not 0 <= k < n:
                raise MalformedModelError(f"objective references undeclared variable {k}")
        if self.sense not in ("min", "max"):
            raise MalformedModelError(f"bad objective sense {self.sense!r}")

    # -- export ---------------------------------------------------------
    def to_lp(self) -> str:
        """Render the model in CPLEX LP file syntax."""
        names = [_lp_name(n, i) for i, n in enumerate(self.var_names)]

        def fmt(terms: Mapping[int, float]) -> str:
            parts = []
            for k, c in terms.items():
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c):.12g} {names[k]}")
            s = " ".join(parts) if parts else "0 " + (names[0] if names else "")
            return s[2:] if s.startswith("+ ") else s

        lines = [f"\\ {self.name}", "Minimize" if self.sense == "min" else "Maximize"]
        obj = fmt(self.objective.terms)
        if self.objective.constant:
            obj += f" + {self.objective.constant:.12g} __const"
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        for r, c in enumerate(self.constraints):
            op = {"<=": "<=", ">=": ">=", "==": "="}[c.sense]
            label = _lp_name(c.name, r, prefix="c") if c.name else f"c{r}"
            lines.append(f" {label}: {fmt(c.terms)} {op} {c.rhs:.12g}")
        if self.objective.constant:
            lines.append(" __fix_const: __const = 1")
        lines.append("Bounds")
        for i, n in enumerate(names):
            lo, hi = self.lb[i], self.ub[i]
            los = "-inf" if lo == -INF else f"{lo:.12g}"
            his = "+inf" if hi == INF else f"{hi:.12g}"
            lines.append(f" {los} <= {n} <= {his}")
        gens = [names[i] for i, d in enumerate(self.domain) if d is Domain.INTEGER]
        bins = [names[i] for i, d in enumerate(self.domain) if d is Domain.BINARY]
        if gens:
            lines.append("General")
            lines.extend(f" {n}" for n in gens)
        if bins:
            lines.append("Binary")
            lines.extend(f" {n}" for n in bins)
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_lp())


def _lp_name(name: str, i: int, prefix: str = "x") -> str:
    cleaned = "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in name)
    cleaned = cleaned.replace("[", "(").replace("]", ")")
    if not cleaned or cleaned[0].isdigit() or cleaned[0] in ".(":
        cleaned = f"{prefix}{i}_{cleaned}"
    return cleaned[:255]


@dataclass
class SolveOutcome:
    status: Status
    values: np.ndarray | None = None
    objective: float | None = None
    bound: float | None = None
    runtime: float = 0.0
    backend: str = ""

    @property
    def has_incumbent(self) -> bool:
        return self.values is not None

    def __getitem__(self, var: Var) -> float:
        if self.values is None:
            raise MilpError(f"no incumbent (status {self.status.value})")
        return float(self.values[var.index])

    def value(self, expr) -> float:
        if self.values is None:
            raise MilpError(f"no incumbent (status {self.status.value})")
        return _as_expr(expr).value(self.values)


# --------------------------------------------------------------------------
# independent checks
# --------------------------------------------------------------------------

def objective_value(model: MilpModel, values: np.ndarray) -> float:
    return model.objective.value(values)


def check_solution(model: MilpModel, values: np.ndarray, tol: float = 1e-6) -> list[str]:
    """Re-evaluate bounds, integrality and every row; return the violations."""
    problems = []
    for i, x in enumerate(values):
        if x < model.lb[i] - tol or x > model.ub[i] + tol:
            problems.append(f"{model.var_names[i]} = {x} outside [{model.lb[i]}, {model.ub[i]}]")
        if model.domain[i] is not Domain.CONTINUOUS and abs(x - round(x)) > tol:
            problems.append(f"{model.var_names[i]} = {x} not integral")
    for r, c in enumerate(model.constraints):
        v = c.violation(values)
        scale = max(1.0, abs(c.rhs))
        if v > tol * scale:
            problems.append(f"row {c.name or r} violated by {v}")
    return problems


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------

def _rows(model: MilpModel):
    lower, upper, starts, idx, vals = [], [], [], [], []
    for c in model.constraints:
        starts.append(len(idx))
        for k, v in c.terms.items():
            idx.append(k)
            vals.append(v)
        if c.sense == "<=":
            lower.append(-INF)
            upper.append(c.rhs)
        elif c.sense == ">=":
            lower.append(c.rhs)
            upper.append(INF)
        else:
            lower.append(c.rhs)
            upper.append(c.rhs)
    return (np.asarray(lower, float), np.asarray(upper, float), np.asarray(starts, np.int32),
            np.asarray(idx, np.int32), np.asarray(vals, float))


def _solve_highs(model: MilpModel) -> SolveOutcome:
    try:
        import highspy
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise SolverUnavailableError("highspy is not installed") from exc

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", float(model.mip_gap))
    h.setOptionValue("random_seed", 0)
    if model.time_limit is not None:
        h.setOptionValue("time_limit", float(model.time_limit))
    if model.cutoff is not None and model.is_mip:
        h.setOptionValue("objective_target", float(model.cutoff))

    n = model.num_vars
    inf = highspy.kHighsInf
    lb = np.array([-inf if v == -INF else v for v in model.lb], float)
    ub = np.array([inf if v == INF else v for v in model.ub], float)
    if n:
        h.addVars(n, lb, ub)
        cols = np.arange(n, dtype=np.int32)
        cost = np.zeros(n)
        for k, c in model.objective.terms.items():
            cost[k] += c
        h.changeColsCost(n, cols, cost)
        if model.is_mip:
            integ = np.array([highspy.HighsVarType.kContinuous if d is Domain.CONTINUOUS
                              else highspy.HighsVarType.kInteger for d in model.domain])
            h.changeColsIntegrality(n, cols, integ)
    h.changeObjectiveOffset(model.objective.constant)
    if model.constraints:
        lo, up, starts, idx, vals = _rows(model)
        lo = np.where(np.isinf(lo), -inf, lo)
        up = np.where(np.isinf(up), inf, up)
        h.addRows(len(lo), lo, up, len(idx), starts, idx, vals)
    h.changeObjectiveSense(highspy.ObjSense.kMaximize if model.sense == "max"
                           else highspy.ObjSense.kMinimize)
    if model.start and model.is_mip:
        x0 = np.zeros(n)
        for k, v in model.start.items():
            x0[k] = v
        sol = highspy.HighsSolution()
        sol.col_value = list(x0)
        sol.value_valid = True
        h.setSolution(sol)

    t0 = time.perf_counter()
    h.run()
    runtime = time.perf_counter() - t0
    ms = h.getModelStatus()
    MS = highspy.HighsModelStatus
    if ms == MS.kUnboundedOrInfeasible:
        h.setOptionValue("presolve", "off")
        h.run()
        ms = h.getModelStatus()
        if ms == MS.kUnboundedOrInfeasible:
            ms = MS.kInfeasible
    info = h.getInfo()
    has_sol = info.primal_solution_status == 2  # kSolutionStatusFeasible

    def outcome(status):
        values = np.array(h.getSolution().col_value) if status.has_incumbent else None
        obj = info.objective_function_value if values is not None else None
        if values is not None and not model.is_mip:
            bound = obj
        else:
            bound = info.mip_dual_bound if model.is_mip else None
        return SolveOutcome(status, values, obj, bound, runtime, "highs")

    if ms == MS.kOptimal:
        return outcome(Status.OPTIMAL)
    if ms == MS.kObjectiveTarget:
        return outcome(Status.CUTOFF_TRIGGERED)
    if ms == MS.kInfeasible:
        return SolveOutcome(Status.INFEASIBLE, runtime=runtime, backend="highs")
    if ms == MS.kUnbounded:
        return SolveOutcome(Status.UNBOUNDED, runtime=runtime, backend="highs")
    if ms in (MS.kTimeLimit, MS.kIterationLimit, MS.kSolutionLimit, MS.kInterrupt,
              MS.kHighsInterrupt, MS.kObjectiveBound):
        if has_sol:
            return outcome(Status.FEASIBLE_LIMIT_HIT)
        raise NoIncumbentError(f"{model.name}: {h.modelStatusToString(ms)} without incumbent")
    raise MilpError(f"{model.name}: solver returned {h.modelStatusToString(ms)}")


def _solve_scipy(model: MilpModel) -> SolveOutcome:
    from scipy.optimize import Bounds, LinearConstraint, milp
    from scipy.sparse import csr_matrix

    n = model.num_vars
    c = np.zeros(n)
    for k, v in model.objective.terms.items():
        c[k] += v
    sign = -1.0 if model.sense == "max" else 1.0
    integrality = np.array([0 if d is Domain.CONTINUOUS else 1 for d in model.domain])
    cons = []
    if model.constraints:
        lo, up, starts, idx, vals = _rows(model)
        indptr = np.append(starts, len(idx))
        A = csr_matrix((vals, idx, indptr), shape=(len(lo), n))
        cons.append(LinearConstraint(A, lo, up))
    options = {"mip_rel_gap": model.mip_gap, "disp": False}
    if model.time_limit is not None:
        options["time_limit"] = model.time_limit
    t0 = time.perf_counter()
    res = milp(sign * c, integrality=integrality, bounds=Bounds(model.lb, model.ub),
               constraints=cons, options=options)
    runtime = time.perf_counter() - t0
    if res.status == 2:
        return SolveOutcome(Status.INFEASIBLE, runtime=runtime, backend="scipy")
    if res.status == 3:
        return SolveOutcome(Status.UNBOUNDED, runtime=runtime, backend="scipy")
    if res.x is None:
        if res.status == 1:
            raise NoIncumbentError(f"{model.name}: limit hit without incumbent")
        raise MilpError(f"{model.name}: scipy milp failed: {res.message}")
    obj = sign * res.fun + model.objective.constant
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not model.is_mip else sign * bound + model.objective.constant
    status = Status.OPTIMAL if res.status == 0 else Status.FEASIBLE_LIMIT_HIT
    return SolveOutcome(status, np.asarray(res.x), obj, bound, runtime, "scipy")


_BACKENDS = {"highs": _solve_highs, "scipy": _solve_scipy}
_RECHECKERS: list["Recheck"] = []


class Recheck:
    """Context manager re-verifying every incumbent that :func:`solve` returns.

    Each incumbent is checked against bounds, integrality, every row and the
    reported objective; failures are collected, not raised.
    """

    def __init__(self, tol: float = 1e-6):
        self.tol = tol
        self.checked = 0
        self.by_model: dict[str, int] = {}
        self.failures: list[str] = []
        self._lock = threading.Lock()

    def __enter__(self) -> "Recheck":
        _RECHECKERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _RECHECKERS.remove(self)

    def observe(self, model: MilpModel, outcome: SolveOutcome) -> None:
        problems = check_solution(model, outcome.values, self.tol)
        obj = objective_value(model, outcome.values)
        if abs(obj - outcome.objective) > self.tol * max(1.0, abs(obj)):
            problems.append(f"objective {outcome.objective} != recomputed {obj}")
        with self._lock:
            self.checked += 1
            self.by_model[model.name] = self.by_model.get(model.name, 0) + 1
            self.failures += [f"{model.name}: {p}" for p in problems]


def solve(model: MilpModel, backend: str | None = None) -> SolveOutcome:
    """Solve ``model``; ``backend`` defaults to ``$ROBUST_TT_SOLVER`` or ``highs``.

    With ``model.cutoff`` set, a MIP solve may stop as soon as an incumbent
    reaches the cutoff (``>=`` when maximising, ``<=`` when minimising).  The
    scipy backend ignores the cutoff and the warm start.
    """
    name = (backend or os.environ.get(SOLVER_ENV) or "highs").lower()
    if name not in _BACKENDS:
        raise SolverUnavailableError(f"unknown solver backend {name!r}; choose from {sorted(_BACKENDS)}")
    model.validate()
    outcome = _BACKENDS[name](model)
    if outcome.has_incumbent:
        for checker in list(_RECHECKERS):
            checker.observe(model, outcome)
    return outcome
