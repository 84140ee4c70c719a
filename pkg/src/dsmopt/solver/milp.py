"""Branch-and-bound over the binaries of a :class:`~dsmopt.model.MilpModel`."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, TextIO

import numpy as np

from ..model import MilpModel, VarId
from .simplex import LpSolution, LpStatus, solve_lp_arrays


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NODE_BUDGET_EXCEEDED = "NodeBudgetExceeded"


class TooManyBinaries(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    int_tol: float = 1e-6
    rel_gap: float = 1e-6
    abs_feas_tol: float = 1e-7
    max_nodes: int = 1_000_000
    branch_rule: str = "most_fractional"

    def __post_init__(self):
        for name in ("int_tol", "rel_gap", "abs_feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be at least 1")
        if self.branch_rule != "most_fractional":
            raise ValueError("only the 'most_fractional' branch rule is available")


@dataclass(frozen=True)
class MilpSolution:
    status: Status
    objective: float
    values: dict[VarId, float] = field(repr=False)
    node_count: int = 0
    bound: float = float("nan")

    @property
    def x(self) -> np.ndarray:
        return np.array(list(self.values.values()))


class MilpSolver(Protocol):
    """Anything that can solve a MilpModel under the MilpSolution contract."""

    def solve(self, model: MilpModel, opts: SolverOptions | None = None) -> MilpSolution: ...


def _values(model: MilpModel, x: np.ndarray | None) -> dict[VarId, float]:
    if x is None:
        return {}
    return {v: float(val) for v, val in zip(model.var_ids, x)}


def solve_lp(model: MilpModel, lower=None, upper=None) -> LpSolution:
    """LP relaxation of ``model`` (integrality dropped), optionally with overridden bounds."""
    arr = model.arrays()
    lo = arr.lower if lower is None else np.asarray(lower, dtype=float)
    hi = arr.upper if upper is None else np.asarray(upper, dtype=float)
    return solve_lp_arrays(arr.c, arr.A, arr.sense, arr.b, lo, hi)


@dataclass
class _Node:
    bound: float
    ident: int
    fixes: dict[int, float]


def _gap_abs(obj: float, rel_gap: float) -> float:
    return rel_gap * max(1.0, abs(obj))


def solve_milp(model: MilpModel, opts: SolverOptions | None = None, *,
               trace: TextIO | Callable[[str], None] | None = None) -> MilpSolution:
    """Best-first branch-and-bound.

    The open node with the lowest bound is processed next; nodes whose bound
    lies within the optimality gap of that lowest bound count as tied, and
    among tied nodes the most recently created one wins. Children inherit
    their parent's LP value as bound, so this dives until a bound really
    rises. Branching picks the most fractional binary, lowest column first.
    """
    opts = opts or SolverOptions()
    arr = model.arrays()
    int_cols = np.flatnonzero(arr.integer)
    emit = _make_emitter(trace)

    open_nodes = [_Node(-math.inf, 0, {})]
    next_id = 1
    incumbent: np.ndarray | None = None
    inc_obj = math.inf
    nodes = 0
    budget_hit = False

    while open_nodes:
        best = min(n.bound for n in open_nodes)
        if incumbent is not None and inc_obj - best <= _gap_abs(inc_obj, opts.rel_gap):
            break
        if nodes >= opts.max_nodes:
            budget_hit = True
            break
        cutoff = best + _gap_abs(best, opts.rel_gap) if math.isfinite(best) else best
        pick = max((i for i, n in enumerate(open_nodes) if n.bound <= cutoff),
                   key=lambda i: open_nodes[i].ident)
        node = open_nodes.pop(pick)
        nodes += 1

        lo = arr.lower.copy()
        hi = arr.upper.copy()
        for col, val in node.fixes.items():
            lo[col] = hi[col] = val
        lp = solve_lp_arrays(arr.c, arr.A, arr.sense, arr.b, lo, hi)
        if lp.status is LpStatus.UNBOUNDED:
            return MilpSolution(Status.UNBOUNDED, -math.inf, {}, nodes, -math.inf)
        if lp.status is LpStatus.INFEASIBLE:
            emit(f"{node.ident},inf,{inc_obj!r}")
            continue
        emit(f"{node.ident},{lp.objective!r},{inc_obj!r}")
        if incumbent is not None and lp.objective >= inc_obj - _gap_abs(inc_obj, opts.rel_gap):
            continue

        vals = lp.x[int_cols]
        frac = np.abs(vals - np.round(vals))
        if frac.size == 0 or frac.max() <= opts.int_tol:
            incumbent, inc_obj = lp.x, lp.objective
            limit = inc_obj - _gap_abs(inc_obj, opts.rel_gap)
            open_nodes = [n for n in open_nodes if n.bound < limit]
            continue

        j = int(np.argmax(frac))  # first maximum = lowest column index
        col = int(int_cols[j])
        near = 1.0 if vals[j] >= 0.5 else 0.0
        for val in (1.0 - near, near):  # nearer child created last, so explored first
            open_nodes.append(_Node(lp.objective, next_id, {**node.fixes, col: val}))
            next_id += 1

    if incumbent is None:
        status = Status.NODE_BUDGET_EXCEEDED if budget_hit else Status.INFEASIBLE
        return MilpSolution(status, math.nan, {}, nodes, math.nan)
    bound = min([inc_obj] + [n.bound for n in open_nodes])
    status = Status.NODE_BUDGET_EXCEEDED if budget_hit else Status.OPTIMAL
    return MilpSolution(status, inc_obj, _values(model, incumbent), nodes, bound)


def _make_emitter(trace):
    if trace is None:
        return lambda line: None
    if callable(trace) and not hasattr(trace, "write"):
        return trace
    trace.write("node,bound,incumbent\n")
    return lambda line: trace.write(line + "\n")


def brute_force_milp(model: MilpModel, cap: int = 20) -> MilpSolution:
    """Enumerate every 0/1 assignment of the free binaries and solve the LP for each.

    Binaries whose bounds are already fixed take their fixed value. Rows that
    involve only binaries are checked before any LP is solved, which skips
    assignments that cannot be feasible without changing the result.
    ``node_count`` reports the number of LPs solved.
    """
    arr = model.arrays()
    free_bin = np.flatnonzero(arr.integer & (arr.lower < arr.upper))
    if free_bin.size > cap:
        raise TooManyBinaries(f"{free_bin.size} free binaries exceed cap {cap}")

    assignments = _feasible_assignments(arr, free_bin)
    best_obj = math.inf
    best_x = None
    solved = 0
    for assign in assignments:
        lo = arr.lower.copy()
        hi = arr.upper.copy()
        lo[free_bin] = assign
        hi[free_bin] = assign
        lp = solve_lp_arrays(arr.c, arr.A, arr.sense, arr.b, lo, hi)
        solved += 1
        if lp.status is LpStatus.UNBOUNDED:
            return MilpSolution(Status.UNBOUNDED, -math.inf, {}, solved, -math.inf)
        if lp.status is LpStatus.OPTIMAL and lp.objective < best_obj:
            best_obj, best_x = lp.objective, lp.x
    if best_x is None:
        return MilpSolution(Status.INFEASIBLE, math.nan, {}, solved, math.nan)
    return MilpSolution(Status.OPTIMAL, best_obj, _values(model, best_x), solved, best_obj)


def _feasible_assignments(arr, free_bin: np.ndarray, chunk: int = 1 << 16):
    """Yield 0/1 vectors for ``free_bin`` that satisfy every binary-only row."""
    nb = free_bin.size
    n = arr.c.size
    fixed_cols = np.setdiff1d(np.arange(n), free_bin)
    fixed_mask = arr.lower[fixed_cols] == arr.upper[fixed_cols]
    nz = arr.A != 0.0
    # a row is checkable when every column it touches is a free binary or a fixed variable
    other = np.zeros(n, dtype=bool)
    other[fixed_cols[~fixed_mask]] = True
    rows = np.flatnonzero(~np.any(nz[:, other], axis=1) & np.any(nz[:, free_bin], axis=1))
    A_bin = arr.A[np.ix_(rows, free_bin)]
    fixed_vals = np.where(arr.lower == arr.upper, arr.lower, 0.0)
    rhs = arr.b[rows] - arr.A[rows] @ fixed_vals
    sense = arr.sense[rows]
    tol = 1e-9 * (1.0 + np.abs(arr.b).max(initial=0.0))

    total = 1 << nb
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        # bit (nb-1-i) of the counter is binary i, giving lexicographic order
        bits = ((idx[:, None] >> np.arange(nb - 1, -1, -1, dtype=np.int64)) & 1).astype(float)
        if rows.size:
            act = bits @ A_bin.T
            ok = np.all(np.where(sense < 0, act <= rhs + tol,
                                 np.where(sense > 0, act >= rhs - tol, np.abs(act - rhs) <= tol)),
                        axis=1)
            bits = bits[ok]
        yield from bits
