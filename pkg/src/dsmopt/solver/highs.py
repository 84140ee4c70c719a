"""Adapter that runs a MilpModel through SciPy's HiGHS interface."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from ..model import MilpModel
from .milp import MilpSolution, SolverOptions, Status, _values


class HighsSolver:
    """Satisfies :class:`MilpSolver`; useful as an independent cross-check."""

    def solve(self, model: MilpModel, opts: SolverOptions | None = None) -> MilpSolution:
        opts = opts or SolverOptions()
        arr = model.arrays()
        lo_row = np.where(arr.sense < 0, -np.inf, arr.b)
        hi_row = np.where(arr.sense > 0, np.inf, arr.b)
        cons = [LinearConstraint(arr.A, lo_row, hi_row)] if arr.b.size else []
        res = milp(arr.c, constraints=cons, integrality=arr.integer.astype(int),
                   bounds=Bounds(arr.lower, arr.upper),
                   options={"mip_rel_gap": opts.rel_gap, "node_limit": opts.max_nodes})
        nodes = int(getattr(res, "mip_node_count", 0) or 0)
        if res.status == 0:
            bound = getattr(res, "mip_dual_bound", None)
            bound = float(res.fun if bound is None else bound)
            return MilpSolution(Status.OPTIMAL, float(res.fun), _values(model, res.x), nodes, bound)
        if res.status == 2:
            return MilpSolution(Status.INFEASIBLE, math.nan, {}, nodes, math.nan)
        if res.status == 3:
            return MilpSolution(Status.UNBOUNDED, -math.inf, {}, nodes, -math.inf)
        if res.status == 1:
            vals = _values(model, res.x) if res.x is not None else {}
            obj = float(res.fun) if res.x is not None else math.nan
            return MilpSolution(Status.NODE_BUDGET_EXCEEDED, obj, vals, nodes, math.nan)
        raise RuntimeError(f"HiGHS failed: {res.message}")
