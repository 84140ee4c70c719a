from .milp import (
    MilpSolution,
    MilpSolver,
    SolverOptions,
    Status,
    TooManyBinaries,
    brute_force_milp,
    solve_lp,
    solve_milp,
)
from .highs import HighsSolver
from .simplex import LpSolution, LpStatus, NumericalBreakdown, solve_lp_arrays

__all__ = [
    "HighsSolver", "LpSolution", "LpStatus", "MilpSolution", "MilpSolver", "NumericalBreakdown", "SolverOptions",
    "Status", "TooManyBinaries", "brute_force_milp", "solve_lp", "solve_lp_arrays", "solve_milp",
]
