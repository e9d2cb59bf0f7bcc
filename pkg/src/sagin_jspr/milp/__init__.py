from .model import Constraint, LinearExpr, MilpModel, Sense, Variable, VarKind, to_lp_text
from .solver import (
    BACKENDS,
    BranchAndBound,
    HighsMilp,
    LpEngine,
    Solution,
    SolveParams,
    SolverError,
    Status,
    Violation,
    relative_gap,
    solve_lp,
    solve_milp,
    validate_solution,
)

__all__ = [
    "BACKENDS",
    "BranchAndBound",
    "Constraint",
    "HighsMilp",
    "LinearExpr",
    "LpEngine",
    "MilpModel",
    "Sense",
    "Solution",
    "SolveParams",
    "SolverError",
    "Status",
    "VarKind",
    "Variable",
    "Violation",
    "relative_gap",
    "solve_lp",
    "solve_milp",
    "to_lp_text",
    "validate_solution",
]
