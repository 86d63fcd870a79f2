"""Self-contained LP / MILP engine used by the planning layer."""

from .branch_bound import solve_lp, solve_mip
from .model import MipModel, SolveOptions, SolveResult, SolveStatus, VarKind

__all__ = [
    "MipModel",
    "SolveOptions",
    "SolveResult",
    "SolveStatus",
    "VarKind",
    "solve_lp",
    "solve_mip",
]
