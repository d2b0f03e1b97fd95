from .problems import (Duals, LinearProgram, QuadraticProgram, Solution, SolverError,
                       active_set, kkt_residuals, lp_dual_objective)
from .lp import solve_lp
from .qp import solve_qp
from .miqp import solve_miqp

__all__ = ["Duals", "LinearProgram", "QuadraticProgram", "Solution", "SolverError",
           "active_set", "kkt_residuals", "lp_dual_objective", "solve_lp", "solve_qp", "solve_miqp"]
