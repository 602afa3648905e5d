from xdcpipe.exact.lp import export_lp, to_lp_problem
from xdcpipe.exact.model import COModel, build_model
from xdcpipe.exact.solver import ExactResult, InfeasibleScheduleError, solve_exact

__all__ = [
    "COModel",
    "ExactResult",
    "InfeasibleScheduleError",
    "build_model",
    "export_lp",
    "solve_exact",
    "to_lp_problem",
]
