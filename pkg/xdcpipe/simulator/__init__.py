from dataclasses import replace

from xdcpipe.core.types import DependencyGraph, ProblemSpec, SchedulePlan, Timeline
from xdcpipe.simulator.engine import DeadlockError, ExecutionState, InfeasibleScheduleError, run_plan
from xdcpipe.simulator.links import LinkOccupancy, reserve_window
from xdcpipe.simulator.metrics import CriticalPath, critical_path, metrics
from xdcpipe.simulator.validate import Violation, validate_schedule


def simulate(graph: DependencyGraph, plan: SchedulePlan, spec: ProblemSpec) -> Timeline:
    """Time a plan under the alpha-beta model with link queuing."""
    state = run_plan(graph, plan, spec)
    timeline = state.to_timeline()
    return replace(timeline, metrics=metrics(timeline, spec))
