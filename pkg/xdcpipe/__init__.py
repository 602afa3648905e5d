"""Schedules for pipeline-parallel training across datacenters."""
from xdcpipe.core import DependencyGraph, ProblemSpec, SchedulePlan, Timeline, load_problem
from xdcpipe.patterns import build_graph, build_true_deps
from xdcpipe.simulator import simulate, validate_schedule

__version__ = "0.1.0"
