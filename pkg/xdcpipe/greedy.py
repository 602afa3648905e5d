"""Greedy generation of CrossUD (whole blocks) and CrossUDSub (sub-blocks) schedules."""
import logging
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

from xdcpipe.core.types import ComputeOp, OpType, PlanEntry, ProblemSpec, SchedulePlan, Timeline
from xdcpipe.patterns import build_graph
from xdcpipe.simulator.engine import ExecutionState, InfeasibleScheduleError
from xdcpipe.simulator.metrics import metrics
from xdcpipe.utils import TIME_TOL

WARMUP = "warmup"
STEADY = "steady"
TEARDOWN = "teardown"


def default_memory_budget(spec: ProblemSpec) -> List[float]:
    """Memory budget of the 1F1B layout: stage i keeps up to n_pp - i microbatches in flight.

    The largest stage peak is applied uniformly, raised where a stage's own block is larger.
    """
    peak = max(min(spec.n_pp - s, spec.n_mb) * max(spec.m_f[s]) for s in range(spec.n_pp))
    return [max(peak, max(spec.m_f[s])) for s in range(spec.n_pp)]


class SchedulerState(ExecutionState):
    """Execution state plus the per-stage bookkeeping the greedy rules need."""

    def __init__(self, graph, spec: ProblemSpec, m_limit: List[float]):
        super().__init__(graph, spec, m_limit=m_limit)
        self.last_full: List[Optional[OpType]] = [None] * self.n_pp
        self.d_seen = [False] * self.n_pp
        self.f_left = [0] * self.n_pp
        # next microbatch per (stage, chunk, type, sub) so each type runs in microbatch order
        self._next_mb: Dict[Tuple[int, int, OpType, int], int] = {}
        for op in graph.compute_ops.values():
            if op.op_type == OpType.F:
                self.f_left[op.stage] += 1
            self._next_mb.setdefault((op.stage, op.chunk, op.op_type, op.sub_index), 0)

    def _in_order(self, op: ComputeOp) -> bool:
        return self._next_mb[(op.stage, op.chunk, op.op_type, op.sub_index)] == op.microbatch

    def candidates(self, stage: int) -> List[ComputeOp]:
        """Schedulable ops: dependencies met, next in microbatch order, and fitting in memory."""
        ops = []
        for op_id in self.resolved[stage]:
            op = self.graph.compute_ops[op_id]
            if self._in_order(op) and self.fits_memory(op):
                ops.append(op)
        return ops

    def schedulable_time(self, stage: int) -> Optional[float]:
        ops = self.candidates(stage)
        if not ops:
            return None
        return max(self.stage_free[stage], min(self.ready_time(op.id) for op in ops))

    def phase(self, stage: int, available: List[ComputeOp]) -> str:
        if not self.d_seen[stage] and any(op.op_type == OpType.D for op in available):
            self.d_seen[stage] = True
        if not self.d_seen[stage]:
            return WARMUP
        if self.f_left[stage] > 0:
            return STEADY
        return TEARDOWN

    def commit(self, op_id: int, start: Optional[float] = None) -> ComputeOp:
        op = super().commit(op_id, start)
        self._next_mb[(op.stage, op.chunk, op.op_type, op.sub_index)] += 1
        if op.sub_index == self.graph.n_sub - 1 and op.op_type != OpType.W:
            self.last_full[op.stage] = op.op_type
        if op.op_type == OpType.F:
            self.f_left[op.stage] -= 1
        if op.op_type == OpType.D:
            self.d_seen[op.stage] = True
        return op


def next_stage_to_schedule(state: SchedulerState) -> Optional[int]:
    """Stage with the earliest schedulable time; ties go to the lower stage index."""
    best = None
    best_time = None
    for stage in range(state.n_pp):
        t = state.schedulable_time(stage)
        if t is not None and (best_time is None or t < best_time - TIME_TOL):
            best, best_time = stage, t
    return best


def _pick(ops: List[ComputeOp], state: SchedulerState) -> ComputeOp:
    return min(ops, key=lambda op: (state.ready_time(op.id), op.microbatch, op.chunk, op.sub_index))


def select_op(state: SchedulerState, stage: int) -> ComputeOp:
    """Highest-priority op on a stage among those available at its schedulable time."""
    t = state.schedulable_time(stage)
    if t is None:
        raise ValueError(f"stage {stage} has nothing schedulable")
    available = [op for op in state.candidates(stage) if state.ready_time(op.id) <= t + TIME_TOL]

    # an F or D block, once started, runs all its sub-blocks back to back
    started = [op for op in available if op.sub_index > 0 and op.op_type != OpType.W]
    if started:
        return _pick(started, state)

    by_type = {t_: [op for op in available if op.op_type == t_] for t_ in (OpType.F, OpType.D, OpType.W)}
    phase = state.phase(stage, available)
    if phase == WARMUP:
        preference = (OpType.F, OpType.D, OpType.W)
    elif phase == STEADY:
        if state.last_full[stage] == OpType.F:
            preference = (OpType.D, OpType.F, OpType.W)
        else:
            preference = (OpType.F, OpType.D, OpType.W)
    else:
        preference = (OpType.D, OpType.F, OpType.W)
    for op_type in preference:
        if by_type[op_type]:
            return _pick(by_type[op_type], state)
    raise RuntimeError(f"no op available on stage {stage} at t={t}")


def generate_greedy(spec: ProblemSpec, n_sub: Optional[int] = None,
                    m_limit: Optional[List[float]] = None) -> Tuple[SchedulePlan, Timeline]:
    if spec.pattern != "UD":
        raise ValueError(f"greedy generation supports the UD pattern only, problem uses {spec.pattern}")
    n_sub = n_sub or spec.n_sub
    if m_limit is None:
        m_limit = list(spec.m_limit) if spec.m_limit is not None else default_memory_budget(spec)
    for s in range(spec.n_pp):
        if m_limit[s] < max(spec.m_f[s]) - TIME_TOL:
            raise InfeasibleScheduleError(
                f"infeasible memory: m_limit {m_limit[s]} of stage {s} is below m_f {max(spec.m_f[s])}"
            )

    graph = build_graph(spec, n_sub)
    state = SchedulerState(graph, spec, m_limit)
    while True:
        stage = next_stage_to_schedule(state)
        t_comm = state.next_comm_ready()
        if t_comm is not None and (stage is None or t_comm <= state.schedulable_time(stage) + TIME_TOL):
            state.place_next_comm()
            continue
        if stage is None:
            break
        op = select_op(state, stage)
        state.commit(op.id)

    expected = len(graph.compute_ops)
    if state.events != expected:
        raise RuntimeError(f"greedy generation stalled after {state.events} of {expected} events")
    logging.debug(f"Greedy run finished in {state.events} events (n_sub={n_sub})")

    orders = tuple(
        tuple(PlanEntry(graph.compute_ops[i].chunk, graph.compute_ops[i].op_type,
                        graph.compute_ops[i].microbatch, graph.compute_ops[i].sub_index)
              for i in state.stage_order[s])
        for s in range(spec.n_pp)
    )
    family = "CrossUDSub" if n_sub > 1 else "CrossUD"
    plan = SchedulePlan(family=family, stage_orders=orders, m_limit=tuple(m_limit),
                        n_sub=n_sub, engine="greedy")
    timeline = state.to_timeline()
    return plan, replace(timeline, metrics=metrics(timeline, spec))
