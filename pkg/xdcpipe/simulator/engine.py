"""Discrete-event execution state shared by plan simulation and greedy generation."""
import heapq
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Tuple

import networkx as nx

from xdcpipe.core.types import (
    CommOp,
    ComputeOp,
    DependencyGraph,
    OpRecord,
    OpType,
    ProblemSpec,
    SchedulePlan,
    Timeline,
    link_label,
)
from xdcpipe.patterns import graph_for_family
from xdcpipe.simulator.links import LinkOccupancy, reserve_window
from xdcpipe.utils import TIME_TOL


class DeadlockError(RuntimeError):
    def __init__(self, message: str, cycle: Optional[List[str]] = None):
        super().__init__(message)
        self.cycle = cycle or []


class InfeasibleScheduleError(ValueError):
    """No ordering of the blocks fits the memory limits, or none was found within the budget."""


class ExecutionState:
    """Times, memory and link reservations of a partially executed graph.

    Compute ops are committed one at a time on their stage; transfers are placed on their link
    in order of (ready time, producer id) as soon as no compute op can start before they are ready.
    """

    def __init__(self, graph: DependencyGraph, spec: ProblemSpec,
                 link_orders: Optional[Dict[str, Tuple[str, ...]]] = None,
                 m_limit: Optional[List[float]] = None):
        self.graph = graph
        self.spec = spec
        self.n_pp = graph.n_pp
        self.links: Dict[Tuple[int, int], LinkOccupancy] = {}
        self.start: Dict[int, float] = {}
        self.end: Dict[int, float] = {}
        self.available: Dict[int, float] = {}
        self.binding: Dict[int, Optional[int]] = {}

        self.stage_free = [0.0] * self.n_pp
        self.stage_last: List[Optional[int]] = [None] * self.n_pp
        self.stage_order: List[List[int]] = [[] for _ in range(self.n_pp)]
        self.memory = [0.0] * self.n_pp
        self.reserved = [0.0] * self.n_pp
        self.peak_memory = [0.0] * self.n_pp
        if m_limit is None:
            m_limit = [spec.memory_limit(s) for s in range(self.n_pp)]
        self.m_limit = list(m_limit)
        self.events = 0

        self._remaining: Dict[int, int] = {}
        self._ready: Dict[int, float] = {}
        self._ready_binding: Dict[int, Optional[int]] = {}
        self._pending: List[Tuple[float, int, int]] = []
        self.resolved: List[set] = [set() for _ in range(self.n_pp)]

        self._link_orders: Dict[Tuple[int, int], List[str]] = {}
        self._link_turn: Dict[Tuple[int, int], int] = defaultdict(int)
        self._link_prev_end: Dict[Tuple[int, int], float] = defaultdict(float)
        self._parked: Dict[str, Tuple[float, int, int]] = {}
        self._ordered_comms = set()
        if link_orders:
            by_label = {}
            for comm in graph.comm_ops.values():
                by_label.setdefault(link_label(comm.link), comm.link)
            for label, names in link_orders.items():
                if label not in by_label:
                    raise ValueError(f"link order given for unknown link {label}")
                self._link_orders[by_label[label]] = list(names)
                self._ordered_comms.update(names)

        for op_id in graph.compute_ops:
            preds = graph.predecessors(op_id)
            self._remaining[op_id] = len(preds)
            self._ready[op_id] = 0.0
            self._ready_binding[op_id] = None
            if not preds:
                self.resolved[graph.compute_ops[op_id].stage].add(op_id)
        for comm in graph.comm_ops.values():
            if comm.producer is None:
                self._push_comm(0.0, -1, comm)

    # -- queries -----------------------------------------------------------------------------

    def is_resolved(self, op_id: int) -> bool:
        return self._remaining[op_id] == 0 and op_id not in self.end

    def ready_time(self, op_id: int) -> float:
        return self._ready[op_id]

    def earliest_start(self, op_id: int) -> float:
        op = self.graph.compute_ops[op_id]
        return max(self.stage_free[op.stage], self._ready[op_id])

    def block_m_f(self, op: ComputeOp) -> float:
        return self.spec.m_f[op.stage][op.chunk]

    def fits_memory(self, op: ComputeOp) -> bool:
        """An F block may only begin if its activations fit next to what the stage already holds."""
        if op.op_type != OpType.F or op.sub_index != 0:
            return True
        need = self.memory[op.stage] + self.reserved[op.stage] + self.block_m_f(op)
        return need <= self.m_limit[op.stage] + TIME_TOL

    def next_comm_ready(self) -> Optional[float]:
        return self._pending[0][0] if self._pending else None

    @property
    def done(self) -> bool:
        return len(self.end) == len(self.graph.compute_ops) + len(self.graph.comm_ops)

    # -- transitions -------------------------------------------------------------------------

    def _push_comm(self, ready: float, producer: int, comm: CommOp) -> None:
        if comm.name in self._ordered_comms:
            order = self._link_orders[comm.link]
            turn = self._link_turn[comm.link]
            if turn >= len(order) or order[turn] != comm.name:
                self._parked[comm.name] = (ready, producer, comm.id)
                return
            ready = max(ready, self._link_prev_end[comm.link])
        heapq.heappush(self._pending, (ready, producer, comm.id))

    def place_next_comm(self) -> CommOp:
        ready, _, comm_id = heapq.heappop(self._pending)
        comm = self.graph.comm_ops[comm_id]
        link = self.links.setdefault(comm.link, LinkOccupancy(comm.link))
        w_start, w_end = reserve_window(link, ready, comm.bw_time)
        self.start[comm_id] = w_start
        self.end[comm_id] = w_end
        self.available[comm_id] = w_end + comm.latency
        self.binding[comm_id] = comm.producer

        if comm.name in self._ordered_comms:
            self._link_turn[comm.link] += 1
            self._link_prev_end[comm.link] = max(self._link_prev_end[comm.link], w_end)
            order = self._link_orders[comm.link]
            turn = self._link_turn[comm.link]
            if turn < len(order) and order[turn] in self._parked:
                parked_ready, producer, parked_id = self._parked.pop(order[turn])
                self._push_comm(parked_ready, producer, self.graph.comm_ops[parked_id])

        if comm.consumer is not None:
            self._satisfy(comm.consumer, self.available[comm_id], comm_id)
        return comm

    def flush_comms(self, until: float) -> None:
        while self._pending and self._pending[0][0] <= until + TIME_TOL:
            self.place_next_comm()

    def _satisfy(self, op_id: int, time: float, via: int) -> None:
        self._remaining[op_id] -= 1
        if time > self._ready[op_id] + TIME_TOL or self._ready_binding[op_id] is None:
            self._ready[op_id] = max(self._ready[op_id], time)
            self._ready_binding[op_id] = via
        if self._remaining[op_id] == 0:
            self.resolved[self.graph.compute_ops[op_id].stage].add(op_id)

    def commit(self, op_id: int, start: Optional[float] = None) -> ComputeOp:
        op = self.graph.compute_ops[op_id]
        earliest = self.earliest_start(op_id)
        if start is None:
            start = earliest
        if self._remaining[op_id] != 0:
            raise RuntimeError(f"{op.name} committed before its predecessors finished")
        end = start + op.duration
        self.start[op_id] = start
        self.end[op_id] = end
        self.available[op_id] = end
        prev = self.stage_last[op.stage]
        # on ties the data dependency binds
        if prev is not None and (self.stage_free[op.stage] > self._ready[op_id] + TIME_TOL
                                 or self._ready_binding[op_id] is None):
            self.binding[op_id] = prev
        else:
            self.binding[op_id] = self._ready_binding[op_id]

        s = op.stage
        if op.op_type == OpType.F and op.sub_index == 0:
            self.reserved[s] += self.block_m_f(op)
        self.peak_memory[s] = max(self.peak_memory[s], self.memory[s] + self.reserved[s])
        if op.sub_index == self.graph.n_sub - 1:
            self.memory[s] += op.mem_delta
            if op.op_type == OpType.F:
                self.reserved[s] -= self.block_m_f(op)
        self.peak_memory[s] = max(self.peak_memory[s], self.memory[s] + self.reserved[s])

        self.stage_free[s] = end
        self.stage_last[s] = op_id
        self.stage_order[s].append(op_id)
        self.resolved[s].discard(op_id)
        self.events += 1

        for succ in self.graph.successors(op_id):
            if succ in self.graph.compute_ops:
                self._satisfy(succ, end, op_id)
            else:
                self._push_comm(end, op_id, self.graph.comm_ops[succ])
        return op

    # -- results -----------------------------------------------------------------------------

    def link_orders(self) -> Dict[str, Tuple[str, ...]]:
        """Transfer order actually realized on every link that carried bandwidth."""
        per_link: Dict[Tuple[int, int], List[Tuple[float, int, str]]] = defaultdict(list)
        for comm in self.graph.comm_ops.values():
            if comm.bw_time > TIME_TOL and comm.id in self.start:
                per_link[comm.link].append((self.start[comm.id], comm.id, comm.name))
        return {
            link_label(link): tuple(name for _, _, name in sorted(items))
            for link, items in sorted(per_link.items())
        }

    def to_timeline(self) -> Timeline:
        records: List[OpRecord] = []
        for op_id in sorted(self.end):
            if op_id in self.graph.compute_ops:
                op = self.graph.compute_ops[op_id]
                records.append(OpRecord(
                    id=op_id, name=op.name, kind=op.op_type.value, stage=op.stage,
                    start=self.start[op_id], end=self.end[op_id], available=self.available[op_id],
                    chunk=op.chunk, microbatch=op.microbatch, sub_index=op.sub_index,
                    mem_delta=op.mem_delta, binding=self.binding[op_id],
                ))
            else:
                comm = self.graph.comm_ops[op_id]
                records.append(OpRecord(
                    id=op_id, name=comm.name, kind=comm.kind.value, stage=comm.src_stage,
                    start=self.start[op_id], end=self.end[op_id], available=self.available[op_id],
                    link=link_label(comm.link), cross_dc=comm.cross_dc, binding=self.binding[op_id],
                ))
        reservations = {
            link_label(link): [[s, e] for s, e in occ.intervals]
            for link, occ in sorted(self.links.items()) if occ.intervals
        }
        return Timeline(ops=records, link_reservations=reservations, dc_of_stage=list(self.spec.dc_of_stage))


def _schedule_cycle(graph: DependencyGraph, orders: List[List[int]]) -> List[str]:
    g = nx.DiGraph(graph.dag)
    for order in orders:
        for a, b in zip(order, order[1:]):
            g.add_edge(a, b)
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return []
    return [graph.name_of(u) for u, _ in cycle]


def check_plan_matches(graph: DependencyGraph, plan: SchedulePlan) -> None:
    if plan.n_pp != graph.n_pp:
        raise ValueError(f"plan has {plan.n_pp} stages but the graph has {graph.n_pp}")
    plan_keys = list(plan.keys())
    graph_keys = {op.key for op in graph.compute_ops.values()}
    if len(plan_keys) != len(set(plan_keys)):
        raise ValueError("plan/graph mismatch: plan lists an op more than once")
    missing = graph_keys - set(plan_keys)
    extra = set(plan_keys) - graph_keys
    if missing or extra:
        sample = sorted(missing)[:3] if missing else sorted(extra)[:3]
        raise ValueError(
            f"plan/graph mismatch: {len(missing)} ops missing, {len(extra)} unknown (e.g. {sample})"
        )


def run_plan(graph: DependencyGraph, plan: SchedulePlan, spec: ProblemSpec) -> ExecutionState:
    """Execute the per-stage orders of a plan on the event engine."""
    check_plan_matches(graph, plan)
    graph = graph_for_family(graph, plan.family)
    orders = [
        [graph.id_of((s, e.chunk, e.op_type, e.microbatch, e.sub_index)) for e in order]
        for s, order in enumerate(plan.stage_orders)
    ]
    state = ExecutionState(graph, spec, plan.link_orders)
    cursor = [0] * graph.n_pp
    while True:
        best: Optional[Tuple[float, int, int]] = None
        for s in range(graph.n_pp):
            if cursor[s] < len(orders[s]):
                op_id = orders[s][cursor[s]]
                if state.is_resolved(op_id):
                    t = state.earliest_start(op_id)
                    if best is None or t < best[0] - TIME_TOL:
                        best = (t, s, op_id)
        t_comm = state.next_comm_ready()
        if t_comm is not None and (best is None or t_comm <= best[0] + TIME_TOL):
            state.place_next_comm()
            continue
        if best is None:
            break
        state.commit(best[2], best[0])
        cursor[best[1]] += 1

    if any(cursor[s] < len(orders[s]) for s in range(graph.n_pp)):
        cycle = _schedule_cycle(graph, orders)
        stuck = [graph.name_of(orders[s][cursor[s]]) for s in range(graph.n_pp) if cursor[s] < len(orders[s])]
        if cycle:
            raise DeadlockError(f"deadlock: plan order closes the cycle {' -> '.join(cycle)}", cycle)
        raise DeadlockError(f"deadlock: no progress possible, waiting ops {stuck}", stuck)
    if not state.done:
        logging.warning("Simulation finished with unplaced transfers")
    return state
