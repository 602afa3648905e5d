import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional

import networkx as nx
from dataclasses_json import dataclass_json

from xdcpipe.core.types import BlockKey, DependencyGraph, OpType, ProblemSpec, SchedulePlan
from xdcpipe.patterns import graph_for_family
from xdcpipe.utils import TIME_TOL


@dataclass_json
@dataclass
class Violation:
    kind: str
    stage: Optional[int]
    op: Optional[str]
    detail: str


def _name(key: BlockKey) -> str:
    suffix = f":k{key.sub_index}" if key.sub_index else ""
    return f"{OpType(key.op_type).value}:s{key.stage}:c{key.chunk}:m{key.microbatch}{suffix}"


def validate_schedule(graph: DependencyGraph, plan: SchedulePlan, spec: ProblemSpec) -> List[Violation]:
    """Check completeness, dependency consistency, microbatch order and memory of a plan."""
    violations: List[Violation] = []
    if plan.n_pp != graph.n_pp:
        return [Violation("shape", None, None, f"plan has {plan.n_pp} stages, graph has {graph.n_pp}")]

    graph_keys = {op.key for op in graph.compute_ops.values()}
    counts = Counter(plan.keys())
    for key, n in sorted(counts.items()):
        if n > 1:
            violations.append(Violation("duplicate", key.stage, _name(key), f"listed {n} times"))
        if key not in graph_keys:
            violations.append(Violation("unknown", key.stage, _name(key), "not an op of this problem"))
    for key in sorted(graph_keys - set(counts)):
        violations.append(Violation("missing", key.stage, _name(key), "op is never scheduled"))
    if violations:
        return violations

    graph = graph_for_family(graph, plan.family)
    orders = [
        [graph.id_of((s, e.chunk, e.op_type, e.microbatch, e.sub_index)) for e in order]
        for s, order in enumerate(plan.stage_orders)
    ]

    # same-stage true dependencies must keep their direction in the stage order
    compute_dag = graph.compute_dag()
    for s, order in enumerate(orders):
        position = {op_id: i for i, op_id in enumerate(order)}
        for op_id in order:
            for anc in nx.ancestors(compute_dag, op_id):
                if anc in position and position[anc] > position[op_id]:
                    violations.append(Violation(
                        "dependency", s, graph.name_of(op_id),
                        f"scheduled before its true predecessor {graph.name_of(anc)}",
                    ))

    combined = nx.DiGraph(compute_dag)
    for order in orders:
        combined.add_edges_from(zip(order, order[1:]))
    if not any(v.kind == "dependency" for v in violations):
        try:
            cycle = nx.find_cycle(combined)
            violations.append(Violation(
                "deadlock", None, graph.name_of(cycle[0][0]),
                "stage orders close the cycle " + " -> ".join(graph.name_of(u) for u, _ in cycle),
            ))
        except nx.NetworkXNoCycle:
            pass

    for s, order in enumerate(plan.stage_orders):
        last_mb: Dict[tuple, int] = {}
        for e in order:
            group = (e.chunk, e.op_type, e.sub_index)
            if group in last_mb and e.microbatch < last_mb[group]:
                violations.append(Violation(
                    "microbatch_order", s, _name(BlockKey(s, e.chunk, e.op_type, e.microbatch, e.sub_index)),
                    f"microbatch {e.microbatch} follows microbatch {last_mb[group]}",
                ))
            last_mb[group] = max(last_mb.get(group, -1), e.microbatch)

    violations.extend(_memory_violations(graph, plan, spec, orders))
    if violations:
        logging.debug(f"Plan {plan.family} has {len(violations)} violations")
    return violations


def _memory_violations(graph: DependencyGraph, plan: SchedulePlan, spec: ProblemSpec,
                       orders: List[List[int]]) -> List[Violation]:
    result = []
    for s, order in enumerate(orders):
        limit = spec.memory_limit(s)
        if plan.m_limit is not None:
            limit = min(limit, plan.m_limit[s])
        held = 0.0
        reserved = 0.0
        for op_id in order:
            op = graph.compute_ops[op_id]
            m_f = spec.m_f[s][op.chunk]
            if op.op_type == OpType.F and op.sub_index == 0:
                if held + reserved + m_f > limit + TIME_TOL:
                    result.append(Violation(
                        "memory", s, op.name,
                        f"needs {held + reserved + m_f:g} with limit {limit:g}",
                    ))
                reserved += m_f
            if op.sub_index == graph.n_sub - 1:
                held += op.mem_delta
                if op.op_type == OpType.F:
                    reserved -= m_f
    return result
