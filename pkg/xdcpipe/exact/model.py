from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from xdcpipe.core.types import CommKind, DependencyGraph, OpType, ProblemSpec, link_label


@dataclass
class COModel:
    """Constraint-optimization view of a dependency graph.

    Every op pair sharing a stage or a directed link gets one ordering variable; every ordered
    pair of compute ops on one stage gets a completion indicator for the memory constraints.
    """
    graph: DependencyGraph
    spec: ProblemSpec
    durations: Dict[int, float]
    latencies: Dict[int, float]
    mem: Dict[int, float]
    mem_limits: List[float]
    resources: Dict[str, List[int]]
    order_pairs: List[Tuple[int, int]]
    memory_pairs: List[Tuple[int, int]]
    microbatch_chains: List[Tuple[int, int]]
    dependencies: List[Tuple[int, int, float]]
    horizon: float
    first_op: int
    objective_ops: List[int] = field(default_factory=list)

    @property
    def n_order_vars(self) -> int:
        return len(self.order_pairs)

    def resource_sizes(self) -> Dict[str, int]:
        return {name: len(ops) for name, ops in self.resources.items()}


def build_model(graph: DependencyGraph, spec: ProblemSpec) -> COModel:
    if not graph.is_acyclic():
        raise ValueError("dependency graph has a cycle")

    durations: Dict[int, float] = {}
    latencies: Dict[int, float] = {}
    mem: Dict[int, float] = {}
    resources: Dict[str, List[int]] = defaultdict(list)
    for op in sorted(graph.compute_ops.values(), key=lambda o: o.id):
        durations[op.id] = op.duration
        mem[op.id] = op.mem_delta
        resources[f"stage:{op.stage}"].append(op.id)
    for comm in sorted(graph.comm_ops.values(), key=lambda c: c.id):
        durations[comm.id] = comm.bw_time
        latencies[comm.id] = comm.latency
        resources[f"link:{link_label(comm.link)}"].append(comm.id)

    # busiest resources first
    resources = dict(sorted(resources.items(), key=lambda kv: (-len(kv[1]), kv[0])))
    order_pairs = []
    for ops in resources.values():
        for i, a in enumerate(ops):
            for b in ops[i + 1:]:
                order_pairs.append((a, b))

    memory_pairs = []
    for s in range(graph.n_pp):
        ops = sorted(op.id for op in graph.stage_ops(s))
        memory_pairs += [(p, q) for p in ops for q in ops if p != q]

    chains: Dict[Tuple, List[Tuple[int, int]]] = defaultdict(list)
    for op in graph.compute_ops.values():
        chains[(op.stage, op.chunk, op.op_type, op.sub_index)].append((op.microbatch, op.id))
    microbatch_chains = []
    for key in sorted(chains, key=lambda k: (k[0], k[1], k[2].value, k[3])):
        ordered = [op_id for _, op_id in sorted(chains[key])]
        microbatch_chains += list(zip(ordered, ordered[1:]))

    dependencies = []
    for u, v in sorted(graph.dag.edges):
        lag = durations[u] + latencies.get(u, 0.0)
        dependencies.append((u, v, lag))

    horizon = sum(durations.values()) + sum(latencies.values())
    first_op = graph.id_of((0, 0, OpType.F, 0, 0))
    objective_ops = sorted(graph.compute_ops) + sorted(
        c.id for c in graph.comm_ops.values() if c.kind == CommKind.DP
    )
    return COModel(
        graph=graph,
        spec=spec,
        durations=durations,
        latencies=latencies,
        mem=mem,
        mem_limits=[spec.memory_limit(s) for s in range(graph.n_pp)],
        resources=resources,
        order_pairs=order_pairs,
        memory_pairs=memory_pairs,
        microbatch_chains=microbatch_chains,
        dependencies=dependencies,
        horizon=horizon,
        first_op=first_op,
        objective_ops=objective_ops,
    )
