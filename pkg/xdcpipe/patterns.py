"""True-dependency graphs for the UD, Loop and Wave traversal patterns."""
import logging
from dataclasses import replace
from typing import Dict, List, Tuple

from xdcpipe.core.types import CommKind, DependencyGraph, OpType, ProblemSpec

Hop = Tuple[int, int]  # (stage, chunk)


def forward_path(pattern: str, n_pp: int, n_chunks: int) -> List[Hop]:
    """Ordered (stage, chunk) positions a microbatch visits in the forward pass."""
    if pattern == "UD":
        return [(s, 0) for s in range(n_pp)]
    if pattern == "Loop":
        return [(s, k) for k in range(n_chunks) for s in range(n_pp)]
    if pattern == "Wave":
        if n_chunks != 2:
            raise ValueError("Wave pattern is defined for exactly 2 chunks")
        return [(s, 0) for s in range(n_pp)] + [(s, 1) for s in reversed(range(n_pp))]
    if pattern.upper() == "BD":
        raise ValueError("the bidirectional (BD) traversal pattern is out of scope")
    raise ValueError(f"unsupported traversal pattern {pattern!r}")


def build_true_deps(spec: ProblemSpec) -> DependencyGraph:
    path = forward_path(spec.pattern, spec.n_pp, spec.n_chunks)
    graph = DependencyGraph(spec.n_pp)

    ids: Dict[Tuple[int, int, OpType, int], int] = {}
    for s in range(spec.n_pp):
        for k in range(spec.n_chunks):
            for op_type, times, mems in ((OpType.F, spec.t_f, spec.m_f),
                                         (OpType.D, spec.t_d, spec.m_d),
                                         (OpType.W, spec.t_w, spec.m_w)):
                for mb in range(spec.n_mb):
                    op = graph.add_compute(s, k, op_type, mb, times[s][k], mems[s][k])
                    ids[(s, k, op_type, mb)] = op.id

    def connect(kind: CommKind, src: Hop, dst: Hop, op_type: OpType, mb: int, msg_sizes: List[float]):
        producer = ids[(src[0], src[1], op_type, mb)]
        consumer = ids[(dst[0], dst[1], op_type, mb)]
        if src[0] == dst[0]:
            # Wave turn-around and single-stage Loop wrap stay on the device
            graph.add_edge(producer, consumer)
            return
        latency, bw_time = spec.comm_delays(src[0], dst[0], msg_sizes[src[0]])
        graph.add_comm(kind, producer, consumer, src[0], dst[0], latency, bw_time,
                       spec.link(src[0], dst[0]))

    backward_path = list(reversed(path))
    for mb in range(spec.n_mb):
        for a, b in zip(path, path[1:]):
            connect(CommKind.FWD, a, b, OpType.F, mb, spec.msg_fwd)
        for a, b in zip(backward_path, backward_path[1:]):
            connect(CommKind.BWD, a, b, OpType.D, mb, spec.msg_bwd)
        for s, k in path:
            graph.add_edge(ids[(s, k, OpType.F, mb)], ids[(s, k, OpType.D, mb)])
            graph.add_edge(ids[(s, k, OpType.D, mb)], ids[(s, k, OpType.W, mb)])

    logging.debug(
        f"Built {spec.pattern} graph: {len(graph.compute_ops)} compute ops, {len(graph.comm_ops)} comm ops"
    )
    return graph


def attach_dp_ops(graph: DependencyGraph, spec: ProblemSpec) -> DependencyGraph:
    """Add per-(stage, chunk) DP gradient sync after the last W, and the ZeRO-1 Allgather before the first F."""
    if spec.dp_overlap is None:
        raise ValueError("dp_overlap is not configured for this problem")
    dp = spec.dp_overlap
    result = graph.copy()
    last_mb = spec.n_mb - 1
    for s in range(spec.n_pp):
        own_dc = spec.dc_of_stage[s]
        peer = own_dc if dp.peer_dc is None else dp.peer_dc
        for k in range(spec.n_chunks):
            volume = dp.volume[k]
            w_last = _last_sub(result, s, k, OpType.W, last_mb)
            result.add_comm(
                CommKind.DP, w_last, None, s, s,
                spec.alpha[own_dc][peer], spec.beta[own_dc][peer] * volume, (own_dc, peer),
                name=f"dp:{result.name_of(w_last)}",
            )
            if dp.zero_stage == 1:
                f_first = result.id_of((s, k, OpType.F, 0, 0))
                result.add_comm(
                    CommKind.ALLGATHER, None, f_first, s, s,
                    spec.alpha[peer][own_dc], spec.beta[peer][own_dc] * volume, (peer, own_dc),
                    name=f"ag:{result.name_of(f_first)}",
                )
    return result


def _last_sub(graph: DependencyGraph, stage: int, chunk: int, op_type: OpType, mb: int) -> int:
    return graph.id_of((stage, chunk, op_type, mb, graph.n_sub - 1))


def split_sub_blocks(graph: DependencyGraph, n_sub: int) -> DependencyGraph:
    """Split every compute block into n_sub chained sub-blocks.

    Incoming edges attach to the first sub-block, outgoing edges and comms leave the last one,
    and the block's memory delta lands on the last sub-block.
    """
    if n_sub < 1:
        raise ValueError("n_sub must be at least 1")
    if n_sub == 1 or graph.n_sub == n_sub:
        return graph
    if graph.n_sub != 1:
        raise ValueError("graph is already split into sub-blocks")

    result = DependencyGraph(graph.n_pp, n_sub)
    first: Dict[int, int] = {}
    last: Dict[int, int] = {}
    for op_id in sorted(graph.compute_ops):
        op = graph.compute_ops[op_id]
        prev = None
        for j in range(n_sub):
            sub = result.add_compute(
                op.stage, op.chunk, op.op_type, op.microbatch,
                op.duration / n_sub, op.mem_delta if j == n_sub - 1 else 0.0, sub_index=j,
            )
            if prev is None:
                first[op_id] = sub.id
            else:
                result.add_edge(prev, sub.id)
            prev = sub.id
        last[op_id] = prev

    for u, v in graph.dag.edges:
        if u in graph.compute_ops and v in graph.compute_ops:
            result.add_edge(last[u], first[v])
    for comm_id in sorted(graph.comm_ops):
        comm = graph.comm_ops[comm_id]
        producer = last[comm.producer] if comm.producer is not None else None
        consumer = first[comm.consumer] if comm.consumer is not None else None
        name = None
        if comm.kind == CommKind.DP:
            name = f"dp:{result.name_of(producer)}"
        elif comm.kind == CommKind.ALLGATHER:
            name = f"ag:{result.name_of(consumer)}"
        result.add_comm(comm.kind, producer, consumer, comm.src_stage, comm.dst_stage,
                        comm.latency, comm.bw_time, comm.link, name=name)
    return result


def cross_dc_count(graph: DependencyGraph, microbatch: int = 0) -> int:
    """Number of pipeline transfers of one microbatch that cross a DC boundary."""
    count = 0
    for comm in graph.comm_ops.values():
        if comm.kind not in (CommKind.FWD, CommKind.BWD) or not comm.cross_dc:
            continue
        if graph.compute_ops[comm.producer].microbatch == microbatch:
            count += 1
    return count


# families that run D and W back to back as one backward block
COMBINED_BACKWARD_FAMILIES = ("1F1B", "IV1F1B")


def combine_backward(graph: DependencyGraph) -> DependencyGraph:
    """Copy of a graph in which every gradient transfer leaves after the W of its block.

    Schedules with a combined backward only hand the gradient upstream once the whole backward
    block is done, so the upstream D can never overlap the downstream W.
    """
    result = graph.copy()
    last_sub = graph.n_sub - 1
    for comm_id, comm in graph.comm_ops.items():
        if comm.kind != CommKind.BWD:
            continue
        d = graph.compute_ops[comm.producer]
        w = graph.id_of((d.stage, d.chunk, OpType.W, d.microbatch, last_sub))
        result.dag.remove_edge(comm.producer, comm_id)
        result.dag.add_edge(w, comm_id)
        result.comm_ops[comm_id] = replace(comm, producer=w)
    return result


def graph_for_family(graph: DependencyGraph, family: str) -> DependencyGraph:
    if family in COMBINED_BACKWARD_FAMILIES:
        return combine_backward(graph)
    return graph


def build_graph(spec: ProblemSpec, n_sub: int = 1, with_dp: bool = None) -> DependencyGraph:
    """Full graph for a problem: true deps, DP ops when configured, then sub-block split."""
    graph = build_true_deps(spec)
    if with_dp is None:
        with_dp = spec.dp_overlap is not None
    if with_dp:
        graph = attach_dp_ops(graph, spec)
    return split_sub_blocks(graph, n_sub)
