from collections import Counter

import networkx as nx
import pytest

from xdcpipe.core.types import CommKind, OpType
from xdcpipe.patterns import (
    attach_dp_ops,
    build_graph,
    build_true_deps,
    cross_dc_count,
    forward_path,
    split_sub_blocks,
)


def test_ud_two_stages_one_microbatch(make_problem):
    graph = build_true_deps(make_problem(n_pp=2, n_mb=1))
    ops = Counter((op.op_type, op.stage) for op in graph.compute_ops.values())
    assert ops == {(t, s): 1 for t in (OpType.F, OpType.D, OpType.W) for s in (0, 1)}
    kinds = Counter(c.kind for c in graph.comm_ops.values())
    assert kinds == {CommKind.FWD: 1, CommKind.BWD: 1}


def test_wave_crossings(make_problem):
    spec = make_problem(n_pp=2, n_mb=1, pattern="Wave", n_chunks=2, dc_of_stage=[0, 1])
    graph = build_true_deps(spec)
    counts = Counter(op.op_type for op in graph.compute_ops.values())
    assert counts == {OpType.F: 4, OpType.D: 4, OpType.W: 4}
    assert cross_dc_count(graph) == 4


@pytest.mark.parametrize("n_chunks, expected", [(2, 6), (3, 10)])
def test_loop_crossings(make_problem, n_chunks, expected):
    spec = make_problem(n_pp=2, n_mb=1, pattern="Loop", n_chunks=n_chunks, dc_of_stage=[0, 1])
    assert cross_dc_count(build_true_deps(spec)) == expected


def test_ud_crossings_with_even_split(make_problem, split_dcs):
    spec = make_problem(n_pp=4, n_mb=3, dc_of_stage=split_dcs(4))
    graph = build_true_deps(spec)
    assert all(cross_dc_count(graph, mb) == 2 for mb in range(3))


def test_forward_paths():
    assert forward_path("UD", 3, 1) == [(0, 0), (1, 0), (2, 0)]
    assert forward_path("Wave", 2, 2) == [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert forward_path("Loop", 2, 2) == [(0, 0), (1, 0), (0, 1), (1, 1)]
    with pytest.raises(ValueError, match="out of scope"):
        forward_path("BD", 2, 2)


@pytest.mark.parametrize("pattern, n_chunks", [("UD", 1), ("Wave", 2), ("Loop", 2), ("Loop", 3)])
@pytest.mark.parametrize("n_pp, n_mb", [(1, 1), (2, 3), (4, 5)])
def test_graphs_are_acyclic_with_expected_counts(make_problem, pattern, n_chunks, n_pp, n_mb):
    graph = build_true_deps(make_problem(n_pp=n_pp, n_mb=n_mb, pattern=pattern, n_chunks=n_chunks))
    assert nx.is_directed_acyclic_graph(graph.dag)
    counts = Counter(op.op_type for op in graph.compute_ops.values())
    assert counts[OpType.F] == counts[OpType.D] == counts[OpType.W] == n_mb * n_pp * n_chunks


def test_dp_ops_follow_last_weight_gradient(make_problem):
    spec = make_problem(n_pp=2, n_mb=3, pattern="Wave", n_chunks=2, dp_overlap={"volume": 4.0})
    graph = attach_dp_ops(build_true_deps(spec), spec)
    dp = [c for c in graph.comm_ops.values() if c.kind == CommKind.DP]
    assert Counter(c.src_stage for c in dp) == {0: 2, 1: 2}
    for comm in dp:
        producer = graph.compute_ops[comm.producer]
        assert producer.op_type == OpType.W and producer.microbatch == 2
        assert comm.consumer is None
    assert not any(c.kind == CommKind.ALLGATHER for c in graph.comm_ops.values())


def test_zero1_adds_allgathers(make_problem):
    spec = make_problem(n_pp=2, n_mb=2, pattern="Wave", n_chunks=2,
                        dp_overlap={"volume": 1.0, "zero_stage": 1})
    graph = attach_dp_ops(build_true_deps(spec), spec)
    gathers = [c for c in graph.comm_ops.values() if c.kind == CommKind.ALLGATHER]
    assert len(gathers) == 4
    for comm in gathers:
        consumer = graph.compute_ops[comm.consumer]
        assert consumer.op_type == OpType.F and consumer.microbatch == 0
        assert comm.producer is None


def test_dp_requires_overlap_config(make_problem):
    spec = make_problem(n_pp=2, n_mb=1)
    with pytest.raises(ValueError, match="dp_overlap"):
        attach_dp_ops(build_true_deps(spec), spec)


def test_sub_block_split(make_problem):
    spec = make_problem(n_pp=2, n_mb=2, dc_of_stage=[0, 1], alpha=0.5)
    graph = split_sub_blocks(build_true_deps(spec), 4)
    assert len(graph.compute_ops) == 2 * 2 * 3 * 4
    assert nx.is_directed_acyclic_graph(graph.dag)
    for comm in graph.comm_ops.values():
        assert graph.compute_ops[comm.producer].sub_index == 3
        assert graph.compute_ops[comm.consumer].sub_index == 0
    for op in graph.compute_ops.values():
        assert op.duration == pytest.approx(0.25)
        if op.sub_index < 3:
            assert op.mem_delta == 0.0


def test_build_graph_adds_dp_when_configured(make_problem):
    spec = make_problem(n_pp=2, n_mb=1, dp_overlap={"volume": 0.0})
    assert any(c.kind == CommKind.DP for c in build_graph(spec).comm_ops.values())
    assert not any(c.kind == CommKind.DP for c in build_graph(spec, with_dp=False).comm_ops.values())
