import itertools

import numpy as np
import pytest

from xdcpipe.core.types import PlanEntry, ProblemSpec, SchedulePlan


def uniform_problem(n_pp=4, n_mb=8, pattern="UD", n_chunks=1, t=1.0, **kwargs) -> ProblemSpec:
    return ProblemSpec(n_pp=n_pp, n_mb=n_mb, pattern=pattern, n_chunks=n_chunks,
                       t_f=t, t_d=t, t_w=t, **kwargs)


def two_dc(n_pp: int):
    return [0 if s < n_pp // 2 else 1 for s in range(n_pp)]


@pytest.fixture
def make_problem():
    return uniform_problem


@pytest.fixture
def split_dcs():
    return two_dc


def random_ud_problem(rng: np.random.Generator, n_pp: int, n_mb: int, tight_memory: bool = False) -> ProblemSpec:
    """UD instance with random durations, 2 DCs when there are 2+ stages, and optional memory limits."""
    t_f = rng.uniform(0.5, 2.0, size=(n_pp, 1)).round(2).tolist()
    t_d = rng.uniform(0.5, 2.0, size=(n_pp, 1)).round(2).tolist()
    t_w = rng.uniform(0.5, 2.0, size=(n_pp, 1)).round(2).tolist()
    kwargs = {}
    if n_pp > 1:
        kwargs.update(
            dc_of_stage=two_dc(n_pp),
            alpha=float(rng.choice([0.0, 0.3, 1.0])),
            beta=float(rng.choice([0.0, 0.5, 1.5])),
            msg_fwd=1.0,
            msg_bwd=1.0,
        )
    if tight_memory:
        kwargs["m_limit"] = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
    return ProblemSpec(n_pp=n_pp, n_mb=n_mb, t_f=t_f, t_d=t_d, t_w=t_w, **kwargs)


@pytest.fixture
def random_problem():
    return random_ud_problem


def stage_orders(graph, stage: int):
    """Every order of a stage's ops that keeps microbatch order and same-stage dependencies."""
    dag = graph.compute_dag()
    ops = sorted(op.id for op in graph.stage_ops(stage))
    local_preds = {
        op: {p for p in dag.predecessors(op) if p in ops} for op in ops
    }
    chain_prev = {}
    by_chain = {}
    for op_id in ops:
        op = graph.compute_ops[op_id]
        by_chain.setdefault((op.chunk, op.op_type, op.sub_index), []).append((op.microbatch, op_id))
    for members in by_chain.values():
        ordered = [op_id for _, op_id in sorted(members)]
        for a, b in zip(ordered, ordered[1:]):
            chain_prev[b] = a

    def extend(prefix, placed):
        if len(prefix) == len(ops):
            yield list(prefix)
            return
        for op_id in ops:
            if op_id in placed or not local_preds[op_id] <= placed:
                continue
            if op_id in chain_prev and chain_prev[op_id] not in placed:
                continue
            prefix.append(op_id)
            placed.add(op_id)
            yield from extend(prefix, placed)
            placed.discard(op_id)
            prefix.pop()

    yield from extend([], set())


def enumerate_plans(graph):
    per_stage = [list(stage_orders(graph, s)) for s in range(graph.n_pp)]
    for combo in itertools.product(*per_stage):
        orders = []
        for order in combo:
            entries = []
            for op_id in order:
                op = graph.compute_ops[op_id]
                entries.append(PlanEntry(op.chunk, op.op_type, op.microbatch, op.sub_index))
            orders.append(tuple(entries))
        yield SchedulePlan(family="enumerated", stage_orders=tuple(orders), n_sub=graph.n_sub, engine="enumerated")


@pytest.fixture
def all_plans():
    return enumerate_plans
