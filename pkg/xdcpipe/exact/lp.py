import logging
import math
from typing import Dict, List, Tuple

import pulp

from xdcpipe.core.types import OpType
from xdcpipe.exact.model import COModel


def strict_margin(model: COModel) -> float:
    """Strict-precedence margin of the completion indicators: a thousandth of the shortest block.

    Ops on one stage never overlap, so an unfinished predecessor ends at least one block after q starts.
    """
    positive = [d for d in model.durations.values() if d > 0]
    return 1e-3 * min(positive) if positive else 1e-3


def _limited_forwards(model: COModel) -> Dict[int, List[int]]:
    """First F sub-blocks on stages with a finite memory limit, keyed by stage."""
    graph = model.graph
    result = {}
    for s in range(graph.n_pp):
        if math.isinf(model.mem_limits[s]):
            continue
        result[s] = sorted(op.id for op in graph.stage_ops(s)
                           if op.op_type == OpType.F and op.sub_index == 0)
    return result


def to_lp_problem(model: COModel) -> Tuple[pulp.LpProblem, Dict[int, pulp.LpVariable]]:
    prob = pulp.LpProblem("pipeline_schedule", pulp.LpMinimize)
    H = model.horizon
    eps = strict_margin(model)
    t = {op: pulp.LpVariable(f"t_{op}", lowBound=0) for op in model.durations}
    makespan = pulp.LpVariable("makespan", lowBound=0)
    prob += makespan

    for op in model.objective_ops:
        lag = model.durations[op] + model.latencies.get(op, 0.0)
        prob += makespan >= t[op] + lag - t[model.first_op], f"span_{op}"

    for u, v, _ in model.dependencies:
        if model.latencies.get(u, 0.0) > 0:
            prob += t[v] >= t[u] + model.durations[u] + model.latencies[u], f"dep_{u}_{v}"
        else:
            prob += t[v] >= t[u] + model.durations[u], f"dep_{u}_{v}"

    for a, b in model.order_pairs:
        x = pulp.LpVariable(f"x_{a}_{b}", cat=pulp.LpBinary)
        prob += t[a] + model.durations[a] <= t[b] + H * (1 - x), f"ord_{a}_{b}"
        prob += t[b] + model.durations[b] <= t[a] + H * x, f"ord_{b}_{a}"

    # completion indicators only exist where a memory row reads them
    graph = model.graph
    limited = _limited_forwards(model)
    wanted = {(p, q) for s, forwards in limited.items() for q in forwards
              for p in (o.id for o in graph.stage_ops(s)) if p != q and model.mem[p] != 0}
    u_vars = {}
    for p, q in model.memory_pairs:
        if (p, q) not in wanted:
            continue
        u = pulp.LpVariable(f"u_{p}_{q}", cat=pulp.LpBinary)
        u_vars[(p, q)] = u
        prob += t[p] + model.durations[p] - t[q] <= H * (1 - u), f"done_{p}_{q}"
        prob += t[q] - t[p] - model.durations[p] + eps <= (H + eps) * u, f"open_{p}_{q}"

    for s, forwards in limited.items():
        stage_ops = sorted(o.id for o in graph.stage_ops(s))
        for q in forwards:
            op = graph.compute_ops[q]
            completed = pulp.lpSum(model.mem[p] * u_vars[(p, q)] for p in stage_ops
                                   if (p, q) in u_vars)
            prob += completed + model.spec.m_f[s][op.chunk] <= model.mem_limits[s], f"mem_{q}"

    for a, b in model.microbatch_chains:
        prob += t[a] + model.durations[a] <= t[b], f"mb_{a}_{b}"
    logging.debug(f"LP model: {len(u_vars)} completion indicators, margin {eps:g}")
    return prob, t


def export_lp(model: COModel, path: str) -> str:
    prob, _ = to_lp_problem(model)
    try:
        prob.writeLP(path)
    except OSError as e:
        raise ValueError(f"could not write LP file {path}: {e}") from e
    logging.info(f"Wrote LP model with {len(prob.variables())} variables to {path}")
    return path
