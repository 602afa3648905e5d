"""Branch and bound over per-stage orders.

Nodes extend a partial schedule one compute op at a time in the order a contention-free
event simulation would start them, so every complete set of stage orders is reached along
exactly one path. Leaves are timed with the full simulator, including link queuing.

Transfers on a link run in FIFO order unless several transfer streams share that link. A stream
is the transfers of one (kind, source, destination, chunk), which always keep microbatch order.
When queuing made a leaf slower than its contention-free bound, every interleaving of the
shared streams is tried, up to LINK_ORDER_LIMIT combinations. Leaves beyond the limit keep FIFO
order, and a result is only reported optimal when none of them could have beaten it.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
import itertools
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import networkx as nx

from xdcpipe.core.types import CommKind, DependencyGraph, OpType, PlanEntry, SchedulePlan, Timeline, link_label
from xdcpipe.exact.model import COModel
from xdcpipe.greedy import generate_greedy
from xdcpipe.simulator import simulate, validate_schedule
from xdcpipe.simulator.engine import DeadlockError, InfeasibleScheduleError, run_plan
from xdcpipe.static_schedules import STATIC_FAMILIES, build_static
from xdcpipe.utils import TIME_TOL

LINK_ORDER_LIMIT = 64


@dataclass
class ExactResult:
    plan: SchedulePlan
    makespan: float
    optimal: bool
    timeline: Timeline
    nodes: int
    lower_bound: float

    def __iter__(self):
        return iter((self.plan, self.makespan, self.optimal))


def shared_link_streams(graph: DependencyGraph) -> Dict[str, List[List[str]]]:
    """Transfer streams of every link that carries more than one stream with bandwidth."""
    per_link: Dict[str, Dict[Tuple, List[Tuple[int, str]]]] = defaultdict(lambda: defaultdict(list))
    for comm in graph.comm_ops.values():
        if comm.bw_time <= TIME_TOL:
            continue
        anchor = graph.compute_ops[comm.producer if comm.producer is not None else comm.consumer]
        key = (comm.kind.value, comm.src_stage, comm.dst_stage, anchor.chunk)
        per_link[link_label(comm.link)][key].append((anchor.microbatch, comm.name))
    result = {}
    for label, streams in sorted(per_link.items()):
        if len(streams) > 1:
            result[label] = [[name for _, name in sorted(streams[key])] for key in sorted(streams)]
    return result


def interleavings(streams: List[List[str]]) -> Iterator[Tuple[str, ...]]:
    """Every merge of the streams that keeps each stream's own order."""
    if not any(streams):
        yield ()
        return
    for k, stream in enumerate(streams):
        if stream:
            rest = streams[:k] + [stream[1:]] + streams[k + 1:]
            for tail in interleavings(rest):
                yield (stream[0],) + tail


def count_interleavings(streams: List[List[str]]) -> int:
    count = math.factorial(sum(len(s) for s in streams))
    for s in streams:
        count //= math.factorial(len(s))
    return count


Prefix = List[Tuple[int, float]]


class _Search:
    def __init__(self, model: COModel, family: str, incumbent: float = math.inf,
                 deadline: Optional[float] = None, max_nodes: Optional[int] = None, gap: float = 0.0):
        graph = model.graph
        spec = model.spec
        self.model = model
        self.family = family
        self.deadline = deadline
        self.max_nodes = max_nodes
        self.gap = gap

        self.ids = sorted(graph.compute_ops)
        index = {op_id: i for i, op_id in enumerate(self.ids)}
        ops = [graph.compute_ops[op_id] for op_id in self.ids]
        n = len(ops)
        self.n = n
        self.n_pp = graph.n_pp
        self.ops = ops
        self.stage = [op.stage for op in ops]
        self.dur = [op.duration for op in ops]
        last_sub = graph.n_sub - 1
        self.block_mf = [spec.m_f[op.stage][op.chunk] if op.op_type == OpType.F else 0.0 for op in ops]
        self.starts_block = [op.op_type == OpType.F and op.sub_index == 0 for op in ops]
        self.ends_block = [op.sub_index == last_sub for op in ops]
        self.delta = [op.mem_delta if op.sub_index == last_sub else 0.0 for op in ops]
        self.limit = list(model.mem_limits)

        self.preds: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        self.succs: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        release0 = [0.0] * n
        self.dp_tail = [0.0] * n
        for u, v in graph.dag.edges:
            if u in index and v in index:
                self.preds[index[v]].append((index[u], 0.0))
                self.succs[index[u]].append((index[v], 0.0))
        allgather_total = 0.0
        for comm in graph.comm_ops.values():
            delay = comm.bw_time + comm.latency
            if comm.producer is not None and comm.consumer is not None:
                self.preds[index[comm.consumer]].append((index[comm.producer], delay))
                self.succs[index[comm.producer]].append((index[comm.consumer], delay))
            elif comm.producer is None:
                release0[index[comm.consumer]] = max(release0[index[comm.consumer]], delay)
                allgather_total += comm.bw_time
            elif comm.kind == CommKind.DP:
                self.dp_tail[index[comm.producer]] = max(self.dp_tail[index[comm.producer]], delay)
        self.release0 = release0

        dag = nx.DiGraph()
        dag.add_nodes_from(range(n))
        for v in range(n):
            for u, _ in self.preds[v]:
                dag.add_edge(u, v)
        self.topo = list(nx.lexicographical_topological_sort(dag))
        self.tail = [0.0] * n
        for i in reversed(self.topo):
            after = max([d + self.tail[j] for j, d in self.succs[i]] + [self.dp_tail[i]])
            self.tail[i] = self.dur[i] + after

        chains = {}
        for i, op in enumerate(ops):
            chains.setdefault((op.stage, op.chunk, op.op_type, op.sub_index), []).append((op.microbatch, i))
        self.chain_of = [0] * n
        self.chain_pos = [0] * n
        for c, key in enumerate(sorted(chains, key=lambda k: (k[0], k[1], k[2].value, k[3]))):
            for pos, (_, i) in enumerate(sorted(chains[key])):
                self.chain_of[i] = c
                self.chain_pos[i] = pos
        self.n_chains = len(chains)

        first = index[model.first_op]
        # the first forward on stage 0 waits at most for every Allgather queued on its link
        self.t_first_upper = release0[first] + allgather_total

        self.best = incumbent
        self.best_plan: Optional[SchedulePlan] = None
        self.best_timeline: Optional[Timeline] = None
        self.nodes = 0
        self.leaves = 0
        self.exhausted = False
        self.root_bound = 0.0
        self.streams = shared_link_streams(graph)
        # lowest contention-free bound among leaves whose link orders were not all tried
        self.uncertified = math.inf
        self._reset()

    def _reset(self):
        n, p = self.n, self.n_pp
        self.start = [None] * n
        self.end = [None] * n
        self.remaining = [len(self.preds[i]) for i in range(n)]
        self.release = list(self.release0)
        self.stage_free = [0.0] * p
        self.held = [0.0] * p
        self.reserved = [0.0] * p
        self.work_left = [0.0] * p
        for i in range(n):
            self.work_left[self.stage[i]] += self.dur[i]
        self.chain_next = [0] * self.n_chains
        self.resolved = {i for i in range(n) if self.remaining[i] == 0}
        self.order: List[int] = []
        self.last = (-math.inf, -1)
        self._est = [0.0] * n

    # -- state transitions -------------------------------------------------------------------

    def _fits(self, i: int) -> bool:
        if not self.starts_block[i]:
            return True
        s = self.stage[i]
        return self.held[s] + self.reserved[s] + self.block_mf[i] <= self.limit[s] + TIME_TOL

    def _children(self) -> List[Tuple[float, int, int]]:
        last_t, last_s = self.last
        children = []
        for i in self.resolved:
            if self.chain_pos[i] != self.chain_next[self.chain_of[i]] or not self._fits(i):
                continue
            s = self.stage[i]
            t = max(self.stage_free[s], self.release[i])
            if t > last_t + TIME_TOL or (abs(t - last_t) <= TIME_TOL and s > last_s):
                children.append((t, s, i))
        children.sort()
        return children

    def _apply(self, i: int, t: float):
        s = self.stage[i]
        e = t + self.dur[i]
        undo = (i, self.stage_free[s], self.held[s], self.reserved[s], self.last, [])
        self.start[i] = t
        self.end[i] = e
        self.stage_free[s] = e
        if self.starts_block[i]:
            self.reserved[s] += self.block_mf[i]
        if self.ends_block[i]:
            self.held[s] += self.delta[i]
            if self.block_mf[i]:
                self.reserved[s] -= self.block_mf[i]
        self.work_left[s] -= self.dur[i]
        self.chain_next[self.chain_of[i]] += 1
        self.resolved.discard(i)
        for j, d in self.succs[i]:
            undo[5].append((j, self.release[j]))
            self.remaining[j] -= 1
            self.release[j] = max(self.release[j], e + d)
            if self.remaining[j] == 0:
                self.resolved.add(j)
        self.order.append(i)
        self.last = (t, s)
        return undo

    def _undo(self, undo) -> None:
        i, free, held, reserved, last, changed = undo
        s = self.stage[i]
        for j, old in reversed(changed):
            if self.remaining[j] == 0:
                self.resolved.discard(j)
            self.remaining[j] += 1
            self.release[j] = old
        self.stage_free[s] = free
        self.held[s] = held
        self.reserved[s] = reserved
        self.work_left[s] += self.dur[i]
        self.chain_next[self.chain_of[i]] -= 1
        self.start[i] = None
        self.end[i] = None
        self.resolved.add(i)
        self.order.pop()
        self.last = last

    # -- bounding ----------------------------------------------------------------------------

    def lower_bound(self) -> float:
        """Contention-free bound on the stage-0 span of any completion of the current node."""
        watermark = self.last[0] if self.order else 0.0
        est = self._est
        bound = 0.0
        stage_min = [math.inf] * self.n_pp
        for i in self.topo:
            if self.end[i] is not None:
                bound = max(bound, self.end[i] + self.dp_tail[i])
                continue
            e = max(self.release[i], self.stage_free[self.stage[i]], watermark)
            for u, d in self.preds[i]:
                if self.end[u] is None:
                    e = max(e, est[u] + self.dur[u] + d)
            est[i] = e
            bound = max(bound, e + self.tail[i])
            if e < stage_min[self.stage[i]]:
                stage_min[self.stage[i]] = e
        for s in range(self.n_pp):
            if self.work_left[s] > TIME_TOL:
                bound = max(bound, max(self.stage_free[s], stage_min[s]) + self.work_left[s])
        return bound - self.t_first_upper

    def _prunable(self, bound: float) -> bool:
        if math.isinf(self.best):
            return False
        if bound >= self.best - 1e-9:
            return True
        return self.gap > 0 and bound >= self.best * (1.0 - self.gap)

    # -- search ------------------------------------------------------------------------------

    def _out_of_budget(self) -> bool:
        if self.max_nodes is not None and self.nodes >= self.max_nodes:
            return True
        if self.deadline is not None and self.nodes % 64 == 0 and time.monotonic() > self.deadline:
            return True
        return False

    def plan_from_order(self) -> SchedulePlan:
        stages = [[] for _ in range(self.n_pp)]
        for i in self.order:
            op = self.ops[i]
            stages[op.stage].append(PlanEntry(op.chunk, op.op_type, op.microbatch, op.sub_index))
        return SchedulePlan(family=self.family, stage_orders=tuple(tuple(o) for o in stages),
                            m_limit=None if any(math.isinf(x) for x in self.limit) else tuple(self.limit),
                            n_sub=self.model.graph.n_sub, engine="exact")

    def _leaf(self) -> None:
        self.leaves += 1
        plan = self.plan_from_order()
        try:
            timeline = simulate(self.model.graph, plan, self.model.spec)
        except DeadlockError:
            return
        value = timeline.metrics.makespan_stage0
        floor = self.lower_bound()
        if self.streams and value > floor + TIME_TOL and floor < self.best - 1e-9:
            plan, timeline, value = self._reorder_links(plan, timeline, value, floor)
        if value < self.best - 1e-9:
            logging.debug(f"New incumbent {value:.6g} after {self.nodes} nodes")
            self.best = value
            self.best_plan = plan
            self.best_timeline = timeline

    def _reorder_links(self, plan: SchedulePlan, timeline: Timeline, value: float,
                       floor: float) -> Tuple[SchedulePlan, Timeline, float]:
        labels = sorted(self.streams)
        combos = 1
        for label in labels:
            combos *= count_interleavings(self.streams[label])
        if combos > LINK_ORDER_LIMIT:
            self.uncertified = min(self.uncertified, floor)
            return plan, timeline, value
        for orders in itertools.product(*(interleavings(self.streams[label]) for label in labels)):
            candidate = replace(plan, link_orders=dict(zip(labels, orders)))
            try:
                other = simulate(self.model.graph, candidate, self.model.spec)
            except DeadlockError:
                continue
            if other.metrics.makespan_stage0 < value - 1e-9:
                plan, timeline, value = candidate, other, other.metrics.makespan_stage0
        return plan, timeline, value

    def replay(self, prefix: Prefix) -> None:
        for i, t in prefix:
            self._apply(i, t)

    def dfs(self) -> None:
        self.nodes += 1
        if self._out_of_budget():
            self.exhausted = True
            return
        if len(self.order) == self.n:
            self._leaf()
            return
        if self._prunable(self.lower_bound()):
            return
        for t, _, i in self._children():
            undo = self._apply(i, t)
            self.dfs()
            self._undo(undo)
            if self.exhausted:
                return

    def frontier(self, width: int) -> List[Prefix]:
        """Breadth-first expansion of the root into at least `width` open subtrees."""
        level: List[Prefix] = [[]]
        while 0 < len(level) < width:
            nxt: List[Prefix] = []
            expanded = False
            for prefix in level:
                self._reset()
                self.replay(prefix)
                if len(self.order) == self.n:
                    nxt.append(prefix)
                    continue
                children = self._children()
                expanded = expanded or bool(children)
                nxt += [prefix + [(i, t)] for t, _, i in children]
            level = nxt
            if not expanded:
                break
        self._reset()
        return level


def _search_subtree(args) -> Tuple[float, Optional[SchedulePlan], Optional[Timeline], int, bool, float]:
    model, family, incumbent, deadline, max_nodes, gap, prefix = args
    search = _Search(model, family, incumbent, deadline, max_nodes, gap)
    search.replay(prefix)
    search.dfs()
    return search.best, search.best_plan, search.best_timeline, search.nodes, search.exhausted, search.uncertified


def _seed_plans(model: COModel) -> List[SchedulePlan]:
    spec = model.spec
    seeds = []
    if spec.pattern == "UD":
        try:
            seeds.append(generate_greedy(spec, n_sub=model.graph.n_sub)[0])
        except (ValueError, RuntimeError) as e:
            logging.debug(f"Greedy seed unavailable: {e}")
    if model.graph.n_sub == 1:
        for family in STATIC_FAMILIES:
            try:
                seeds.append(build_static(spec, family))
            except ValueError:
                continue
    return seeds


def default_family(model: COModel) -> str:
    return {"UD": "CrossUD", "Wave": "CrossWave", "Loop": "CrossLoop"}[model.spec.pattern]


def solve_exact(model: COModel, budget: Optional[float] = None, max_nodes: Optional[int] = None,
                gap: float = 0.0, workers: int = 1,
                seeds: Optional[Iterable[SchedulePlan]] = None) -> ExactResult:
    if budget is not None and budget <= 0:
        raise ValueError("budget must be positive")
    family = default_family(model)
    deadline = time.monotonic() + budget if budget is not None else None

    incumbent = math.inf
    best_plan = None
    best_timeline = None
    for seed in (_seed_plans(model) if seeds is None else seeds):
        # seeds are timed as orders of this family, whatever their own backward style
        candidate = SchedulePlan(family=family, stage_orders=seed.stage_orders, m_limit=seed.m_limit,
                                 n_sub=seed.n_sub, engine=f"exact(seed:{seed.family})")
        if validate_schedule(model.graph, candidate, model.spec):
            continue
        try:
            timeline = simulate(model.graph, candidate, model.spec)
        except DeadlockError:
            continue
        if timeline.metrics.makespan_stage0 < incumbent - 1e-9:
            incumbent = timeline.metrics.makespan_stage0
            best_plan = candidate
            best_timeline = timeline

    root = _Search(model, family, incumbent, deadline, max_nodes, gap)
    root_bound = root.lower_bound()
    if workers <= 1:
        root.dfs()
        results = [(root.best, root.best_plan, root.best_timeline, root.nodes, root.exhausted, root.uncertified)]
    else:
        prefixes = root.frontier(2 * workers)
        per_worker = None if max_nodes is None else max(1, max_nodes // max(1, len(prefixes)))
        jobs = [(model, family, incumbent, deadline, per_worker, gap, prefix) for prefix in prefixes]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_search_subtree, jobs))

    nodes = sum(r[3] for r in results)
    exhausted = any(r[4] for r in results)
    uncertified = min(r[5] for r in results)
    for value, plan, timeline, _, _, _ in results:
        if plan is not None and value < incumbent - 1e-9:
            incumbent, best_plan, best_timeline = value, plan, timeline

    if best_plan is None:
        if exhausted:
            raise InfeasibleScheduleError("no feasible schedule found within the search budget")
        raise InfeasibleScheduleError(
            f"no ordering satisfies the memory limits {model.mem_limits} for this problem"
        )

    link_orders = _realized_link_orders(model, best_plan)
    best_plan = SchedulePlan(family=family, stage_orders=best_plan.stage_orders,
                             link_orders=link_orders or None, m_limit=best_plan.m_limit,
                             n_sub=best_plan.n_sub, engine=best_plan.engine)
    # a finished search proves optimality only without gap pruning and with every link order covered
    complete = not exhausted
    optimal = complete and gap == 0 and uncertified >= incumbent - 1e-9
    if optimal:
        lower_bound = incumbent
    elif complete:
        lower_bound = max(root_bound, min(incumbent * (1.0 - gap), uncertified))
    else:
        lower_bound = min(root_bound, incumbent)
    status = "optimal" if optimal else ("complete" if complete else "budget exhausted")
    logging.info(f"Exact {family}: makespan {incumbent:.6g}, {status}, {nodes} nodes")
    return ExactResult(
        plan=best_plan,
        makespan=incumbent,
        optimal=optimal,
        timeline=best_timeline,
        nodes=nodes,
        lower_bound=lower_bound,
    )


def _realized_link_orders(model: COModel, plan: SchedulePlan):
    return run_plan(model.graph, plan, model.spec).link_orders()
