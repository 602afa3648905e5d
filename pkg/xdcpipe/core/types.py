"""Shared domain types: the scheduling problem, the dependency graph, plans and timelines."""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Tuple

import networkx as nx
import numpy as np
from dataclasses_json import dataclass_json
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from xdcpipe.utils import TIME_TOL

SUPPORTED_PATTERNS = ("UD", "Loop", "Wave")


class OpType(str, Enum):
    F = "F"
    D = "D"
    W = "W"


class CommKind(str, Enum):
    FWD = "fwd"
    BWD = "bwd"
    DP = "dp"
    ALLGATHER = "allgather"


class DPOverlap(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # bytes per chunk
    volume: List[float]
    zero_stage: int = Field(default=0, ge=0, le=1)
    # DC hosting the other DP replica; None keeps the traffic inside the stage's own DC
    peer_dc: Optional[int] = Field(default=None, ge=0)


def _is_number(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


def _broadcast_grid(value, n_pp: int, n_chunks: int):
    """Expand a scalar or per-stage list into an n_pp x n_chunks grid."""
    if _is_number(value):
        return [[float(value)] * n_chunks for _ in range(n_pp)]
    if isinstance(value, (list, tuple)) and value and all(_is_number(v) for v in value):
        if len(value) == n_pp:
            return [[float(v)] * n_chunks for v in value]
    return value


def _broadcast_stages(value, n_pp: int):
    if _is_number(value):
        return [float(value)] * n_pp
    return value


def _broadcast_matrix(value, n_dc: int):
    """A scalar means the same delay between every pair of distinct DCs."""
    if _is_number(value):
        return [[0.0 if i == j else float(value) for j in range(n_dc)] for i in range(n_dc)]
    return value


class ProblemSpec(BaseModel):
    """A complete scheduling instance.

    Durations are seconds, memory is bytes (any consistent unit works), alpha is seconds and
    beta is seconds per byte. Scalars and per-stage lists are broadcast on load.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_pp: int = Field(ge=1)
    n_mb: int = Field(ge=1)
    n_chunks: int = Field(default=1, ge=1)
    n_sub: int = Field(default=1, ge=1)
    pattern: str = "UD"
    t_f: List[List[float]]
    t_d: List[List[float]]
    t_w: List[List[float]]
    m_f: List[List[float]] = 1.0
    m_d: List[List[float]] = -0.5
    m_w: List[List[float]] = -0.5
    m_limit: Optional[List[float]] = None
    dc_of_stage: List[int] = None
    alpha: List[List[float]] = 0.0
    beta: List[List[float]] = 0.0
    msg_fwd: List[float] = 0.0
    msg_bwd: List[float] = 0.0
    dp_overlap: Optional[DPOverlap] = None

    @model_validator(mode="before")
    @classmethod
    def broadcast_shorthands(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n_pp = data.get("n_pp")
        n_chunks = data.get("n_chunks", 1)
        if not isinstance(n_pp, int) or not isinstance(n_chunks, int) or n_pp < 1 or n_chunks < 1:
            return data

        for name, default in (("m_f", 1.0), ("m_d", -0.5), ("m_w", -0.5)):
            data.setdefault(name, default)
        for name in ("t_f", "t_d", "t_w", "m_f", "m_d", "m_w"):
            if name in data:
                data[name] = _broadcast_grid(data[name], n_pp, n_chunks)
        for name in ("msg_fwd", "msg_bwd"):
            data[name] = _broadcast_stages(data.get(name, 0.0), n_pp)
        dp = data.get("dp_overlap")
        if isinstance(dp, dict) and _is_number(dp.get("volume")):
            data["dp_overlap"] = {**dp, "volume": [float(dp["volume"])] * n_chunks}
        if data.get("m_limit") is not None:
            data["m_limit"] = _broadcast_stages(data["m_limit"], n_pp)

        if data.get("dc_of_stage") is None:
            data["dc_of_stage"] = [0] * n_pp
        dcs = data["dc_of_stage"]
        if isinstance(dcs, (list, tuple)) and dcs and all(isinstance(d, int) for d in dcs):
            n_dc = max(dcs) + 1
            for name in ("alpha", "beta"):
                data[name] = _broadcast_matrix(data.get(name, 0.0), n_dc)
        return data

    @field_validator("pattern", mode="before")
    @classmethod
    def check_pattern(cls, pattern):
        if not isinstance(pattern, str):
            raise ValueError(f"pattern must be a string, got {pattern!r}")
        canonical = {p.lower(): p for p in SUPPORTED_PATTERNS}
        if pattern.lower() == "bd":
            raise ValueError("the bidirectional (BD) traversal pattern is out of scope")
        if pattern.lower() not in canonical:
            raise ValueError(f"unsupported traversal pattern {pattern!r}; expected one of {SUPPORTED_PATTERNS}")
        return canonical[pattern.lower()]

    @model_validator(mode="after")
    def check_invariants(self) -> Self:
        p, v = self.n_pp, self.n_chunks
        if self.pattern == "UD" and v != 1:
            raise ValueError("UD pattern requires n_chunks = 1")
        if self.pattern == "Loop" and v < 2:
            raise ValueError("Loop pattern requires n_chunks >= 2")
        if self.pattern == "Wave" and v != 2:
            raise ValueError("Wave pattern requires n_chunks = 2")

        for name in ("t_f", "t_d", "t_w", "m_f", "m_d", "m_w"):
            grid = np.asarray(getattr(self, name), dtype=float)
            if grid.shape != (p, v):
                raise ValueError(f"{name} must have shape ({p}, {v}), got {grid.shape}")
        for name in ("t_f", "t_d", "t_w"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"all durations must be positive ({name})")

        m_f = np.asarray(self.m_f)
        m_d = np.asarray(self.m_d)
        m_w = np.asarray(self.m_w)
        if np.any(m_f <= 0) or np.any(m_d > 0) or np.any(m_w > 0):
            raise ValueError("memory deltas must satisfy m_f > 0 and m_d, m_w <= 0")
        if not np.allclose(m_f + m_d + m_w, 0.0, atol=1e-9 * max(1.0, float(m_f.max()))):
            raise ValueError("memory deltas do not sum to zero")
        if self.m_limit is not None:
            if len(self.m_limit) != p:
                raise ValueError(f"m_limit must have {p} entries")
            for s in range(p):
                if self.m_limit[s] < m_f[s].max():
                    raise ValueError(
                        f"m_limit of stage {s} ({self.m_limit[s]}) is below its largest m_f ({m_f[s].max()})"
                    )

        if len(self.dc_of_stage) != p:
            raise ValueError(f"dc_of_stage must have {p} entries")
        if any(d < 0 for d in self.dc_of_stage):
            raise ValueError("DC indices must be non-negative")
        if any(b < a for a, b in zip(self.dc_of_stage, self.dc_of_stage[1:])):
            raise ValueError("non-contiguous DC assignment")
        n_dc = self.n_dc
        for name in ("alpha", "beta"):
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.shape != (n_dc, n_dc):
                raise ValueError(f"{name} must be a {n_dc}x{n_dc} matrix, got {mat.shape}")
            if np.any(mat < 0):
                raise ValueError(f"{name} must be non-negative")
        for name in ("msg_fwd", "msg_bwd"):
            sizes = getattr(self, name)
            if len(sizes) != p or any(x < 0 for x in sizes):
                raise ValueError(f"{name} must list {p} non-negative message sizes")

        if self.dp_overlap is not None:
            if len(self.dp_overlap.volume) != v:
                raise ValueError(f"dp_overlap.volume must have {v} entries")
            if any(x < 0 for x in self.dp_overlap.volume):
                raise ValueError("dp_overlap.volume must be non-negative")
            if self.dp_overlap.peer_dc is not None and self.dp_overlap.peer_dc >= n_dc:
                raise ValueError(f"dp_overlap.peer_dc {self.dp_overlap.peer_dc} is not a known DC")
        return self

    @property
    def n_dc(self) -> int:
        return max(self.dc_of_stage) + 1

    @property
    def t_forward(self) -> float:
        """Largest per-microbatch forward time of a stage; the normalization unit for delays."""
        return max(sum(row) for row in self.t_f)

    def memory_limit(self, stage: int) -> float:
        if self.m_limit is None:
            return float("inf")
        return self.m_limit[stage]

    def link(self, src_stage: int, dst_stage: int) -> Tuple[int, int]:
        return self.dc_of_stage[src_stage], self.dc_of_stage[dst_stage]

    def comm_delays(self, src_stage: int, dst_stage: int, nbytes: float) -> Tuple[float, float]:
        """(latency, bandwidth time) for sending nbytes between two stages."""
        a, b = self.link(src_stage, dst_stage)
        return self.alpha[a][b], self.beta[a][b] * nbytes

    def with_updates(self, **changes) -> "ProblemSpec":
        data = self.model_dump()
        data.update(changes)
        return ProblemSpec.model_validate(data)


class BlockKey(NamedTuple):
    stage: int
    chunk: int
    op_type: OpType
    microbatch: int
    sub_index: int = 0


@dataclass(frozen=True)
class ComputeOp:
    id: int
    stage: int
    chunk: int
    op_type: OpType
    microbatch: int
    sub_index: int
    duration: float
    mem_delta: float

    @property
    def key(self) -> BlockKey:
        return BlockKey(self.stage, self.chunk, self.op_type, self.microbatch, self.sub_index)

    @property
    def name(self) -> str:
        suffix = f":k{self.sub_index}" if self.sub_index else ""
        return f"{self.op_type.value}:s{self.stage}:c{self.chunk}:m{self.microbatch}{suffix}"


@dataclass(frozen=True)
class CommOp:
    id: int
    kind: CommKind
    producer: Optional[int]
    consumer: Optional[int]
    src_stage: int
    dst_stage: int
    latency: float
    bw_time: float
    link: Tuple[int, int]
    name: str

    @property
    def cross_dc(self) -> bool:
        return self.link[0] != self.link[1]


def link_label(link: Tuple[int, int]) -> str:
    return f"{link[0]}>{link[1]}"


class DependencyGraph:
    """Compute and communication ops joined by true-dependency edges.

    Edges live in a networkx DiGraph keyed by op id. A CommOp sits between its producer and its
    consumer; DP ops have no consumer and Allgather ops have no producer.
    """

    def __init__(self, n_pp: int, n_sub: int = 1):
        self.n_pp = n_pp
        self.n_sub = n_sub
        self.compute_ops: Dict[int, ComputeOp] = {}
        self.comm_ops: Dict[int, CommOp] = {}
        self.dag = nx.DiGraph()
        self._ids: Dict[BlockKey, int] = {}
        self._next_id = 0

    def _new_id(self) -> int:
        op_id = self._next_id
        self._next_id += 1
        return op_id

    def add_compute(self, stage: int, chunk: int, op_type: OpType, microbatch: int,
                    duration: float, mem_delta: float, sub_index: int = 0) -> ComputeOp:
        op = ComputeOp(self._new_id(), stage, chunk, op_type, microbatch, sub_index, duration, mem_delta)
        if op.key in self._ids:
            raise ValueError(f"duplicate compute op {op.name}")
        self.compute_ops[op.id] = op
        self._ids[op.key] = op.id
        self.dag.add_node(op.id)
        return op

    def add_edge(self, producer: int, consumer: int) -> None:
        self.dag.add_edge(producer, consumer)

    def add_comm(self, kind: CommKind, producer: Optional[int], consumer: Optional[int],
                 src_stage: int, dst_stage: int, latency: float, bw_time: float,
                 link: Tuple[int, int], name: Optional[str] = None) -> CommOp:
        if name is None:
            name = f"{self._label(producer)}->{self._label(consumer)}"
        comm = CommOp(self._new_id(), kind, producer, consumer, src_stage, dst_stage,
                      latency, bw_time, link, name)
        self.comm_ops[comm.id] = comm
        self.dag.add_node(comm.id)
        if producer is not None:
            self.dag.add_edge(producer, comm.id)
        if consumer is not None:
            self.dag.add_edge(comm.id, consumer)
        return comm

    def _label(self, op_id: Optional[int]) -> str:
        return "-" if op_id is None else self.compute_ops[op_id].name

    def id_of(self, key: BlockKey) -> int:
        try:
            return self._ids[key]
        except KeyError as e:
            raise ValueError(f"no compute op for {key}") from e

    def has_key(self, key: BlockKey) -> bool:
        return key in self._ids

    def is_compute(self, op_id: int) -> bool:
        return op_id in self.compute_ops

    def name_of(self, op_id: int) -> str:
        if op_id in self.compute_ops:
            return self.compute_ops[op_id].name
        return self.comm_ops[op_id].name

    def predecessors(self, op_id: int) -> List[int]:
        return sorted(self.dag.predecessors(op_id))

    def successors(self, op_id: int) -> List[int]:
        return sorted(self.dag.successors(op_id))

    def stage_ops(self, stage: int) -> List[ComputeOp]:
        return [op for op in self.compute_ops.values() if op.stage == stage]

    def ops_of_type(self, op_type: OpType) -> Iterator[ComputeOp]:
        return (op for op in self.compute_ops.values() if op.op_type == op_type)

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.dag)

    def topological_order(self) -> List[int]:
        return list(nx.lexicographical_topological_sort(self.dag))

    def compute_dag(self) -> nx.DiGraph:
        """Compute-only DAG where each comm op is contracted into an edge weighted by its delay."""
        g = nx.DiGraph()
        g.add_nodes_from(self.compute_ops)
        for u, v in self.dag.edges:
            if u in self.compute_ops and v in self.compute_ops:
                g.add_edge(u, v, delay=0.0)
        for comm in self.comm_ops.values():
            if comm.producer is not None and comm.consumer is not None:
                delay = comm.bw_time + comm.latency
                prev = g.get_edge_data(comm.producer, comm.consumer, {}).get("delay", -1.0)
                g.add_edge(comm.producer, comm.consumer, delay=max(prev, delay))
        return g

    def copy(self) -> "DependencyGraph":
        other = DependencyGraph(self.n_pp, self.n_sub)
        other.compute_ops = dict(self.compute_ops)
        other.comm_ops = dict(self.comm_ops)
        other.dag = self.dag.copy()
        other._ids = dict(self._ids)
        other._next_id = self._next_id
        return other


class PlanEntry(NamedTuple):
    chunk: int
    op_type: OpType
    microbatch: int
    sub_index: int = 0


@dataclass(frozen=True)
class SchedulePlan:
    """Per-stage execution orders plus optional per-link transfer orders (by comm name)."""
    family: str
    stage_orders: Tuple[Tuple[PlanEntry, ...], ...]
    link_orders: Optional[Dict[str, Tuple[str, ...]]] = None
    m_limit: Optional[Tuple[float, ...]] = None
    n_sub: int = 1
    engine: str = "static"

    @property
    def n_pp(self) -> int:
        return len(self.stage_orders)

    def keys(self) -> Iterator[BlockKey]:
        for stage, order in enumerate(self.stage_orders):
            for entry in order:
                yield BlockKey(stage, entry.chunk, entry.op_type, entry.microbatch, entry.sub_index)

    @classmethod
    def from_lists(cls, family: str, orders: Iterable[Iterable[Tuple]], **kwargs) -> "SchedulePlan":
        stage_orders = []
        for order in orders:
            entries = []
            for item in order:
                chunk, op_type, microbatch = item[0], item[1], item[2]
                sub_index = item[3] if len(item) > 3 else 0
                entries.append(PlanEntry(int(chunk), OpType(op_type), int(microbatch), int(sub_index)))
            stage_orders.append(tuple(entries))
        return cls(family=family, stage_orders=tuple(stage_orders), **kwargs)


@dataclass_json
@dataclass
class OpRecord:
    id: int
    name: str
    kind: str
    stage: int
    start: float
    end: float
    available: float
    chunk: int = 0
    microbatch: int = 0
    sub_index: int = 0
    mem_delta: float = 0.0
    link: Optional[str] = None
    cross_dc: bool = False
    binding: Optional[int] = None

    @property
    def is_compute(self) -> bool:
        return self.kind in ("F", "D", "W")


@dataclass_json
@dataclass
class MetricsReport:
    makespan_stage0: float
    makespan_global: float
    bubble_ratio: List[float]
    peak_memory: List[float]
    link_utilization: Dict[str, float] = field(default_factory=dict)


@dataclass_json
@dataclass
class Timeline:
    ops: List[OpRecord]
    link_reservations: Dict[str, List[List[float]]]
    dc_of_stage: List[int]
    metrics: Optional[MetricsReport] = None

    def compute_records(self) -> List[OpRecord]:
        return [r for r in self.ops if r.is_compute]

    def record(self, op_id: int) -> OpRecord:
        for r in self.ops:
            if r.id == op_id:
                return r
        raise KeyError(op_id)

    def same_times(self, other: "Timeline") -> bool:
        mine = {r.id: (r.start, r.end, r.available) for r in self.ops}
        theirs = {r.id: (r.start, r.end, r.available) for r in other.ops}
        if mine.keys() != theirs.keys():
            return False
        return all(
            all(abs(a - b) <= TIME_TOL for a, b in zip(mine[k], theirs[k])) for k in mine
        )
