"""Cross-DC pipeline parallelism against cross-DC data parallelism."""
import logging
from dataclasses import dataclass
from typing import List, Optional

from dataclasses_json import dataclass_json
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from xdcpipe.analysis.compare import family_problem
from xdcpipe.core.io import read_document
from xdcpipe.core.presets import gbytes_to_seconds_per_byte, message_size
from xdcpipe.core.types import ProblemSpec
from xdcpipe.exact import build_model, solve_exact
from xdcpipe.greedy import default_memory_budget, generate_greedy
from xdcpipe.patterns import build_graph
from xdcpipe.simulator import simulate
from xdcpipe.static_schedules import build_static

PPDP_COLUMNS = ["bandwidth", "latency", "t_pp", "t_dp", "speedup", "slowdown_vs_single_dc"]


class PPDPConfig(BaseModel):
    """Model, parallelism and link settings; defaults describe a 405B-parameter dense model.

    `layer_flops` is an input: with 8 layers per stage, 8-way tensor parallelism and
    500 TFLOP/s per GPU the default gives a 109 ms stage forward time.
    """
    model_config = ConfigDict(extra="forbid")

    n_params: float = Field(default=406e9, gt=0)
    hidden: int = Field(default=16384, ge=1)
    seq_len: int = Field(default=8192, ge=1)
    microbatch: int = Field(default=1, ge=1)
    n_layers: int = Field(default=128, ge=1)
    n_tp: int = Field(default=8, ge=1)
    n_pp: int = Field(default=16, ge=2)
    n_dp: int = Field(default=64, ge=1)
    epsilon: int = Field(default=2, ge=1)
    gpu_flops: float = Field(default=500e12, gt=0)
    layer_flops: float = Field(default=5.45e13, gt=0)
    n_dc: int = Field(default=2, ge=2)
    bytes_per_elem: int = Field(default=2, ge=1)
    bandwidths: List[float] = Field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0])
    latencies: List[float] = Field(default_factory=lambda: [0.016])

    @field_validator("bandwidths", "latencies")
    @classmethod
    def check_grid(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("bandwidth and latency grids must not be empty")
        return values

    @field_validator("bandwidths")
    @classmethod
    def check_bandwidths(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("bandwidths (GB/s) must be positive")
        return values

    @field_validator("latencies")
    @classmethod
    def check_latencies(cls, values: List[float]) -> List[float]:
        if any(v < 0 for v in values):
            raise ValueError("latencies (s) must be non-negative")
        return values

    @property
    def stage_forward_time(self) -> float:
        return self.n_layers / self.n_pp * self.layer_flops / (self.gpu_flops * self.n_tp)

    @property
    def n_mb(self) -> int:
        return self.epsilon * self.n_pp

    @property
    def message_bytes(self) -> int:
        return message_size(self.microbatch, self.seq_len, self.hidden, self.n_dp, self.bytes_per_elem)

    @property
    def dp_bytes(self) -> float:
        return 2 * self.n_params * self.bytes_per_elem

    def problem(self, bandwidth: Optional[float] = None, latency: float = 0.0, n_pp: Optional[int] = None) -> ProblemSpec:
        """UD problem with stages split evenly over the DCs; no link means a single-DC run."""
        n_pp = n_pp or self.n_pp
        if n_pp % self.n_dc:
            raise ValueError(f"n_pp={n_pp} does not split evenly over {self.n_dc} DCs")
        t_f = self.stage_forward_time
        per_dc = n_pp // self.n_dc
        beta = gbytes_to_seconds_per_byte(bandwidth) if bandwidth is not None else 0.0
        return ProblemSpec(
            n_pp=n_pp, n_mb=self.epsilon * n_pp, pattern="UD",
            t_f=t_f, t_d=t_f, t_w=t_f,
            dc_of_stage=[s // per_dc for s in range(n_pp)] if bandwidth is not None else [0] * n_pp,
            alpha=latency, beta=beta,
            msg_fwd=float(self.message_bytes), msg_bwd=float(self.message_bytes),
        )


def load_ppdp_config(path: str) -> PPDPConfig:
    return PPDPConfig.model_validate(read_document(path, "pp-vs-dp config"))


@dataclass_json
@dataclass
class PPDPRow:
    bandwidth: float
    latency: float
    t_pp: float
    t_dp: float
    speedup: float
    slowdown_vs_single_dc: float


def single_dc_time(config: PPDPConfig) -> float:
    """Zero-delay ZBV iteration time, the ideal single-DC reference."""
    spec = family_problem(config.problem(), "ZBV")
    plan = build_static(spec, "ZBV")
    return simulate(build_graph(spec, 1), plan, spec).metrics.makespan_stage0


def pipeline_time(config: PPDPConfig, bandwidth: float, latency: float, n_pp: Optional[int] = None) -> float:
    spec = config.problem(bandwidth, latency, n_pp)
    _, timeline = generate_greedy(spec, n_sub=1)
    return timeline.metrics.makespan_stage0


def pp_vs_dp(config: PPDPConfig, progress: bool = False) -> List[PPDPRow]:
    """DP pays an unoverlapped all-reduce of 2·N·bytes_per_elem across the link; PP pays queued transfers."""
    t_single = single_dc_time(config)
    logging.info(f"Stage forward time {config.stage_forward_time:.4f}s, single-DC iteration {t_single:.3f}s")
    rows = []
    grid = [(bw, lat) for bw in config.bandwidths for lat in config.latencies]
    for bandwidth, latency in tqdm(grid, disable=not progress):
        t_dp = t_single + 2 * latency + config.dp_bytes * gbytes_to_seconds_per_byte(bandwidth)
        t_pp = pipeline_time(config, bandwidth, latency)
        rows.append(PPDPRow(
            bandwidth=bandwidth,
            latency=latency,
            t_pp=t_pp,
            t_dp=t_dp,
            speedup=t_dp / t_pp,
            slowdown_vs_single_dc=t_pp / t_single,
        ))
    return rows


@dataclass_json
@dataclass
class ReplicaCheck:
    n_pp: int
    greedy: float
    exact: float
    optimal: bool
    relative_gap: float


def scaled_replica_check(config: PPDPConfig, bandwidth: float, latency: float, n_pp: int = 4,
                         max_nodes: Optional[int] = 2000, budget: Optional[float] = None) -> ReplicaCheck:
    """Greedy against the exact solver on a down-scaled pipeline with the same link and stage times."""
    spec = config.problem(bandwidth, latency, n_pp)
    _, timeline = generate_greedy(spec, n_sub=1)
    limited = spec.with_updates(m_limit=default_memory_budget(spec))
    result = solve_exact(build_model(build_graph(limited, 1), limited), budget=budget, max_nodes=max_nodes)
    greedy = timeline.metrics.makespan_stage0
    return ReplicaCheck(
        n_pp=n_pp,
        greedy=greedy,
        exact=result.makespan,
        optimal=result.optimal,
        relative_gap=(greedy - result.makespan) / result.makespan,
    )
