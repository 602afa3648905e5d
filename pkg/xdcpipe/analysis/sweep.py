"""Delay-sensitivity sweeps and the memory / batch-size trade-off study."""
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

from dataclasses_json import dataclass_json
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from tqdm import tqdm
from typing_extensions import Self

from xdcpipe.analysis.compare import (
    build_schedule,
    family_problem,
    normalize_any_family,
    with_delay_ratios,
)
from xdcpipe.core.io import read_document
from xdcpipe.core.types import ProblemSpec
from xdcpipe.greedy import default_memory_budget, generate_greedy
from xdcpipe.settings import app_settings

DEFAULT_FAMILIES = ("1F1B", "ZBH1", "IV1F1B", "ZBV", "CrossUD", "CrossUDSub", "CrossWave")
SWEEP_COLUMNS = ["family", "lat_ratio", "bw_ratio", "makespan", "slowdown", "engine", "error"]
TRADEOFF_COLUMNS = ["epsilon", "global_batch_size", "budget_factor", "makespan",
                    "time_per_microbatch", "peak_memory", "error"]


def _default_lat_ratios() -> List[float]:
    return app_settings.sweep.grid()[0]


def _default_bw_ratios() -> List[float]:
    return app_settings.sweep.grid()[1]


class SweepConfig(BaseModel):
    """A grid of (latency, bandwidth) delays, both in units of the stage forward time."""
    model_config = ConfigDict(extra="forbid")

    base: ProblemSpec
    families: List[str] = Field(default_factory=lambda: list(DEFAULT_FAMILIES))
    lat_ratios: List[float] = Field(default_factory=_default_lat_ratios)
    bw_ratios: List[float] = Field(default_factory=_default_bw_ratios)
    reference_family: str = "ZBV"
    reference_point: Tuple[float, float] = (0.0, 0.0)
    n_sub: int = Field(default_factory=lambda: app_settings.greedy.n_sub, ge=1)
    exact_budget: Optional[float] = Field(default=None, gt=0)
    # a node limit instead of a time budget keeps every cell reproducible
    exact_max_nodes: Optional[int] = Field(default=2000, ge=1)
    exact_gap: float = Field(default=0.0, ge=0, lt=1)
    n_dp: int = Field(default=1, ge=1)
    epsilons: List[int] = Field(default_factory=lambda: [1, 2, 4])
    budget_factors: List[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0])
    tradeoff_point: Tuple[float, float] = (1.0, 1.0)

    @field_validator("families", mode="before")
    @classmethod
    def normalize_families(cls, families):
        if isinstance(families, str):
            families = [f.strip() for f in families.split(",") if f.strip()]
        return [normalize_any_family(f) for f in families]

    @field_validator("reference_family", mode="before")
    @classmethod
    def normalize_reference(cls, family):
        return normalize_any_family(family)

    @field_validator("lat_ratios", "bw_ratios")
    @classmethod
    def check_ratios(cls, ratios: List[float]) -> List[float]:
        if not ratios or any(r < 0 for r in ratios):
            raise ValueError("delay ratios must be a non-empty list of non-negative numbers")
        return ratios

    @model_validator(mode="after")
    def check_reference(self) -> Self:
        if self.reference_family not in self.families:
            raise ValueError(f"reference family {self.reference_family} is not in the family list {self.families}")
        if any(e < 1 for e in self.epsilons) or any(f <= 0 for f in self.budget_factors):
            raise ValueError("epsilons must be >= 1 and budget factors positive")
        return self

    @property
    def epsilon(self) -> float:
        return self.base.n_mb / self.base.n_pp

    @property
    def global_batch_size(self) -> float:
        return self.epsilon * self.base.n_pp * self.n_dp


def load_sweep_config(path: str) -> SweepConfig:
    return SweepConfig.model_validate(read_document(path, "sweep config"))


@dataclass_json
@dataclass
class SweepRow:
    family: str
    lat_ratio: float
    bw_ratio: float
    makespan: Optional[float]
    slowdown: Optional[float]
    engine: Optional[str]
    error: Optional[str] = None


def _run_cell(args) -> SweepRow:
    config, family, lat, bw = args
    try:
        spec = with_delay_ratios(family_problem(config.base, family), lat, bw)
        plan, timeline = build_schedule(
            spec, family, n_sub=config.n_sub, budget=config.exact_budget,
            max_nodes=config.exact_max_nodes, gap=config.exact_gap,
        )
    except (ValueError, RuntimeError) as e:
        logging.warning(f"Sweep cell {family} ({lat}, {bw}) failed: {e}")
        return SweepRow(family, lat, bw, None, None, None, error=str(e))
    return SweepRow(family, lat, bw, timeline.metrics.makespan_stage0, None, plan.engine)


def delay_sweep(config: SweepConfig, workers: Optional[int] = None, progress: bool = False) -> List[SweepRow]:
    """Simulate every family at every grid point; slowdowns are relative to the reference cell."""
    cells = [(config, family, lat, bw)
             for family in config.families for lat in config.lat_ratios for bw in config.bw_ratios]
    ref_lat, ref_bw = config.reference_point
    if not any(f == config.reference_family and (l, b) == (ref_lat, ref_bw) for _, f, l, b in cells):
        cells.append((config, config.reference_family, ref_lat, ref_bw))

    workers = workers or app_settings.sweep.workers
    logging.info(f"Running {len(cells)} sweep cells on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(tqdm(pool.map(_run_cell, cells), total=len(cells), disable=not progress))
    else:
        rows = [_run_cell(cell) for cell in tqdm(cells, disable=not progress)]

    reference = next(r for r in rows if r.family == config.reference_family
                     and (r.lat_ratio, r.bw_ratio) == (ref_lat, ref_bw))
    if reference.makespan is None:
        logging.warning(f"Reference cell failed ({reference.error}); slowdowns left empty")
    else:
        for row in rows:
            if row.makespan is not None:
                row.slowdown = row.makespan / reference.makespan

    order = {f: i for i, f in enumerate(config.families)}
    return sorted(rows, key=lambda r: (order.get(r.family, len(order)), r.lat_ratio, r.bw_ratio))


def sweep_table(rows: List[SweepRow]) -> Dict[str, Dict[Tuple[float, float], SweepRow]]:
    """Rows keyed by family, then by (lat_ratio, bw_ratio)."""
    table: Dict[str, Dict[Tuple[float, float], SweepRow]] = {}
    for row in rows:
        table.setdefault(row.family, {})[(row.lat_ratio, row.bw_ratio)] = row
    return table


def write_csv(rows: List, columns: List[str], path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                data = asdict(row)
                writer.writerow({k: "" if data[k] is None else data[k] for k in columns})
    except OSError as e:
        raise ValueError(f"could not write CSV file {path}: {e}") from e


def write_sweep_csv(rows: List[SweepRow], path: str) -> None:
    write_csv(rows, SWEEP_COLUMNS, path)


@dataclass_json
@dataclass
class TradeoffRow:
    epsilon: int
    global_batch_size: int
    budget_factor: float
    makespan: Optional[float]
    time_per_microbatch: Optional[float]
    peak_memory: Optional[float]
    error: Optional[str] = None


def memory_tradeoff(config: SweepConfig) -> List[TradeoffRow]:
    """Greedy sub-block schedules at growing memory budgets and microbatch counts.

    The budget is a multiple of the 1F1B peak; epsilon is microbatches per stage, so the global
    batch size grows with it at fixed n_pp and n_dp.
    """
    lat, bw = config.tradeoff_point
    base = family_problem(config.base, "CrossUDSub")
    rows = []
    for epsilon in config.epsilons:
        n_mb = epsilon * base.n_pp
        spec = with_delay_ratios(base.with_updates(n_mb=n_mb, m_limit=None), lat, bw)
        reference = default_memory_budget(spec)
        for factor in config.budget_factors:
            gbs = n_mb * config.n_dp
            budget = [max(factor * m, max(spec.m_f[s])) for s, m in enumerate(reference)]
            try:
                _, timeline = generate_greedy(spec, n_sub=config.n_sub, m_limit=budget)
            except (ValueError, RuntimeError) as e:
                rows.append(TradeoffRow(epsilon, gbs, factor, None, None, None, error=str(e)))
                continue
            m = timeline.metrics
            rows.append(TradeoffRow(
                epsilon=epsilon,
                global_batch_size=gbs,
                budget_factor=factor,
                makespan=m.makespan_stage0,
                time_per_microbatch=m.makespan_stage0 / n_mb,
                peak_memory=max(m.peak_memory),
            ))
    return rows
