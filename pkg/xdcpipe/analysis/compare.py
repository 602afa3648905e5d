"""Build any schedule family for a problem and pick the best simulated one."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from dataclasses_json import dataclass_json

from xdcpipe.core.types import ProblemSpec, SchedulePlan, Timeline
from xdcpipe.exact import build_model, solve_exact
from xdcpipe.greedy import default_memory_budget, generate_greedy
from xdcpipe.patterns import build_graph
from xdcpipe.simulator import simulate
from xdcpipe.static_schedules import STATIC_FAMILIES, build_static, family_pattern

DYNAMIC_FAMILIES = ("CrossUD", "CrossUDSub", "CrossWave", "CrossLoop")
ALL_FAMILIES = STATIC_FAMILIES + DYNAMIC_FAMILIES

_DYNAMIC_LAYOUT = {"CrossUD": ("UD", 1), "CrossUDSub": ("UD", 1), "CrossWave": ("Wave", 2), "CrossLoop": ("Loop", 2)}
# static counterpart whose memory peak bounds each dynamic family
_MEMORY_REFERENCE = {"CrossUD": "1F1B", "CrossUDSub": "1F1B", "CrossWave": "ZBV", "CrossLoop": "IV1F1B"}


def normalize_any_family(family: str) -> str:
    lookup = {f.lower(): f for f in ALL_FAMILIES}
    key = family.lower().replace("-", "").replace("_", "")
    if key in lookup:
        return lookup[key]
    raise ValueError(f"unknown schedule family {family!r}; expected one of {ALL_FAMILIES}")


def family_layout(family: str) -> Tuple[str, int]:
    family = normalize_any_family(family)
    if family in _DYNAMIC_LAYOUT:
        return _DYNAMIC_LAYOUT[family]
    return family_pattern(family)


def family_problem(base: ProblemSpec, family: str) -> ProblemSpec:
    """Re-chunk a problem for a family, keeping each stage's total work, memory and links.

    A stage's per-microbatch time and memory are split evenly over the family's chunks.
    """
    pattern, n_chunks = family_layout(family)
    if base.pattern == pattern and base.n_chunks == n_chunks:
        return base

    def split(grid):
        return [[sum(row) / n_chunks] * n_chunks for row in grid]

    changes = dict(
        pattern=pattern, n_chunks=n_chunks,
        t_f=split(base.t_f), t_d=split(base.t_d), t_w=split(base.t_w),
        m_f=split(base.m_f), m_d=split(base.m_d), m_w=split(base.m_w),
    )
    if base.dp_overlap is not None:
        total = sum(base.dp_overlap.volume)
        changes["dp_overlap"] = {**base.dp_overlap.model_dump(), "volume": [total / n_chunks] * n_chunks}
    return base.with_updates(**changes)


def with_delay_ratios(spec: ProblemSpec, lat_ratio: float, bw_ratio: float) -> ProblemSpec:
    """Cross-DC latency and per-message bandwidth time as multiples of the stage forward time."""
    if lat_ratio < 0 or bw_ratio < 0:
        raise ValueError("delay ratios must be non-negative")
    t_unit = spec.t_forward
    msg = max(list(spec.msg_fwd) + list(spec.msg_bwd)) or 1.0
    return spec.with_updates(
        alpha=lat_ratio * t_unit,
        beta=bw_ratio * t_unit / msg,
        msg_fwd=msg,
        msg_bwd=msg,
    )


def static_memory_budget(spec: ProblemSpec, family: str) -> Optional[List[float]]:
    """Largest per-stage peak of a static plan, applied to every stage."""
    try:
        plan = build_static(spec, family)
    except ValueError:
        return None
    peak = max(simulate(build_graph(spec, 1, with_dp=False), plan, spec).metrics.peak_memory)
    return [max(peak, max(spec.m_f[s])) for s in range(spec.n_pp)]


def dynamic_memory_budget(spec: ProblemSpec, family: str) -> Optional[List[float]]:
    if spec.m_limit is not None:
        return list(spec.m_limit)
    if family in ("CrossUD", "CrossUDSub"):
        return default_memory_budget(spec)
    return static_memory_budget(spec, _MEMORY_REFERENCE[family])


def build_schedule(spec: ProblemSpec, family: str, n_sub: int = 1, budget: Optional[float] = None,
                   max_nodes: Optional[int] = None, gap: float = 0.0) -> Tuple[SchedulePlan, Timeline]:
    """Plan and simulated timeline of one family on a problem already laid out for it."""
    family = normalize_any_family(family)
    if family in STATIC_FAMILIES:
        plan = build_static(spec, family)
        return plan, simulate(build_graph(spec, 1), plan, spec)

    m_limit = dynamic_memory_budget(spec, family)
    if family == "CrossUDSub":
        return generate_greedy(spec, n_sub=n_sub, m_limit=m_limit)

    limited = spec if m_limit is None else spec.with_updates(m_limit=m_limit)
    result = solve_exact(build_model(build_graph(limited, 1), limited),
                         budget=budget, max_nodes=max_nodes, gap=gap)
    return result.plan, result.timeline


@dataclass_json
@dataclass
class ComparisonRow:
    family: str
    engine: Optional[str]
    makespan: Optional[float]
    makespan_global: Optional[float]
    max_bubble_ratio: Optional[float]
    peak_memory: Optional[float]
    error: Optional[str] = None


def compare_schedules(base: ProblemSpec, families: Sequence[str] = ALL_FAMILIES, n_sub: int = 1,
                      budget: Optional[float] = None, max_nodes: Optional[int] = None) -> List[ComparisonRow]:
    """Simulate every family on the same links; rows come back best first, failures last."""
    rows = []
    for family in families:
        family = normalize_any_family(family)
        try:
            spec = family_problem(base, family)
            plan, timeline = build_schedule(spec, family, n_sub=n_sub, budget=budget, max_nodes=max_nodes)
        except (ValueError, RuntimeError) as e:
            logging.warning(f"{family} skipped: {e}")
            rows.append(ComparisonRow(family, None, None, None, None, None, error=str(e)))
            continue
        m = timeline.metrics
        rows.append(ComparisonRow(
            family=family,
            engine=plan.engine,
            makespan=m.makespan_stage0,
            makespan_global=m.makespan_global,
            max_bubble_ratio=max(m.bubble_ratio),
            peak_memory=max(m.peak_memory),
        ))
    ranked = sorted((r for r in rows if r.error is None), key=lambda r: (r.makespan, ALL_FAMILIES.index(r.family)))
    return ranked + [r for r in rows if r.error is not None]


def best_schedule(rows: List[ComparisonRow]) -> ComparisonRow:
    if not rows or rows[0].error is not None:
        raise ValueError("no schedule family could be built for this problem")
    return rows[0]
