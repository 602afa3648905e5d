from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List

from xdcpipe.core.types import MetricsReport, ProblemSpec, Timeline
from xdcpipe.utils import TIME_TOL


def metrics(timeline: Timeline, spec: ProblemSpec) -> MetricsReport:
    compute = timeline.compute_records()
    if not compute:
        return MetricsReport(0.0, 0.0, [0.0] * spec.n_pp, [0.0] * spec.n_pp)

    last_end = max(r.end for r in compute)
    for r in timeline.ops:
        if r.kind == "dp":
            last_end = max(last_end, r.available)
    first_any = min(r.start for r in timeline.ops)
    stage0_f = [r.start for r in compute if r.stage == 0 and r.kind == "F"]
    first_stage0 = min(stage0_f) if stage0_f else min(r.start for r in compute)

    by_stage: Dict[int, list] = defaultdict(list)
    for r in compute:
        by_stage[r.stage].append(r)

    bubble: List[float] = []
    peak: List[float] = []
    for s in range(spec.n_pp):
        records = sorted(by_stage.get(s, []), key=lambda r: (r.start, r.end))
        if not records:
            bubble.append(0.0)
            peak.append(0.0)
            continue
        window = records[-1].end - records[0].start
        busy = sum(r.end - r.start for r in records)
        bubble.append(max(0.0, 1.0 - busy / window) if window > TIME_TOL else 0.0)
        peak.append(_peak_memory(records, spec, s))

    span = max(last_end - first_any, TIME_TOL)
    utilization = {
        label: sum(e - s for s, e in intervals) / span
        for label, intervals in sorted(timeline.link_reservations.items())
    }
    return MetricsReport(
        makespan_stage0=last_end - first_stage0,
        makespan_global=last_end - first_any,
        bubble_ratio=bubble,
        peak_memory=peak,
        link_utilization=utilization,
    )


def _peak_memory(records, spec: ProblemSpec, stage: int) -> float:
    """Running sum of completion deltas, with an F block's activations counted from its first sub-block."""
    n_sub = max(r.sub_index for r in records) + 1
    held = 0.0
    reserved = 0.0
    peak = 0.0
    for r in records:
        m_f = spec.m_f[stage][r.chunk]
        if r.kind == "F" and r.sub_index == 0:
            reserved += m_f
        peak = max(peak, held + reserved)
        if r.sub_index == n_sub - 1:
            held += r.mem_delta
            if r.kind == "F":
                reserved -= m_f
        peak = max(peak, held + reserved)
    return peak


@dataclass
class CriticalPath:
    ops: List[int]
    names: List[str]
    cross_dc_transfers: int
    length: float


def critical_path(timeline: Timeline) -> CriticalPath:
    """Follow binding predecessors back from the op that finishes last."""
    records = {r.id: r for r in timeline.ops}
    compute = timeline.compute_records()
    if not compute:
        return CriticalPath([], [], 0, 0.0)
    tail = max(compute, key=lambda r: (r.available, r.id))
    for r in timeline.ops:
        if r.kind == "dp" and r.available > tail.available + TIME_TOL:
            tail = r
    chain = []
    current = tail
    seen = set()
    while current is not None and current.id not in seen:
        seen.add(current.id)
        chain.append(current)
        current = records.get(current.binding) if current.binding is not None else None
    chain.reverse()
    crossings = sum(1 for r in chain if not r.is_compute and r.cross_dc)
    return CriticalPath(
        ops=[r.id for r in chain],
        names=[r.name for r in chain],
        cross_dc_transfers=crossings,
        length=tail.available - chain[0].start,
    )
