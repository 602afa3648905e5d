"""How static schedules accumulate cross-DC latency."""
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from dataclasses_json import dataclass_json

from xdcpipe.analysis.compare import family_problem
from xdcpipe.analysis.gantt import render_gantt
from xdcpipe.core.types import ProblemSpec
from xdcpipe.patterns import build_graph
from xdcpipe.simulator import critical_path, simulate
from xdcpipe.static_schedules import build_static, normalize_family


@dataclass_json
@dataclass
class StridePoint:
    latency: float
    makespan: float
    critical_crossings: int
    gantt: Optional[str] = None


@dataclass_json
@dataclass
class StrideReport:
    family: str
    points: List[StridePoint]
    slope: float
    intercept: float

    def added_delay(self, latency: float) -> float:
        """Makespan increase over the zero-latency point, from the fitted line."""
        return self.slope * latency


def bubble_stride_demo(spec: ProblemSpec, family: str, latency_points: Sequence[float],
                       out_dir: Optional[str] = None) -> StrideReport:
    """Simulate a static family at each boundary latency and fit makespan against latency.

    The slope counts how many times the latency lands on the critical path.
    """
    family = normalize_family(family)
    if spec.n_dc != 2:
        raise ValueError(f"bubble strides are measured across 2 DCs, problem has {spec.n_dc}")
    if any(lat < 0 for lat in latency_points):
        raise ValueError("latencies must be non-negative")
    laid_out = family_problem(spec, family)
    plan = build_static(laid_out, family)

    points = []
    for i, latency in enumerate(latency_points):
        point_spec = laid_out.with_updates(alpha=latency)
        timeline = simulate(build_graph(point_spec, 1), plan, point_spec)
        gantt = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            gantt = render_gantt(timeline, point_spec, os.path.join(out_dir, f"{family.lower()}_latency_{i}.svg"))
        points.append(StridePoint(latency, timeline.metrics.makespan_stage0,
                                  critical_path(timeline).cross_dc_transfers, gantt))

    xs = np.array([p.latency for p in points], dtype=float)
    ys = np.array([p.makespan for p in points], dtype=float)
    if len(np.unique(xs)) >= 2:
        slope, intercept = np.polyfit(xs, ys, 1)
    else:
        slope, intercept = 0.0, float(ys.mean()) if len(ys) else 0.0
    logging.info(f"{family}: makespan grows {slope:.3f}x the boundary latency")
    return StrideReport(family, points, float(slope), float(intercept))
