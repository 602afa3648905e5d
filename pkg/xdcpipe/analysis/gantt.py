import logging
from typing import List, Optional

import svgwrite

from xdcpipe.core.types import ProblemSpec, Timeline

COLORS = {
    "F": "#4e79a7",
    "D": "#f28e2b",
    "W": "#59a14f",
    "fwd": "#bab0ac",
    "bwd": "#9c755f",
    "dp": "#e15759",
    "allgather": "#b07aa1",
}

LABEL_WIDTH = 90
ROW_HEIGHT = 24
ROW_GAP = 4
AXIS_HEIGHT = 30
PLOT_WIDTH = 1000


def _r(x: float) -> float:
    return round(x, 4)


def render_gantt(timeline: Timeline, spec: Optional[ProblemSpec], path: str, width: Optional[float] = None) -> str:
    """Write one row per stage and one per link that carried data, blocks colored by kind.

    Every block is a rect whose class is "block <kind>"; DC boundaries are dashed lines
    between stage rows.
    """
    dc_of_stage = list(timeline.dc_of_stage)
    n_pp = len(dc_of_stage)
    if spec is not None and spec.n_pp != n_pp:
        raise ValueError(f"timeline has {n_pp} stages, problem has {spec.n_pp}")
    plot_width = width or PLOT_WIDTH
    links: List[str] = sorted({r.link for r in timeline.ops if not r.is_compute and r.end > r.start})
    n_rows = n_pp + len(links)
    height = AXIS_HEIGHT + n_rows * (ROW_HEIGHT + ROW_GAP) + ROW_GAP

    t0 = min((r.start for r in timeline.ops), default=0.0)
    t1 = max((max(r.end, r.available) for r in timeline.ops), default=0.0)
    span = t1 - t0
    scale = plot_width / span if span > 0 else 0.0

    drawing = svgwrite.Drawing(path, profile="full", size=(LABEL_WIDTH + plot_width + 10, height))
    drawing.add(drawing.rect((0, 0), (LABEL_WIDTH + plot_width + 10, height), fill="white"))

    def row_y(row: int) -> float:
        return ROW_GAP + row * (ROW_HEIGHT + ROW_GAP)

    for s in range(n_pp):
        drawing.add(drawing.text(f"stage {s} (DC {dc_of_stage[s]})", insert=(4, row_y(s) + ROW_HEIGHT * 0.7),
                                 font_family="sans-serif", font_size="10px"))
    for i, label in enumerate(links):
        drawing.add(drawing.text(f"link {label}", insert=(4, row_y(n_pp + i) + ROW_HEIGHT * 0.7),
                                 font_family="sans-serif", font_size="10px"))

    for r in sorted(timeline.ops, key=lambda r: r.id):
        if r.is_compute:
            row = r.stage
        elif r.end > r.start:
            row = n_pp + links.index(r.link)
        else:
            continue
        x = LABEL_WIDTH + (r.start - t0) * scale
        rect = drawing.rect(
            (_r(x), row_y(row)), (_r((r.end - r.start) * scale), ROW_HEIGHT),
            fill=COLORS.get(r.kind, "#cccccc"), stroke="white", stroke_width=0.5,
            class_=f"block {r.kind}",
        )
        rect.set_desc(title=r.name)
        drawing.add(rect)

    for s in range(1, n_pp):
        if dc_of_stage[s] != dc_of_stage[s - 1]:
            y = row_y(s) - ROW_GAP / 2
            drawing.add(drawing.line((0, y), (LABEL_WIDTH + plot_width, y), stroke="black",
                                     stroke_width=1.5, stroke_dasharray="6,3", class_="dc-boundary"))

    axis_y = row_y(n_rows) + 4
    drawing.add(drawing.line((LABEL_WIDTH, axis_y), (LABEL_WIDTH + plot_width, axis_y), stroke="black"))
    for k in range(6):
        x = LABEL_WIDTH + plot_width * k / 5
        drawing.add(drawing.line((x, axis_y), (x, axis_y + 4), stroke="black"))
        drawing.add(drawing.text(f"{t0 + span * k / 5:.4g}s", insert=(x, axis_y + 16), font_family="sans-serif",
                                 font_size="10px", text_anchor="middle"))

    try:
        drawing.save()
    except OSError as e:
        raise ValueError(f"could not write Gantt chart {path}: {e}") from e
    logging.debug(f"Rendered {len(timeline.ops)} ops to {path}")
    return path
