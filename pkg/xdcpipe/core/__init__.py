from xdcpipe.core.types import (
    BlockKey,
    CommKind,
    CommOp,
    ComputeOp,
    DependencyGraph,
    DPOverlap,
    MetricsReport,
    OpRecord,
    OpType,
    PlanEntry,
    ProblemSpec,
    SchedulePlan,
    Timeline,
    link_label,
)
from xdcpipe.core.presets import list_presets, message_size, preset
from xdcpipe.core.io import (
    load_problem,
    load_schedule,
    load_timeline,
    save_problem,
    save_schedule,
    save_timeline,
)
