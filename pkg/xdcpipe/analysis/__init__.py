from xdcpipe.analysis.compare import (
    ALL_FAMILIES,
    DYNAMIC_FAMILIES,
    ComparisonRow,
    best_schedule,
    build_schedule,
    compare_schedules,
    family_problem,
    normalize_any_family,
    with_delay_ratios,
)
from xdcpipe.analysis.gantt import render_gantt
from xdcpipe.analysis.ppdp import PPDPConfig, PPDPRow, load_ppdp_config, pp_vs_dp, scaled_replica_check
from xdcpipe.analysis.strides import StridePoint, StrideReport, bubble_stride_demo
from xdcpipe.analysis.sweep import (
    SweepConfig,
    SweepRow,
    TradeoffRow,
    delay_sweep,
    load_sweep_config,
    memory_tradeoff,
    write_sweep_csv,
)
