"""Per-stage block orders of the static baselines: 1F1B, interleaved 1F1B, ZB-H1 and ZB-V."""
import logging
from typing import Callable, Dict, List, Tuple

from xdcpipe.core.types import OpType, PlanEntry, ProblemSpec, SchedulePlan
from xdcpipe.utils import TIME_TOL

F, D, W = OpType.F, OpType.D, OpType.W

STATIC_FAMILIES = ("1F1B", "IV1F1B", "ZBH1", "ZBV")

_PATTERN_OF = {"1F1B": "UD", "ZBH1": "UD", "IV1F1B": "Loop", "ZBV": "Wave"}


def _one_f_one_b(stage: int, n_pp: int, n_mb: int) -> List[PlanEntry]:
    """Warm-up forwards, then one forward and one combined backward (D then W) per step."""
    warmup = min(n_pp - stage - 1, n_mb)
    order = [PlanEntry(0, F, mb) for mb in range(warmup)]
    for i in range(n_mb - warmup):
        order.append(PlanEntry(0, F, i + warmup))
        order += [PlanEntry(0, D, i), PlanEntry(0, W, i)]
    for i in range(n_mb - warmup, n_mb):
        order += [PlanEntry(0, D, i), PlanEntry(0, W, i)]
    return order


def _zb_h1(stage: int, n_pp: int, n_mb: int, m_f: float, m_d: float, m_w: float) -> List[PlanEntry]:
    """1F1B with a split backward; W trails its D by up to `stage` steps.

    A deferred W runs early whenever the next forward would lift the stage above its 1F1B peak.
    """
    warmup = min(n_pp - stage - 1, n_mb)
    budget = min(n_pp - stage, n_mb) * m_f
    order = [PlanEntry(0, F, mb) for mb in range(warmup)]
    held = warmup * m_f
    next_w = 0

    def weight() -> None:
        nonlocal held, next_w
        order.append(PlanEntry(0, W, next_w))
        held += m_w
        next_w += 1

    for i in range(n_mb - warmup):
        while next_w < i and held + m_f > budget + TIME_TOL:
            weight()
        order += [PlanEntry(0, F, i + warmup), PlanEntry(0, D, i)]
        held += m_f + m_d
        if i >= stage and next_w <= i:
            weight()
    for i in range(n_mb - warmup, n_mb):
        order.append(PlanEntry(0, D, i))
        held += m_d
        if next_w <= i:
            weight()
    while next_w < n_mb:
        weight()
    return order


def _interleaved(stage: int, n_pp: int, n_mb: int, n_chunks: int) -> List[PlanEntry]:
    """Megatron interleaved 1F1B: microbatches advance in groups of n_pp through every chunk."""
    groups = n_mb // n_pp
    forwards = [(k, g * n_pp + j) for g in range(groups) for k in range(n_chunks) for j in range(n_pp)]
    backwards = [(k, g * n_pp + j) for g in range(groups) for k in reversed(range(n_chunks)) for j in range(n_pp)]
    total = len(forwards)
    warmup = min((n_pp - stage - 1) * 2 + (n_chunks - 1) * n_pp, total)

    order = [PlanEntry(k, F, mb) for k, mb in forwards[:warmup]]
    for i in range(total - warmup):
        k, mb = forwards[warmup + i]
        order.append(PlanEntry(k, F, mb))
        k, mb = backwards[i]
        order += [PlanEntry(k, D, mb), PlanEntry(k, W, mb)]
    for k, mb in backwards[total - warmup:]:
        order += [PlanEntry(k, D, mb), PlanEntry(k, W, mb)]
    return order


def _zb_v(stage: int, n_pp: int, n_mb: int) -> List[PlanEntry]:
    """V-shaped zero-bubble layout; chunk 0 runs down the pipeline and chunk 1 back up."""
    n_micro = max(2 * n_pp - 1, n_mb)
    order: List[PlanEntry] = []
    f0 = f1 = b0 = b1 = 0

    for _ in range(2 * (n_pp - stage) - 1):
        order.append(PlanEntry(0, F, f0))
        f0 += 1
    for _ in range(stage):
        order.append(PlanEntry(1, F, f1))
        f1 += 1
        order.append(PlanEntry(0, F, f0))
        f0 += 1
    for _ in range(n_pp - stage):
        order += [PlanEntry(1, F, f1), PlanEntry(1, D, b1), PlanEntry(1, W, b1)]
        f1 += 1
        b1 += 1

    while f1 < f0 or f0 < n_micro:
        if f0 < n_micro:
            order.append(PlanEntry(0, F, f0))
            f0 += 1
        order += [PlanEntry(0, D, b0), PlanEntry(0, W, b0)]
        b0 += 1
        order += [PlanEntry(1, F, f1), PlanEntry(1, D, b1), PlanEntry(1, W, b1)]
        f1 += 1
        b1 += 1

    w0, w1 = b0, b1
    for _ in range(stage):
        order += [PlanEntry(0, D, b0), PlanEntry(1, D, b1)]
        b0 += 1
        b1 += 1
    for _ in range(n_pp - stage):
        order += [PlanEntry(0, D, b0), PlanEntry(0, W, w0)]
        b0 += 1
        w0 += 1
    while w1 < b1:
        order.append(PlanEntry(1, W, w1))
        w1 += 1
    while w0 < b0:
        order.append(PlanEntry(0, W, w0))
        w0 += 1

    # the layout is built for at least 2 * n_pp - 1 microbatches; drop the padding
    return [e for e in order if e.microbatch < n_mb]


def build_static(spec: ProblemSpec, family: str) -> SchedulePlan:
    family = normalize_family(family)
    required = _PATTERN_OF[family]
    if spec.pattern != required:
        raise ValueError(f"{family} needs the {required} pattern, problem uses {spec.pattern}")
    if spec.n_mb < spec.n_pp:
        raise ValueError(f"{family} is defined for n_mb >= n_pp (got n_mb={spec.n_mb}, n_pp={spec.n_pp})")

    builders: Dict[str, Callable[[int], List[PlanEntry]]] = {
        "1F1B": lambda s: _one_f_one_b(s, spec.n_pp, spec.n_mb),
        "ZBH1": lambda s: _zb_h1(s, spec.n_pp, spec.n_mb, spec.m_f[s][0], spec.m_d[s][0], spec.m_w[s][0]),
        "IV1F1B": lambda s: _interleaved(s, spec.n_pp, spec.n_mb, spec.n_chunks),
        "ZBV": lambda s: _zb_v(s, spec.n_pp, spec.n_mb),
    }
    if family == "IV1F1B" and spec.n_mb % spec.n_pp != 0:
        raise ValueError(f"IV1F1B needs n_mb divisible by n_pp (got n_mb={spec.n_mb}, n_pp={spec.n_pp})")

    orders = tuple(tuple(builders[family](s)) for s in range(spec.n_pp))
    logging.debug(f"Built {family} plan for n_pp={spec.n_pp} n_mb={spec.n_mb}")
    return SchedulePlan(family=family, stage_orders=orders, n_sub=1, engine="static")


def normalize_family(family: str) -> str:
    lookup = {f.lower(): f for f in STATIC_FAMILIES}
    if family.lower() not in lookup:
        raise ValueError(f"unknown static schedule family {family!r}; expected one of {STATIC_FAMILIES}")
    return lookup[family.lower()]


def family_pattern(family: str) -> Tuple[str, int]:
    """(pattern, n_chunks) a static family runs on."""
    pattern = _PATTERN_OF[normalize_family(family)]
    return pattern, {"UD": 1, "Loop": 2, "Wave": 2}[pattern]
