import json
import logging
import os
from typing import Any, Dict

import yaml

from xdcpipe.core.types import ProblemSpec, SchedulePlan, Timeline
from xdcpipe.utils import dumps_canonical, write_json

FORMAT_VERSION = 1


def read_document(path: str, what: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ValueError(f"{what} file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            if path.endswith((".yaml", ".yml")):
                data = yaml.safe_load(f)
            else:
                data = json.load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ValueError(f"malformed {what} file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ValueError(f"malformed {what} file {path}: expected a mapping at top level")

    version = data.pop("version", FORMAT_VERSION)
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise ValueError(f"unsupported {what} file version {version!r} (this build reads <= {FORMAT_VERSION})")
    return data


def load_problem(path: str) -> ProblemSpec:
    data = read_document(path, "problem")
    spec = ProblemSpec.model_validate(data)
    logging.debug(f"Loaded problem {path}: n_pp={spec.n_pp} n_mb={spec.n_mb} pattern={spec.pattern}")
    return spec


def problem_to_dict(spec: ProblemSpec) -> Dict[str, Any]:
    data = spec.model_dump(mode="json")
    data["version"] = FORMAT_VERSION
    return data


def save_problem(spec: ProblemSpec, path: str) -> None:
    write_json(problem_to_dict(spec), path)


def plan_to_dict(plan: SchedulePlan) -> Dict[str, Any]:
    return {
        "version": FORMAT_VERSION,
        "family": plan.family,
        "engine": plan.engine,
        "n_sub": plan.n_sub,
        "m_limit": list(plan.m_limit) if plan.m_limit is not None else None,
        "stages": [
            [[e.chunk, e.op_type.value, e.microbatch, e.sub_index] for e in order]
            for order in plan.stage_orders
        ],
        "link_orders": {k: list(v) for k, v in plan.link_orders.items()} if plan.link_orders else None,
    }


def plan_from_dict(data: Dict[str, Any]) -> SchedulePlan:
    try:
        link_orders = data.get("link_orders")
        m_limit = data.get("m_limit")
        return SchedulePlan.from_lists(
            data["family"],
            data["stages"],
            link_orders={k: tuple(v) for k, v in link_orders.items()} if link_orders else None,
            m_limit=tuple(float(x) for x in m_limit) if m_limit is not None else None,
            n_sub=int(data.get("n_sub", 1)),
            engine=data.get("engine", "static"),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ValueError(f"malformed schedule: {e}") from e


def load_schedule(path: str) -> SchedulePlan:
    return plan_from_dict(read_document(path, "schedule"))


def save_schedule(plan: SchedulePlan, path: str) -> None:
    write_json(plan_to_dict(plan), path)


def timeline_to_dict(timeline: Timeline) -> Dict[str, Any]:
    data = timeline.to_dict()
    data["version"] = FORMAT_VERSION
    return data


def load_timeline(path: str) -> Timeline:
    data = read_document(path, "timeline")
    try:
        return Timeline.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed timeline file {path}: {e}") from e


def save_timeline(timeline: Timeline, path: str) -> None:
    write_json(timeline_to_dict(timeline), path)


def dumps_problem(spec: ProblemSpec) -> str:
    return dumps_canonical(problem_to_dict(spec))
