import os
import json
import logging
import dataclasses
from enum import Enum
from typing import Any, List

import numpy as np

DEBUG = os.environ.get("DEBUG", "false")
if DEBUG.lower() == "true":
    logging.basicConfig(level=logging.DEBUG)

TIME_TOL = 1e-12


class JSONEncoder(json.JSONEncoder):
    def default(self, o):
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        if isinstance(o, Enum):
            return o.value
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        return super().default(o)


def dumps_canonical(obj: Any) -> str:
    """Serialize with sorted keys so identical inputs give identical bytes."""
    return json.dumps(obj, cls=JSONEncoder, sort_keys=True, indent=2) + "\n"


def write_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_canonical(obj))


def parse_multi_columns(columns: str) -> list:
    if "|" in columns:
        return columns.split("|")
    else:
        return columns.split(",")


def parse_float_list(values: str) -> List[float]:
    try:
        return [float(v) for v in parse_multi_columns(values) if v.strip()]
    except ValueError as e:
        raise ValueError(f"Expected a list of numbers, got {values!r}") from e


def time_eq(a: float, b: float) -> bool:
    return abs(a - b) <= TIME_TOL
