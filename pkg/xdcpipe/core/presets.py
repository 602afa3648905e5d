"""Representative cross-DC link parameters and message sizing."""
from typing import Dict, List, Tuple

# name -> (latency seconds, bandwidth Gb/s); single points inside published ranges
_INFRASTRUCTURE: Dict[str, Tuple[float, float]] = {
    "same-campus": (10e-6, 800.0),
    "cross-campus": (100e-6, 200.0),
    "same-region-cloud": (1e-3, 11.3),
    "cross-region-cloud": (65e-3, 3.0),
}


def gbps_to_seconds_per_byte(gbps: float) -> float:
    if gbps <= 0:
        raise ValueError(f"bandwidth must be positive, got {gbps} Gb/s")
    return 1.0 / (gbps / 8 * 1e9)


def gbytes_to_seconds_per_byte(gbytes_per_s: float) -> float:
    if gbytes_per_s <= 0:
        raise ValueError(f"bandwidth must be positive, got {gbytes_per_s} GB/s")
    return 1.0 / (gbytes_per_s * 1e9)


def list_presets() -> List[str]:
    return list(_INFRASTRUCTURE)


def preset(name: str) -> Tuple[float, float]:
    """Return (alpha seconds, beta seconds/byte) for an infrastructure tag."""
    try:
        latency, gbps = _INFRASTRUCTURE[name]
    except KeyError as e:
        raise ValueError(f"unknown preset {name!r}; expected one of {list_presets()}") from e
    return latency, gbps_to_seconds_per_byte(gbps)


def message_size(b: int, s: int, d: int, n_dp: int, bytes_per_elem: int) -> int:
    """Bytes of one pipeline activation or gradient message."""
    for label, value in (("b", b), ("s", s), ("d", d), ("n_dp", n_dp), ("bytes_per_elem", bytes_per_elem)):
        if value < 1:
            raise ValueError(f"{label} must be at least 1, got {value}")
    return b * s * d * n_dp * bytes_per_elem
