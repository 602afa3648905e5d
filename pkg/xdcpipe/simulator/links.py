import bisect
from typing import List, Tuple

from xdcpipe.utils import TIME_TOL


class LinkOccupancy:
    """Sorted, disjoint [start, end) transmission windows already reserved on one directed link."""

    def __init__(self, link: Tuple[int, int] = (0, 0)):
        self.link = link
        self._starts: List[float] = []
        self._ends: List[float] = []

    @property
    def intervals(self) -> List[Tuple[float, float]]:
        return list(zip(self._starts, self._ends))

    @property
    def busy_time(self) -> float:
        return sum(e - s for s, e in zip(self._starts, self._ends))

    def earliest_window(self, t_ready: float, width: float) -> float:
        """Start of the first gap of length >= width at or after t_ready."""
        candidate = t_ready
        i = bisect.bisect_right(self._ends, candidate + TIME_TOL)
        while i < len(self._starts):
            if self._starts[i] >= candidate + width - TIME_TOL:
                break
            candidate = max(candidate, self._ends[i])
            i += 1
        return candidate

    def reserve(self, start: float, end: float) -> None:
        i = bisect.bisect_left(self._starts, start)
        if i > 0 and self._ends[i - 1] > start + TIME_TOL:
            raise ValueError(f"window [{start}, {end}) overlaps [{self._starts[i - 1]}, {self._ends[i - 1]})")
        if i < len(self._starts) and self._starts[i] < end - TIME_TOL:
            raise ValueError(f"window [{start}, {end}) overlaps [{self._starts[i]}, {self._ends[i]})")
        self._starts.insert(i, start)
        self._ends.insert(i, end)


def reserve_window(link: LinkOccupancy, t_ready: float, width: float) -> Tuple[float, float]:
    """Reserve the earliest free window of the given width starting at or after t_ready.

    Zero-width transfers need no bandwidth and reserve nothing.
    """
    if t_ready < 0 or width < 0:
        raise ValueError("t_ready and width must be non-negative")
    if width <= TIME_TOL:
        return t_ready, t_ready
    start = link.earliest_window(t_ready, width)
    link.reserve(start, start + width)
    return start, start + width
