"""Overlapping, adaptively sized time-windows.

Windows are end-anchored: the last day of window ``n + 1`` is the last day of
window ``n`` plus ``shift``, and a size change moves the start. Forecast
origins are therefore evenly spaced regardless of how sizes evolve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .exceptions import InsufficientDataError
from .model import N_PARAMS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    """Window sizing rules, all in days.

    ``shift`` is both the offset between consecutive window ends and the
    step used when a window grows or shrinks.
    """

    s_initial: int = 30
    s_min: int = 10
    s_max: int = 50
    shift: int = 5
    horizon: int = 10

    def __post_init__(self):
        if not 0 < self.s_min <= self.s_initial <= self.s_max:
            raise ValueError(
                f"need 0 < s_min <= s_initial <= s_max, got "
                f"{self.s_min}, {self.s_initial}, {self.s_max}"
            )
        if self.s_min <= N_PARAMS:
            raise ValueError(f"s_min must exceed the {N_PARAMS} free parameters")
        if self.shift < 1 or self.horizon < 1:
            raise ValueError("shift and horizon must be >= 1")


@dataclass(frozen=True)
class TimeWindow:
    """A contiguous slice ``[start, start + size)`` of the series; ``index`` is 1-based."""

    index: int
    start: int
    size: int

    @property
    def end(self) -> int:
        """Exclusive end day."""
        return self.start + self.size

    @property
    def last_day(self) -> int:
        return self.end - 1

    def slice(self) -> slice:
        return slice(self.start, self.end)


def first_window(config: WindowConfig, series_len: int) -> TimeWindow:
    if series_len < config.s_initial:
        raise InsufficientDataError(
            f"series has {series_len} days, first window needs {config.s_initial}"
        )
    return TimeWindow(index=1, start=0, size=config.s_initial)


def select_window_size(eps_prev: float, eps_prev2: float, s_prev: int, config: WindowConfig) -> int:
    """Size of window ``n >= 3`` from the fit errors of the two preceding windows.

    A window that fitted at least as well as its predecessor
    (``eps_prev <= eps_prev2``) lets the next one grow by ``shift``; a worse
    fit shrinks it. Sizes saturate at ``s_max`` and ``s_min``.
    """
    if eps_prev <= eps_prev2:
        if s_prev < config.s_max:
            return min(s_prev + config.shift, config.s_max)
        return config.s_max
    if s_prev > config.s_min:
        return max(s_prev - config.shift, config.s_min)
    return config.s_min


def next_window(prev: TimeWindow, new_size: int, config: WindowConfig, series_len: int):
    """The window after ``prev``, or ``None`` once the data are exhausted."""
    end = prev.end + config.shift
    if end > series_len:
        return None
    start = end - new_size
    if start < 0:
        logger.warning(
            "window %d: start clamped to day 0, size %d -> %d", prev.index + 1, new_size, end
        )
        start = 0
    return TimeWindow(index=prev.index + 1, start=start, size=end - start)


def requested_size(n: int, eps_history, size_history, config: WindowConfig) -> int:
    """Requested size of window ``n`` given the records of windows ``1..n-1``.

    Windows 1 and 2 use ``s_initial``; later ones defer to
    :func:`select_window_size`.
    """
    if n <= 2:
        return config.s_initial
    return select_window_size(eps_history[n - 2], eps_history[n - 3], size_history[n - 2], config)


def replay_size_trace(eps_history, config: WindowConfig) -> list[int]:
    """Recompute the requested-size trace for a recorded error sequence."""
    sizes: list[int] = []
    for n in range(1, len(eps_history) + 1):
        sizes.append(requested_size(n, eps_history, sizes, config))
    return sizes


def enumerate_window_ends(config: WindowConfig, series_len: int) -> list[int]:
    """Exclusive end days of every window that fits in ``series_len`` days."""
    if series_len < config.s_initial:
        return []
    return list(range(config.s_initial, series_len + 1, config.shift))
