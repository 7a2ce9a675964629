"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np


def check_observations(X, min_length: int = 2) -> np.ndarray:
    """Validate cumulative observations and return them as a float ``(T, 2)`` array.

    Accepts an :class:`~windowabc.data_io.EpidemicSeries`, anything with an
    ``as_matrix()`` method, or an array-like of shape ``(T, 2)`` holding
    cumulative cases and deaths.
    """
    if hasattr(X, "as_matrix"):
        X = X.as_matrix()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected shape (T, 2) of cumulative cases and deaths, got {X.shape}")
    if len(X) < min_length:
        raise ValueError(f"need at least {min_length} days, got {len(X)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("observations must be finite")
    if np.any(X < 0):
        raise ValueError("observations must be non-negative")
    if np.any(X[:, 1] > X[:, 0]):
        raise ValueError("cumulative deaths exceed cumulative cases")
    return X


def check_horizon(horizon) -> int:
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    return int(horizon)


def check_random_state(random_state) -> int:
    """Integer base seed; ``None`` maps to 0 so fits stay reproducible."""
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)) and random_state >= 0:
        return int(random_state)
    raise ValueError(f"random_state must be a non-negative int or None, got {random_state!r}")
