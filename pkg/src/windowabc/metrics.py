"""Goodness-of-fit and forecast-error measures.

The fit error of a window is the sum over data channels of the normalised
root-mean-square deviation (NRMSD): the RMS residual divided by the range of
the observed channel over the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDenominatorError


@dataclass(frozen=True)
class NrmsdBreakdown:
    per_component: tuple
    total: float
    degenerate: tuple = field(default=())

    @property
    def any_degenerate(self) -> bool:
        return any(self.degenerate)


@dataclass(frozen=True)
class RatioStats:
    ratios: np.ndarray
    fraction_above_one: float
    quartiles: tuple


def _check_pair(y, y_hat):
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    if len(y) < 2:
        raise ValueError("need at least two points")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise ValueError("sequences must be finite")
    return y, y_hat


def channel_range(y) -> float:
    y = np.asarray(y, dtype=float)
    return float(y.max() - y.min())


def nrmsd_component(y, y_hat) -> float:
    """NRMSD of one channel.

    When the observed channel is constant the range is zero; the plain RMSD
    is returned instead (see :func:`nrmsd_breakdown` for the flag).
    """
    y, y_hat = _check_pair(y, y_hat)
    rmsd = np.sqrt(np.sum((y_hat - y) ** 2) / len(y))
    span = channel_range(y)
    if span == 0.0:
        return float(rmsd)
    return float(rmsd / span)


def nrmsd_total(components) -> float:
    components = list(components)
    if not components:
        raise ValueError("need at least one component")
    if not all(np.isfinite(c) for c in components):
        raise ValueError("components must be finite")
    return float(sum(components))


def nrmsd_breakdown(ys, y_hats) -> NrmsdBreakdown:
    """Per-channel NRMSD and their sum for matching lists of channels."""
    per = tuple(nrmsd_component(y, yh) for y, yh in zip(ys, y_hats, strict=True))
    degenerate = tuple(channel_range(y) == 0.0 for y in ys)
    return NrmsdBreakdown(per_component=per, total=nrmsd_total(per), degenerate=degenerate)


def nrmsd_batch(y, y_hat_rows) -> np.ndarray:
    """NRMSD of one observed channel against many simulated rows.

    ``y_hat_rows`` has shape ``(n, len(y))``; non-finite rows give ``inf``.
    Agrees with :func:`nrmsd_component` row by row.
    """
    y = np.asarray(y, dtype=float)
    rows = np.atleast_2d(np.asarray(y_hat_rows, dtype=float))
    rmsd = np.sqrt(np.sum((rows - y) ** 2, axis=1) / len(y))
    span = channel_range(y)
    out = rmsd if span == 0.0 else rmsd / span
    return np.where(np.isfinite(out), out, np.inf)


def daily_from_cumulative(cumulative, previous: float) -> np.ndarray:
    """First differences of a cumulative series, the first one taken against ``previous``."""
    return np.diff(np.concatenate([[float(previous)], np.asarray(cumulative, dtype=float)]))


def relative_error_by_day(pred_daily, data_daily):
    """Element-wise ``(pred - data) / data``.

    Returns ``(errors, undefined)``; days with zero data are NaN in ``errors``
    and True in ``undefined``.
    """
    pred = np.asarray(pred_daily, dtype=float)
    data = np.asarray(data_daily, dtype=float)
    if pred.shape != data.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {data.shape}")
    undefined = data == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.where(undefined, np.nan, (pred - data) / np.where(undefined, 1.0, data))
    return err, undefined


def ratio_stats(eps_flat, eps_past) -> RatioStats:
    """Distribution of ``eps_flat / eps_past``; ratios above 1 favour the past-posterior prior."""
    flat = np.asarray(eps_flat, dtype=float)
    past = np.asarray(eps_past, dtype=float)
    if flat.shape != past.shape:
        raise ValueError(f"shape mismatch: {flat.shape} vs {past.shape}")
    if flat.size == 0:
        raise ValueError("need at least one window")
    if np.any(past == 0):
        raise DegenerateDenominatorError("eps_past contains zero")
    ratios = flat / past
    q1, med, q3 = np.quantile(ratios, [0.25, 0.5, 0.75], method="linear")
    return RatioStats(
        ratios=ratios,
        fraction_above_one=float(np.mean(ratios > 1.0)),
        quartiles=(float(q1), float(med), float(q3)),
    )


def weighted_quantile(values, weights, q):
    """Weighted quantiles along axis 0.

    Uses the midpoint-CDF convention: sorted values sit at cumulative weight
    ``cumsum(w) - w / 2`` and quantiles interpolate linearly between them,
    clamping to the extreme values outside that range.

    Parameters
    ----------
    values : array_like, shape (n,) or (n, m)
    weights : array_like, shape (n,)
    q : float or array_like of floats in [0, 1]
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    squeeze_cols = values.ndim == 1
    if squeeze_cols:
        values = values[:, None]
    order = np.argsort(values, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(values, order, axis=0)
    w = weights[order]
    w = w / w.sum(axis=0, keepdims=True)
    cdf = np.cumsum(w, axis=0) - 0.5 * w
    out = np.empty((len(q), values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.interp(q, cdf[:, j], sorted_vals[:, j])
    if squeeze_cols:
        out = out[:, 0]
    return out
