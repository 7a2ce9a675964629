"""Sequential window-by-window fitting, forecasting and mode comparison."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegeneratePriorError, IncomparableRunsError, InsufficientDataError, StalledInferenceError
from .inference import (
    AbcConfig,
    ParamBounds,
    UniformPrior,
    WeightedPosterior,
    abc_smc,
    posterior_to_prior,
)
from .metrics import (
    RatioStats,
    daily_from_cumulative,
    nrmsd_breakdown,
    ratio_stats,
    relative_error_by_day,
    weighted_quantile,
)
from .model import simulate_observables
from .windowing import TimeWindow, WindowConfig, first_window, next_window, requested_size

logger = logging.getLogger(__name__)

CHANNELS = ("cases", "deaths")


class PriorMode(str, enum.Enum):
    FLAT = "flat"
    PAST = "past"


@dataclass(frozen=True)
class ForecastBand:
    """Point forecast and percentile band for ``horizon`` days after ``origin``.

    Arrays have shape ``(horizon, 2)`` with columns (cases, deaths); row ``k``
    is day ``origin + k + 1``.
    """

    origin: int
    horizon: int
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_excluded: int = 0


@dataclass(frozen=True)
class WindowRecord:
    window: TimeWindow
    requested_size: int
    posterior: WeightedPosterior
    eps_fit: float
    eps_pred: float
    forecast: ForecastBand
    rel_err_by_day: np.ndarray
    flags: tuple = ()
    start_date: str | None = None

    @property
    def posterior_summary(self) -> dict:
        return self.posterior.summary()

    @property
    def has_truth(self) -> bool:
        return np.isfinite(self.eps_pred)


@dataclass(frozen=True)
class RunReport:
    mode: PriorMode
    config: dict
    records: tuple
    window_size_trace: tuple = field(default=())

    @property
    def eps_fit(self) -> np.ndarray:
        return np.array([r.eps_fit for r in self.records])

    @property
    def eps_pred(self) -> np.ndarray:
        return np.array([r.eps_pred for r in self.records])

    @property
    def window_ends(self) -> tuple:
        return tuple(r.window.end for r in self.records)

    def heatmap(self) -> np.ndarray:
        """Windows x horizon matrix of relative daily-case forecast errors."""
        return np.vstack([r.rel_err_by_day for r in self.records])


def _integrate_window(theta, start_obs, n_days, steps_per_day):
    """Cumulative cases/deaths for parameter rows from a window's first day."""
    c0, d0 = start_obs
    cases, deaths, ok = simulate_observables(theta, c0, d0, n_days, steps_per_day)
    return cases, deaths, ok


def forecast(
    posterior: WeightedPosterior,
    start_obs,
    origin_offset: int,
    horizon: int,
    steps_per_day: int = 10,
    level: float = 0.9,
) -> ForecastBand:
    """Forecast ``horizon`` days past the end of a fitted window.

    Every particle is integrated from the window's first observed day
    (``start_obs = (cases, deaths)``) through the window, ``origin_offset``
    days, and on for ``horizon`` more days. The point forecast follows the
    minimum-distance particle; the band is the weighted central ``level``
    interval over all particles, widened if needed to contain the point.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_days = origin_offset + horizon
    cases, deaths, ok = _integrate_window(posterior.particles, start_obs, n_days, steps_per_day)
    best = int(np.argmin(posterior.distances))
    if not ok[best]:
        ok_idx = np.nonzero(ok)[0]
        if not len(ok_idx):
            raise StalledInferenceError("no posterior particle can be integrated for the forecast")
        best = ok_idx[np.argmin(posterior.distances[ok_idx])]
    n_excluded = int((~ok).sum())
    if n_excluded:
        logger.info("forecast: %d particle(s) excluded from the band", n_excluded)
    future = slice(origin_offset + 1, n_days + 1)
    paths = np.stack([cases[ok, future], deaths[ok, future]], axis=-1)  # (m, H, 2)
    point = paths[np.nonzero(np.nonzero(ok)[0] == best)[0][0]]
    tail = (1.0 - level) / 2.0
    flat = paths.reshape(len(paths), -1)
    q = weighted_quantile(flat, posterior.weights[ok], [tail, 1.0 - tail])
    lower = np.minimum(q[0].reshape(horizon, 2), point)
    upper = np.maximum(q[1].reshape(horizon, 2), point)
    return ForecastBand(
        origin=origin_offset, horizon=horizon, point=point, lower=lower, upper=upper,
        n_excluded=n_excluded,
    )


def _fit_error(posterior, data, steps_per_day, summary):
    """NRMSD of the summary parameter trajectory over the window, plus flags."""
    flags = []
    theta = posterior.median() if summary == "median" else posterior.best()
    cases, deaths, ok = _integrate_window(theta[None, :], data[0], len(data) - 1, steps_per_day)
    if not ok[0]:
        flags.append("summary_infeasible")
        cases, deaths, ok = _integrate_window(
            posterior.best()[None, :], data[0], len(data) - 1, steps_per_day
        )
    breakdown = nrmsd_breakdown([data[:, 0], data[:, 1]], [cases[0], deaths[0]])
    if breakdown.any_degenerate:
        flags.append("degenerate_channel")
    return breakdown.total, flags


def fit_sequential(
    series,
    wconfig: WindowConfig,
    bounds: ParamBounds,
    aconfig: AbcConfig,
    mode: PriorMode | str = PriorMode.PAST,
    seed: int | None = None,
    *,
    inflation: float = 1.5,
    fit_summary: str = "median",
    include_trailing: bool = False,
    dates=None,
) -> RunReport:
    """Fit every window of ``series`` in order.

    Parameters
    ----------
    series : array_like, shape (T, 2)
        Cumulative cases and deaths.
    mode : PriorMode
        ``FLAT`` starts each window from ``uniform(bounds)``; ``PAST`` uses
        the kernel-smoothed posterior of the previous window.
    seed : int, optional
        Base seed; window ``n`` draws from ``default_rng([seed, n])`` so both
        modes share window 1's stream. Defaults to ``aconfig.rng_seed``.
    fit_summary : {"median", "best"}
        Parameter vector used for the window's fit error.
    include_trailing : bool
        Also fit windows whose forecast runs past the data; their
        ``eps_pred`` is NaN.
    dates : sequence of str, optional
        ISO dates aligned with ``series`` for labelling records.
    """
    data_all = np.asarray(series, dtype=float)
    mode = PriorMode(mode)
    if fit_summary not in ("median", "best"):
        raise ValueError("fit_summary must be 'median' or 'best'")
    seed = aconfig.rng_seed if seed is None else int(seed)
    total = len(data_all)
    limit = total if include_trailing else total - wconfig.horizon
    if limit < wconfig.s_initial:
        raise InsufficientDataError(
            f"need at least {wconfig.s_initial + wconfig.horizon} days, got {total}"
        )
    window = first_window(wconfig, limit)
    records = []
    eps_hist: list[float] = []
    trace: list[int] = []
    previous = None
    while window is not None:
        req = requested_size(window.index, eps_hist, trace, wconfig)
        data = data_all[window.slice()]
        flags = []
        window_bounds = bounds.for_window(data[-1, 0])
        prior = UniformPrior(window_bounds)
        if mode is PriorMode.PAST and previous is not None:
            try:
                prior = posterior_to_prior(previous, window_bounds, inflation)
            except DegeneratePriorError as exc:
                logger.warning("window %d: %s; using the flat prior", window.index, exc)
                flags.append("prior_fallback")
        rng = np.random.default_rng([seed, window.index])
        try:
            posterior = abc_smc(prior, data, aconfig, rng)
        except StalledInferenceError as exc:
            if previous is None:
                raise
            logger.warning("window %d stalled (%s); carrying the previous posterior", window.index, exc)
            flags.append("stalled")
            posterior = previous
        eps_fit, fit_flags = _fit_error(posterior, data, aconfig.steps_per_day, fit_summary)
        flags.extend(fit_flags)
        band = forecast(posterior, data[0], len(data) - 1, wconfig.horizon, aconfig.steps_per_day)
        eps_pred = np.nan
        rel_err = np.full(wconfig.horizon, np.nan)
        truth_end = window.end + wconfig.horizon
        if truth_end <= total:
            truth = data_all[window.end : truth_end]
            eps_pred = nrmsd_breakdown(
                [truth[:, 0], truth[:, 1]], [band.point[:, 0], band.point[:, 1]]
            ).total
            last_cases = data[-1, 0]
            rel_err, _ = relative_error_by_day(
                daily_from_cumulative(band.point[:, 0], last_cases),
                daily_from_cumulative(truth[:, 0], last_cases),
            )
        else:
            flags.append("no_truth")
        record = WindowRecord(
            window=window,
            requested_size=req,
            posterior=posterior,
            eps_fit=float(eps_fit),
            eps_pred=float(eps_pred),
            forecast=band,
            rel_err_by_day=rel_err,
            flags=tuple(flags),
            start_date=None if dates is None else str(dates[window.start]),
        )
        records.append(record)
        eps_hist.append(record.eps_fit)
        trace.append(req)
        logger.info(
            "[%s] window %d: days %d-%d size %d gens %d tol %.4g eps_fit %.4g",
            mode.value, window.index, window.start, window.last_day, window.size,
            posterior.n_generations, posterior.tolerance_schedule[-1], eps_fit,
        )
        previous = posterior
        nxt = requested_size(window.index + 1, eps_hist, trace, wconfig)
        window = next_window(window, nxt, wconfig, limit)

    config = {
        "window": _asdict(wconfig),
        "abc": _asdict(aconfig),
        "bounds": bounds.to_dict(),
        "seed": seed,
        "mode": mode.value,
        "inflation": inflation,
        "fit_summary": fit_summary,
        "include_trailing": include_trailing,
        "series_length": total,
    }
    return RunReport(mode=mode, config=config, records=tuple(records), window_size_trace=tuple(trace))


def _asdict(obj) -> dict:
    import dataclasses

    return dataclasses.asdict(obj)


@dataclass(frozen=True)
class ModeComparison:
    fit: RatioStats
    pred: RatioStats | None
    window_indices: np.ndarray
    heatmap_flat: np.ndarray
    heatmap_past: np.ndarray


def _check_comparable(flat: RunReport, past: RunReport):
    if flat.window_ends != past.window_ends:
        raise IncomparableRunsError(
            f"window end days differ: {flat.window_ends} vs {past.window_ends}"
        )


def compare_modes(flat, past, min_window: int = 1) -> ModeComparison:
    """Ratios ``eps_flat / eps_past`` over paired windows.

    ``flat`` and ``past`` may be single reports or equal-length sequences of
    replicate reports paired by position; ratios are pooled over all pairs.
    Only windows with index ``>= min_window`` enter the statistics. Runs
    must share their window end days (sizes may differ, since each run
    adapts them to its own errors).
    """
    flats = [flat] if isinstance(flat, RunReport) else list(flat)
    pasts = [past] if isinstance(past, RunReport) else list(past)
    if len(flats) != len(pasts) or not flats:
        raise IncomparableRunsError("need the same positive number of flat and past reports")
    fit_f, fit_p, pred_f, pred_p, idx, heat_f, heat_p = [], [], [], [], [], [], []
    for f, p in zip(flats, pasts):
        _check_comparable(f, p)
        for rf, rp in zip(f.records, p.records):
            if rf.window.index < min_window:
                continue
            fit_f.append(rf.eps_fit)
            fit_p.append(rp.eps_fit)
            if rf.has_truth and rp.has_truth:
                pred_f.append(rf.eps_pred)
                pred_p.append(rp.eps_pred)
            idx.append(rf.window.index)
            heat_f.append(rf.rel_err_by_day)
            heat_p.append(rp.rel_err_by_day)
    if not fit_f:
        raise IncomparableRunsError(f"no windows with index >= {min_window}")
    return ModeComparison(
        fit=ratio_stats(fit_f, fit_p),
        pred=ratio_stats(pred_f, pred_p) if pred_f else None,
        window_indices=np.array(idx),
        heatmap_flat=np.vstack(heat_f),
        heatmap_past=np.vstack(heat_p),
    )
