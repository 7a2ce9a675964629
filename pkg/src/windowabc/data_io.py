"""Series loading/repair and run-report serialisation.

Input CSV: a header row with (by default) ``date``, ``region``, ``cum_cases``
and ``cum_deaths`` columns; ISO-8601 dates; UTF-8. Column names are
configurable through ``columns``.

Report directory written by :func:`write_run_report`:

``windows.csv``
    one row per window: index, start_date, start, size, requested_size,
    eps_fit, eps_pred (``nan`` when the forecast has no ground truth),
    generations, final_tolerance, flags (``;``-separated).
``posterior_<n>.csv``
    the eight parameters, weight and distance of every particle of window n.
``forecasts.csv``
    window, day_offset (1..horizon), channel, point, lower, upper.
``heatmap.csv``
    window followed by one relative daily-case error per forecast day.
``run.json``
    configuration snapshot, seed, mode, size trace, tolerance schedules and
    summary statistics.

Floats are written with 17 significant digits so that values round-trip
exactly.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import SeriesParseError, UnknownRegionError
from .inference import WeightedPosterior
from .model import PARAM_NAMES
from .pipeline import CHANNELS, ForecastBand, PriorMode, RunReport, WindowRecord
from .windowing import TimeWindow

logger = logging.getLogger(__name__)

DEFAULT_COLUMNS = {"date": "date", "region": "region", "cases": "cum_cases", "deaths": "cum_deaths"}


@dataclass(frozen=True)
class EpidemicSeries:
    """Daily cumulative cases and deaths for one region."""

    region: str
    dates: tuple
    cum_cases: np.ndarray
    cum_deaths: np.ndarray
    repairs: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.dates)
        if n < 1:
            raise SeriesParseError("series is empty")
        if len(self.cum_cases) != n or len(self.cum_deaths) != n:
            raise SeriesParseError("dates, cases and deaths must have equal length")
        days = [dt.date.fromisoformat(d) for d in self.dates]
        if any((b - a).days != 1 for a, b in zip(days, days[1:])):
            raise SeriesParseError("dates must be consecutive days")
        if np.any(np.diff(self.cum_cases) < 0) or np.any(np.diff(self.cum_deaths) < 0):
            raise SeriesParseError("cumulative series must be non-decreasing")
        if np.any(self.cum_deaths > self.cum_cases):
            raise SeriesParseError("cumulative deaths exceed cumulative cases")
        if np.any(self.cum_cases < 0) or np.any(self.cum_deaths < 0):
            raise SeriesParseError("counts must be non-negative")

    def __len__(self):
        return len(self.dates)

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([self.cum_cases, self.cum_deaths]).astype(float)

    @property
    def n_repaired(self) -> int:
        return sum(self.repairs.values())


def _parse_float(text, line, column):
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise SeriesParseError(f"line {line}: cannot parse {column}={text!r}", line=line) from None
    if not math.isfinite(value):
        raise SeriesParseError(f"line {line}: non-finite {column}", line=line)
    return value


def repair_monotone(values):
    """Make a cumulative series non-decreasing by a reverse running minimum.

    Each value is lowered to the smallest value reported on or after its
    day, so the final value is preserved. Returns ``(repaired, n_changed)``.
    """
    values = np.asarray(values, dtype=float)
    repaired = np.minimum.accumulate(values[::-1])[::-1]
    return repaired, int(np.sum(repaired != values))


def load_series(path, region: str, columns: dict | None = None) -> EpidemicSeries:
    """Read one region from a long-format CSV and repair it.

    Missing dates and empty cells are filled by carrying the last value
    forward (zero before the first report); downward revisions are removed
    with :func:`repair_monotone`. The number of points touched by each rule
    is logged and stored in ``EpidemicSeries.repairs``.
    """
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    path = Path(path)
    rows = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols.values() if c not in (reader.fieldnames or [])]
        if missing:
            raise SeriesParseError(f"{path}: missing column(s) {missing}", line=1)
        for line, row in enumerate(reader, start=2):
            if row[cols["region"]] != region:
                continue
            try:
                day = dt.date.fromisoformat(row[cols["date"]].strip())
            except ValueError:
                raise SeriesParseError(
                    f"line {line}: bad date {row[cols['date']]!r}", line=line
                ) from None
            if day in rows:
                raise SeriesParseError(f"line {line}: duplicate date {day}", line=line)
            rows[day] = (
                _parse_float(row[cols["cases"]], line, cols["cases"]),
                _parse_float(row[cols["deaths"]], line, cols["deaths"]),
            )
    if not rows:
        raise UnknownRegionError(f"region {region!r} not found in {path}")

    first, last = min(rows), max(rows)
    n_days = (last - first).days + 1
    dates, cases, deaths = [], [], []
    filled = 0
    c_prev, d_prev = 0.0, 0.0
    for k in range(n_days):
        day = first + dt.timedelta(days=k)
        c, d = rows.get(day, (None, None))
        if day not in rows or c is None or d is None:
            filled += 1
        c = c_prev if c is None else c
        d = d_prev if d is None else d
        dates.append(day.isoformat())
        cases.append(c)
        deaths.append(d)
        c_prev, d_prev = c, d

    cases, n_c = repair_monotone(cases)
    deaths, n_d = repair_monotone(deaths)
    repairs = {"filled": filled, "cases_revised": n_c, "deaths_revised": n_d}
    if any(repairs.values()):
        logger.warning("%s/%s repairs: %s", path.name, region, repairs)
    return EpidemicSeries(
        region=region, dates=tuple(dates), cum_cases=cases, cum_deaths=deaths, repairs=repairs
    )


def write_series(series: EpidemicSeries, path) -> Path:
    """Write ``series`` in the input CSV layout."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(DEFAULT_COLUMNS.values()))
        for d, c, k in zip(series.dates, series.cum_cases, series.cum_deaths):
            writer.writerow([d, series.region, fmt(c), fmt(k)])
    return path


# ----------------------------------------------------------------------------
# run reports
# ----------------------------------------------------------------------------


def fmt(x) -> str:
    """Float with 17 significant digits (exact round-trip)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj)}")


def _write_csv(path: Path, header, rows):
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_run_report(report: RunReport, out_dir) -> list[Path]:
    """Write ``report`` into ``out_dir`` and return the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    written = []

    written.append(
        _write_csv(
            out / "windows.csv",
            ["index", "start_date", "start", "size", "requested_size", "eps_fit", "eps_pred",
             "generations", "final_tolerance", "flags"],
            [
                [r.window.index, r.start_date or "", r.window.start, r.window.size,
                 r.requested_size, fmt(r.eps_fit), fmt(r.eps_pred), r.posterior.n_generations,
                 fmt(r.posterior.tolerance_schedule[-1]), ";".join(r.flags)]
                for r in report.records
            ],
        )
    )
    for r in report.records:
        p = r.posterior
        written.append(
            _write_csv(
                out / f"posterior_{r.window.index}.csv",
                [*PARAM_NAMES, "weight", "distance"],
                [[*map(fmt, theta), fmt(w), fmt(d)]
                 for theta, w, d in zip(p.particles, p.weights, p.distances)],
            )
        )
    rows = []
    for r in report.records:
        f = r.forecast
        for k in range(f.horizon):
            for c, channel in enumerate(CHANNELS):
                rows.append([r.window.index, k + 1, channel, fmt(f.point[k, c]),
                             fmt(f.lower[k, c]), fmt(f.upper[k, c])])
    written.append(
        _write_csv(out / "forecasts.csv",
                   ["window", "day_offset", "channel", "point", "lower", "upper"], rows)
    )
    horizon = report.records[0].forecast.horizon if report.records else 0
    written.append(
        _write_csv(
            out / "heatmap.csv",
            ["window", *[f"day_{k + 1}" for k in range(horizon)]],
            [[r.window.index, *map(fmt, r.rel_err_by_day)] for r in report.records],
        )
    )

    eps_fit = report.eps_fit
    eps_pred = report.eps_pred
    scored = eps_pred[np.isfinite(eps_pred)]
    meta = {
        "mode": report.mode.value,
        "seed": report.config.get("seed"),
        "config": report.config,
        "window_size_trace": list(report.window_size_trace),
        "windows": [
            {
                "index": r.window.index,
                "tolerance_schedule": [fmt(t) for t in r.posterior.tolerance_schedule],
                "acceptance_rates": [fmt(a) for a in r.posterior.acceptance_rates],
                "simulations": list(r.posterior.simulations),
                "weight_sums": [fmt(w) for w in r.posterior.weight_sums],
                "forecast_excluded": r.forecast.n_excluded,
                "posterior_summary": {
                    k: {s: fmt(v) for s, v in d.items()} for k, d in r.posterior_summary.items()
                },
            }
            for r in report.records
        ],
        "summary": {
            "n_windows": len(report.records),
            "eps_fit_mean": fmt(eps_fit.mean()) if len(eps_fit) else "nan",
            "eps_fit_median": fmt(np.median(eps_fit)) if len(eps_fit) else "nan",
            "eps_pred_mean": fmt(scored.mean()) if len(scored) else "nan",
            "eps_pred_median": fmt(np.median(scored)) if len(scored) else "nan",
        },
    }
    path = out / "run.json"
    try:
        path.write_text(
            json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    written.append(path)
    return written


def _read_rows(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_posterior_csv(path) -> tuple:
    """Return ``(particles, weights, distances)`` arrays from a posterior file."""
    rows = _read_rows(Path(path))
    particles = np.array([[float(r[n]) for n in PARAM_NAMES] for r in rows])
    weights = np.array([float(r["weight"]) for r in rows])
    distances = np.array([float(r["distance"]) for r in rows])
    return particles, weights, distances


def read_run_report(out_dir) -> RunReport:
    """Rebuild a :class:`RunReport` from a directory written by :func:`write_run_report`."""
    out = Path(out_dir)
    meta = json.loads((out / "run.json").read_text(encoding="utf-8"))
    windows = _read_rows(out / "windows.csv")
    fc_rows = _read_rows(out / "forecasts.csv")
    heat_rows = {int(r["window"]): r for r in _read_rows(out / "heatmap.csv")}
    per_window = {w["index"]: w for w in meta["windows"]}
    horizon = meta["config"]["window"]["horizon"]

    records = []
    for row in windows:
        n = int(row["index"])
        particles, weights, distances = read_posterior_csv(out / f"posterior_{n}.csv")
        info = per_window[n]
        posterior = WeightedPosterior(
            particles=particles,
            weights=weights,
            distances=distances,
            tolerance_schedule=tuple(float(t) for t in info["tolerance_schedule"]),
            acceptance_rates=tuple(float(a) for a in info["acceptance_rates"]),
            simulations=tuple(info["simulations"]),
            weight_sums=tuple(float(w) for w in info.get("weight_sums", ())),
        )
        point = np.empty((horizon, 2))
        lower = np.empty((horizon, 2))
        upper = np.empty((horizon, 2))
        for fr in fc_rows:
            if int(fr["window"]) != n:
                continue
            k = int(fr["day_offset"]) - 1
            c = CHANNELS.index(fr["channel"])
            point[k, c] = float(fr["point"])
            lower[k, c] = float(fr["lower"])
            upper[k, c] = float(fr["upper"])
        size = int(row["size"])
        window = TimeWindow(index=n, start=int(row["start"]), size=size)
        heat = heat_rows[n]
        records.append(
            WindowRecord(
                window=window,
                requested_size=int(row["requested_size"]),
                posterior=posterior,
                eps_fit=float(row["eps_fit"]),
                eps_pred=float(row["eps_pred"]),
                forecast=ForecastBand(
                    origin=size - 1, horizon=horizon, point=point, lower=lower, upper=upper,
                    n_excluded=int(info["forecast_excluded"]),
                ),
                rel_err_by_day=np.array([float(heat[f"day_{k + 1}"]) for k in range(horizon)]),
                flags=tuple(f for f in row["flags"].split(";") if f),
                start_date=row["start_date"] or None,
            )
        )
    return RunReport(
        mode=PriorMode(meta["mode"]),
        config=meta["config"],
        records=tuple(records),
        window_size_trace=tuple(meta["window_size_trace"]),
    )
