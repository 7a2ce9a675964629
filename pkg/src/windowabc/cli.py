"""Command-line front end: ``windowabc fit|compare|synth``.

Every option can also come from an INI file passed with ``--config``; keys
live in a ``[run]`` section and use the flag names (dashes or underscores).
Bounds go in a ``[bounds]`` section as ``name = low, high``. Flags override
the file and the file overrides built-in defaults. Each run writes
``config.ini`` in the same layout, so ``--config out/config.ini`` repeats it.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import fmt, load_series, write_run_report, write_series
from .exceptions import WindowAbcError
from .inference import AbcConfig, ParamBounds
from .model import PARAM_NAMES
from .pipeline import PriorMode, compare_modes, fit_sequential
from .synthetic import generate_series, parse_regime
from .windowing import WindowConfig

logger = logging.getLogger("windowabc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad flags or configuration values."""


@dataclass
class RunConfig:
    """Everything needed to reproduce a ``fit`` or ``compare`` run."""

    input: str = ""
    region: str = ""
    output: str = "windowabc-out"
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    mode: str = "past"
    s_initial: int = 30
    s_min: int = 10
    s_max: int = 50
    shift: int = 5
    horizon: int = 10
    n_particles: int = 1000
    n_generations: int = 5
    quantile: float = 0.5
    n_initial: int = 0
    max_simulations: int = 200_000
    kernel: str = "full"
    steps_per_day: int = 10
    threads: int = 1
    population_cap: float = 1e7
    inflation: float = 1.5
    fit_summary: str = "median"
    include_trailing: bool = False
    min_window: int = 1
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise UsageError("replicates must be >= 1")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        if self.seed < 0:
            raise UsageError("seed must be >= 0")
        if self.min_window < 1:
            raise UsageError("min-window must be >= 1")
        try:
            PriorMode(self.mode)
            self.window_config()
            self.abc_config()
            self.param_bounds()
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def window_config(self) -> WindowConfig:
        return WindowConfig(
            s_initial=self.s_initial, s_min=self.s_min, s_max=self.s_max,
            shift=self.shift, horizon=self.horizon,
        )

    def abc_config(self, seed: int | None = None) -> AbcConfig:
        return AbcConfig(
            n_particles=self.n_particles,
            n_generations=self.n_generations,
            quantile_for_next_tolerance=self.quantile,
            max_simulations_per_generation=self.max_simulations,
            rng_seed=self.seed if seed is None else seed,
            n_initial=self.n_initial or None,
            kernel=self.kernel,
            steps_per_day=self.steps_per_day,
            n_workers=self.threads,
        )

    def param_bounds(self) -> ParamBounds:
        base = ParamBounds.default(self.population_cap).to_dict()
        unknown = set(self.bounds) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown bound(s): {sorted(unknown)}")
        base.update({k: tuple(v) for k, v in self.bounds.items()})
        return ParamBounds.from_dict(base)

    def replicate_seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.replicates)]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    kind = type(RunConfig.__dataclass_fields__[name].default)
    if isinstance(value, str):
        if kind is bool:
            lowered = value.strip().lower()
            if lowered not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise UsageError(f"{name}: expected a boolean, got {value!r}")
            return lowered in ("1", "true", "yes", "on")
        try:
            return kind(float(value)) if kind is int else kind(value)
        except ValueError:
            raise UsageError(f"{name}: cannot parse {value!r}") from None
    return value


def _parse_bound(text: str):
    name, sep, rest = text.partition("=")
    lo, comma, hi = rest.partition(",")
    if not sep or not comma:
        raise UsageError(f"bad bound {text!r}; expected NAME=LOW,HIGH")
    try:
        return name.strip().replace("-", "_"), (float(lo), float(hi))
    except ValueError:
        raise UsageError(f"bad bound {text!r}; expected NAME=LOW,HIGH") from None


def read_config_file(path) -> dict:
    """Read ``[run]`` and ``[bounds]`` sections of an INI file into RunConfig fields."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    values = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            name = key.replace("-", "_")
            if name not in _FIELDS or name == "bounds":
                raise UsageError(f"{path}: unknown key {key!r}")
            values[name] = _coerce(name, raw)
    if parser.has_section("bounds"):
        values["bounds"] = dict(_parse_bound(f"{k}={v}") for k, v in parser.items("bounds"))
    return values


def write_config_file(config: RunConfig, path) -> Path:
    parser = configparser.ConfigParser()
    parser["run"] = {
        name: (repr(value) if isinstance(value, float) else str(value))
        for name, value in dataclasses.asdict(config).items()
        if name != "bounds"
    }
    parser["bounds"] = {
        name: f"{fmt(lo)}, {fmt(hi)}" for name, (lo, hi) in config.param_bounds().to_dict().items()
    }
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        parser.write(fh)
    return path


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags."""
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None and name != "bounds":
            values[name] = flag
    if getattr(args, "bound", None):
        bounds = dict(values.get("bounds", {}))
        bounds.update(_parse_bound(b) for b in args.bound)
        values["bounds"] = bounds
    if not values.get("input") or not values.get("region"):
        raise UsageError("input and region are required (flags or config file)")
    return RunConfig(**values)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def _run_replicate(job):
    config, mode, seed = job
    series = load_series(config.input, config.region)
    return fit_sequential(
        series.as_matrix(),
        config.window_config(),
        config.param_bounds(),
        config.abc_config(seed),
        PriorMode(mode),
        seed,
        inflation=config.inflation,
        fit_summary=config.fit_summary,
        include_trailing=config.include_trailing,
        dates=series.dates,
    )


def _run_all(config: RunConfig, jobs):
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            return list(pool.map(_run_replicate, jobs))
    return [_run_replicate(job) for job in jobs]


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _summary_rows(reports):
    by_window = {}
    for rep in reports:
        for r in rep.records:
            by_window.setdefault(r.window.index, []).append(r)
    rows = []
    for index in sorted(by_window):
        recs = by_window[index]
        fit = np.array([r.eps_fit for r in recs])
        pred = np.array([r.eps_pred for r in recs])
        pred = pred[np.isfinite(pred)]
        rows.append([
            index, recs[0].window.end, len(recs),
            fmt(fit.mean()), fmt(fit.std()),
            fmt(pred.mean()) if len(pred) else "nan",
            fmt(pred.std()) if len(pred) else "nan",
        ])
    return rows


def cmd_fit(config: RunConfig) -> int:
    """Fit every replicate and write per-replicate reports plus ``summary.csv``."""
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(config, out / "config.ini")
    seeds = config.replicate_seeds()
    reports = _run_all(config, [(config, config.mode, s) for s in seeds])
    for k, rep in enumerate(reports):
        write_run_report(rep, out / f"replicate_{k:02d}")
    _write_rows(
        out / "summary.csv",
        ["window", "end_day", "replicates", "eps_fit_mean", "eps_fit_std",
         "eps_pred_mean", "eps_pred_std"],
        _summary_rows(reports),
    )
    logger.info("wrote %d replicate(s) to %s", len(reports), out)
    return EXIT_OK


def cmd_compare(config: RunConfig) -> int:
    """Run FLAT and PAST with paired seeds and write the ratio statistics."""
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(config, out / "config.ini")
    seeds = config.replicate_seeds()
    jobs = [(config, m, s) for m in ("flat", "past") for s in seeds]
    reports = _run_all(config, jobs)
    flats, pasts = reports[: len(seeds)], reports[len(seeds):]
    for k, (f, p) in enumerate(zip(flats, pasts)):
        write_run_report(f, out / "flat" / f"replicate_{k:02d}")
        write_run_report(p, out / "past" / f"replicate_{k:02d}")

    cmp = compare_modes(flats, pasts, min_window=config.min_window)
    rows, heat_f, heat_p = [], [], []
    for k, (f, p) in enumerate(zip(flats, pasts)):
        for rf, rp in zip(f.records, p.records):
            heat_f.append([k, rf.window.index, *map(fmt, rf.rel_err_by_day)])
            heat_p.append([k, rp.window.index, *map(fmt, rp.rel_err_by_day)])
            if rf.window.index < config.min_window:
                continue
            pred_ratio = rf.eps_pred / rp.eps_pred if rf.has_truth and rp.has_truth else np.nan
            rows.append([
                k, rf.window.index, rf.window.end, fmt(rf.eps_fit), fmt(rp.eps_fit),
                fmt(rf.eps_fit / rp.eps_fit), fmt(rf.eps_pred), fmt(rp.eps_pred), fmt(pred_ratio),
            ])
    _write_rows(
        out / "ratios.csv",
        ["replicate", "window", "end_day", "eps_fit_flat", "eps_fit_past", "fit_ratio",
         "eps_pred_flat", "eps_pred_past", "pred_ratio"],
        rows,
    )
    day_cols = [f"day_{d + 1}" for d in range(config.horizon)]
    _write_rows(out / "heatmap_flat.csv", ["replicate", "window", *day_cols], heat_f)
    _write_rows(out / "heatmap_past.csv", ["replicate", "window", *day_cols], heat_p)

    lines = [
        f"replicates: {config.replicates}",
        f"min_window: {config.min_window}",
        f"n_ratios: {len(cmp.fit.ratios)}",
        f"fraction_above_one: {fmt(cmp.fit.fraction_above_one)}",
        "fit_ratio_quartiles: " + ", ".join(fmt(q) for q in cmp.fit.quartiles),
    ]
    if cmp.pred is not None:
        lines += [
            f"pred_fraction_above_one: {fmt(cmp.pred.fraction_above_one)}",
            "pred_ratio_quartiles: " + ", ".join(fmt(q) for q in cmp.pred.quartiles),
        ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("fraction_above_one = %.3f over %d ratios", cmp.fit.fraction_above_one,
                len(cmp.fit.ratios))
    return EXIT_OK


def cmd_synth(
    regimes,
    noise: float = 0.0,
    seed: int = 0,
    output="synthetic.csv",
    *,
    initial_cases: float = 100.0,
    initial_deaths: float = 0.0,
    start_date: str = "2020-03-01",
    region: str = "synthetic",
) -> int:
    """Write a piecewise-regime series in the input CSV layout.

    ``regimes`` is a list of ``(SeirdParams, days)``. A ``<output>.ini``
    snapshot records the schedule.
    """
    series = generate_series(
        regimes, initial_cases=initial_cases, initial_deaths=initial_deaths,
        noise=noise, seed=seed, start_date=start_date, region=region,
    )
    path = write_series(series, output)
    snap = configparser.ConfigParser()
    snap["synth"] = {
        "noise": repr(float(noise)), "seed": str(seed), "initial_cases": repr(float(initial_cases)),
        "initial_deaths": repr(float(initial_deaths)), "start_date": start_date, "region": region,
    }
    for k, (params, days) in enumerate(regimes):
        snap[f"regime_{k}"] = {**{n: repr(float(v)) for n, v in dataclasses.asdict(params).items()},
                               "days": str(days)}
    with path.with_suffix(path.suffix + ".ini").open("w", encoding="utf-8") as fh:
        snap.write(fh)
    logger.info("wrote %d days to %s", len(series), path)
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser, with_mode: bool):
    p.add_argument("--config", help="INI file with [run] and [bounds] sections")
    p.add_argument("--input", help="input CSV (date, region, cum_cases, cum_deaths)")
    p.add_argument("--region")
    p.add_argument("--output", help="output directory")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, help="base seed; replicate k uses seed + k")
    p.add_argument("--workers", type=int, help="replicates run in parallel processes")
    if with_mode:
        p.add_argument("--mode", choices=[m.value for m in PriorMode])
    else:
        p.add_argument("--min-window", type=int, help="first window index entering the ratios")
    g = p.add_argument_group("windows")
    g.add_argument("--s-initial", type=int)
    g.add_argument("--s-min", type=int)
    g.add_argument("--s-max", type=int)
    g.add_argument("--shift", type=int)
    g.add_argument("--horizon", type=int)
    g = p.add_argument_group("ABC-SMC")
    g.add_argument("--n-particles", type=int)
    g.add_argument("--n-generations", type=int)
    g.add_argument("--quantile", type=float)
    g.add_argument("--n-initial", type=int, help="generation-0 prior batch (0 = 4 x particles)")
    g.add_argument("--max-simulations", type=int, help="simulation budget per generation")
    g.add_argument("--kernel", choices=["full", "diagonal"])
    g.add_argument("--steps-per-day", type=int)
    g.add_argument("--threads", type=int, help="simulation threads per replicate")
    g.add_argument("--population-cap", type=float)
    g.add_argument("--bound", action="append", metavar="NAME=LOW,HIGH")
    g.add_argument("--inflation", type=float, help="bandwidth inflation for chained priors")
    g.add_argument("--fit-summary", choices=["median", "best"])
    g.add_argument("--include-trailing", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser = _Parser(prog="windowabc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_run_flags(sub.add_parser("fit", parents=[common],
                                  help="fit replicates of one prior mode"), True)
    _add_run_flags(sub.add_parser("compare", parents=[common],
                                  help="flat vs past priors with paired seeds"), False)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic series")
    p.add_argument("--regime", action="append", required=True,
                   metavar="beta_i=..,beta_e=..,alpha=..,gamma=..,mu=..,n_pop=..,c_e=..,c_r=..,days=N",
                   help="one parameter regime; repeat for piecewise schedules")
    p.add_argument("--noise", type=float, default=0.0,
                   help="log-scale of multiplicative noise on daily increments")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--output", required=True, help="CSV file to write")
    p.add_argument("--initial-cases", type=float, default=100.0, help="cumulative cases on day 0")
    p.add_argument("--initial-deaths", type=float, default=0.0, help="cumulative deaths on day 0")
    p.add_argument("--start-date", default="2020-03-01", help="ISO date of day 0")
    p.add_argument("--region", default="synthetic", help="region label written to the CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            try:
                regimes = [parse_regime(r) for r in args.regime]
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad --regime: {exc}") from None
            return cmd_synth(
                regimes, args.noise, args.seed, args.output,
                initial_cases=args.initial_cases, initial_deaths=args.initial_deaths,
                start_date=args.start_date, region=args.region,
            )
        config = resolve_config(args)
        return cmd_fit(config) if args.command == "fit" else cmd_compare(config)
    except UsageError as exc:
        print(f"windowabc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WindowAbcError, OSError, ValueError, ArithmeticError) as exc:
        print(f"windowabc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
