"""Sequential time-window ABC-SMC fitting and forecasting for SEIRD epidemics."""

from .data_io import EpidemicSeries, load_series, read_run_report, write_run_report, write_series
from .estimators import SeirdABC, SequentialWindowABC
from .exceptions import WindowAbcError
from .inference import (
    AbcConfig,
    MixturePrior,
    ParamBounds,
    UniformPrior,
    WeightedPosterior,
    abc_smc,
    posterior_to_prior,
)
from .metrics import nrmsd_breakdown, nrmsd_component, nrmsd_total, ratio_stats
from .model import SeirdParams, SeirdState, Trajectory, integrate, observables
from .pipeline import PriorMode, RunReport, compare_modes, fit_sequential, forecast
from .synthetic import generate_series
from .windowing import TimeWindow, WindowConfig, select_window_size

__version__ = "0.1.0"

__all__ = [
    "AbcConfig",
    "EpidemicSeries",
    "MixturePrior",
    "ParamBounds",
    "PriorMode",
    "RunReport",
    "SeirdABC",
    "SeirdParams",
    "SeirdState",
    "SequentialWindowABC",
    "TimeWindow",
    "Trajectory",
    "UniformPrior",
    "WeightedPosterior",
    "WindowAbcError",
    "WindowConfig",
    "abc_smc",
    "compare_modes",
    "fit_sequential",
    "forecast",
    "generate_series",
    "integrate",
    "load_series",
    "nrmsd_breakdown",
    "nrmsd_component",
    "nrmsd_total",
    "observables",
    "posterior_to_prior",
    "ratio_stats",
    "read_run_report",
    "select_window_size",
    "write_run_report",
    "write_series",
]
