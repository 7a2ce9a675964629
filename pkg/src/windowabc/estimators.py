"""scikit-learn style front ends.

``SeirdABC`` fits one block of data; ``SequentialWindowABC`` runs the full
windowed procedure. Both follow the estimator conventions (constructor only
stores hyper-parameters, ``fit`` returns ``self``, learned state ends in an
underscore) so they work with ``get_params``/``set_params``/``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .inference import AbcConfig, ParamBounds, UniformPrior, abc_smc
from .model import PARAM_NAMES, SeirdParams
from .pipeline import PriorMode, fit_sequential, forecast
from .validation import check_horizon, check_observations, check_random_state
from .windowing import WindowConfig


class _AbcParamsMixin:
    def _abc_config(self) -> AbcConfig:
        return AbcConfig(
            n_particles=self.n_particles,
            n_generations=self.n_generations,
            quantile_for_next_tolerance=self.quantile,
            max_simulations_per_generation=self.max_simulations_per_generation,
            rng_seed=check_random_state(self.random_state),
            n_initial=self.n_initial,
            kernel=self.kernel,
            steps_per_day=self.steps_per_day,
            n_workers=self.n_workers,
        )

    def _bounds(self) -> ParamBounds:
        if self.bounds is None:
            return ParamBounds.default(self.population_cap)
        if isinstance(self.bounds, ParamBounds):
            return self.bounds
        return ParamBounds.from_dict(self.bounds)


class SeirdABC(_AbcParamsMixin, BaseEstimator):
    """ABC-SMC posterior of the SEIRD parameters for one block of data.

    Parameters
    ----------
    n_particles, n_generations, quantile, n_initial, max_simulations_per_generation, kernel
        See :class:`~windowabc.inference.AbcConfig`.
    bounds : ParamBounds or dict, optional
        Uniform prior box. Defaults to :meth:`ParamBounds.default` with
        ``population_cap``; the population floor is always raised to the
        last observed case count.
    steps_per_day : int
        RK4 steps per day.
    random_state : int or None
    n_workers : int
        Threads used to simulate one generation (results do not depend on it).

    Attributes
    ----------
    posterior_ : WeightedPosterior
    bounds_ : ParamBounds
        Prior box actually used.
    start_ : ndarray of shape (2,)
        First observed (cases, deaths), the integration anchor.
    n_days_ : int
    """

    def __init__(
        self,
        n_particles=1000,
        n_generations=5,
        quantile=0.5,
        n_initial=None,
        max_simulations_per_generation=200_000,
        kernel="full",
        bounds=None,
        population_cap=1e7,
        steps_per_day=10,
        random_state=None,
        n_workers=1,
    ):
        self.n_particles = n_particles
        self.n_generations = n_generations
        self.quantile = quantile
        self.n_initial = n_initial
        self.max_simulations_per_generation = max_simulations_per_generation
        self.kernel = kernel
        self.bounds = bounds
        self.population_cap = population_cap
        self.steps_per_day = steps_per_day
        self.random_state = random_state
        self.n_workers = n_workers

    def fit(self, X, y=None, prior=None):
        """Fit to cumulative ``(cases, deaths)`` rows ``X``.

        ``prior`` replaces the uniform prior, e.g. with the output of
        :func:`~windowabc.inference.posterior_to_prior`.
        """
        X = check_observations(X, min_length=3)
        config = self._abc_config()
        self.bounds_ = self._bounds().for_window(X[-1, 0])
        prior = UniformPrior(self.bounds_) if prior is None else prior
        rng = np.random.default_rng(config.rng_seed)
        self.posterior_ = abc_smc(prior, X, config, rng)
        self.start_ = X[0].copy()
        self.n_days_ = len(X)
        self.n_features_in_ = 2
        return self

    @property
    def median_params_(self) -> SeirdParams:
        check_is_fitted(self, "posterior_")
        return SeirdParams.from_array(self.posterior_.median())

    @property
    def best_params_(self) -> SeirdParams:
        check_is_fitted(self, "posterior_")
        return SeirdParams.from_array(self.posterior_.best())

    def summary(self, level=0.9) -> dict:
        check_is_fitted(self, "posterior_")
        return self.posterior_.summary(level)

    def _band(self, horizon, level):
        check_is_fitted(self, "posterior_")
        return forecast(
            self.posterior_, self.start_, self.n_days_ - 1, check_horizon(horizon),
            self.steps_per_day, level,
        )

    def predict(self, horizon=10):
        """Point forecast of shape ``(horizon, 2)`` for the days after the fitted data."""
        return self._band(horizon, 0.9).point

    def predict_interval(self, horizon=10, level=0.9):
        """Weighted central ``level`` band as ``(lower, upper)`` arrays of shape ``(horizon, 2)``."""
        band = self._band(horizon, level)
        return band.lower, band.upper


class SequentialWindowABC(_AbcParamsMixin, BaseEstimator):
    """Window-by-window ABC-SMC with optional posterior-to-prior chaining.

    Window sizes adapt to the fit error of the two previous windows; with
    ``mode="past"`` each window's prior is the kernel-smoothed posterior of
    the window before it.

    Attributes
    ----------
    report_ : RunReport
    n_windows_ : int
    """

    def __init__(
        self,
        s_initial=30,
        s_min=10,
        s_max=50,
        shift=5,
        horizon=10,
        mode="past",
        inflation=1.5,
        fit_summary="median",
        include_trailing=False,
        n_particles=1000,
        n_generations=5,
        quantile=0.5,
        n_initial=None,
        max_simulations_per_generation=200_000,
        kernel="full",
        bounds=None,
        population_cap=1e7,
        steps_per_day=10,
        random_state=None,
        n_workers=1,
    ):
        self.s_initial = s_initial
        self.s_min = s_min
        self.s_max = s_max
        self.shift = shift
        self.horizon = horizon
        self.mode = mode
        self.inflation = inflation
        self.fit_summary = fit_summary
        self.include_trailing = include_trailing
        self.n_particles = n_particles
        self.n_generations = n_generations
        self.quantile = quantile
        self.n_initial = n_initial
        self.max_simulations_per_generation = max_simulations_per_generation
        self.kernel = kernel
        self.bounds = bounds
        self.population_cap = population_cap
        self.steps_per_day = steps_per_day
        self.random_state = random_state
        self.n_workers = n_workers

    def _window_config(self) -> WindowConfig:
        return WindowConfig(
            s_initial=self.s_initial, s_min=self.s_min, s_max=self.s_max,
            shift=self.shift, horizon=self.horizon,
        )

    def fit(self, X, y=None):
        dates = getattr(X, "dates", None)
        X = check_observations(X)
        self.report_ = fit_sequential(
            X,
            self._window_config(),
            self._bounds(),
            self._abc_config(),
            PriorMode(self.mode),
            check_random_state(self.random_state),
            inflation=self.inflation,
            fit_summary=self.fit_summary,
            include_trailing=self.include_trailing,
            dates=dates,
        )
        self.n_windows_ = len(self.report_.records)
        self.n_features_in_ = 2
        return self

    def predict(self, X=None):
        """Point forecast of the last fitted window, shape ``(horizon, 2)``."""
        check_is_fitted(self, "report_")
        return self.report_.records[-1].forecast.point

    def predict_interval(self, X=None):
        check_is_fitted(self, "report_")
        band = self.report_.records[-1].forecast
        return band.lower, band.upper

    @property
    def eps_fit_(self) -> np.ndarray:
        check_is_fitted(self, "report_")
        return self.report_.eps_fit

    @property
    def eps_pred_(self) -> np.ndarray:
        check_is_fitted(self, "report_")
        return self.report_.eps_pred

    def posterior_medians(self) -> np.ndarray:
        """``(n_windows, 8)`` weighted medians, columns as ``PARAM_NAMES``."""
        check_is_fitted(self, "report_")
        return np.vstack([r.posterior.median() for r in self.report_.records])


__all__ = ["SeirdABC", "SequentialWindowABC", "PARAM_NAMES"]
