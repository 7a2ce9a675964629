"""Piecewise-constant SEIRD series for closed-loop validation."""

from __future__ import annotations

import datetime as dt

import numpy as np

from .data_io import EpidemicSeries
from .exceptions import DivergenceError, InfeasiblePopulationError, InvalidStateError, WindowAbcError
from .model import SeirdParams, initial_state_from_observations, integrate, observables, rk4_batch


class SyntheticGenerationError(WindowAbcError, ValueError):
    """The regime schedule cannot be integrated."""


def generate_series(
    regimes,
    initial_cases: float = 100.0,
    initial_deaths: float = 0.0,
    noise: float = 0.0,
    seed: int = 0,
    start_date: str = "2020-03-01",
    region: str = "synthetic",
    steps_per_day: int = 10,
) -> EpidemicSeries:
    """Integrate a schedule of ``(SeirdParams, days)`` regimes back to back.

    The first regime's ``c_e``/``c_r`` set the initial compartments from
    ``initial_cases``/``initial_deaths``; the state is carried unchanged
    across regime switches, so every regime must share ``n_pop``. The
    series has ``sum(days)`` points: day 0 plus ``days - 1`` transitions for
    the first regime and ``days`` transitions for each later one.

    With ``noise > 0`` the daily increments of both channels are multiplied
    by independent mean-one log-normal factors with log-scale ``noise``
    before re-accumulating, which keeps the output monotone.
    """
    regimes = [(p, int(days)) for p, days in regimes]
    if not regimes:
        raise SyntheticGenerationError("need at least one regime")
    if any(days < 1 for _, days in regimes):
        raise SyntheticGenerationError("regime durations must be >= 1")
    n_pop = regimes[0][0].n_pop
    if any(p.n_pop != n_pop for p, _ in regimes):
        raise SyntheticGenerationError("all regimes must share n_pop")
    if noise < 0:
        raise SyntheticGenerationError("noise must be non-negative")

    first, days = regimes[0]
    try:
        state = initial_state_from_observations(initial_cases, initial_deaths, first)
    except (InvalidStateError, InfeasiblePopulationError) as exc:
        raise SyntheticGenerationError(str(exc)) from exc
    pieces = []
    if days > 1:
        try:
            traj = integrate(first, state, days - 1, steps_per_day)
        except DivergenceError as exc:
            raise SyntheticGenerationError(f"regime {first} diverged") from exc
        pieces.append(observables(traj).as_matrix())
        y = traj.states[-1]
    else:
        pieces.append(np.array([[state.i + state.r + state.d, state.d]]))
        y = state.to_array()
    for params, days in regimes[1:]:
        states, bad, _ = rk4_batch(params.to_array()[None], y[None], days, steps_per_day)
        if bad[0]:
            raise SyntheticGenerationError(f"regime {params} diverged")
        st = states[1:, :, 0]
        pieces.append(np.column_stack([st[:, 2] + st[:, 3] + st[:, 4], st[:, 4]]))
        y = st[-1]
    obs = np.vstack(pieces)

    if noise > 0:
        rng = np.random.default_rng(seed)
        daily = np.diff(obs, axis=0)
        factors = np.exp(noise * rng.standard_normal(daily.shape) - 0.5 * noise**2)
        obs = np.vstack([obs[:1], obs[:1] + np.cumsum(daily * factors, axis=0)])
        obs[:, 1] = np.minimum(obs[:, 1], obs[:, 0])

    start = dt.date.fromisoformat(start_date)
    dates = tuple((start + dt.timedelta(days=k)).isoformat() for k in range(len(obs)))
    # guard against round-off wiggles in the cumulative channels
    cases = np.maximum.accumulate(obs[:, 0])
    deaths = np.minimum(np.maximum.accumulate(obs[:, 1]), cases)
    return EpidemicSeries(region=region, dates=dates, cum_cases=cases, cum_deaths=deaths)


def parse_regime(text: str):
    """Parse ``"beta_i=0.5,beta_e=0.1,...,days=40"`` into ``(SeirdParams, days)``."""
    fields = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"bad regime item {item!r}; expected key=value")
        fields[key.strip().replace("-", "_")] = float(value)
    try:
        days = int(fields.pop("days"))
    except KeyError:
        raise ValueError("regime needs a days= entry") from None
    return SeirdParams(**fields), days
