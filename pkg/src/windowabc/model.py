"""SEIRD model with pre-symptomatic transmission, integrated with fixed-step RK4.

Compartments are real-valued. The exposed class infects at rate ``beta_e``
in addition to the infectious class at rate ``beta_i``::

    dS/dt = -beta_i S I / N - beta_e S E / N
    dE/dt =  beta_i S I / N + beta_e S E / N - alpha E
    dI/dt =  alpha E - (gamma + mu) I
    dR/dt =  gamma I
    dD/dt =  mu I

The observed channels are cumulative cases (everyone who has left E,
``I + R + D``) and cumulative deaths (``D``).

Everything below the dataclass layer works on batches: parameter matrices of
shape ``(n, 8)`` are integrated in lock-step so that one ABC generation costs a
handful of numpy calls per RK4 stage instead of one Python loop per particle.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .exceptions import DivergenceError, InfeasiblePopulationError, InvalidStateError

PARAM_NAMES = ("beta_i", "beta_e", "alpha", "gamma", "mu", "n_pop", "c_e", "c_r")
STATE_NAMES = ("s", "e", "i", "r", "d")
N_PARAMS = len(PARAM_NAMES)

# a compartment below -DIVERGENCE_SLACK * N is a failed integration, not round-off
DIVERGENCE_SLACK = 1e-6


@dataclass(frozen=True)
class SeirdParams:
    """Per-window SEIRD parameter vector.

    Rates are per day; ``n_pop`` is the effective population; ``c_e`` and
    ``c_r`` split the active cases at the window start into exposed and
    recovered compartments.
    """

    beta_i: float
    beta_e: float
    alpha: float
    gamma: float
    mu: float
    n_pop: float
    c_e: float
    c_r: float

    def __post_init__(self):
        values = self.to_array()
        if not np.all(np.isfinite(values)):
            raise InvalidStateError(f"non-finite parameter in {self!r}")
        if min(self.beta_i, self.beta_e, self.alpha, self.gamma, self.mu) < 0:
            raise InvalidStateError("rates must be non-negative")
        if self.n_pop <= 0:
            raise InvalidStateError("n_pop must be positive")
        if self.c_e < 0 or not 0 <= self.c_r <= 1:
            raise InvalidStateError("need c_e >= 0 and 0 <= c_r <= 1")

    def to_array(self) -> np.ndarray:
        return np.array(dataclasses.astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "SeirdParams":
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (N_PARAMS,):
            raise InvalidStateError(f"expected {N_PARAMS} parameters, got {values.shape}")
        return cls(*(float(v) for v in values))

    def replace(self, **changes) -> "SeirdParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SeirdState:
    """Compartment sizes (or their time derivatives)."""

    s: float
    e: float
    i: float
    r: float
    d: float

    def to_array(self) -> np.ndarray:
        return np.array(dataclasses.astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "SeirdState":
        values = np.asarray(values, dtype=float).ravel()
        return cls(*(float(v) for v in values))

    @property
    def total(self) -> float:
        return self.s + self.e + self.i + self.r + self.d


@dataclass(frozen=True)
class Trajectory:
    """Daily samples of an integrated trajectory.

    ``states`` has shape ``(len(times), 5)`` with columns ordered as
    :data:`STATE_NAMES`.
    """

    times: np.ndarray
    states: np.ndarray
    n_pop: float

    def __post_init__(self):
        if self.states.shape != (len(self.times), 5):
            raise InvalidStateError("states must have shape (len(times), 5)")
        if len(self.times) > 1 and not np.all(np.diff(self.times) == 1):
            raise InvalidStateError("trajectory times must advance by one day")

    def __len__(self):
        return len(self.times)

    def state(self, day: int) -> SeirdState:
        return SeirdState.from_array(self.states[day])

    def compartment(self, name: str) -> np.ndarray:
        return self.states[:, STATE_NAMES.index(name)]


@dataclass(frozen=True)
class Observables:
    cum_cases: np.ndarray
    cum_deaths: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """Stack into ``(T, 2)`` with columns (cases, deaths)."""
        return np.column_stack([self.cum_cases, self.cum_deaths])


# ----------------------------------------------------------------------------
# batched kernels; parameter rows are (n, 8), states are stored as (5, n)
# ----------------------------------------------------------------------------


def _rates(s, e, i, r, d, bi, be, al, ga, mu, inv_n):
    infection = (bi * i + be * e) * s * inv_n
    incubation = al * e
    recovery = ga * i
    death = mu * i
    return (
        -infection,
        infection - incubation,
        incubation - recovery - death,
        recovery,
        death,
    )


def _clamp(y, n_pop, bad):
    """Zero round-off negatives in place, charging the deficit to S.

    Rows that dip below the divergence slack are flagged in ``bad``.
    """
    if y.min() >= 0.0:
        return
    slack = -DIVERGENCE_SLACK * n_pop
    bad |= np.any(y < slack, axis=0)
    rest = y[1:]
    deficit = np.minimum(rest, 0.0).sum(axis=0)
    np.maximum(rest, 0.0, out=rest)
    y[0] += deficit
    neg_s = y[0] < 0.0
    if neg_s.any():
        # S itself went (slightly) negative: push its deficit onto the largest class
        cols = np.nonzero(neg_s)[0]
        largest = np.argmax(y[1:, cols], axis=0) + 1
        y[largest, cols] += y[0, cols]
        y[0, cols] = 0.0


def rk4_batch(theta, y0, horizon, steps_per_day=10):
    """Integrate a batch of SEIRD systems with classic fixed-step RK4.

    Parameters
    ----------
    theta : array_like, shape (n, 8)
        Parameter rows ordered as :data:`PARAM_NAMES`.
    y0 : array_like, shape (n, 5)
        Initial compartments.
    horizon : int
        Number of days to integrate.
    steps_per_day : int
        RK4 steps per day; the step is ``1 / steps_per_day``.

    Returns
    -------
    states : ndarray, shape (horizon + 1, 5, n)
        Compartments sampled at integer days.
    diverged : ndarray of bool, shape (n,)
        Rows that produced non-finite values or a compartment below the
        divergence slack. Their samples are meaningless.
    first_bad_step : int or None
        Global RK4 step index at which the first divergence was seen.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    y = np.array(np.atleast_2d(y0), dtype=float).T.copy()
    n = theta.shape[0]
    if y.shape != (5, n):
        raise InvalidStateError(f"y0 must have shape ({n}, 5), got {y.T.shape}")
    if horizon < 0 or steps_per_day < 1:
        raise ValueError("need horizon >= 0 and steps_per_day >= 1")
    bi, be, al, ga, mu, n_pop = (theta[:, k].copy() for k in range(6))
    inv_n = 1.0 / n_pop
    h = 1.0 / steps_per_day
    half = 0.5 * h
    sixth = h / 6.0

    out = np.empty((horizon + 1, 5, n))
    out[0] = y
    bad = ~np.all(np.isfinite(y), axis=0)
    first_bad = None
    step = 0
    for day in range(1, horizon + 1):
        for _ in range(steps_per_day):
            s, e, i, r, d = y
            k1 = _rates(s, e, i, r, d, bi, be, al, ga, mu, inv_n)
            k2 = _rates(*(yc + half * kc for yc, kc in zip(y, k1)), bi, be, al, ga, mu, inv_n)
            k3 = _rates(*(yc + half * kc for yc, kc in zip(y, k2)), bi, be, al, ga, mu, inv_n)
            k4 = _rates(*(yc + h * kc for yc, kc in zip(y, k3)), bi, be, al, ga, mu, inv_n)
            y = np.stack(
                [
                    y[c] + sixth * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
                    for c in range(5)
                ]
            )
            bad |= ~np.all(np.isfinite(y), axis=0)
            _clamp(y, n_pop, bad)
            if first_bad is None and bad.any():
                first_bad = step
            step += 1
        out[day] = y
    return out, bad, first_bad


def initial_states(theta, c0, d0):
    """Initial compartments for a batch of parameter rows.

    Returns ``(y0, feasible)`` where ``y0`` has shape ``(n, 5)`` and
    ``feasible`` marks rows whose susceptible pool is strictly positive.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    active = c0 - d0
    n_pop, c_e, c_r = theta[:, 5], theta[:, 6], theta[:, 7]
    r0 = c_r * active
    i0 = (1.0 - c_r) * active
    e0 = c_e * active
    dd = np.full_like(n_pop, float(d0))
    s0 = n_pop - e0 - i0 - r0 - dd
    y0 = np.column_stack([s0, e0, i0, r0, dd])
    return y0, s0 > 0


def simulate_observables(theta, c0, d0, horizon, steps_per_day=10):
    """Cumulative cases and deaths for a batch of parameter rows.

    Rows with an infeasible initial state or a diverged integration are
    reported in the returned mask and their outputs set to NaN.

    Returns
    -------
    cases, deaths : ndarray, shape (n, horizon + 1)
    ok : ndarray of bool, shape (n,)
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    y0, feasible = initial_states(theta, c0, d0)
    n = theta.shape[0]
    cases = np.full((n, horizon + 1), np.nan)
    deaths = np.full((n, horizon + 1), np.nan)
    if not feasible.any():
        return cases, deaths, feasible
    idx = np.nonzero(feasible)[0]
    states, bad, _ = rk4_batch(theta[idx], y0[idx], horizon, steps_per_day)
    good = ~bad
    keep = idx[good]
    st = states[:, :, good]
    cases[keep] = (st[:, 2] + st[:, 3] + st[:, 4]).T
    deaths[keep] = st[:, 4].T
    ok = np.zeros(n, dtype=bool)
    ok[keep] = True
    return cases, deaths, ok


# ----------------------------------------------------------------------------
# single-system API
# ----------------------------------------------------------------------------


def seird_derivatives(state: SeirdState, params: SeirdParams) -> SeirdState:
    """Right-hand side of the SEIRD system, returned as a rate per compartment."""
    y = state.to_array()
    if not np.all(np.isfinite(y)):
        raise InvalidStateError(f"non-finite state {state!r}")
    p = params
    rates = _rates(*y, p.beta_i, p.beta_e, p.alpha, p.gamma, p.mu, 1.0 / p.n_pop)
    return SeirdState(*(float(v) for v in rates))


def initial_state_from_observations(c0: float, d0: float, params: SeirdParams) -> SeirdState:
    """Reconstruct the compartments at a window start from cases and deaths.

    The active cases ``c0 - d0`` are split as ``R = c_r * active``,
    ``I = (1 - c_r) * active`` and ``E = c_e * active``; S takes the rest
    of ``n_pop``.
    """
    if not (np.isfinite(c0) and np.isfinite(d0)) or d0 < 0 or c0 < d0:
        raise InvalidStateError(f"need 0 <= d0 <= c0, got c0={c0}, d0={d0}")
    active = c0 - d0
    r0 = params.c_r * active
    i0 = (1.0 - params.c_r) * active
    e0 = params.c_e * active
    s0 = params.n_pop - e0 - i0 - r0 - d0
    if s0 <= 0:
        raise InfeasiblePopulationError(
            f"n_pop={params.n_pop:g} cannot hold {c0:g} cases with c_e={params.c_e:g}"
        )
    return SeirdState(s0, e0, i0, r0, float(d0))


def integrate(
    params: SeirdParams, init: SeirdState, horizon: int, steps_per_day: int = 10
) -> Trajectory:
    """Integrate one system over ``horizon`` days and sample it daily.

    Raises
    ------
    DivergenceError
        If the state becomes non-finite or a compartment drops below
        ``-1e-6 * n_pop``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if steps_per_day < 1:
        raise ValueError("steps_per_day must be >= 1")
    y0 = init.to_array()
    if not np.all(np.isfinite(y0)):
        raise InvalidStateError(f"non-finite initial state {init!r}")
    states, bad, first_bad = rk4_batch(params.to_array()[None, :], y0[None, :], horizon, steps_per_day)
    if bad[0]:
        raise DivergenceError(f"integration diverged at step {first_bad}", step=first_bad)
    return Trajectory(np.arange(horizon + 1), states[:, :, 0], params.n_pop)


def observables(traj: Trajectory) -> Observables:
    st = traj.states
    return Observables(cum_cases=st[:, 2] + st[:, 3] + st[:, 4], cum_deaths=st[:, 4].copy())
