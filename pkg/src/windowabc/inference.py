"""ABC-SMC for the windowed SEIRD fit.

Population-based ABC with quantile-adaptive tolerances (Toni et al. style):

* generation 0 keeps the ``n_particles`` closest of a batch drawn from the prior;
* generation ``t`` sets its tolerance to a quantile of the previous accepted
  distances, resamples the previous population by weight, perturbs with a
  Gaussian kernel of covariance ``2 * weighted covariance`` (diagonal on
  request) and accepts simulations within tolerance;
* importance weights are ``prior(theta) / sum_j w_j K(theta | theta_j)``.

The distance is the summed NRMSD of cumulative cases and deaths over the
window, the same yardstick used for the fit error.

Candidates of a generation are proposed from one generator stream and then
simulated as a pure function of the proposals, so splitting the simulation
over workers never changes the result.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .exceptions import DegeneratePriorError, StalledInferenceError
from .metrics import nrmsd_batch, nrmsd_total, nrmsd_component, weighted_quantile
from .model import N_PARAMS, PARAM_NAMES, Observables, SeirdParams, simulate_observables

logger = logging.getLogger(__name__)

MAX_TRUNCATION_ROUNDS = 10_000
# proposals falling outside the prior support are not simulated; cap them separately
MAX_PROPOSAL_FACTOR = 20
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ParamBounds:
    """Box of admissible parameter values, ordered as :data:`PARAM_NAMES`."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (N_PARAMS,) or hi.shape != (N_PARAMS,):
            raise ValueError(f"bounds need {N_PARAMS} entries each")
        if not np.all(lo < hi):
            bad = [PARAM_NAMES[k] for k in np.nonzero(~(lo < hi))[0]]
            raise ValueError(f"lower must be < upper for {bad}")
        if np.any(lo < 0):
            raise ValueError("lower bounds must be non-negative")
        if hi[7] > 1:
            raise ValueError("c_r upper bound must be <= 1")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    @classmethod
    def default(cls, population_cap: float = 1e7, population_floor: float = 1.0) -> "ParamBounds":
        """Wide implementer defaults; the population range is data dependent."""
        return cls(
            lower=(0.0, 0.0, 1 / 14, 1 / 30, 0.0, population_floor, 0.0, 0.0),
            upper=(2.0, 2.0, 1.0, 1.0, 0.1, population_cap, 5.0, 1.0),
        )

    @classmethod
    def from_dict(cls, mapping) -> "ParamBounds":
        lo, hi = zip(*(mapping[name] for name in PARAM_NAMES))
        return cls(lower=lo, upper=hi)

    def to_dict(self) -> dict:
        return {name: [lo, hi] for name, lo, hi in zip(PARAM_NAMES, self.lower, self.upper)}

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        return np.all((theta >= self.lo) & (theta <= self.hi), axis=1)

    def for_window(self, min_population: float) -> "ParamBounds":
        """Raise the population floor to ``min_population`` (cases seen so far)."""
        lo = list(self.lower)
        lo[5] = max(lo[5], float(min_population))
        if lo[5] >= self.upper[5]:
            raise ValueError(
                f"population cap {self.upper[5]:g} is below the observed {min_population:g} cases"
            )
        return ParamBounds(lower=tuple(lo), upper=self.upper)


class UniformPrior:
    """Independent uniform prior over a :class:`ParamBounds` box."""

    def __init__(self, bounds: ParamBounds):
        self.bounds = bounds

    def __repr__(self):
        return f"UniformPrior({self.bounds!r})"

    @property
    def support(self) -> ParamBounds:
        return self.bounds

    def sample(self, size: int, rng) -> np.ndarray:
        u = rng.random((size, N_PARAMS))
        return self.bounds.lo + u * (self.bounds.hi - self.bounds.lo)

    def log_density(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        inside = self.bounds.contains(theta)
        return np.where(inside, -math.log(self.bounds.volume), -np.inf)

    def density(self, theta) -> np.ndarray:
        return np.exp(self.log_density(theta))


class MixturePrior:
    """Weighted mixture of axis-aligned Gaussian kernels truncated to a box.

    Each kernel is renormalised by its own mass inside the box, so the
    mixture integrates to one over the box. Dimensions with zero bandwidth
    are point masses at the particle value.
    """

    def __init__(self, particles, weights, bandwidth, bounds: ParamBounds):
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        weights = np.asarray(weights, dtype=float)
        bandwidth = np.broadcast_to(np.asarray(bandwidth, dtype=float), (N_PARAMS,)).copy()
        if particles.shape[1] != N_PARAMS or len(weights) != len(particles):
            raise ValueError("particles must be (n, 8) with one weight each")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        if np.any(bandwidth < 0):
            raise ValueError("bandwidth must be non-negative")
        self.bounds = bounds
        self.bandwidth = bandwidth
        log_mass = self._log_kernel_mass(particles)
        keep = (weights > 0) & np.isfinite(log_mass)
        if not keep.any():
            raise DegeneratePriorError("no mixture kernel has mass inside the truncation box")
        self.particles = particles[keep]
        w = weights[keep]
        self.weights = w / w.sum()
        self._log_mass = log_mass[keep]

    def __repr__(self):
        return f"MixturePrior(n_kernels={len(self.particles)}, bounds={self.bounds!r})"

    @property
    def support(self) -> ParamBounds:
        return self.bounds

    def _log_kernel_mass(self, centers):
        """Log of each kernel's probability mass inside the box (summed over dims)."""
        h = self.bandwidth
        lo, hi = self.bounds.lo, self.bounds.hi
        smooth = h > 0
        total = np.zeros(len(centers))
        if smooth.any():
            hs = h[smooth]
            a = (lo[smooth] - centers[:, smooth]) / hs
            b = (hi[smooth] - centers[:, smooth]) / hs
            # mass = Phi(b) - Phi(a), evaluated on the tail that keeps precision
            upper_tail = a > 0
            mass = np.where(upper_tail, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
            with np.errstate(divide="ignore"):
                total += np.log(mass).sum(axis=1)
        point = ~smooth
        if point.any():
            inside = np.all(
                (centers[:, point] >= lo[point]) & (centers[:, point] <= hi[point]), axis=1
            )
            total = np.where(inside, total, -np.inf)
        return total

    def sample(self, size: int, rng) -> np.ndarray:
        idx = rng.choice(len(self.particles), size=size, p=self.weights)
        centers = self.particles[idx]
        out = centers.copy()
        lo, hi, h = self.bounds.lo, self.bounds.hi, self.bandwidth
        pending = np.broadcast_to(h > 0, out.shape).copy()
        rounds = 0
        while pending.any():
            if rounds >= MAX_TRUNCATION_ROUNDS:
                raise DegeneratePriorError(
                    f"truncated kernel draw still outside the box after {rounds} attempts"
                )
            rows, cols = np.nonzero(pending)
            draw = centers[rows, cols] + h[cols] * rng.standard_normal(len(rows))
            ok = (draw >= lo[cols]) & (draw <= hi[cols])
            out[rows[ok], cols[ok]] = draw[ok]
            pending[rows[ok], cols[ok]] = False
            rounds += 1
        return out

    def log_density(self, theta, chunk: int = 256) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        out = np.full(len(theta), -np.inf)
        inside = self.bounds.contains(theta)
        if not inside.any():
            return out
        h = self.bandwidth
        smooth = h > 0
        hs = h[smooth]
        log_w = np.log(self.weights) - self._log_mass
        const = -0.5 * _LOG_2PI * smooth.sum() - np.log(hs).sum()
        centers_s = self.particles[:, smooth]
        centers_p = self.particles[:, ~smooth]
        rows = np.nonzero(inside)[0]
        for start in range(0, len(rows), chunk):
            r = rows[start : start + chunk]
            x = theta[r]
            z = (x[:, None, smooth] - centers_s[None, :, :]) / hs
            log_k = const - 0.5 * np.sum(z * z, axis=2)
            if centers_p.shape[1]:
                match = np.all(x[:, None, ~smooth] == centers_p[None, :, :], axis=2)
                log_k = np.where(match, log_k, -np.inf)
            out[r] = logsumexp(log_k + log_w[None, :], axis=1)
        return out

    def density(self, theta) -> np.ndarray:
        return np.exp(self.log_density(theta))


def sample_prior(prior, rng) -> SeirdParams:
    """One parameter draw from ``prior``."""
    return SeirdParams.from_array(prior.sample(1, rng)[0])


def prior_density(prior, theta) -> float:
    values = theta.to_array() if isinstance(theta, SeirdParams) else np.asarray(theta, dtype=float)
    return float(prior.density(values[None, :])[0])


@dataclass(frozen=True)
class AbcConfig:
    """ABC-SMC settings.

    ``n_generations`` counts generation 0. ``n_initial`` is the size of the
    prior batch from which generation 0 keeps the best ``n_particles``
    (default ``4 * n_particles``).
    """

    n_particles: int = 1000
    n_generations: int = 5
    quantile_for_next_tolerance: float = 0.5
    max_simulations_per_generation: int = 200_000
    rng_seed: int = 0
    n_initial: int | None = None
    kernel_variance_scale: float = 2.0
    kernel: str = "full"
    steps_per_day: int = 10
    n_workers: int = 1

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if self.n_generations < 1:
            raise ValueError("n_generations must be >= 1")
        if not 0 < self.quantile_for_next_tolerance < 1:
            raise ValueError("quantile_for_next_tolerance must lie in (0, 1)")
        if self.n_initial is not None and self.n_initial < self.n_particles:
            raise ValueError("n_initial must be >= n_particles")
        if self.max_simulations_per_generation < self.n_particles:
            raise ValueError("simulation budget must cover at least n_particles")
        if self.kernel not in ("full", "diagonal"):
            raise ValueError("kernel must be 'full' or 'diagonal'")
        if self.steps_per_day < 1 or self.n_workers < 1:
            raise ValueError("steps_per_day and n_workers must be >= 1")

    @property
    def initial_batch(self) -> int:
        return self.n_initial if self.n_initial is not None else 4 * self.n_particles


@dataclass(frozen=True)
class WeightedPosterior:
    """Final ABC-SMC population plus the run's bookkeeping."""

    particles: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    tolerance_schedule: tuple
    acceptance_rates: tuple = ()
    simulations: tuple = ()
    weight_sums: tuple = ()
    initial_std: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not math.isclose(float(np.sum(self.weights)), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("posterior weights must sum to 1")

    def __len__(self):
        return len(self.particles)

    @property
    def n_generations(self) -> int:
        return len(self.tolerance_schedule)

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def std(self) -> np.ndarray:
        return _weighted_std(self.particles, self.weights)

    def quantile(self, q) -> np.ndarray:
        return weighted_quantile(self.particles, self.weights, q)

    def median(self) -> np.ndarray:
        return self.quantile(0.5)[0]

    def best(self) -> np.ndarray:
        """The minimum-distance particle (first one on ties)."""
        return self.particles[int(np.argmin(self.distances))]

    def summary(self, level: float = 0.9) -> dict:
        """Per-parameter weighted median and central credible interval."""
        tail = (1.0 - level) / 2.0
        q = self.quantile([tail, 0.5, 1.0 - tail])
        return {
            name: {"median": float(q[1, k]), "lower": float(q[0, k]), "upper": float(q[2, k])}
            for k, name in enumerate(PARAM_NAMES)
        }


def _weighted_std(x, w):
    mean = w @ x
    return np.sqrt(np.maximum(w @ (x - mean) ** 2, 0.0))


def abc_distance(sim: Observables, data) -> float:
    """Summed NRMSD over cases and deaths between a simulation and ``(T, 2)`` data."""
    data = np.asarray(data, dtype=float)
    return nrmsd_total(
        [
            nrmsd_component(data[:, 0], sim.cum_cases),
            nrmsd_component(data[:, 1], sim.cum_deaths),
        ]
    )


class _Simulator:
    """Batched distance evaluation for one window of data."""

    def __init__(self, window_data, steps_per_day, n_workers=1, chunk=512):
        self.data = np.asarray(window_data, dtype=float)
        self.c0, self.d0 = self.data[0]
        self.horizon = len(self.data) - 1
        self.steps_per_day = steps_per_day
        self.n_workers = n_workers
        self.chunk = chunk

    def _distances(self, theta):
        cases, deaths, ok = simulate_observables(
            theta, self.c0, self.d0, self.horizon, self.steps_per_day
        )
        with np.errstate(invalid="ignore"):
            dist = nrmsd_batch(self.data[:, 0], cases) + nrmsd_batch(self.data[:, 1], deaths)
        return np.where(ok, dist, np.inf)

    def __call__(self, theta):
        if len(theta) == 0:
            return np.empty(0)
        if self.n_workers == 1 or len(theta) <= self.chunk:
            return self._distances(theta)
        pieces = [theta[i : i + self.chunk] for i in range(0, len(theta), self.chunk)]
        with ThreadPoolExecutor(max_workers=self.n_workers) as pool:
            return np.concatenate(list(pool.map(self._distances, pieces)))


class _PerturbationKernel:
    """Gaussian random-walk kernel with covariance ``scale * weighted covariance``.

    With ``full=False`` only the diagonal is kept. Dimensions whose weighted
    variance is zero are not perturbed.
    """

    def __init__(self, particles, weights, scale=2.0, full=True):
        mean = weights @ particles
        centred = particles - mean
        cov = scale * (centred.T * weights) @ centred
        self.active = np.diag(cov) > 0
        cov = cov[np.ix_(self.active, self.active)]
        if not full:
            cov = np.diag(np.diag(cov))
        self.chol = _stable_cholesky(cov)
        self.log_norm = -0.5 * _LOG_2PI * cov.shape[0] - np.log(np.diag(self.chol)).sum()

    def perturb(self, centers, rng):
        out = centers.copy()
        k = int(self.active.sum())
        if k:
            out[:, self.active] += rng.standard_normal((len(centers), k)) @ self.chol.T
        return out

    def log_sum(self, x, centers, log_weights, chunk=256):
        """``log sum_j w_j K(x | centers_j)`` for each row of ``x``."""
        a = self.active
        out = np.empty(len(x))
        for start in range(0, len(x), chunk):
            xs = x[start : start + chunk]
            diff = xs[:, None, a] - centers[None, :, a]
            z = np.linalg.solve(self.chol, diff.reshape(-1, a.sum()).T).T
            log_k = self.log_norm - 0.5 * np.sum(z * z, axis=1).reshape(len(xs), len(centers))
            if not a.all():
                match = np.all(xs[:, None, ~a] == centers[None, :, ~a], axis=2)
                log_k = np.where(match, log_k, -np.inf)
            with np.errstate(divide="ignore"):
                out[start : start + chunk] = logsumexp(log_k + log_weights[None, :], axis=1)
        return out


def _stable_cholesky(cov):
    if cov.size == 0:
        return cov
    jitter = 0.0
    scale = np.diag(cov).mean()
    for _ in range(10):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            jitter = scale * 1e-12 if jitter == 0.0 else jitter * 10.0
    return np.diag(np.sqrt(np.diag(cov)))


def abc_smc(prior, window_data, config: AbcConfig, rng) -> WeightedPosterior:
    """Run ABC-SMC on one window of ``(T, 2)`` cumulative cases and deaths.

    Parameters
    ----------
    prior : UniformPrior or MixturePrior
    window_data : array_like, shape (T, 2)
        The first row provides the observed initial cases and deaths.
    config : AbcConfig
    rng : numpy.random.Generator

    Raises
    ------
    StalledInferenceError
        If a generation's budget runs out without a single acceptance, or
        generation 0 cannot find ``n_particles`` feasible draws.
    """
    data = np.asarray(window_data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < 2:
        raise ValueError("window_data must have shape (T >= 2, 2)")
    n = config.n_particles
    budget = config.max_simulations_per_generation
    simulate = _Simulator(data, config.steps_per_day, config.n_workers)

    # generation 0: best of prior batches
    thetas, dists = [], []
    n_sims = 0
    n_finite = 0
    while n_finite < n and n_sims < budget:
        size = min(config.initial_batch, budget - n_sims)
        theta = prior.sample(size, rng)
        d = simulate(theta)
        thetas.append(theta)
        dists.append(d)
        n_sims += size
        n_finite += int(np.isfinite(d).sum())
    theta = np.concatenate(thetas)
    dist = np.concatenate(dists)
    if n_finite < n:
        raise StalledInferenceError(
            f"only {n_finite} feasible prior draws in {n_sims} simulations", tolerance=np.inf
        )
    keep = np.argsort(dist, kind="stable")[:n]
    particles = theta[keep]
    distances = dist[keep]
    weights = np.full(n, 1.0 / n)
    schedule = [float(distances.max())]
    rates = [n / n_sims]
    sims = [n_sims]
    weight_sums = [float(weights.sum())]
    initial_std = _weighted_std(particles, weights)

    for generation in range(1, config.n_generations):
        eps = float(np.quantile(distances, config.quantile_for_next_tolerance))
        if not eps < schedule[-1]:
            logger.debug("tolerance stopped decreasing at generation %d", generation)
            break
        kernel = _PerturbationKernel(
            particles, weights, config.kernel_variance_scale, full=config.kernel == "full"
        )
        acc_theta, acc_dist = [], []
        n_acc = 0
        n_sims = 0
        n_prop = 0
        rate = rates[-1] if generation > 1 else 0.5
        while n_acc < n and n_sims < budget and n_prop < MAX_PROPOSAL_FACTOR * budget:
            need = n - n_acc
            size = int(min(max(math.ceil(1.2 * need / rate), 64), MAX_PROPOSAL_FACTOR * budget))
            idx = rng.choice(n, size=size, p=weights)
            proposal = kernel.perturb(particles[idx], rng)
            inside = prior.support.contains(proposal)
            proposal = proposal[inside]
            if n_sims + len(proposal) > budget:
                proposal = proposal[: budget - n_sims]
            d = simulate(proposal)
            n_prop += size
            n_sims += len(proposal)
            ok = d <= eps
            acc_theta.append(proposal[ok])
            acc_dist.append(d[ok])
            n_acc += int(ok.sum())
            # acceptance per proposal, used only to size the next batch
            rate = max(n_acc / n_prop, 1e-3)
        if n_acc == 0:
            raise StalledInferenceError(
                f"generation {generation}: no acceptance in {n_sims} simulations at tolerance {eps:.6g}",
                tolerance=eps,
            )
        if n_acc < n:
            logger.info(
                "generation %d: budget exhausted with %d/%d accepted; keeping generation %d",
                generation, n_acc, n, generation - 1,
            )
            break
        new_theta = np.concatenate(acc_theta)[:n]
        new_dist = np.concatenate(acc_dist)[:n]
        log_prior = prior.log_density(new_theta)
        with np.errstate(divide="ignore"):
            log_q = kernel.log_sum(new_theta, particles, np.log(weights))
        log_w = log_prior - log_q
        if not np.any(np.isfinite(log_w)):
            raise StalledInferenceError("all importance weights vanished", tolerance=eps)
        log_w -= logsumexp(log_w)
        new_w = np.exp(log_w)
        new_w /= new_w.sum()
        particles, distances, weights = new_theta, new_dist, new_w
        schedule.append(eps)
        rates.append(n_acc / n_prop)
        sims.append(n_sims)
        weight_sums.append(float(new_w.sum()))

    return WeightedPosterior(
        particles=particles,
        weights=weights,
        distances=distances,
        tolerance_schedule=tuple(schedule),
        acceptance_rates=tuple(rates),
        simulations=tuple(sims),
        weight_sums=tuple(weight_sums),
        initial_std=initial_std,
    )


def silverman_bandwidth(particles, weights) -> np.ndarray:
    """Per-dimension weighted Silverman bandwidth for a product Gaussian kernel.

    Uses the multivariate rule ``sigma * (4 / ((d + 2) n_eff)) ** (1 / (d + 4))``
    with the effective sample size ``n_eff = 1 / sum(w^2)``.
    """
    particles = np.atleast_2d(particles)
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    d = particles.shape[1]
    n_eff = 1.0 / np.sum(weights**2)
    factor = (4.0 / ((d + 2) * n_eff)) ** (1.0 / (d + 4))
    return factor * _weighted_std(particles, weights)


def posterior_to_prior(
    posterior: WeightedPosterior,
    bounds: ParamBounds,
    inflation: float = 1.5,
    bandwidth=None,
    min_bandwidth_fraction: float = 1e-6,
) -> MixturePrior:
    """Kernel-smoothed posterior, truncated to ``bounds``, for use as the next prior.

    ``bandwidth`` overrides the inflated Silverman rule (zero gives a discrete
    prior on the particles). Computed bandwidths are floored at
    ``min_bandwidth_fraction`` of each bound's width so a collapsed posterior
    still yields a proper density.
    """
    if bandwidth is None:
        identical = np.all(posterior.particles == posterior.particles[0])
        if inflation <= 0 and identical:
            raise DegeneratePriorError("all particles identical and no bandwidth inflation")
        bandwidth = inflation * silverman_bandwidth(posterior.particles, posterior.weights)
        if inflation > 0:
            bandwidth = np.maximum(bandwidth, min_bandwidth_fraction * (bounds.hi - bounds.lo))
    return MixturePrior(posterior.particles, posterior.weights, bandwidth, bounds)
