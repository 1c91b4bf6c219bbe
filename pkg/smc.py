"""
Tempered Sequential Monte Carlo.

Each layer mutates the particles with a kernel invariant for the current
tempered measure, picks the next temperature increment by ESS bisection,
reweights and resamples systematically. The gm and pcn-gm strategies refit
a Gaussian mixture to the (uniform-weight) ensemble before every mutation.

Per-particle random streams are derived from (seed, stage, layer, particle)
so results do not depend on the worker-thread count.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from config import DEFAULT_THREADS, SMC_CONFIG
from errors import ConfigurationError, LayerError, NumericalError
from function_space import CovarianceSpectrum, SpectralBasis
from kernels import KINDS, ChainState, KernelConfig, adapt_beta, mh_step, run_chain
from mixture import FitConfig, fit_mixture

logger = logging.getLogger(__name__)

# stream tags for per-particle seeding
_INIT, _MUTATE, _RESAMPLE = 0, 1, 2


def _stream(seed: int, stage: int, layer: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stage, layer, index]))


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """N coefficient vectors with log-weights, cached potentials and temperature."""
    basis: SpectralBasis
    particles: np.ndarray
    log_weights: np.ndarray
    potentials: np.ndarray
    temperature: float = 0.0
    layer: int = 0

    def __post_init__(self):
        n, k = self.particles.shape
        if k != self.basis.num_modes:
            raise ConfigurationError(f"particles have {k} coefficients, basis has {self.basis.num_modes}")
        if self.log_weights.shape != (n,) or self.potentials.shape != (n,):
            raise ConfigurationError("log_weights and potentials must have one entry per particle")

    @classmethod
    def uniform(cls, basis: SpectralBasis, particles: np.ndarray, potentials=None) -> "ParticleEnsemble":
        n = particles.shape[0]
        if potentials is None:
            potentials = np.full(n, np.nan)
        return cls(basis, particles, np.full(n, -math.log(n)), np.asarray(potentials, dtype=float))

    @property
    def num_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def mean_coefficients(self) -> np.ndarray:
        return self.weights @ self.particles


@dataclass
class TemperSchedule:
    """Per-layer temperature increments and layer statistics."""
    increments: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    accept_rate: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    solves: list = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.increments)

    def append(self, increment, cumulative, ess_value, accept_rate, beta, solves):
        self.increments.append(float(increment))
        self.cumulative.append(float(cumulative))
        self.ess.append(float(ess_value))
        self.accept_rate.append(float(accept_rate))
        self.beta.append(float(beta))
        self.solves.append(int(solves))

    def to_dict(self) -> dict:
        return {
            "increments": self.increments,
            "cumulative": self.cumulative,
            "ess": self.ess,
            "accept_rate": self.accept_rate,
            "beta": self.beta,
            "solves": self.solves,
        }


@dataclass(frozen=True)
class SMCConfig:
    strategy: str = "pcn"
    n_particles: int = SMC_CONFIG["n_particles"]
    chain_len: int = SMC_CONFIG["chain_len"]
    beta0: float = SMC_CONFIG["beta0"]
    ess_threshold: float = SMC_CONFIG["ess_threshold"]
    bisection_tol: float = SMC_CONFIG["bisection_tol"]
    bisection_maxiter: int = SMC_CONFIG["bisection_maxiter"]
    adapt_beta: bool = SMC_CONFIG["adapt_beta"]
    max_layers: int = SMC_CONFIG["max_layers"]
    seed: int = 0
    threads: int = DEFAULT_THREADS
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.strategy not in KINDS:
            raise ConfigurationError(f"strategy must be one of {KINDS}, got '{self.strategy}'")
        if self.n_particles < 2:
            raise ConfigurationError(f"n_particles must be >= 2, got {self.n_particles}")
        if self.chain_len < 0:
            raise ConfigurationError(f"chain_len must be >= 0, got {self.chain_len}")
        if not 0.0 < self.beta0 <= 1.0:
            raise ConfigurationError(f"beta0 must lie in (0, 1], got {self.beta0}")
        if not 0.0 < self.ess_threshold < 1.0:
            raise ConfigurationError(f"ess_threshold must lie in (0, 1), got {self.ess_threshold}")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")


def ess(log_weights: np.ndarray) -> float:
    """(sum w^2)^-1 for the normalized weights."""
    log_weights = np.asarray(log_weights, dtype=float)
    normalized = log_weights - logsumexp(log_weights)
    return float(math.exp(-logsumexp(2.0 * normalized)))


def _ess_after(log_weights: np.ndarray, potentials: np.ndarray, h: float) -> float:
    return ess(log_weights - h * potentials)


def find_next_temperature(
    ensemble: ParticleEnsemble,
    potentials: np.ndarray,
    threshold: float = SMC_CONFIG["ess_threshold"],
    tol: float = SMC_CONFIG["bisection_tol"],
    maxiter: int = SMC_CONFIG["bisection_maxiter"],
) -> float:
    """Largest increment h <= 1 - h_cum keeping ESS >= threshold * N.

    Returns the lower, feasible end of the bisection bracket. Bisection keeps
    going past `maxiter` while that end is still zero.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"ESS threshold must lie in (0, 1), got {threshold}")
    potentials = np.asarray(potentials, dtype=float)
    if not np.all(np.isfinite(potentials)):
        raise NumericalError("cannot choose a temperature from non-finite potentials")

    target = threshold * ensemble.num_particles
    remaining = 1.0 - ensemble.temperature
    if _ess_after(ensemble.log_weights, potentials, remaining) >= target:
        return remaining

    lo, hi = 0.0, remaining
    iterations = 0
    while iterations < maxiter or lo == 0.0:
        if hi - lo <= tol and lo > 0.0:
            break
        if iterations >= 1100:
            raise NumericalError("temperature bisection found no positive increment")
        mid = 0.5 * (lo + hi)
        if _ess_after(ensemble.log_weights, potentials, mid) >= target:
            lo = mid
        else:
            hi = mid
        iterations += 1
    return lo


def reweight(ensemble: ParticleEnsemble, h: float, potentials: np.ndarray) -> ParticleEnsemble:
    log_weights = ensemble.log_weights - h * np.asarray(potentials, dtype=float)
    log_weights = log_weights - logsumexp(log_weights)
    return replace(ensemble, log_weights=log_weights, potentials=np.asarray(potentials, dtype=float))


def resample_systematic(ensemble: ParticleEnsemble, rng: np.random.Generator) -> ParticleEnsemble:
    n = ensemble.num_particles
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(ensemble.weights)
    cumulative[-1] = 1.0
    index = np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)
    return replace(
        ensemble,
        particles=ensemble.particles[index],
        potentials=ensemble.potentials[index],
        log_weights=np.full(n, -math.log(n)),
    )


def _map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))


def evaluate_potentials(potential: Callable, particles: np.ndarray, threads: int = 1) -> np.ndarray:
    return np.array(_map(potential, list(particles), threads), dtype=float)


def mutate(
    ensemble: ParticleEnsemble,
    kernel: KernelConfig,
    chain_len: int,
    potential: Callable,
    seed: int,
    threads: int = 1,
) -> tuple[ParticleEnsemble, float]:
    """Move every particle; returns the new ensemble and the mean acceptance rate.

    MH kernels run `chain_len` steps targeting exp(-h_cum Phi) mu_0. The gm
    kernel makes one mixture draw per particle and leaves potentials unset.
    """
    n = ensemble.num_particles
    steps = 1 if kernel.kind == "gm" else chain_len
    if steps == 0:
        return ensemble, 0.0

    def move(i: int) -> ChainState:
        rng = _stream(seed, _MUTATE, ensemble.layer, i)
        start = ChainState(ensemble.particles[i], float(ensemble.potentials[i]))
        if kernel.kind == "gm":
            return mh_step(start, kernel, potential, rng)
        return run_chain(start, kernel, potential, rng, steps, ensemble.temperature)

    states = _map(move, range(n), threads)
    particles = np.stack([s.u for s in states])
    potentials = np.array([s.phi for s in states], dtype=float)
    rate = float(np.mean([s.accept_rate for s in states]))
    return replace(ensemble, particles=particles, potentials=potentials), rate


def _solves(potential) -> int:
    return int(getattr(potential, "solves", 0))


def _initial_ensemble(prior: CovarianceSpectrum, cfg: SMCConfig, potential) -> ParticleEnsemble:
    scale = np.sqrt(prior.eigenvalues)
    particles = np.stack([
        scale * _stream(cfg.seed, _INIT, 0, i).standard_normal(prior.basis.num_modes)
        for i in range(cfg.n_particles)
    ])
    potentials = None
    if cfg.strategy != "gm":
        potentials = evaluate_potentials(potential, particles, cfg.threads)
    return ParticleEnsemble.uniform(prior.basis, particles, potentials)


def _layer_kernel(ensemble: ParticleEnsemble, beta: float, cfg: SMCConfig, prior) -> KernelConfig:
    mixture = None
    if cfg.strategy in ("gm", "pcn-gm"):
        fit = replace(cfg.fit, seed=cfg.seed + ensemble.layer)
        mixture = fit_mixture(ensemble, prior, fit)
    return KernelConfig(cfg.strategy, beta, prior, mixture)


def _run_layer(ensemble: ParticleEnsemble, beta: float, cfg: SMCConfig, prior, potential):
    kernel = _layer_kernel(ensemble, beta, cfg, prior)
    ensemble, rate = mutate(ensemble, kernel, cfg.chain_len, potential, cfg.seed, cfg.threads)
    potentials = ensemble.potentials
    missing = ~np.isfinite(potentials)
    if np.any(missing):
        potentials = potentials.copy()
        potentials[missing] = evaluate_potentials(potential, ensemble.particles[missing], cfg.threads)

    h = find_next_temperature(ensemble, potentials, cfg.ess_threshold, cfg.bisection_tol, cfg.bisection_maxiter)
    final = h >= 1.0 - ensemble.temperature
    weighted = reweight(ensemble, h, potentials)
    layer_ess = ess(weighted.log_weights)
    # the last increment is the exact remainder
    increment = 1.0 - ensemble.temperature if final else h
    cumulative = 1.0 if final else ensemble.temperature + h

    resampled = resample_systematic(weighted, _stream(cfg.seed, _RESAMPLE, ensemble.layer, 0))
    advanced = replace(resampled, temperature=cumulative, layer=ensemble.layer + 1)
    return advanced, increment, layer_ess, rate


def run_smc(
    cfg: SMCConfig,
    prior: CovarianceSpectrum,
    potential: Callable,
    on_layer: Optional[Callable[[dict], None]] = None,
) -> tuple[ParticleEnsemble, TemperSchedule, list]:
    """Run layers until the cumulative temperature reaches 1.

    Returns the final uniform-weight ensemble, the schedule and one log
    record per layer. `on_layer` receives each record as it is produced.
    """
    schedule = TemperSchedule()
    records = []
    beta = cfg.beta0

    ensemble = _initial_ensemble(prior, cfg, potential)
    while ensemble.temperature < 1.0:
        layer = ensemble.layer
        if layer >= cfg.max_layers:
            raise LayerError(layer, NumericalError(f"exceeded max_layers={cfg.max_layers}"))
        started = time.perf_counter()
        try:
            ensemble, increment, layer_ess, rate = _run_layer(ensemble, beta, cfg, prior, potential)
        except ConfigurationError:
            raise
        except Exception as e:
            raise LayerError(layer, e) from e

        solves = _solves(potential)
        schedule.append(increment, ensemble.temperature, layer_ess, rate, beta, solves)
        record = {
            "layer": layer,
            "h": increment,
            "h_cum": ensemble.temperature,
            "ess": layer_ess,
            "accept_rate": rate,
            "beta": beta,
            "solves_cum": solves,
            "wall_ms": round(1000.0 * (time.perf_counter() - started), 3),
        }
        records.append(record)
        logger.info(
            "Layer %d: h=%.4g h_cum=%.4g ESS=%.1f accept=%.3f beta=%.3g",
            layer, increment, ensemble.temperature, layer_ess, rate, beta,
        )
        if cfg.strategy == "rw" and cfg.chain_len > 0 and rate < 1e-3:
            logger.warning("Random-walk acceptance collapsed to %.2e at layer %d", rate, layer)
        if on_layer is not None:
            on_layer(record)
        if cfg.adapt_beta and cfg.strategy != "gm":
            beta = adapt_beta(beta, rate)

    return ensemble, schedule, records
