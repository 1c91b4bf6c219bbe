"""
Gaussian mixture estimation in the prior eigenbasis.

EM runs on the leading `truncation` coefficients with per-component
covariances diagonal in the eigenbasis. Every mode beyond the truncation
keeps the prior eigenvalue and a zero mean, so each fitted component is
equivalent to the prior by construction.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from config import MIXTURE_CONFIG
from errors import ConfigurationError, MixtureFitError
from function_space import CovarianceSpectrum, GaussianMixtureSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    truncation: int = MIXTURE_CONFIG["truncation"]
    components: int = MIXTURE_CONFIG["components"]
    max_iter: int = MIXTURE_CONFIG["max_iter"]
    var_floor: float = MIXTURE_CONFIG["var_floor"]
    tol: float = MIXTURE_CONFIG["tol"]
    seed: int = 0
    # BIC sweep over 1..max_components when set
    max_components: Optional[int] = MIXTURE_CONFIG["bic_max_components"]

    def __post_init__(self):
        if self.truncation < 1:
            raise ConfigurationError(f"truncation must be >= 1, got {self.truncation}")
        if self.components < 1:
            raise ConfigurationError(f"components must be >= 1, got {self.components}")
        if not self.var_floor > 0:
            raise ConfigurationError(f"var_floor must be positive, got {self.var_floor}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.max_components is not None and self.max_components < 1:
            raise ConfigurationError("max_components must be >= 1 when set")


def _samples_of(ensemble) -> np.ndarray:
    samples = np.asarray(getattr(ensemble, "particles", ensemble), dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise MixtureFitError("mixture fit needs a non-empty (N, K) coefficient array")
    if not np.all(np.isfinite(samples)):
        raise MixtureFitError("ensemble contains non-finite coefficients")
    return samples


def _log_component_densities(x: np.ndarray, weights, means, variances) -> np.ndarray:
    """(N, M) array of log w_j + log N(x_n; m_j, diag v_j)."""
    diff = x[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    log_norm = np.sum(np.log(2.0 * math.pi * variances), axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] - 0.5 * (quad + log_norm[None, :])


def _fitted_view(samples: np.ndarray, mix: GaussianMixtureSpec):
    k = mix.fit_truncation
    return samples[:, :k], mix.means[:, :k], mix.eigenvalues[:, :k]


def em_responsibilities(samples: np.ndarray, mix: GaussianMixtureSpec) -> np.ndarray:
    """Posterior component probabilities, rows summing to 1."""
    x, means, variances = _fitted_view(np.atleast_2d(samples), mix)
    log_p = _log_component_densities(x, mix.weights, means, variances)
    return np.exp(log_p - logsumexp(log_p, axis=1, keepdims=True))


def mixture_loglik(samples: np.ndarray, mix: GaussianMixtureSpec) -> float:
    """Sum of log mixture densities over the fitted coordinates."""
    x, means, variances = _fitted_view(np.atleast_2d(samples), mix)
    log_p = _log_component_densities(x, mix.weights, means, variances)
    return float(np.sum(logsumexp(log_p, axis=1)))


def _m_step(x, resp, floor):
    counts = resp.sum(axis=0)
    weights = counts / counts.sum()
    safe = np.maximum(counts, np.finfo(float).tiny)
    means = (resp.T @ x) / safe[:, None]
    diff = x[:, None, :] - means[None, :, :]
    variances = np.einsum("nj,njk->jk", resp, diff * diff) / safe[:, None]
    return weights, means, np.maximum(variances, floor[None, :])


def _initial_responsibilities(x: np.ndarray, components: int, seed: int) -> np.ndarray:
    centers, _ = kmeans_plusplus(x, n_clusters=components, random_state=seed)
    distances = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(distances, axis=1)
    resp = np.zeros((x.shape[0], components))
    resp[np.arange(x.shape[0]), labels] = 1.0
    return resp


def _run_em(x: np.ndarray, components: int, floor: np.ndarray, cfg: FitConfig):
    n = x.shape[0]
    resp = _initial_responsibilities(x, components, cfg.seed)
    weights, means, variances = _m_step(x, resp, floor)
    trace = []
    previous = -math.inf

    for iteration in range(cfg.max_iter):
        collapsed = weights < 1.0 / (10.0 * n)
        if np.any(collapsed):
            if np.all(collapsed):
                raise MixtureFitError("every mixture component collapsed")
            logger.warning(
                "Dropping %d collapsed mixture component(s) with weight below 1/(10N)",
                int(collapsed.sum()),
            )
            keep = ~collapsed
            weights = weights[keep] / weights[keep].sum()
            means, variances = means[keep], variances[keep]
            previous = -math.inf

        log_p = _log_component_densities(x, weights, means, variances)
        row_norm = logsumexp(log_p, axis=1, keepdims=True)
        loglik = float(np.sum(row_norm))
        if not np.isfinite(loglik):
            raise MixtureFitError(f"non-finite log-likelihood at EM iteration {iteration}")
        trace.append(loglik)

        if np.isfinite(previous) and abs(loglik - previous) < cfg.tol * abs(previous):
            break
        previous = loglik
        weights, means, variances = _m_step(x, np.exp(log_p - row_norm), floor)

    return weights, means, variances, trace


def _assemble(weights, means, variances, prior: CovarianceSpectrum, k_fit: int, trace) -> GaussianMixtureSpec:
    m = weights.shape[0]
    k = prior.basis.num_modes
    full_means = np.zeros((m, k))
    full_means[:, :k_fit] = means
    full_eigs = np.tile(prior.eigenvalues, (m, 1))
    full_eigs[:, :k_fit] = variances
    return GaussianMixtureSpec(
        weights / weights.sum(), full_means, full_eigs, prior, k_fit, loglik_trace=tuple(trace)
    )


def fit_mixture(ensemble, prior: CovarianceSpectrum, cfg: FitConfig = FitConfig()) -> GaussianMixtureSpec:
    """Fit `cfg.components` components (or sweep by BIC) to uniform-weight particles."""
    if cfg.max_components is not None:
        best, _ = select_components(ensemble, prior, cfg)
        return best

    samples = _samples_of(ensemble)
    if samples.shape[1] != prior.basis.num_modes:
        raise ConfigurationError("ensemble and prior live on different bases")
    k_fit = min(cfg.truncation, samples.shape[1])
    components = min(cfg.components, samples.shape[0])
    if components < cfg.components:
        logger.warning("Only %d particles; fitting %d components", samples.shape[0], components)

    x = samples[:, :k_fit]
    floor = cfg.var_floor * prior.eigenvalues[:k_fit]
    weights, means, variances, trace = _run_em(x, components, floor, cfg)
    logger.debug("EM finished after %d iterations, loglik=%.6g", len(trace), trace[-1])
    return _assemble(weights, means, variances, prior, k_fit, trace)


def bic(mix: GaussianMixtureSpec, samples: np.ndarray) -> float:
    n_params = (mix.num_components - 1) + 2 * mix.num_components * mix.fit_truncation
    return -2.0 * mixture_loglik(samples, mix) + n_params * math.log(samples.shape[0])


def select_components(
    ensemble, prior: CovarianceSpectrum, cfg: FitConfig
) -> tuple[GaussianMixtureSpec, dict[int, float]]:
    """BIC sweep over M = 1..max_components; returns the best fit and all scores."""
    samples = _samples_of(ensemble)
    upper = cfg.max_components or cfg.components
    scores = {}
    best, best_score = None, math.inf
    for m in range(1, upper + 1):
        candidate = fit_mixture(samples, prior, _fixed(cfg, m))
        scores[m] = bic(candidate, samples)
        if scores[m] < best_score:
            best, best_score = candidate, scores[m]
    logger.info("BIC selected %d component(s)", best.num_components)
    return best, scores


def _fixed(cfg: FitConfig, components: int) -> FitConfig:
    return FitConfig(
        truncation=cfg.truncation,
        components=components,
        max_iter=cfg.max_iter,
        var_floor=cfg.var_floor,
        tol=cfg.tol,
        seed=cfg.seed,
        max_components=None,
    )
