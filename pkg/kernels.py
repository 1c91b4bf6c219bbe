"""
Metropolis-Hastings transition kernels on coefficient vectors.

Four proposals share one acceptance framework: random walk (rw), pCN,
pCN with a Gaussian-mixture innovation (pcn-gm) and the Gaussian-mixture
independence draw (gm, accepted unconditionally). All kernels target the
tempered measure exp(-t * Phi(u)) mu_0(du) for a temperature t in [0, 1].

The pcn-gm acceptance needs the ratio of the two product-space mixtures
mu_0(dv)P(v,du) / mu_0(du)P(u,dv). Every component covariance is
block-diagonal in the shared eigenbasis with 2x2 blocks

    V_j[k] = [[lam_k, g lam_k], [g lam_k, b^2 lam_jk + g^2 lam_k]]

(g = sqrt(1 - b^2)), so quadratic forms and determinants are computed per
mode in closed form. Modes where every component equals the prior give the
same factor in numerator and denominator and are skipped.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from config import SMC_CONFIG
from errors import ConfigurationError, NumericalError
from function_space import CovarianceSpectrum, GaussianMixtureSpec, sample_mixture

logger = logging.getLogger(__name__)

KINDS = ("rw", "pcn", "pcn-gm", "gm")

Potential = Callable[[np.ndarray], float]


@dataclass(frozen=True, eq=False)
class KernelConfig:
    kind: str
    beta: float
    prior: CovarianceSpectrum
    mixture: Optional[GaussianMixtureSpec] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown kernel kind '{self.kind}', expected one of {KINDS}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta}")
        if self.kind in ("pcn-gm", "gm") and self.mixture is None:
            raise ConfigurationError(f"kernel '{self.kind}' requires a Gaussian mixture")

    @property
    def gamma(self) -> float:
        # derived on every access so beta^2 + gamma^2 = 1 always holds
        return math.sqrt(1.0 - self.beta**2)

    def with_beta(self, beta: float) -> "KernelConfig":
        return replace(self, beta=beta)

    def with_mixture(self, mixture: GaussianMixtureSpec) -> "KernelConfig":
        return replace(self, mixture=mixture)


@dataclass(frozen=True, eq=False)
class ChainState:
    u: np.ndarray
    phi: float
    accepted: int = 0
    proposed: int = 0

    @property
    def accept_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


def propose_rw(u: np.ndarray, beta: float, prior: CovarianceSpectrum, rng: np.random.Generator) -> np.ndarray:
    return u + beta * np.sqrt(prior.eigenvalues) * rng.standard_normal(u.shape[0])


def propose_pcn(u: np.ndarray, beta: float, prior: CovarianceSpectrum, rng: np.random.Generator) -> np.ndarray:
    gamma = math.sqrt(1.0 - beta**2)
    return gamma * u + beta * np.sqrt(prior.eigenvalues) * rng.standard_normal(u.shape[0])


def accept_pcn(phi_u: float, phi_v: float) -> float:
    return math.exp(min(0.0, phi_u - phi_v))


def propose_pcn_gm(u: np.ndarray, cfg: KernelConfig, rng: np.random.Generator) -> np.ndarray:
    """v = g u + (1 - g) m_j + b xi_j with j ~ Cat(w) and xi_j ~ N(0, C_j)."""
    mix = cfg.mixture
    if mix is None:
        raise ConfigurationError("propose_pcn_gm requires a Gaussian mixture")
    j = rng.choice(mix.num_components, p=mix.weights)
    xi = np.sqrt(mix.eigenvalues[j]) * rng.standard_normal(u.shape[0])
    return cfg.gamma * u + (1.0 - cfg.gamma) * mix.means[j] + cfg.beta * xi


def block_eigen(lam: float, lam_j: float, beta: float) -> tuple[float, float, float, float]:
    """Closed-form eigen-data (t+, t-, eta+, eta-) of one product-space block.

    eta = (1 + g t) lam. The smaller eigenvalue is recovered from the block
    determinant b^2 lam lam_j to avoid cancellation. For beta = 1 the block is
    diagonal and t is reported as +/-inf.
    """
    gamma = math.sqrt(1.0 - beta**2)
    det = beta**2 * lam * lam_j
    if gamma == 0.0:
        return math.inf, -math.inf, max(lam, lam_j), min(lam, lam_j)

    a = beta**2 * (lam_j - lam) / (2.0 * gamma * lam)
    root = math.sqrt(a * a + 1.0)
    if a >= 0:
        t_plus = a + root
        t_minus = -1.0 / t_plus
    else:
        t_minus = a - root
        t_plus = -1.0 / t_minus
    eta_plus = (1.0 + gamma * t_plus) * lam
    return t_plus, t_minus, eta_plus, det / eta_plus


@dataclass(frozen=True)
class ModeBlock:
    """One 2x2 product-space covariance block for mode k and component j."""
    lam: float
    lam_j: float
    beta: float

    @property
    def gamma(self) -> float:
        return math.sqrt(1.0 - self.beta**2)

    def matrix(self) -> np.ndarray:
        g = self.gamma
        return np.array([
            [self.lam, g * self.lam],
            [g * self.lam, self.beta**2 * self.lam_j + g**2 * self.lam],
        ])

    def primed(self) -> np.ndarray:
        """Block of the reversed pair (v, u)."""
        return self.matrix()[::-1, ::-1].copy()

    @property
    def det(self) -> float:
        return self.beta**2 * self.lam * self.lam_j

    def inverse(self) -> np.ndarray:
        (a, b), (_, c) = self.matrix()
        return np.array([[c, -b], [-b, a]]) / self.det

    def eigenvalues(self) -> tuple[float, float]:
        _, _, eta_plus, eta_minus = block_eigen(self.lam, self.lam_j, self.beta)
        return eta_plus, eta_minus

    @property
    def trace(self) -> float:
        return sum(self.eigenvalues())


def product_space_traces(mix: GaussianMixtureSpec, beta: float) -> np.ndarray:
    """Trace of each component's (u, v) covariance, summed over every mode."""
    lam = mix.prior.eigenvalues
    return np.array([
        sum(ModeBlock(float(lam[k]), float(lam_j[k]), beta).trace for k in range(lam.shape[0]))
        for lam_j in mix.eigenvalues
    ])


def _active_modes(mix: GaussianMixtureSpec) -> np.ndarray:
    differs = np.any(mix.eigenvalues != mix.prior.eigenvalues, axis=0)
    return differs | np.any(mix.means != 0.0, axis=0)


def _component_log_terms(
    first: np.ndarray,
    second: np.ndarray,
    mix: GaussianMixtureSpec,
    beta: float,
    modes: np.ndarray,
) -> np.ndarray:
    """log w_j + log N((first, second); [0, (1-g) m_j], V_j) restricted to `modes`."""
    gamma = math.sqrt(1.0 - beta**2)
    lam = mix.prior.eigenvalues[modes]
    lam_j = mix.eigenvalues[:, modes]
    a = lam[None, :]
    b = gamma * lam[None, :]
    c = beta**2 * lam_j + gamma**2 * lam[None, :]
    det = beta**2 * lam[None, :] * lam_j

    x = first[modes][None, :]
    y = second[modes][None, :] - (1.0 - gamma) * mix.means[:, modes]
    quad = (c * x * x - 2.0 * b * x * y + a * y * y) / det

    with np.errstate(divide="ignore"):
        log_w = np.log(mix.weights)
    n_modes = int(np.count_nonzero(modes))
    return log_w - 0.5 * np.sum(quad + np.log(det), axis=1) - n_modes * math.log(2.0 * math.pi)


def _stable_logsumexp(terms: np.ndarray) -> float:
    total = logsumexp(terms)
    if np.isfinite(total):
        return float(total)
    finite = terms[np.isfinite(terms)]
    if finite.size == 0:
        raise NumericalError("every mixture component density is non-finite")
    logger.warning("Mixture density underflow; using the dominant component")
    return float(np.max(finite))


def log_pair_density(
    first: np.ndarray,
    second: np.ndarray,
    mix: GaussianMixtureSpec,
    beta: float,
    modes: Optional[np.ndarray] = None,
) -> float:
    """Log density of the pair (first, second) under mu_0(d first) P(first, d second)."""
    if modes is None:
        modes = np.ones(mix.basis.num_modes, dtype=bool)
    return _stable_logsumexp(_component_log_terms(first, second, mix, beta, modes))


def log_mixture_ratio(u: np.ndarray, v: np.ndarray, cfg: KernelConfig) -> float:
    """log of mu_0(dv)P(v,du) / mu_0(du)P(u,dv) over the modes that differ from the prior."""
    modes = _active_modes(cfg.mixture)
    if not np.any(modes):
        return 0.0
    forward = log_pair_density(u, v, cfg.mixture, cfg.beta, modes)
    backward = log_pair_density(v, u, cfg.mixture, cfg.beta, modes)
    return backward - forward


def log_accept_pcn_gm(
    u: np.ndarray,
    v: np.ndarray,
    phi_u: float,
    phi_v: float,
    cfg: KernelConfig,
    temperature: float = 1.0,
) -> float:
    if cfg.mixture is None:
        raise ConfigurationError("pcn-gm acceptance requires a Gaussian mixture")
    log_ratio = temperature * (phi_u - phi_v) + log_mixture_ratio(u, v, cfg)
    if not np.isfinite(log_ratio):
        raise NumericalError(f"non-finite pcn-gm log acceptance ratio ({log_ratio})")
    return min(0.0, log_ratio)


def _log_accept_rw(u, v, phi_u, phi_v, prior: CovarianceSpectrum, temperature: float) -> float:
    # finite-truncation prior ratio; grows with the number of modes
    prior_term = -0.5 * np.sum((v * v - u * u) / prior.eigenvalues)
    return min(0.0, temperature * (phi_u - phi_v) + prior_term)


def mh_step(
    state: ChainState,
    cfg: KernelConfig,
    potential: Potential,
    rng: np.random.Generator,
    temperature: float = 1.0,
) -> ChainState:
    """One Metropolis-Hastings transition; one potential evaluation unless kind is gm."""
    u = state.u
    if cfg.kind == "gm":
        v = sample_mixture(cfg.mixture, rng).coefficients
        return ChainState(v, math.nan, state.accepted + 1, state.proposed + 1)

    if cfg.kind == "rw":
        v = propose_rw(u, cfg.beta, cfg.prior, rng)
        phi_v = potential(v)
        log_a = _log_accept_rw(u, v, state.phi, phi_v, cfg.prior, temperature)
    elif cfg.kind == "pcn":
        v = propose_pcn(u, cfg.beta, cfg.prior, rng)
        phi_v = potential(v)
        log_a = min(0.0, temperature * (state.phi - phi_v))
    else:
        v = propose_pcn_gm(u, cfg, rng)
        phi_v = potential(v)
        log_a = log_accept_pcn_gm(u, v, state.phi, phi_v, cfg, temperature)

    if math.log(rng.random()) < log_a:
        return ChainState(v, phi_v, state.accepted + 1, state.proposed + 1)
    return ChainState(u, state.phi, state.accepted, state.proposed + 1)


def run_chain(
    state: ChainState,
    cfg: KernelConfig,
    potential: Potential,
    rng: np.random.Generator,
    n_steps: int,
    temperature: float = 1.0,
) -> ChainState:
    for _ in range(n_steps):
        state = mh_step(state, cfg, potential, rng, temperature)
    return state


def adapt_beta(
    beta: float,
    observed_accept_rate: float,
    low: float = SMC_CONFIG["accept_low"],
    high: float = SMC_CONFIG["accept_high"],
) -> float:
    """Double beta above the acceptance window, halve it below; cap at 1."""
    if observed_accept_rate > high:
        beta = 2.0 * beta
    elif observed_accept_rate < low:
        beta = 0.5 * beta
    return min(1.0, beta)
