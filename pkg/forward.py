"""
Forward maps, observation operators and potential functions.

Darcy flow: -div(exp(u) grad w) = f on (0,1)^2, w = 0 on the boundary,
discretized by the 5-point finite-difference stencil with harmonic face
averages of exp(u) and solved by Jacobi-preconditioned conjugate gradients.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sps
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg
from scipy.special import logsumexp

from config import DARCY_CONFIG
from errors import ConfigurationError, NumericalError, ObservationError, SolverError
from function_space import CoeffField, SpectralBasis, synthesize_at

logger = logging.getLogger(__name__)

FieldLike = Union[CoeffField, np.ndarray]
SourceTerm = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]

MEASUREMENT_GRIDS = ("dense10x10", "sparse-line20")


def as_coefficients(u: FieldLike) -> np.ndarray:
    return u.coefficients if isinstance(u, CoeffField) else np.asarray(u, dtype=float)


@dataclass(frozen=True)
class DarcyConfig:
    resolution: int = DARCY_CONFIG["inverse_resolution"]
    fine_resolution: int = DARCY_CONFIG["fine_resolution"]
    source: SourceTerm = DARCY_CONFIG["source"]

    def __post_init__(self):
        if self.resolution < 8 or self.fine_resolution < 8:
            raise ConfigurationError("Darcy resolutions must be at least 8")
        if self.fine_resolution <= self.resolution:
            raise ConfigurationError(
                f"fine_resolution ({self.fine_resolution}) must exceed "
                f"resolution ({self.resolution}) to avoid the inverse crime"
            )


@dataclass(frozen=True, eq=False)
class ObservationSetup:
    points: np.ndarray
    noise_std: float
    data: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        data = np.asarray(self.data, dtype=float).ravel()
        if np.any(points < 0.0) or np.any(points > 1.0):
            raise ObservationError("observation points must lie in the closed unit domain")
        if not self.noise_std > 0:
            raise ObservationError(f"noise_std must be positive, got {self.noise_std}")
        if points.shape[0] != data.shape[0]:
            raise ObservationError(
                f"{points.shape[0]} observation points but {data.shape[0]} data values"
            )
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "data", data)

    @property
    def num_data(self) -> int:
        return self.data.shape[0]


def _darcy_matrix(log_k: np.ndarray, n: int) -> sps.csr_matrix:
    """5-point operator on the (n-1)^2 interior nodes, harmonic face averages."""
    k = np.exp(log_k)
    kx = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
    ky = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
    m = n - 1
    h2 = (1.0 / n) ** 2

    west, east = kx[0:m, 1:n], kx[1:n, 1:n]
    south, north = ky[1:n, 0:m], ky[1:n, 1:n]
    diagonal = (west + east + south + north).ravel() / h2

    # couplings along y stay inside each row of the interior block
    north_coupling = np.zeros((m, m))
    north_coupling[:, :-1] = north[:, :-1]
    y_off = -north_coupling.ravel()[:-1] / h2
    x_off = -east[:-1, :].ravel() / h2

    return sps.diags(
        [diagonal, y_off, y_off, x_off, x_off],
        [0, 1, -1, m, -m],
        shape=(m * m, m * m),
        format="csr",
    )


def _source_vector(source: SourceTerm, nodes: np.ndarray) -> np.ndarray:
    n = nodes.shape[0] - 1
    if not callable(source):
        return np.full((n - 1) ** 2, float(source))
    x, y = np.meshgrid(nodes[1:n], nodes[1:n], indexing="ij")
    values = np.broadcast_to(np.asarray(source(x, y), dtype=float), x.shape)
    if not np.all(np.isfinite(values)):
        raise NumericalError("source term is not finite on the solver grid")
    return values.ravel().copy()


def darcy_solve(u: CoeffField, cfg: DarcyConfig, resolution: Optional[int] = None) -> np.ndarray:
    """Nodal solution w on the (n+1) x (n+1) grid including the zero boundary."""
    n = resolution or cfg.resolution
    nodes = np.linspace(0.0, 1.0, n + 1)
    log_k = synthesize_at(u, nodes)
    if not np.all(np.isfinite(log_k)):
        raise NumericalError("log-permeability is not finite on the solver grid")

    matrix = _darcy_matrix(log_k, n)
    rhs = _source_vector(cfg.source, nodes)
    target = DARCY_CONFIG["cg_rtol"]
    maxiter = DARCY_CONFIG["cg_maxiter_factor"] * matrix.shape[0]
    preconditioner = sps.diags(1.0 / matrix.diagonal())

    solution, info = cg(matrix, rhs, rtol=0.1 * target, maxiter=maxiter, M=preconditioner)
    rhs_norm = np.linalg.norm(rhs)
    residual = np.linalg.norm(rhs - matrix @ solution) / rhs_norm if rhs_norm > 0 else 0.0
    if info != 0 or not np.isfinite(residual) or residual > target:
        raise SolverError(
            "Darcy linear solve failed",
            {"resolution": n, "cg_info": info, "relative_residual": float(residual), "maxiter": maxiter},
        )

    w = np.zeros((n + 1, n + 1))
    w[1:n, 1:n] = solution.reshape(n - 1, n - 1)
    return w


def observe(w: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a nodal grid function at the given points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise ObservationError("observation point outside the unit square")
    n = w.shape[0] - 1
    nodes = np.linspace(0.0, 1.0, n + 1)
    interpolator = RegularGridInterpolator((nodes, nodes), w, method="linear")
    return interpolator(points)


def measurement_grid(kind: str) -> np.ndarray:
    """Measurement locations of the dense and sparse Darcy experiments."""
    if kind == "dense10x10":
        ticks = (9.0 + 98.0 * np.arange(10)) / 900.0
        return np.array([(x, y) for x in ticks for y in ticks])
    if kind == "sparse-line20":
        i = np.arange(1, 21)
        return np.stack([np.full(20, 0.8), 0.2 + 0.03 * i], axis=1)
    raise ObservationError(f"unknown measurement grid '{kind}', expected one of {MEASUREMENT_GRIDS}")


def multimodal_modals(basis: SpectralBasis, waves: Sequence[float]) -> list[CoeffField]:
    """Modes sign(w) cos(|w| pi x) expressed in the 1D cosine basis."""
    if basis.domain_dim != 1:
        raise ConfigurationError("the four-modal target lives on the 1D basis")
    modals = []
    for wave in waves:
        k = int(abs(wave))
        if k >= basis.num_modes:
            raise ConfigurationError(f"mode {k} not represented by a {basis.num_modes}-mode basis")
        coefficients = np.zeros(basis.num_modes)
        # cos(k pi x) = phi_k / sqrt(2) for k >= 1
        coefficients[k] = np.sign(wave) * (1.0 if k == 0 else 1.0 / np.sqrt(2.0))
        modals.append(CoeffField(basis, coefficients))
    return modals


def multimodal_potential(u: FieldLike, modals: Sequence[CoeffField], sigma: float) -> float:
    """Phi(u) = -log sum_i exp(-||u - f_i||^2 / (2 sigma^2))."""
    c = as_coefficients(u)
    centers = np.stack([f.coefficients for f in modals])
    sq = np.sum((c[None, :] - centers) ** 2, axis=1)
    return float(-logsumexp(-sq / (2.0 * sigma**2)))


class PotentialEvaluator:
    """Maps a field to Phi(u) and counts forward evaluations.

    Supported tags: 'darcy' (PDE-backed), 'linear' (identity on the leading
    modes) and 'multimodal' (analytic four-modal likelihood).
    """

    def __init__(
        self,
        tag: str,
        basis: SpectralBasis,
        observations: Optional[ObservationSetup] = None,
        forward: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        direct: Optional[Callable[[np.ndarray], float]] = None,
    ):
        if (forward is None) == (direct is None):
            raise ConfigurationError("an evaluator needs exactly one of a forward map or a direct potential")
        if forward is not None and observations is None:
            raise ConfigurationError("a forward-map evaluator needs observations")
        self.tag = tag
        self.basis = basis
        self.observations = observations
        self._forward = forward
        self._direct = direct
        self._solves = 0
        self._lock = threading.Lock()

    @property
    def solves(self) -> int:
        return self._solves

    def _count(self):
        with self._lock:
            self._solves += 1

    def forward(self, u: FieldLike) -> np.ndarray:
        if self._forward is None:
            raise ConfigurationError(f"'{self.tag}' evaluator has no forward map")
        predictions = self._forward(as_coefficients(u))
        self._count()
        return predictions

    def __call__(self, u: FieldLike) -> float:
        if self._direct is not None:
            value = self._direct(as_coefficients(u))
            self._count()
            return value
        residual = self.forward(u) - self.observations.data
        return float(0.5 * residual @ residual / self.observations.noise_std**2)


def potential(ev: PotentialEvaluator, u: FieldLike) -> float:
    return ev(u)


def darcy_evaluator(basis: SpectralBasis, cfg: DarcyConfig, observations: ObservationSetup) -> PotentialEvaluator:
    def forward(c: np.ndarray) -> np.ndarray:
        return observe(darcy_solve(CoeffField(basis, c), cfg), observations.points)

    return PotentialEvaluator("darcy", basis, observations, forward=forward)


def linear_evaluator(basis: SpectralBasis, observations: ObservationSetup) -> PotentialEvaluator:
    """Identity forward map on the leading `observations.num_data` coefficients."""
    n_obs = observations.num_data
    if n_obs > basis.num_modes:
        raise ConfigurationError("more observed modes than basis modes")
    return PotentialEvaluator("linear", basis, observations, forward=lambda c: c[:n_obs].copy())


def multimodal_evaluator(basis: SpectralBasis, modals: Sequence[CoeffField], sigma: float) -> PotentialEvaluator:
    return PotentialEvaluator(
        "multimodal", basis, direct=lambda c: multimodal_potential(c, modals, sigma)
    )


def conjugate_posterior(
    prior_eigenvalues: np.ndarray, noise_std: float, data: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode posterior mean and variance for the identity forward map."""
    data = np.asarray(data, dtype=float)
    lam = np.asarray(prior_eigenvalues, dtype=float)[: data.shape[0]]
    variance = 1.0 / (1.0 / lam + 1.0 / noise_std**2)
    return variance * data / noise_std**2, variance


def synthesize_data(
    truth: CoeffField,
    cfg: DarcyConfig,
    points: np.ndarray,
    noise_pct: float,
    rng: np.random.Generator,
) -> ObservationSetup:
    """Noisy point observations of the fine-mesh Darcy solution."""
    if cfg.fine_resolution <= cfg.resolution:
        raise ConfigurationError("data must be generated on a mesh finer than the inverse mesh")
    if noise_pct < 0:
        raise ConfigurationError(f"noise_pct must be nonnegative, got {noise_pct}")

    clean = observe(darcy_solve(truth, cfg, resolution=cfg.fine_resolution), points)
    scale = float(np.max(np.abs(clean)))
    sigma = noise_pct * scale
    if sigma > 0:
        data = clean + sigma * rng.standard_normal(clean.shape[0])
    else:
        data = clean.copy()
        sigma = DARCY_CONFIG["zero_noise_sigma_pct"] * scale
    logger.info("Synthesized %d observations on a %d^2 mesh, sigma=%.4g", data.shape[0], cfg.fine_resolution, sigma)
    return ObservationSetup(points, sigma, data)
