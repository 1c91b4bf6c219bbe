"""
Spectral representation of functions and Gaussian (mixture) measures on
L^2 of [0,1] or (0,1)^2.

Fields are stored as coefficients in the eigenbasis of the prior covariance.
The basis is the homogeneous Neumann cosine basis: phi_0 = 1 and
phi_k = sqrt(2) cos(k pi x) per axis, tensorized in 2D. Grid values live on the
uniform midpoint grid, where the discrete L^2 inner product reproduces the
continuous one exactly for modes below the grid size.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from config import PRIOR_CONFIG
from errors import ConfigurationError, PreconditionError

logger = logging.getLogger(__name__)


def _neumann_functions(k: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cosine eigenfunctions, shape (len(x), len(k))."""
    k = np.asarray(k, dtype=float)
    x = np.asarray(x, dtype=float)
    values = np.sqrt(2.0) * np.cos(np.pi * np.outer(x, k))
    values[:, k == 0] = 1.0
    return values


def _neumann_eigenvalues(k: np.ndarray) -> np.ndarray:
    return (np.pi * np.asarray(k, dtype=float)) ** 2


# Boundary-condition hook: name -> (axis eigenfunctions, axis Laplacian eigenvalues)
AXIS_BASES: dict[str, tuple[Callable, Callable]] = {
    "neumann": (_neumann_functions, _neumann_eigenvalues),
}


@dataclass(frozen=True)
class SpectralBasis:
    """Tensor cosine basis truncated at `modes_per_axis` modes per axis."""
    domain_dim: int
    modes_per_axis: int
    grid_size: int
    boundary: str = "neumann"

    def __post_init__(self):
        if self.domain_dim not in (1, 2):
            raise ConfigurationError(f"domain_dim must be 1 or 2, got {self.domain_dim}")
        if self.modes_per_axis < 1:
            raise ConfigurationError(f"modes_per_axis must be >= 1, got {self.modes_per_axis}")
        if self.grid_size < self.modes_per_axis:
            raise ConfigurationError(
                f"grid_size ({self.grid_size}) must be >= modes_per_axis ({self.modes_per_axis})"
            )
        if self.boundary not in AXIS_BASES:
            raise ConfigurationError(
                f"unknown boundary '{self.boundary}', expected one of {sorted(AXIS_BASES)}"
            )

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Per-axis wavenumbers of each mode, shape (K, domain_dim).

        2D modes are ordered by Laplacian eigenvalue, ties by (k1, k2).
        """
        k = np.arange(self.modes_per_axis)
        if self.domain_dim == 1:
            index = k[:, None]
        else:
            k1, k2 = np.meshgrid(k, k, indexing="ij")
            k1, k2 = k1.ravel(), k2.ravel()
            order = np.lexsort((k2, k1, k1**2 + k2**2))
            index = np.stack([k1[order], k2[order]], axis=1)
        index.setflags(write=False)
        return index

    @property
    def num_modes(self) -> int:
        return self.modes_per_axis ** self.domain_dim

    @cached_property
    def rho(self) -> np.ndarray:
        """Laplacian eigenvalues in mode order."""
        _, axis_eigenvalues = AXIS_BASES[self.boundary]
        rho = axis_eigenvalues(self.mode_index).sum(axis=1)
        rho.setflags(write=False)
        return rho

    @cached_property
    def grid_points(self) -> np.ndarray:
        """Midpoint grid along one axis."""
        return (np.arange(self.grid_size) + 0.5) / self.grid_size

    def axis_functions(self, x: np.ndarray) -> np.ndarray:
        """Axis eigenfunctions at coordinates x, shape (len(x), modes_per_axis)."""
        functions, _ = AXIS_BASES[self.boundary]
        return functions(np.arange(self.modes_per_axis), x)

    @cached_property
    def axis_matrix(self) -> np.ndarray:
        matrix = self.axis_functions(self.grid_points)
        matrix.setflags(write=False)
        return matrix

    def gram_deviation(self) -> float:
        """Max deviation of the discrete Gram matrix from the identity."""
        a = self.axis_matrix
        gram = a.T @ a / self.grid_size
        return float(np.max(np.abs(gram - np.eye(self.modes_per_axis))))

    def to_dict(self) -> dict:
        return {
            "domain_dim": self.domain_dim,
            "modes_per_axis": self.modes_per_axis,
            "grid_size": self.grid_size,
            "boundary": self.boundary,
        }


@dataclass(frozen=True, eq=False)
class CovarianceSpectrum:
    """Eigenvalues of a covariance operator diagonal in `basis`."""
    basis: SpectralBasis
    eigenvalues: np.ndarray

    def __post_init__(self):
        eigenvalues = np.array(self.eigenvalues, dtype=float)
        if eigenvalues.shape != (self.basis.num_modes,):
            raise ConfigurationError(
                f"expected {self.basis.num_modes} eigenvalues, got shape {eigenvalues.shape}"
            )
        if not np.all(eigenvalues > 0):
            raise PreconditionError("covariance eigenvalues must be strictly positive")
        eigenvalues.setflags(write=False)
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def tail_ratio(self) -> float:
        return float(self.eigenvalues[-1] / self.eigenvalues[0])

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))


@dataclass(frozen=True, eq=False)
class CoeffField:
    """A function given by its coefficients in the basis."""
    basis: SpectralBasis
    coefficients: np.ndarray

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=float)
        if coefficients.shape != (self.basis.num_modes,):
            raise PreconditionError(
                f"expected {self.basis.num_modes} coefficients, got shape {coefficients.shape}"
            )
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def zeros(cls, basis: SpectralBasis) -> "CoeffField":
        return cls(basis, np.zeros(basis.num_modes))

    def l2_norm(self) -> float:
        """L^2 norm, equal to the coefficient norm by Parseval."""
        return float(np.linalg.norm(self.coefficients))


@dataclass(frozen=True, eq=False)
class GaussianMeasureSpec:
    mean: CoeffField
    spectrum: CovarianceSpectrum

    def __post_init__(self):
        if self.mean.basis != self.spectrum.basis:
            raise ConfigurationError("mean and covariance must share one basis")

    @property
    def basis(self) -> SpectralBasis:
        return self.spectrum.basis


@dataclass(frozen=True, eq=False)
class GaussianMixtureSpec:
    """Mixture sum_j w_j N(m_j, C_j) with every C_j diagonal in the prior basis.

    Modes at or beyond `fit_truncation` carry the prior eigenvalue and a zero
    mean in every component, so each component is equivalent to the prior.
    """
    weights: np.ndarray
    means: np.ndarray
    eigenvalues: np.ndarray
    prior: CovarianceSpectrum
    fit_truncation: int
    loglik_trace: tuple = field(default=())

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        means = np.atleast_2d(np.array(self.means, dtype=float))
        eigenvalues = np.atleast_2d(np.array(self.eigenvalues, dtype=float))
        k = self.prior.basis.num_modes
        m = weights.shape[0]

        if weights.ndim != 1 or m < 1:
            raise ConfigurationError("mixture needs a 1D array of at least one weight")
        if means.shape != (m, k) or eigenvalues.shape != (m, k):
            raise ConfigurationError(
                f"means and eigenvalues must have shape ({m}, {k}), "
                f"got {means.shape} and {eigenvalues.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"mixture weights must be nonnegative and sum to 1, got {weights.sum()!r}")
        if not np.all(eigenvalues > 0):
            raise PreconditionError("component eigenvalues must be strictly positive")
        if not 0 <= self.fit_truncation <= k:
            raise ConfigurationError(f"fit_truncation must lie in [0, {k}]")

        tail = slice(self.fit_truncation, None)
        if np.any(eigenvalues[:, tail] != self.prior.eigenvalues[tail]) or np.any(means[:, tail] != 0.0):
            raise ConfigurationError("mixture tail must equal the prior beyond fit_truncation")

        for array in (weights, means, eigenvalues):
            array.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def basis(self) -> SpectralBasis:
        return self.prior.basis

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def mean_coefficients(self) -> np.ndarray:
        return self.weights @ self.means

    def eigenvalue_ratios(self) -> np.ndarray:
        return self.eigenvalues / self.prior.eigenvalues

    def component(self, j: int) -> GaussianMeasureSpec:
        return GaussianMeasureSpec(
            CoeffField(self.basis, self.means[j]),
            CovarianceSpectrum(self.basis, self.eigenvalues[j]),
        )

    @classmethod
    def from_prior(cls, prior: CovarianceSpectrum) -> "GaussianMixtureSpec":
        """Single zero-mean component equal to the prior."""
        k = prior.basis.num_modes
        return cls(np.ones(1), np.zeros((1, k)), prior.eigenvalues[None, :], prior, fit_truncation=0)


def make_prior_basis(
    domain_dim: int,
    modes_per_axis: int,
    alpha: float,
    power: int,
    grid_size: Optional[int] = None,
    boundary: str = None,
) -> tuple[SpectralBasis, CovarianceSpectrum]:
    """Basis and spectrum of C = (I - alpha * Laplacian)^(-power)."""
    if modes_per_axis < 1:
        raise ConfigurationError(f"modes_per_axis must be >= 1, got {modes_per_axis}")
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if int(power) != power or power < 1:
        raise ConfigurationError(f"power must be a positive integer, got {power}")

    basis = SpectralBasis(
        domain_dim=domain_dim,
        modes_per_axis=modes_per_axis,
        grid_size=grid_size or 2 * modes_per_axis,
        boundary=boundary or PRIOR_CONFIG["boundary"],
    )
    deviation = basis.gram_deviation()
    if deviation > PRIOR_CONFIG["orthonormality_tol"]:
        raise ConfigurationError(f"basis not orthonormal on its grid (Gram deviation {deviation:.2e})")

    spectrum = CovarianceSpectrum(basis, (1.0 + alpha * basis.rho) ** (-float(power)))
    if spectrum.tail_ratio > PRIOR_CONFIG["tail_warning_ratio"]:
        logger.warning(
            "Prior truncated early: lambda_K / lambda_1 = %.3g exceeds %.0e",
            spectrum.tail_ratio, PRIOR_CONFIG["tail_warning_ratio"],
        )
    return basis, spectrum


def zero_mean(spectrum: CovarianceSpectrum) -> GaussianMeasureSpec:
    return GaussianMeasureSpec(CoeffField.zeros(spectrum.basis), spectrum)


def sample_gaussian(spec: GaussianMeasureSpec, rng: np.random.Generator) -> CoeffField:
    """c_k = mean_k + sqrt(lambda_k) xi_k."""
    eigenvalues = spec.spectrum.eigenvalues
    if not np.all(eigenvalues > 0):
        raise PreconditionError("sample_gaussian requires strictly positive eigenvalues")
    xi = rng.standard_normal(eigenvalues.shape[0])
    return CoeffField(spec.basis, spec.mean.coefficients + np.sqrt(eigenvalues) * xi)


def sample_mixture(mix: GaussianMixtureSpec, rng: np.random.Generator) -> CoeffField:
    j = rng.choice(mix.num_components, p=mix.weights)
    return sample_gaussian(mix.component(j), rng)


def _coefficient_matrix(basis: SpectralBasis, coefficients: np.ndarray) -> np.ndarray:
    matrix = np.zeros((basis.modes_per_axis, basis.modes_per_axis))
    matrix[basis.mode_index[:, 0], basis.mode_index[:, 1]] = coefficients
    return matrix


def synthesize_at(u: CoeffField, axis_points: np.ndarray) -> np.ndarray:
    """Field values on the tensor grid built from `axis_points` on every axis."""
    basis = u.basis
    a = basis.axis_functions(axis_points)
    if basis.domain_dim == 1:
        return a @ u.coefficients
    return a @ _coefficient_matrix(basis, u.coefficients) @ a.T


def synthesize(u: CoeffField) -> np.ndarray:
    """Grid values on the basis midpoint grid."""
    return synthesize_at(u, u.basis.grid_points)


def analyze(values: np.ndarray, basis: SpectralBasis) -> CoeffField:
    """Midpoint-quadrature projection of grid values onto the basis."""
    values = np.asarray(values, dtype=float)
    expected = (basis.grid_size,) * basis.domain_dim
    if values.shape != expected:
        raise PreconditionError(f"grid values must have shape {expected}, got {values.shape}")

    a = basis.axis_matrix
    n = basis.grid_size
    if basis.domain_dim == 1:
        return CoeffField(basis, a.T @ values / n)
    matrix = a.T @ values @ a / n**2
    return CoeffField(basis, matrix[basis.mode_index[:, 0], basis.mode_index[:, 1]])


def grid_l2_norm(values: np.ndarray) -> float:
    """Midpoint-rule L^2 norm on the unit interval or square."""
    return math.sqrt(float(np.mean(np.asarray(values) ** 2)))


def embed(u: CoeffField, target: SpectralBasis) -> CoeffField:
    """Transfer coefficients to another basis by matching wavenumbers."""
    if target.domain_dim != u.basis.domain_dim or target.boundary != u.basis.boundary:
        raise ConfigurationError("embed needs bases of the same dimension and boundary type")
    positions = {tuple(k): i for i, k in enumerate(target.mode_index)}
    out = np.zeros(target.num_modes)
    for source_pos, k in enumerate(u.basis.mode_index):
        target_pos = positions.get(tuple(k))
        if target_pos is not None:
            out[target_pos] = u.coefficients[source_pos]
    return CoeffField(target, out)
