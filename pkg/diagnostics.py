"""
Posterior diagnostics: marginal densities, TV distances, K-means mode
analysis, error metrics, temperature-curve comparisons and solve accounting.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import gaussian_kde, norm
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from config import DIAGNOSTICS_CONFIG
from errors import ConfigurationError, PreconditionError
from forward import FieldLike, as_coefficients
from function_space import CoeffField, SpectralBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MarginalDensity:
    mode: int
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float = float("nan")

    def integral(self) -> float:
        return float(trapezoid(self.density, self.grid))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"mode": self.mode, "x": self.grid, "density": self.density})


@dataclass(frozen=True, eq=False)
class ClusterReport:
    count: int
    means: list
    member_counts: np.ndarray
    labels: np.ndarray
    inertia: float
    misfits: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for j, mean in enumerate(self.means):
            row = {"cluster": j, "members": int(self.member_counts[j])}
            if self.misfits is not None:
                row["misfit"] = float(self.misfits[j])
            row.update({f"c{k}": value for k, value in enumerate(mean.coefficients)})
            rows.append(row)
        return pd.DataFrame(rows)


def silverman_bandwidth(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        return 0.0
    return float(1.06 * np.std(samples, ddof=1) * samples.size ** (-0.2))


def _default_grid(samples: np.ndarray, bandwidth: float, points: int) -> np.ndarray:
    pad = 4.0 * bandwidth if bandwidth > 0 else 1.0
    return np.linspace(samples.min() - pad, samples.max() + pad, points)


def kde_marginal(
    samples: np.ndarray,
    grid: Optional[np.ndarray] = None,
    mode: int = 0,
    points: int = DIAGNOSTICS_CONFIG["kde_grid_points"],
) -> MarginalDensity:
    """Gaussian KDE with Silverman bandwidth, renormalized on the grid."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise PreconditionError("kde_marginal needs at least one sample")
    bandwidth = silverman_bandwidth(samples)
    if grid is None:
        grid = _default_grid(samples, bandwidth, points)
    grid = np.asarray(grid, dtype=float)

    if bandwidth > 0:
        # gaussian_kde scales a scalar bw_method by the sample std
        kde = gaussian_kde(samples, bw_method=1.06 * samples.size ** (-0.2))
        density = kde(grid)
    else:
        # identical samples: narrow kernel a couple of grid cells wide
        bandwidth = 2.0 * float(np.min(np.diff(grid)))
        density = norm.pdf(grid, loc=samples[0], scale=bandwidth)

    total = trapezoid(density, grid)
    if not total > 0:
        raise PreconditionError(f"density of mode {mode} has no mass on the grid")
    return MarginalDensity(mode, grid, density / total, bandwidth)


def tv_distance(p: MarginalDensity, q: MarginalDensity) -> float:
    """0.5 * integral |p - q| on the union of both grids."""
    grid = np.union1d(p.grid, q.grid)
    p_values = np.interp(grid, p.grid, p.density, left=0.0, right=0.0)
    q_values = np.interp(grid, q.grid, q.density, left=0.0, right=0.0)
    return float(np.clip(0.5 * trapezoid(np.abs(p_values - q_values), grid), 0.0, 1.0))


def marginal_tv_table(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    modes: int = DIAGNOSTICS_CONFIG["tv_modes"],
    points: int = DIAGNOSTICS_CONFIG["kde_grid_points"],
) -> pd.DataFrame:
    """Per-mode TV distance between the KDE marginals of two ensembles."""
    modes = min(modes, samples_a.shape[1], samples_b.shape[1])
    rows = []
    for k in range(modes):
        pooled = np.concatenate([samples_a[:, k], samples_b[:, k]])
        grid = _default_grid(pooled, max(silverman_bandwidth(pooled), 1e-12), points)
        p = kde_marginal(samples_a[:, k], grid, mode=k)
        q = kde_marginal(samples_b[:, k], grid, mode=k)
        rows.append({"mode": k, "tv": tv_distance(p, q)})
    return pd.DataFrame(rows)


def _leading(particles: np.ndarray, truncation: int) -> np.ndarray:
    return np.asarray(particles, dtype=float)[:, : min(truncation, particles.shape[1])]


def kmeans_cluster(
    ensemble,
    k: int,
    seed: int = 0,
    truncation: int = DIAGNOSTICS_CONFIG["cluster_truncation"],
    misfit: Optional[Callable[[CoeffField], float]] = None,
    basis: Optional[SpectralBasis] = None,
) -> ClusterReport:
    """K-means++ / Lloyd on the leading coefficients; means use all coefficients."""
    particles = np.asarray(getattr(ensemble, "particles", ensemble), dtype=float)
    basis = basis or getattr(ensemble, "basis", None)
    if basis is None:
        raise ConfigurationError("kmeans_cluster needs a basis to build cluster mean fields")
    if not 1 <= k <= particles.shape[0]:
        raise ConfigurationError(f"cluster count must lie in [1, {particles.shape[0]}], got {k}")

    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=DIAGNOSTICS_CONFIG["kmeans_max_iter"],
        algorithm="lloyd",
        random_state=seed,
    ).fit(_leading(particles, truncation))
    # empty clusters are dropped and the remaining labels renumbered
    used, labels = np.unique(model.labels_, return_inverse=True)
    if used.shape[0] < k:
        logger.warning("K-means left %d of %d clusters empty; dropping them", k - used.shape[0], k)
    counts = np.bincount(labels, minlength=used.shape[0])
    means = [CoeffField(basis, particles[labels == j].mean(axis=0)) for j in range(used.shape[0])]
    misfits = np.array([misfit(m) for m in means]) if misfit is not None else None
    return ClusterReport(used.shape[0], means, counts, labels, float(model.inertia_), misfits)


def select_cluster_count(
    ensemble,
    k_range: Sequence[int] = DIAGNOSTICS_CONFIG["silhouette_range"],
    seed: int = 0,
    truncation: int = DIAGNOSTICS_CONFIG["cluster_truncation"],
) -> tuple[int, dict]:
    """Silhouette sweep over k in [k_range[0], k_range[1]]; returns (best k, scores)."""
    particles = np.asarray(getattr(ensemble, "particles", ensemble), dtype=float)
    x = _leading(particles, truncation)
    low, high = k_range
    high = min(high, x.shape[0] - 1)
    if low < 2 or low > high:
        raise ConfigurationError(f"silhouette sweep needs 2 <= k_min <= k_max < N, got {k_range}")

    scores = {}
    for k in range(low, high + 1):
        labels = KMeans(
            n_clusters=k, init="k-means++", n_init=1, algorithm="lloyd",
            max_iter=DIAGNOSTICS_CONFIG["kmeans_max_iter"], random_state=seed,
        ).fit_predict(x)
        if len(np.unique(labels)) < 2:
            continue
        scores[k] = float(silhouette_score(x, labels))
    if not scores:
        raise ConfigurationError("no cluster count produced two distinct clusters")
    best = max(scores, key=scores.get)
    logger.info("Silhouette selected k=%d (score %.3f)", best, scores[best])
    return best, scores


def relative_l2_error(mean: FieldLike, truth: FieldLike) -> float:
    truth_c = as_coefficients(truth)
    denominator = np.linalg.norm(truth_c)
    if denominator == 0:
        raise PreconditionError("relative error against a zero field is undefined")
    return float(np.linalg.norm(as_coefficients(mean) - truth_c) / denominator)


def data_misfit(field: FieldLike, forward: Callable, data: np.ndarray) -> float:
    return float(np.linalg.norm(forward(field) - np.asarray(data, dtype=float)))


def avg_data_misfit(cluster_means: Iterable[FieldLike], forward: Callable, data: np.ndarray) -> float:
    misfits = [data_misfit(m, forward, data) for m in cluster_means]
    if not misfits:
        raise PreconditionError("avg_data_misfit needs at least one cluster mean")
    return float(np.mean(misfits))


def _normalized_curve(cumulative: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    j = len(cumulative)
    x = np.arange(j + 1) / j
    y = np.concatenate([[0.0], np.asarray(cumulative, dtype=float)])
    return x, y


def temperature_curve_gap(curves: Sequence[Sequence[float]], points: int = 201) -> float:
    """Max pointwise gap between cumulative-temperature curves on a normalized layer axis."""
    if len(curves) < 2:
        return 0.0
    grid = np.linspace(0.0, 1.0, points)
    resampled = [np.interp(grid, *_normalized_curve(c)) for c in curves]
    return float(max(np.max(np.abs(a - b)) for a, b in itertools.combinations(resampled, 2)))


def solve_count_ratio(solves_a: int, solves_b: int) -> float:
    if solves_b <= 0:
        raise PreconditionError("solve count of the reference run must be positive")
    return solves_a / solves_b


def mesh_independence_report(
    run: Callable[[int], Sequence[float]], resolutions: Sequence[int]
) -> pd.DataFrame:
    """Cumulative-temperature curves per resolution.

    `run(resolution)` performs one SMC run and returns its cumulative
    temperatures. One row per (resolution, layer).
    """
    rows = []
    for resolution in resolutions:
        cumulative = list(run(resolution))
        for layer, h_cum in enumerate(cumulative):
            rows.append({
                "resolution": resolution,
                "layer": layer,
                "normalized_layer": (layer + 1) / len(cumulative),
                "h_cum": h_cum,
                "num_layers": len(cumulative),
            })
        logger.info("Resolution %d: %d layers", resolution, len(cumulative))
    return pd.DataFrame(rows)


def error_scaling_study(
    estimate: Callable[[int, int], float],
    sizes: Sequence[int],
    repeats: int,
    reference: float,
) -> tuple[pd.DataFrame, float]:
    """RMS error of repeated estimates per ensemble size and its log-log slope.

    `estimate(n_particles, repeat)` runs once and returns the value of a
    bounded functional of the final ensemble.
    """
    if len(sizes) < 2 or repeats < 1:
        raise ConfigurationError("error scaling needs at least two sizes and one repeat")
    rows = []
    for n in sizes:
        errors = np.array([estimate(n, r) - reference for r in range(repeats)])
        rows.append({"n_particles": n, "rms_error": float(np.sqrt(np.mean(errors**2)))})
    table = pd.DataFrame(rows)
    slope, _ = np.polyfit(np.log(table["n_particles"]), np.log(table["rms_error"]), 1)
    return table, float(slope)
