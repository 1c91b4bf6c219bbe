"""Tests for posterior diagnostics."""

from functools import partial

import numpy as np
import pytest
from scipy.stats import norm

from errors import ConfigurationError, PreconditionError
from diagnostics import (
    MarginalDensity,
    avg_data_misfit,
    data_misfit,
    error_scaling_study,
    kde_marginal,
    kmeans_cluster,
    marginal_tv_table,
    mesh_independence_report,
    relative_l2_error,
    select_cluster_count,
    solve_count_ratio,
    temperature_curve_gap,
    tv_distance,
)
from function_space import SpectralBasis


def _tent(lo, hi, points=101):
    grid = np.linspace(lo, hi, points)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return MarginalDensity(0, grid, np.maximum(0.0, 1.0 - np.abs(grid - mid) / half) / half)


def _blobs(centers, per_blob=50, spread=0.05, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    return np.concatenate([c + spread * rng.standard_normal((per_blob, centers.shape[1])) for c in centers])


class TestTotalVariation:
    def test_shifted_normals(self):
        grid = np.linspace(-8.0, 9.0, 4001)
        p = MarginalDensity(0, grid, norm.pdf(grid))
        q = MarginalDensity(0, grid, norm.pdf(grid, loc=1.0))
        assert tv_distance(p, q) == pytest.approx(0.3829, abs=1e-3)

    def test_disjoint_supports(self):
        assert tv_distance(_tent(0.0, 1.0), _tent(2.0, 3.0)) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(8)
        grid = np.linspace(-8.0, 8.0, 1601)
        for _ in range(20):
            densities = [kde_marginal(rng.normal(rng.uniform(-1, 1), rng.uniform(0.3, 2.0), 200), grid=grid)
                         for _ in range(3)]
            p, q, r = densities
            assert tv_distance(p, q) == pytest.approx(tv_distance(q, p), abs=1e-12)
            assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-6

    def test_identical_ensembles(self):
        samples = np.random.default_rng(1).standard_normal((300, 3))
        table = marginal_tv_table(samples, samples, modes=5, points=256)
        assert list(table["mode"]) == [0, 1, 2]
        np.testing.assert_allclose(table["tv"], 0.0, atol=1e-12)


class TestKDE:
    def test_standard_normal(self):
        samples = np.random.default_rng(2).standard_normal(5000)
        density = kde_marginal(samples, points=512)
        assert density.integral() == pytest.approx(1.0, abs=1e-10)
        assert np.interp(0.0, density.grid, density.density) == pytest.approx(norm.pdf(0.0), abs=0.03)
        assert density.bandwidth == pytest.approx(1.06 * np.std(samples, ddof=1) * 5000 ** -0.2)

    def test_identical_samples_fall_back(self):
        grid = np.linspace(-1.0, 1.0, 201)
        density = kde_marginal(np.full(20, 0.3), grid=grid)
        assert density.bandwidth == pytest.approx(0.02)
        assert density.integral() == pytest.approx(1.0)
        assert grid[np.argmax(density.density)] == pytest.approx(0.3)

    def test_empty_samples(self):
        with pytest.raises(PreconditionError):
            kde_marginal(np.array([]))

    @pytest.mark.slow
    def test_large_sample_matches_normal_density(self):
        samples = np.random.default_rng(11).standard_normal(100_000)
        grid = np.linspace(-6.0, 6.0, 801)
        estimate = kde_marginal(samples, grid=grid)
        exact = MarginalDensity(0, grid, norm.pdf(grid))
        assert tv_distance(estimate, exact) <= 0.02


class TestClustering:
    def test_two_separated_blobs(self):
        basis = SpectralBasis(1, 4, 8)
        particles = _blobs([[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]])
        report = kmeans_cluster(particles, 2, seed=0, basis=basis)
        assert sorted(report.member_counts.tolist()) == [50, 50]
        firsts = sorted(m.coefficients[0] for m in report.means)
        np.testing.assert_allclose(firsts, [-1.0, 1.0], atol=0.05)
        frame = report.to_frame()
        assert list(frame.columns[:2]) == ["cluster", "members"]

    def test_cluster_misfits(self):
        basis = SpectralBasis(1, 2, 4)
        particles = _blobs([[2.0, 0.0], [-2.0, 0.0]])
        report = kmeans_cluster(particles, 2, basis=basis, misfit=lambda m: abs(m.coefficients[0]))
        np.testing.assert_allclose(report.misfits, [2.0, 2.0], atol=0.05)

    def test_silhouette_finds_three_blobs(self):
        particles = _blobs([[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]], per_blob=40, seed=3)
        best, scores = select_cluster_count(particles, (2, 5), seed=0)
        assert best == 3
        assert set(scores) == {2, 3, 4, 5}

    def test_invalid_cluster_count(self):
        basis = SpectralBasis(1, 2, 4)
        with pytest.raises(ConfigurationError):
            kmeans_cluster(np.zeros((3, 2)), 5, basis=basis)

    @pytest.mark.filterwarnings("ignore::sklearn.exceptions.ConvergenceWarning")
    def test_empty_clusters_are_dropped(self, caplog):
        basis = SpectralBasis(1, 2, 4)
        particles = np.repeat(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0]]), 4, axis=0)
        report = kmeans_cluster(particles, 5, seed=0, basis=basis)
        assert report.count == 3
        assert len(report.means) == 3
        assert report.member_counts.tolist() == [4, 4, 4]
        assert set(report.labels.tolist()) == {0, 1, 2}
        assert all(np.all(np.isfinite(m.coefficients)) for m in report.means)
        assert "empty" in caplog.text

    def test_data_misfit_as_cluster_misfit(self):
        basis = SpectralBasis(1, 2, 4)
        particles = _blobs([[2.0, 0.0], [-2.0, 0.0]])
        forward = lambda u: u.coefficients[:1] ** 2
        data = np.array([3.0])
        report = kmeans_cluster(particles, 2, basis=basis, misfit=partial(data_misfit, forward=forward, data=data))
        assert np.mean(report.misfits) == pytest.approx(avg_data_misfit(report.means, forward, data))
        np.testing.assert_allclose(report.misfits, [1.0, 1.0], atol=0.25)


class TestErrorMetrics:
    def test_relative_l2_error(self):
        assert relative_l2_error(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(np.sqrt(0.5))
        assert relative_l2_error(np.array([2.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(1.0)

    def test_relative_error_against_zero(self):
        with pytest.raises(PreconditionError):
            relative_l2_error(np.ones(2), np.zeros(2))

    def test_data_misfit(self):
        identity = lambda u: np.asarray(u)
        assert data_misfit(np.array([3.0, 4.0]), identity, np.zeros(2)) == pytest.approx(5.0)
        assert avg_data_misfit([np.array([3.0, 4.0]), np.zeros(2)], identity, np.zeros(2)) == pytest.approx(2.5)

    def test_solve_count_ratio(self):
        assert solve_count_ratio(300, 100) == 3.0
        with pytest.raises(PreconditionError):
            solve_count_ratio(10, 0)


class TestTemperatureCurves:
    def test_same_shape_different_lengths(self):
        assert temperature_curve_gap([[1.0], [0.5, 1.0]]) == pytest.approx(0.0, abs=1e-12)

    def test_gap_at_midpoint(self):
        assert temperature_curve_gap([[0.2, 1.0], [0.5, 1.0]]) == pytest.approx(0.3)

    def test_single_curve(self):
        assert temperature_curve_gap([[0.1, 1.0]]) == 0.0

    def test_mesh_report(self):
        curves = {16: [0.3, 1.0], 32: [0.2, 0.6, 1.0]}
        table = mesh_independence_report(lambda r: curves[r], [16, 32])
        assert len(table) == 5
        assert table.groupby("resolution")["num_layers"].first().to_dict() == {16: 2, 32: 3}
        assert table["normalized_layer"].max() == 1.0


class TestErrorScaling:
    def test_inverse_square_root_rate(self):
        def estimate(n, repeat):
            return 0.1 + (1.0 if repeat % 2 else -1.0) / np.sqrt(n)

        table, slope = error_scaling_study(estimate, [100, 400, 1600], repeats=4, reference=0.1)
        np.testing.assert_allclose(table["rms_error"], [0.1, 0.05, 0.025])
        assert slope == pytest.approx(-0.5, abs=1e-10)

    def test_needs_two_sizes(self):
        with pytest.raises(ConfigurationError):
            error_scaling_study(lambda n, r: 0.0, [100], repeats=3, reference=0.0)
