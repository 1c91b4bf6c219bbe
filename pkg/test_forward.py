"""Tests for the Darcy solver, observation operators and potentials."""

import math

import numpy as np
import pytest

from errors import ConfigurationError, ObservationError
from forward import (
    DarcyConfig,
    ObservationSetup,
    PotentialEvaluator,
    conjugate_posterior,
    darcy_evaluator,
    darcy_solve,
    linear_evaluator,
    measurement_grid,
    multimodal_evaluator,
    multimodal_modals,
    multimodal_potential,
    observe,
    synthesize_data,
)
from function_space import CoeffField, SpectralBasis, make_prior_basis, synthesize


@pytest.fixture
def basis_2d():
    basis, _ = make_prior_basis(2, 4, alpha=1.0, power=2)
    return basis


def _constant_field(basis, value):
    c = np.zeros(basis.num_modes)
    c[0] = value
    return CoeffField(basis, c)


class TestDarcySolve:
    def test_poisson_center_value(self, basis_2d):
        w = darcy_solve(CoeffField.zeros(basis_2d), DarcyConfig(resolution=64, fine_resolution=128))
        assert w[32, 32] == pytest.approx(0.0737, abs=1e-3)

    def test_second_order_convergence(self, basis_2d):
        reference = 0.0736713532814  # -lap w = 1 on the unit square, value at the center
        errors = [
            abs(darcy_solve(CoeffField.zeros(basis_2d), DarcyConfig(resolution=n, fine_resolution=2 * n))[n // 2, n // 2]
                - reference)
            for n in (16, 32)
        ]
        assert 3.0 < errors[0] / errors[1] < 5.0

    def test_manufactured_solution_converges_at_second_order(self, basis_2d):
        amplitude = 0.5
        index = int(np.flatnonzero((basis_2d.mode_index == (1, 0)).all(axis=1))[0])
        c = np.zeros(basis_2d.num_modes)
        c[index] = amplitude
        u = CoeffField(basis_2d, c)

        # w = sin(pi x) sin(pi y) with log-permeability a sqrt(2) cos(pi x)
        def source(x, y):
            k = np.exp(amplitude * math.sqrt(2.0) * np.cos(np.pi * x))
            return k * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y) * (
                2.0 + amplitude * math.sqrt(2.0) * np.cos(np.pi * x)
            )

        errors = []
        for n in (16, 32):
            nodes = np.linspace(0.0, 1.0, n + 1)
            x, y = np.meshgrid(nodes, nodes, indexing="ij")
            exact = np.sin(np.pi * x) * np.sin(np.pi * y)
            w = darcy_solve(u, DarcyConfig(resolution=n, fine_resolution=2 * n, source=source))
            errors.append(np.max(np.abs(w - exact)))
        assert errors[1] < 1e-2
        assert 3.0 < errors[0] / errors[1] < 5.0

    def test_callable_source_matches_constant(self, basis_2d):
        cfg = DarcyConfig(resolution=16, fine_resolution=32)
        constant = darcy_solve(CoeffField.zeros(basis_2d), cfg)
        varying = darcy_solve(
            CoeffField.zeros(basis_2d),
            DarcyConfig(resolution=16, fine_resolution=32, source=lambda x, y: np.ones_like(x)),
        )
        np.testing.assert_allclose(varying, constant, rtol=1e-8, atol=1e-14)

    def test_constant_log_permeability_scales_solution(self, basis_2d):
        cfg = DarcyConfig(resolution=16, fine_resolution=32)
        base = darcy_solve(CoeffField.zeros(basis_2d), cfg)
        scaled = darcy_solve(_constant_field(basis_2d, 0.7), cfg)
        np.testing.assert_allclose(scaled, math.exp(-0.7) * base, rtol=1e-6, atol=1e-12)

    def test_maximum_principle_and_boundary(self, basis_2d):
        rng = np.random.default_rng(0)
        u = CoeffField(basis_2d, 0.5 * rng.standard_normal(basis_2d.num_modes))
        w = darcy_solve(u, DarcyConfig(resolution=16, fine_resolution=32))
        assert w.shape == (17, 17)
        assert np.all(w >= -1e-12)
        for edge in (w[0, :], w[-1, :], w[:, 0], w[:, -1]):
            np.testing.assert_array_equal(edge, 0.0)

    @pytest.mark.parametrize("kwargs", [
        {"resolution": 4, "fine_resolution": 32},
        {"resolution": 32, "fine_resolution": 32},
        {"resolution": 32, "fine_resolution": 16},
    ])
    def test_invalid_resolutions(self, kwargs):
        with pytest.raises(ConfigurationError):
            DarcyConfig(**kwargs)


class TestObservation:
    def test_bilinear_fields_are_reproduced(self):
        nodes = np.linspace(0.0, 1.0, 9)
        x, y = np.meshgrid(nodes, nodes, indexing="ij")
        w = 1.0 + x + 2.0 * y
        points = np.array([[0.13, 0.71], [0.5, 0.5], [1.0, 0.0]])
        np.testing.assert_allclose(observe(w, points), 1.0 + points[:, 0] + 2.0 * points[:, 1], atol=1e-14)

    def test_point_outside_domain(self):
        with pytest.raises(ObservationError):
            observe(np.zeros((9, 9)), [[0.5, 1.2]])

    def test_dense_grid(self):
        points = measurement_grid("dense10x10")
        assert points.shape == (100, 2)
        np.testing.assert_allclose(points[0], [0.01, 0.01])
        np.testing.assert_allclose(points[-1], [0.99, 0.99])

    def test_sparse_line(self):
        points = measurement_grid("sparse-line20")
        assert points.shape == (20, 2)
        np.testing.assert_array_equal(points[:, 0], 0.8)
        np.testing.assert_allclose(points[[0, -1], 1], [0.23, 0.80])

    def test_unknown_grid(self):
        with pytest.raises(ObservationError):
            measurement_grid("ring")

    def test_setup_validation(self):
        with pytest.raises(ObservationError):
            ObservationSetup([[0.5, 0.5]], 0.0, [1.0])
        with pytest.raises(ObservationError):
            ObservationSetup([[0.5, 0.5], [0.2, 0.2]], 1.0, [1.0])


class TestPotentials:
    def test_linear_potential_and_counter(self):
        basis = SpectralBasis(1, 4, 8)
        ev = linear_evaluator(basis, ObservationSetup(np.zeros((2, 1)), 1.0, [0.0, 0.0]))
        assert ev(np.array([1.0, 2.0, 5.0, 5.0])) == pytest.approx(2.5)
        ev(np.zeros(4))
        assert ev.solves == 2

    def test_evaluator_needs_one_source(self):
        basis = SpectralBasis(1, 4, 8)
        with pytest.raises(ConfigurationError):
            PotentialEvaluator("empty", basis)

    def test_modal_fields(self):
        basis = SpectralBasis(1, 8, 16)
        modals = multimodal_modals(basis, [1.0, -1.0, 2.0, 3.0])
        x = basis.grid_points
        np.testing.assert_allclose(synthesize(modals[1]), -np.cos(np.pi * x), atol=1e-14)
        np.testing.assert_allclose(synthesize(modals[3]), np.cos(3 * np.pi * x), atol=1e-14)

    def test_multimodal_values(self):
        basis = SpectralBasis(1, 8, 16)
        modals = multimodal_modals(basis, [1.0, -1.0, 2.0, 3.0])
        sigma = 0.25
        # every modal field has squared norm 1/2
        expected_at_zero = 0.5 / (2 * sigma**2) - math.log(4.0)
        assert multimodal_potential(np.zeros(8), modals, sigma) == pytest.approx(expected_at_zero, rel=1e-12)
        for f in modals:
            assert multimodal_potential(f, modals, sigma) == pytest.approx(0.0, abs=1e-3)

    def test_multimodal_evaluator_counts(self):
        basis = SpectralBasis(1, 8, 16)
        ev = multimodal_evaluator(basis, multimodal_modals(basis, [1.0, -1.0]), 0.25)
        ev(np.zeros(8))
        assert ev.solves == 1

    def test_darcy_evaluator_counts_solves(self, basis_2d):
        cfg = DarcyConfig(resolution=8, fine_resolution=16)
        points = measurement_grid("sparse-line20")
        obs = ObservationSetup(points, 0.01, np.zeros(20))
        ev = darcy_evaluator(basis_2d, cfg, obs)
        value = ev(CoeffField.zeros(basis_2d))
        assert value > 0
        assert ev.solves == 1

    def test_conjugate_posterior(self):
        mean, var = conjugate_posterior(np.array([1.0, 0.25, 0.1]), 1.0, [1.0, 1.0])
        np.testing.assert_allclose(mean, [0.5, 0.2])
        np.testing.assert_allclose(var, [0.5, 0.2])


class TestSyntheticData:
    def test_noise_free_data(self, basis_2d):
        cfg = DarcyConfig(resolution=8, fine_resolution=16)
        points = measurement_grid("sparse-line20")
        obs = synthesize_data(CoeffField.zeros(basis_2d), cfg, points, 0.0, np.random.default_rng(0))
        clean = observe(darcy_solve(CoeffField.zeros(basis_2d), cfg, resolution=16), points)
        np.testing.assert_array_equal(obs.data, clean)
        assert obs.noise_std == pytest.approx(0.02 * np.max(np.abs(clean)))

    def test_negative_noise(self, basis_2d):
        cfg = DarcyConfig(resolution=8, fine_resolution=16)
        with pytest.raises(ConfigurationError):
            synthesize_data(CoeffField.zeros(basis_2d), cfg, measurement_grid("sparse-line20"), -0.1,
                            np.random.default_rng(0))
