"""Tests for the eigenbasis Gaussian mixture fit."""

import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from errors import ConfigurationError, MixtureFitError
from function_space import GaussianMixtureSpec, make_prior_basis
from mixture import FitConfig, bic, em_responsibilities, fit_mixture, mixture_loglik, select_components


@pytest.fixture
def prior():
    _, spectrum = make_prior_basis(1, 4, alpha=0.1, power=2)
    return spectrum


def _two_blob_samples(prior, n=2000, seed=0):
    rng = np.random.default_rng(seed)
    samples = np.sqrt(prior.eigenvalues) * rng.standard_normal((n, 4))
    signs = np.where(np.arange(n) < n // 2, 1.0, -1.0)
    samples[:, 0] = 2.0 * signs + 0.3 * rng.standard_normal(n)
    samples[:, 1] = 0.1 * rng.standard_normal(n)
    return samples


class TestFitMixture:
    def test_recovers_two_components(self, prior):
        samples = _two_blob_samples(prior)
        mix = fit_mixture(samples, prior, FitConfig(truncation=2, components=2, seed=0))
        order = np.argsort(mix.means[:, 0])
        np.testing.assert_allclose(mix.weights[order], [0.5, 0.5], atol=0.05)
        np.testing.assert_allclose(mix.means[order, 0], [-2.0, 2.0], atol=0.05)
        np.testing.assert_allclose(mix.eigenvalues[:, 0], 0.09, rtol=0.15)
        np.testing.assert_allclose(mix.eigenvalues[:, 1], 0.01, rtol=0.15)

    def test_tail_is_the_prior(self, prior):
        mix = fit_mixture(_two_blob_samples(prior), prior, FitConfig(truncation=2, components=2))
        assert mix.fit_truncation == 2
        np.testing.assert_array_equal(mix.eigenvalues[:, 2:], np.tile(prior.eigenvalues[2:], (2, 1)))
        np.testing.assert_array_equal(mix.means[:, 2:], 0.0)

    def test_loglik_trace_is_monotone(self, prior):
        mix = fit_mixture(_two_blob_samples(prior, seed=1), prior, FitConfig(truncation=2, components=3))
        trace = np.array(mix.loglik_trace)
        assert trace.size >= 1
        assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))

    def test_variance_floor(self, prior):
        samples = np.tile([0.5, -0.2, 0.1, 0.0], (30, 1))
        mix = fit_mixture(samples, prior, FitConfig(truncation=2, components=1, var_floor=1e-4))
        np.testing.assert_allclose(mix.eigenvalues[0, :2], 1e-4 * prior.eigenvalues[:2])
        np.testing.assert_allclose(mix.means[0, :2], [0.5, -0.2])

    def test_fewer_particles_than_components(self, prior):
        samples = _two_blob_samples(prior, n=3)
        mix = fit_mixture(samples, prior, FitConfig(truncation=2, components=4))
        assert mix.num_components <= 3

    def test_non_finite_samples(self, prior):
        samples = _two_blob_samples(prior, n=10)
        samples[3, 1] = np.nan
        with pytest.raises(MixtureFitError):
            fit_mixture(samples, prior, FitConfig(truncation=2, components=1))

    def test_basis_mismatch(self, prior):
        with pytest.raises(ConfigurationError):
            fit_mixture(np.zeros((10, 6)), prior, FitConfig(truncation=2, components=1))

    @pytest.mark.parametrize("kwargs", [{"truncation": 0}, {"components": 0}, {"var_floor": 0.0}])
    def test_invalid_fit_config(self, kwargs):
        with pytest.raises(ConfigurationError):
            FitConfig(**kwargs)


class TestDensities:
    def test_standard_normal_loglik(self, prior):
        mix = GaussianMixtureSpec([1.0], np.zeros((1, 4)), prior.eigenvalues[None, :], prior, fit_truncation=1)
        assert mixture_loglik(np.zeros((1, 4)), mix) == pytest.approx(-0.5 * math.log(2.0 * math.pi))

    def test_loglik_matches_dense_gaussians(self, prior):
        mix = fit_mixture(_two_blob_samples(prior), prior, FitConfig(truncation=3, components=2))
        points = _two_blob_samples(prior, n=20, seed=7)
        expected = 0.0
        for x in points:
            terms = [
                math.log(mix.weights[j]) + multivariate_normal.logpdf(
                    x[:3], mean=mix.means[j, :3], cov=np.diag(mix.eigenvalues[j, :3])
                )
                for j in range(mix.num_components)
            ]
            expected += logsumexp(terms)
        assert mixture_loglik(points, mix) == pytest.approx(expected, rel=1e-10)

    def test_responsibilities(self, prior):
        mix = fit_mixture(_two_blob_samples(prior), prior, FitConfig(truncation=2, components=2))
        resp = em_responsibilities(np.array([[2.0, 0.0, 0.0, 0.0], [-2.0, 0.0, 0.0, 0.0]]), mix)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0)
        assert resp[0].argmax() != resp[1].argmax()
        assert resp.max(axis=1).min() > 0.99


class TestBIC:
    def test_formula(self, prior):
        samples = _two_blob_samples(prior, n=500)
        mix = fit_mixture(samples, prior, FitConfig(truncation=2, components=2))
        n_params = 1 + 2 * 2 * 2
        expected = -2.0 * mixture_loglik(samples, mix) + n_params * math.log(500)
        assert bic(mix, samples) == pytest.approx(expected)

    def test_selects_two_components(self, prior):
        samples = _two_blob_samples(prior)
        best, scores = select_components(samples, prior, FitConfig(truncation=2, components=1, max_components=3))
        assert set(scores) == {1, 2, 3}
        assert best.num_components == 2
        assert scores[2] < scores[1]
