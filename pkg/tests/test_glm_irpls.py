"""
迭代重加权 PLS

对照: s = p 时每步等价于稠密 IRLS (Newton) 步
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from plsaudit.errors import DataError
from plsaudit.estimators import fit_pls, sample_covariances
from plsaudit.glm_irpls import FAMILIES, deviance, get_family, irpls_fit


def _dense_irls(x, y, iterations):
    beta = np.zeros(x.shape[1])
    iterates = [beta]
    for _ in range(iterations):
        mu = expit(x @ beta)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        beta = beta + np.linalg.solve(x.T @ (w[:, None] * x), x.T @ (y - mu))
        iterates.append(beta)
    return iterates


@pytest.fixture
def logistic_data():
    rng = np.random.default_rng(42)
    x = rng.standard_normal((20, 5))
    y = (rng.uniform(size=20) < expit(x @ np.array([0.3, -0.2, 0.1, 0.0, 0.25]))).astype(float)
    return x, y


class TestFamilies:

    def test_registry(self):
        assert set(FAMILIES) == {'gaussian', 'binomial', 'poisson'}
        assert get_family('binomial').tag == 'binomial'

    def test_unknown(self):
        with pytest.raises(DataError):
            get_family('gamma')

    def test_gaussian_deviance(self):
        y = np.array([1.0, -2.0, 0.5])
        eta = np.array([0.5, -1.0, 0.5])
        assert deviance('gaussian', y, eta) == pytest.approx(np.sum((y - eta) ** 2))

    def test_binomial_deviance(self):
        y = np.array([1.0, 0.0, 1.0])
        eta = np.array([0.2, -1.0, 2.0])
        expected = 2.0 * np.sum(np.log1p(np.exp(eta)) - y * eta)
        assert deviance('binomial', y, eta) == pytest.approx(expected)

    def test_poisson_deviance(self):
        y = np.array([0.0, 2.0, 5.0])
        eta = np.log(np.array([0.5, 2.0, 4.0]))
        mu = np.exp(eta)
        expected = 2.0 * np.sum(np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0) - (y - mu))
        assert deviance('poisson', y, eta) == pytest.approx(expected)

    @pytest.mark.parametrize("family, y", [('binomial', [0.0, 2.0]), ('poisson', [1.0, -1.0])])
    def test_response_domain(self, family, y):
        with pytest.raises(DataError):
            deviance(family, y, [0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            deviance('gaussian', [1.0, 2.0], [0.0])


class TestIrplsFit:

    def test_full_dimension_matches_irls(self, logistic_data):
        x, y = logistic_data
        trace = irpls_fit(x, y, 'binomial', s=5, max_iter=10, eps=-np.inf)
        oracle = _dense_irls(x, y, 10)
        assert len(trace.iterates) >= 5
        for ours, reference in zip(trace.iterates, oracle):
            assert_allclose(ours, reference, rtol=1e-6, atol=1e-6)

    def test_monotone_at_full_dimension(self, logistic_data):
        x, y = logistic_data
        trace = irpls_fit(x, y, 'binomial', s=5)
        assert all(drop >= -1e-12 for drop in trace.deviance_drops)
        assert trace.stopped_by == 'epsilon'
        assert trace.final_deviance == pytest.approx(deviance('binomial', y, x @ trace.beta))

    def test_gaussian_first_step_is_pls(self, regression_data):
        x, y, _ = regression_data
        trace = irpls_fit(x, y, 'gaussian', s=2, max_iter=1)
        assert_allclose(trace.beta, fit_pls(sample_covariances(x, y), 2).beta, rtol=1e-12, atol=1e-14)
        assert trace.stopped_by == 'max_iter'

    def test_gaussian_full_dimension_stops(self, regression_data):
        x, y, _ = regression_data
        trace = irpls_fit(x, y, 'gaussian', s=x.shape[1])
        ls = np.linalg.lstsq(x, y, rcond=None)[0]
        assert_allclose(trace.beta, ls, rtol=1e-8)
        assert trace.stopped_by == 'epsilon'
        assert trace.iterations <= 2

    def test_poisson(self, rng):
        x = 0.3 * rng.standard_normal((40, 4))
        y = rng.poisson(np.exp(x @ np.array([0.5, -0.5, 0.2, 0.0]))).astype(float)
        trace = irpls_fit(x, y, 'poisson', s=2)
        assert np.all(np.isfinite(trace.beta))
        assert trace.iterations >= 1

    def test_to_frame(self, logistic_data):
        x, y = logistic_data
        trace = irpls_fit(x, y, 'binomial', s=2, max_iter=3, eps=-np.inf)
        frame = trace.to_frame()
        assert list(frame.columns) == ['iteration', 'deviance_drop', 'loss', 'kappa_reduced', 'coef_norm']
        assert len(frame) == trace.iterations
        assert list(frame['iteration']) == list(range(1, trace.iterations + 1))

    def test_invalid_arguments(self, logistic_data):
        x, y = logistic_data
        with pytest.raises(DataError):
            irpls_fit(x, y, 'binomial', s=0)
        with pytest.raises(DataError):
            irpls_fit(x, y[:5], 'binomial', s=1)
        with pytest.raises(DataError):
            irpls_fit(x, y, 'binomial', s=1, max_iter=0)
        with pytest.raises(DataError):
            irpls_fit(x, y + 2.0, 'binomial', s=1)
