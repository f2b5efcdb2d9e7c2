import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustfilt.core import GaussianBelief, linear_model
from robustfilt.gaussian import ggf_update
from robustfilt.sor import SorConfig, sor_omega, sor_run, sor_step, sor_w_stat


def _omega_oracle(W, R, eps, theta):
    return 1.0 / (1.0 + np.sqrt(eps) * (1.0 / theta - 1.0) * np.exp(W * (1.0 - eps) / (2.0 * R)))


class TestOmega:
    def test_zero_statistic(self):
        np.testing.assert_allclose(sor_omega([0.0], [1.0]), [1.0 / (1.0 + 1e-3)], rtol=1e-12)

    def test_large_statistic_rejects(self):
        assert sor_omega([200.0], [1.0])[0] <= 1e-12

    def test_matches_closed_form(self):
        W = np.array([0.0, 1.0, 5.0, 13.0, 30.0])
        R = np.array([1.0, 0.5, 2.0, 1.0, 3.0])
        cfg = SorConfig(epsilon=1e-4, theta=0.3)
        np.testing.assert_allclose(sor_omega(W, R, cfg), _omega_oracle(W, R, 1e-4, 0.3), rtol=1e-10)

    def test_per_dimension_theta(self):
        cfg = SorConfig(theta=np.array([0.2, 0.8]))
        out = sor_omega([1.0, 1.0], [1.0, 1.0], cfg)
        np.testing.assert_allclose(out, _omega_oracle(1.0, 1.0, 1e-6, np.array([0.2, 0.8])), rtol=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SorConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            SorConfig(theta=1.0)
        with pytest.raises(ValueError):
            sor_omega([1.0], [0.0])

    @settings(max_examples=80, deadline=None)
    @given(st.floats(0, 500), st.floats(0, 500), st.floats(0.01, 100), st.floats(0.01, 0.99))
    def test_monotone_in_statistic(self, w1, w2, r, theta):
        cfg = SorConfig(theta=theta)
        lo, hi = sorted((w1, w2))
        a, b = sor_omega([lo, hi], [r, r], cfg)
        assert 0.0 < b <= a <= 1.0


class TestStatistic:
    def test_exact_fit(self):
        model = linear_model([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        np.testing.assert_allclose(sor_w_stat(GaussianBelief([3.0], [[0.0]]), [3.0], model), [0.0],
                                   atol=1e-12)

    def test_linear_expectation(self):
        model = linear_model([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        np.testing.assert_allclose(sor_w_stat(GaussianBelief([0.0], [[1.0]]), [2.0], model), [5.0])


class TestStep:
    def _model(self):
        H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        return linear_model(np.eye(2), H, 0.01 * np.eye(2), np.diag([1.0, 1.0, 2.0]))

    def test_clean_matches_plain_update(self):
        model = self._model()
        prior = GaussianBelief([1.0, 2.0], 0.5 * np.eye(2))
        y = model.observe(prior.mean) + np.array([0.1, -0.2, 0.05])
        post, d = sor_step(prior, y, model)
        ref = ggf_update(prior, y, model)
        np.testing.assert_allclose(post.mean, ref.mean, rtol=1e-3)
        assert d.converged

    def test_outlier_dimension_rejected(self):
        model = self._model()
        prior = GaussianBelief([1.0, 2.0], 0.5 * np.eye(2))
        y = model.observe(prior.mean)
        clean_post, clean = sor_step(prior, y, model)
        y_bad = y.copy()
        y_bad[1] += 100.0
        post, d = sor_step(prior, y_bad, model)
        assert d.omega[1] < 0.01
        assert np.linalg.norm(d.gain[:, 1]) <= 1e-3 * np.linalg.norm(clean.gain[:, 1])
        np.testing.assert_allclose(post.mean, clean_post.mean, atol=1e-3)

    def test_rejects_full_covariance(self):
        model = linear_model(np.eye(2), np.eye(2), np.eye(2), [[1.0, 0.2], [0.2, 1.0]])
        with pytest.raises(ValueError):
            sor_step(GaussianBelief([0, 0], np.eye(2)), [0.0, 0.0], model)

    def test_run_returns_diagnostics(self, rng):
        model = self._model()
        ys = rng.standard_normal((10, 3))
        beliefs, diags = sor_run(model, ys, GaussianBelief([0, 0], np.eye(2)))
        assert len(beliefs) == len(diags) == 10
        assert all(b.check(1e-8) for b in beliefs)
        assert all(np.all((d.omega > 0) & (d.omega <= 1)) for d in diags)
