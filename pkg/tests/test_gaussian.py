import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from robustfilt.core import GaussianBelief, StateSpaceModel, linear_model
from robustfilt.gaussian import (DEFAULT_UT, UtParams, ekf_predict, ekf_update, ggf_predict, ggf_update,
                                 matrix_sqrt, normalize_log_weights, rts_backward, sigma_points,
                                 systematic_resample, ukf_run, unscented_transform)
from robustfilt.harness.scenarios import ScenarioConfig, cv_model, make_scenario

from conftest import kalman_oracle, max_rel_err, random_linear_setup, random_spd, rts_oracle


class TestUnscentedTransform:
    def test_default_weights(self):
        wm, wc = DEFAULT_UT.weights(3)
        assert wm[0] == 0.0
        assert wc[0] == 2.0
        np.testing.assert_allclose(wm[1:], 1.0 / 6.0)
        np.testing.assert_allclose(wc[1:], 1.0 / 6.0)

    def test_invalid_scaling(self):
        with pytest.raises(ValueError):
            UtParams(alpha=1.0, kappa=-3.0).weights(3)

    def test_linear_map_exact(self, rng):
        n, d = 4, 3
        b = GaussianBelief(rng.standard_normal(n), random_spd(rng, n))
        A = rng.standard_normal((d, n))
        c = rng.standard_normal(d)
        mean, cov, cross = unscented_transform(b, lambda X: X @ A.T + c)
        np.testing.assert_allclose(mean, A @ b.mean + c, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(cov, A @ b.cov @ A.T, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(cross, b.cov @ A.T, rtol=1e-10, atol=1e-12)

    def test_sigma_points_reproduce_moments(self, rng):
        b = GaussianBelief(rng.standard_normal(3), random_spd(rng, 3))
        sp = sigma_points(b, UtParams(0.5, 2.0, 1.0))
        mean = sp.mean_weights @ sp.points
        d = sp.points - mean
        np.testing.assert_allclose(mean, b.mean, atol=1e-12)
        np.testing.assert_allclose((d * sp.cov_weights[:, None]).T @ d
                                   - (1 - 0.25 + 2.0) * np.outer(d[0], d[0]), b.cov, atol=1e-10)

    def test_quadratic_mean_exact(self, rng):
        b = GaussianBelief([1.0, -0.5], [[0.3, 0.1], [0.1, 0.2]])
        fmap = lambda X: np.column_stack([X[:, 0] ** 2, X[:, 0] * X[:, 1]])
        mean, _, _ = unscented_transform(b, fmap)
        np.testing.assert_allclose(mean, [1.0 + 0.3, -0.5 + 0.1], rtol=1e-12)

    def test_matches_monte_carlo_moments(self, rng):
        # n + kappa = 3 with beta = 0 reproduces the Gaussian fourth moment in one dimension
        b = GaussianBelief([1.0], [[0.3]])
        fmap = lambda X: np.column_stack([X[:, 0] ** 2, np.sin(X[:, 0])])
        mean, cov, _ = unscented_transform(b, fmap, UtParams(1.0, 0.0, 2.0))
        Z = fmap(rng.normal(1.0, np.sqrt(0.3), (400000, 1)))
        np.testing.assert_allclose(mean, Z.mean(axis=0), atol=0.01)
        np.testing.assert_allclose(cov, np.cov(Z.T), atol=0.02)

    def test_singular_covariance_sqrt(self):
        P = np.array([[1.0, 1.0], [1.0, 1.0]])
        S = matrix_sqrt(P)
        np.testing.assert_allclose(S @ S.T, P, atol=1e-12)


class TestUpdates:
    def test_scalar_kalman_update(self):
        model = linear_model([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        post = ggf_update(GaussianBelief([0.0], [[1.0]]), [2.0], model)
        np.testing.assert_allclose(post.mean, [1.0])
        np.testing.assert_allclose(post.cov, [[0.5]])

    def test_inverse_noise_form_agrees(self, rng):
        model, prior, *_ = random_linear_setup(rng, 4, 3)
        y = rng.standard_normal(3)
        a = ggf_update(prior, y, model)
        b = ggf_update(prior, y, model, R_inv=np.linalg.inv(model.R))
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-9)
        np.testing.assert_allclose(a.cov, b.cov, rtol=1e-9, atol=1e-12)

    def test_offset_shifts_innovation(self, rng):
        model, prior, *_ = random_linear_setup(rng, 3, 2)
        y = rng.standard_normal(2)
        off = np.array([0.3, -1.0])
        np.testing.assert_allclose(ggf_update(prior, y, model, offset=off).mean,
                                   ggf_update(prior, y - off, model).mean, rtol=1e-12)

    def test_ekf_equals_ukf_on_linear(self, rng):
        model, prior, *_ = random_linear_setup(rng, 3, 2)
        y = rng.standard_normal(2)
        np.testing.assert_allclose(ekf_update(prior, y, model).mean, ggf_update(prior, y, model).mean,
                                   rtol=1e-10)
        np.testing.assert_allclose(ekf_predict(prior, model).cov, ggf_predict(prior, model).cov,
                                   rtol=1e-10)

    def test_range_jacobian_example(self):
        H = cv_model().H_jac(np.array([3.0, 4.0, 0.0, 0.0]))
        np.testing.assert_allclose(H[0], [0.6, 0.8, 0.0, 0.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_update_keeps_covariance_psd(self, seed):
        rng = np.random.default_rng(seed)
        model, prior, *_ = random_linear_setup(rng, 3, 2)
        post = ggf_update(ggf_predict(prior, model), rng.standard_normal(2) * 10, model)
        assert post.check(1e-8)
        assert np.trace(post.cov) <= np.trace(ggf_predict(prior, model).cov) + 1e-9


class TestJacobians:
    @pytest.mark.parametrize("name", ["turn-range-bearing", "turn-tdoa", "turn-range",
                                      "growth-1d", "cv-range-bearing"])
    def test_finite_difference(self, name):
        sc = make_scenario(ScenarioConfig(name, K=5), seed=3)
        model = sc.model
        x = sc.truth.states[2].copy()
        x[-1 if name.startswith("turn") else 0] += 0.01
        for fun, jac in ((lambda X: model.f(X), model.F_jac), (model.h, model.H_jac)):
            J = np.atleast_2d(jac(x))
            eps = 1e-6 * np.maximum(1.0, np.abs(x))
            num = np.column_stack([(fun((x + e)[None]) - fun((x - e)[None]))[0] / (2 * h)
                                   for h, e in zip(eps, np.diag(eps))])
            np.testing.assert_allclose(J, num, rtol=1e-5, atol=1e-7)


class TestSmootherAndChain:
    def test_ukf_chain_matches_kalman(self, rng):
        model, prior, A, H, Q, R = random_linear_setup(rng, 4, 3)
        ys = rng.standard_normal((60, 3))
        filt, pred = ukf_run(model, ys, prior)
        means, covs, pm, pc = kalman_oracle(A, H, Q, R, prior.mean, prior.cov, ys)
        assert max_rel_err([b.mean for b in filt], means) < 1e-9
        assert max_rel_err([b.cov for b in filt], covs) < 1e-9
        assert max_rel_err([b.cov for b in pred], pc) < 1e-9

    def test_rts_matches_closed_form(self, rng):
        model, prior, A, H, Q, R = random_linear_setup(rng, 3, 2)
        ys = rng.standard_normal((40, 2))
        filt, pred = ukf_run(model, ys, prior)
        sm = rts_backward(filt, pred[1:], model)
        means, covs, pm, pc = kalman_oracle(A, H, Q, R, prior.mean, prior.cov, ys)
        om, oc = rts_oracle(A, means, covs, pm, pc)
        assert max_rel_err([b.mean for b in sm], om) < 1e-9
        assert max_rel_err([b.cov for b in sm], oc) < 1e-9

    def test_rts_short_prediction_rejected(self, rng):
        model, prior, *_ = random_linear_setup(rng, 2, 1)
        filt, pred = ukf_run(model, rng.standard_normal((5, 1)), prior)
        with pytest.raises(ValueError):
            rts_backward(filt, pred[:2], model)

    def test_rts_time_varying_transition(self, rng):
        base = linear_model([[0.7]], [[1.0]], [[0.5]], [[1.0]])
        model = StateSpaceModel(1, 1, base.f, base.h, base.Q, base.R, F_jac=base.F_jac,
                                H_jac=base.H_jac, f_at=lambda X, k: 0.7 * X + k)
        ys = rng.standard_normal((10, 1)) + np.arange(1, 11)[:, None]
        prior = GaussianBelief([0.0], [[1.0]])
        filt, pred = ukf_run(model, ys, prior)
        sm = rts_backward(filt, pred[1:], model, first_step=1)
        # oracle: shift by the known input
        m, P = np.array([0.0]), np.array([[1.0]])
        fm, fc, pm, pc = [], [], [], []
        for k, y in enumerate(ys, start=1):
            m, P = 0.7 * m + k, 0.49 * P + 0.5
            pm.append(m), pc.append(P)
            Kg = P / (P + 1.0)
            m, P = m + Kg @ (y - m), (1 - Kg) * P
            fm.append(m), fc.append(P)
        s = fm[-1]
        out = [s]
        for k in range(8, -1, -1):
            G = fc[k] * 0.7 / pc[k + 1]
            s = fm[k] + G @ (s - pm[k + 1])
            out.insert(0, s)
        np.testing.assert_allclose([b.mean for b in sm], out, rtol=1e-10)


class TestResampling:
    def test_example(self):
        np.testing.assert_array_equal(systematic_resample([0.5, 0.5, 0.0, 0.0], seed=0), [0, 0, 1, 1])

    def test_errors(self):
        with pytest.raises(ValueError):
            systematic_resample([0.0, 0.0])
        with pytest.raises(ValueError):
            systematic_resample([0.6, 0.6])
        with pytest.raises(ValueError):
            systematic_resample([-0.5, 1.5])

    @settings(max_examples=80, deadline=None)
    @given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0.0, 1.0)),
           st.integers(0, 2 ** 31 - 1))
    def test_multiplicity_bounds(self, raw, seed):
        if raw.sum() <= 0:
            raw = raw + 1.0
        w = raw / raw.sum()
        w = w / w.sum()
        idx = systematic_resample(w, seed)
        N = w.size
        counts = np.bincount(idx, minlength=N)
        assert counts.sum() == N
        assert np.all(counts >= np.floor(N * w - 1e-9))
        assert np.all(counts <= np.floor(N * w + 1e-9) + 1)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-700, 0)))
    def test_log_weights_on_simplex(self, logw):
        w = normalize_log_weights(logw)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(), 1.0, atol=1e-12)

    def test_all_minus_inf(self):
        with pytest.raises(FloatingPointError):
            normalize_log_weights([-np.inf, -np.inf])
