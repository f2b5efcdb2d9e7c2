import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustfilt.core import GaussianBelief, linear_model
from robustfilt.emorf import (EmorfConfig, IndicatorVector, delta_r_inv, emorf_run, emorf_step, emors_run,
                              log_det_ratio, m_step, r_inv_structured, structured_cov, tau_indicator)
from robustfilt.gaussian import ggf_update, rts_backward, ukf_run
from robustfilt.harness.scenarios import tdoa_cov

from conftest import random_spd

EPS = 1e-6


def _dense_structured(R, inlier, eps):
    """Build R(I) entry by entry."""
    m = R.shape[0]
    out = np.zeros_like(R)
    for a in range(m):
        for b in range(m):
            if a == b:
                out[a, a] = R[a, a] if inlier[a] else R[a, a] / eps
            elif inlier[a] and inlier[b]:
                out[a, b] = R[a, b]
    return out


class TestStructuredAlgebra:
    def test_all_inliers_plain_inverse(self, rng):
        R = random_spd(rng, 5)
        np.testing.assert_allclose(r_inv_structured(R, np.ones(5), EPS), np.linalg.inv(R), rtol=1e-10)

    def test_all_outliers_diagonal(self):
        R = np.diag([1.0, 2.0, 4.0])
        np.testing.assert_allclose(r_inv_structured(R, np.full(3, EPS), EPS), np.diag(EPS / np.diag(R)))

    def test_inverse_identity(self, rng):
        for _ in range(20):
            R = random_spd(rng, 6)
            inl = rng.random(6) < 0.6
            ind = IndicatorVector.from_mask(inl, EPS)
            dense = _dense_structured(R, inl, EPS)
            np.testing.assert_allclose(structured_cov(R, ind, EPS), dense, rtol=1e-12)
            np.testing.assert_allclose(dense @ r_inv_structured(R, ind), np.eye(6), atol=1e-9)

    def test_delta_diagonal(self):
        R = np.diag([2.0, 3.0, 5.0])
        D = delta_r_inv(R, np.ones(3), 1, EPS)
        expect = np.zeros((3, 3))
        expect[1, 1] = (1 - EPS) / 3.0
        np.testing.assert_allclose(D, expect, atol=1e-15)

    def test_delta_no_other_inliers(self, rng):
        R = random_spd(rng, 3)
        D = delta_r_inv(R, np.full(3, EPS), 0, EPS)
        assert D[0, 0] == pytest.approx((1 - EPS) / R[0, 0])
        assert np.count_nonzero(D) == 1

    def test_delta_direct_difference(self, rng):
        R = random_spd(rng, 3)
        for i in range(3):
            vals = np.array([1.0, EPS, 1.0])
            on, off = vals.copy(), vals.copy()
            on[i], off[i] = 1.0, EPS
            direct = r_inv_structured(R, on, EPS) - r_inv_structured(R, off, EPS)
            assert np.linalg.norm(delta_r_inv(R, vals, i, EPS) - direct) < 1e-10

    def test_log_det_ratio_dense(self, rng):
        R = random_spd(rng, 5)
        vals = np.where(rng.random(5) < 0.5, 1.0, EPS)
        for i in range(5):
            on, off = vals.copy(), vals.copy()
            on[i], off[i] = 1.0, EPS
            direct = (np.linalg.slogdet(structured_cov(R, on, EPS))[1]
                      - np.linalg.slogdet(structured_cov(R, off, EPS))[1])
            assert log_det_ratio(R, vals, i, EPS) == pytest.approx(direct, abs=1e-8)

    def test_indicator_validation(self):
        IndicatorVector(np.array([1.0, EPS]), EPS).validate()
        with pytest.raises(ValueError):
            IndicatorVector(np.array([0.5, 1.0]), EPS).validate()


class TestTau:
    def test_diagonal_boundary(self):
        R = np.diag([1.0, 1.0])
        boundary = -np.log(EPS) / (1 - EPS)
        assert boundary == pytest.approx(13.8156, abs=1e-4)
        W = np.diag([boundary - 1e-6, 0.0])
        tau, dec = tau_indicator(W, R, np.ones(2), 0, 0.5, EPS)
        assert tau == pytest.approx((W[0, 0]) * (1 - EPS) + np.log(EPS))
        assert dec == 1.0
        _, dec = tau_indicator(np.diag([boundary + 1e-6, 0.0]), R, np.ones(2), 0, 0.5, EPS)
        assert dec == EPS

    def test_zero_statistic_keeps(self, rng):
        R = tdoa_cov(np.full(5, 10.0))
        for i in range(4):
            tau, dec = tau_indicator(np.zeros((4, 4)), R, np.ones(4), i, 0.5, EPS)
            assert tau < 0 and dec == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_diagonal_reduces_to_point_criterion(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 9))
        Rd = rng.uniform(0.1, 10.0, m)
        Wd = rng.exponential(20.0, m) * Rd
        theta, eps = rng.uniform(0.05, 0.95), 10 ** rng.uniform(-8, -2)
        vals = np.where(rng.random(m) < 0.5, 1.0, eps)
        for i in range(m):
            tau, dec = tau_indicator(np.diag(Wd), np.diag(Rd), vals, i, theta, eps)
            ref = Wd[i] / Rd[i] * (1 - eps) + np.log(eps) + 2 * np.log(1 / theta - 1)
            assert tau == pytest.approx(ref, rel=1e-9, abs=1e-9)
            assert dec == (1.0 if ref <= 0 else eps)

    def test_m_step_sequential(self):
        R = np.diag([1.0, 1.0, 1.0])
        W = np.diag([1.0, 100.0, 2.0])
        np.testing.assert_array_equal(m_step(W, R, np.ones(3), EmorfConfig()), [1.0, EPS, 1.0])


def _tdoa_linear(rng):
    m = 4
    H = rng.standard_normal((m, 3))
    R = tdoa_cov(np.full(m + 1, 1.0))
    return linear_model(0.9 * np.eye(3), H, 0.1 * np.eye(3), R)


class TestFilterAndSmoother:
    def test_clean_step_matches_plain_update(self, rng):
        model = _tdoa_linear(rng)
        prior = GaussianBelief(rng.standard_normal(3), np.eye(3))
        y = model.observe(prior.mean) + 0.1 * rng.standard_normal(4)
        post, ind, _ = emorf_step(prior, y, model)
        assert np.all(ind.inliers)
        np.testing.assert_allclose(post.mean, ggf_update(prior, y, model).mean, rtol=1e-6, atol=1e-9)

    def test_outlier_flagged(self, rng):
        model = _tdoa_linear(rng)
        prior = GaussianBelief(np.zeros(3), 0.1 * np.eye(3))
        y = model.observe(prior.mean)
        y[2] += 200.0
        post, ind, _ = emorf_step(prior, y, model)
        np.testing.assert_array_equal(ind.inliers, [True, True, False, True])
        assert np.linalg.norm(post.mean) < 0.5

    def test_clean_smoother_matches_rts(self, rng):
        model = _tdoa_linear(rng)
        prior = GaussianBelief(np.zeros(3), np.eye(3))
        ys = 0.3 * rng.standard_normal((30, 4))
        sm, vals, diag = emors_run(model, ys, prior)
        assert np.all(vals == 1.0)
        filt, pred = ukf_run(model, ys, prior)
        ref = rts_backward(filt, pred[1:], model)
        np.testing.assert_allclose([b.mean for b in sm], [b.mean for b in ref], rtol=1e-6, atol=1e-9)

    def test_single_step_smoother_equals_filter(self, rng):
        model = _tdoa_linear(rng)
        prior = GaussianBelief(np.zeros(3), np.eye(3))
        ys = model.observe(np.ones((1, 3))) + np.array([[0.0, 50.0, 0.0, 0.0]])
        sm, vals, _ = emors_run(model, ys, prior)
        filt, inds = emorf_run(model, ys, prior)
        np.testing.assert_allclose(sm[0].mean, filt[0].mean, rtol=1e-8, atol=1e-10)
        np.testing.assert_array_equal(vals[0], inds[0])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            EmorfConfig(epsilon=1.0)
        with pytest.raises(ValueError):
            EmorfConfig(theta=0.0)
