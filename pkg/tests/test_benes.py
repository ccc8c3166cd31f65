"""Exact filter for the tanh-drift diffusion: closed forms, reduction,
posterior moments, and the mixture representation."""

import numpy as np
import pytest

from ctsgd.benes import (BenesFilterState, BenesModel, benes_closed_form_P,
                         benes_mixture_density, benes_mixture_params,
                         benes_posterior_moments, benes_signal_drift,
                         benes_step)
from ctsgd.errors import NumericBlowupError
from ctsgd.kalman import KbState, build_scalar_model, kb_step
from ctsgd.sde import NoiseStream


def _model(mu=2.0, sigma=2.0, c=0.7, tau2=2.0, o0=0.0, o=0.0):
    return BenesModel(mu=mu, sigma=sigma, c=c, tau2=tau2, o0=o0, o=o)


class TestModelValidation:
    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            _model(sigma=0.0)

    def test_tau2_positive(self):
        with pytest.raises(ValueError):
            _model(tau2=-1.0)

    def test_observation_variance(self):
        m = _model(tau2=2.0, o0=4.0, o=6.0)
        assert m.r == 6.0
        assert m.r_prime == 4.0


class TestClosedFormP:
    def test_saturation_value(self):
        # sigma=2, c=0.7, r=2: P(t) -> sigma sqrt(r) / c = 4.040610...
        m = _model(sigma=2.0, c=0.7, tau2=2.0)
        assert abs(benes_closed_form_P(m, 1e3) - 4.0406101782088438) < 1e-12

    def test_unit_parameters(self):
        m = _model(sigma=1.0, c=1.0, tau2=1.0)
        assert abs(benes_closed_form_P(m, 1.0) - 0.76159415595576485) < 1e-12

    def test_integrated_matches_closed_form(self):
        # The P-equation is observation-free, so integrating with dy = 0
        # must land on the closed form to O(dt).
        m = _model(sigma=1.0, c=1.0, tau2=1.0)
        state = BenesFilterState.initial()
        dt = 1e-4
        for _ in range(int(1.0 / dt)):
            state = benes_step(m, state, 0.0, dt)
        assert abs(state.P - 0.76159415595576485) < 1e-3

    def test_p_respects_tanh_bound(self):
        m = _model(sigma=2.0, c=0.7, tau2=2.0)
        state = BenesFilterState.initial()
        bound = m.sigma * np.sqrt(m.r) / m.c * (1.0 + 1e-9)
        dt = 1e-3
        for _ in range(20000):
            state = benes_step(m, state, 0.0, dt)
            assert 0.0 <= state.P <= bound


class TestTangents:
    def test_p_mu_sensitivity_structurally_zero(self):
        m = _model()
        state = BenesFilterState.initial()
        for _ in range(1000):
            state = benes_step(m, state, 0.05, 1e-3)
        assert state.P_grad[0] == 0.0

    def test_p_sigma_sensitivity_closed_form(self):
        # c=1, r=1: d/dsigma [sigma tanh(sigma t)] at sigma=1, t=1 equals
        # tanh(1) + sech^2(1) = 1.181568...
        m = _model(mu=1.0, sigma=1.0, c=1.0, tau2=1.0)
        state = BenesFilterState.initial()
        dt = 1e-4
        for _ in range(int(1.0 / dt)):
            state = benes_step(m, state, 0.0, dt)
        assert abs(state.P_grad[1] - 1.1815684061607143) < 1e-3


class TestPosteriorMoments:
    def test_mu_zero_collapse(self):
        m = _model(mu=0.0)
        state = BenesFilterState(np.asarray(0.7), np.asarray(1.3),
                                 np.zeros(4), np.zeros(4))
        x_hat, Sigma_hat, _, _ = benes_posterior_moments(m, state)
        assert x_hat == 0.7
        assert Sigma_hat == 1.3

    def test_direct_evaluation(self):
        # m = 0, mu/sigma = 1, P = 2: x_hat = 0, Sigma_hat = 2 + 4 = 6.
        m = _model(mu=1.5, sigma=1.5, c=1.0, tau2=1.0)
        state = BenesFilterState(np.asarray(0.0), np.asarray(2.0),
                                 np.zeros(4), np.zeros(4))
        x_hat, Sigma_hat, _, _ = benes_posterior_moments(m, state)
        assert x_hat == 0.0
        assert Sigma_hat == 6.0

    def test_signal_drift(self):
        assert benes_signal_drift(0.0, 2.0, 1.0) == 0.0
        got = benes_signal_drift(2.0, 1.0, 0.5)
        assert abs(got - 2.0 * np.tanh(1.0)) < 1e-14


class TestMixture:
    def _state(self):
        m = _model(mu=2.0, sigma=2.0, c=0.7, tau2=2.0)
        state = BenesFilterState.initial()
        stream = NoiseStream(9, 1, 1)
        dt = 1e-3
        for k in range(2000):
            dy = np.sqrt(m.r * dt) * stream.standard_normals(k)[0]
            state = benes_step(m, state, dy, dt)
        return m, state

    def test_weights_sum_to_one(self):
        m, state = self._state()
        _, _, _, w_plus, w_minus = benes_mixture_params(m, state)
        assert w_plus + w_minus == 1.0

    def test_density_normalized(self):
        m, state = self._state()
        x = np.linspace(-30.0, 30.0, 60001)
        density = benes_mixture_density(m, state, 2.0, x)
        assert abs(np.trapezoid(density, x) - 1.0) < 1e-6

    def test_mixture_mean_matches_posterior(self):
        m, state = self._state()
        x = np.linspace(-30.0, 30.0, 60001)
        density = benes_mixture_density(m, state, 2.0, x)
        mean = np.trapezoid(x * density, x)
        x_hat, _, _, _ = benes_posterior_moments(m, state)
        assert abs(mean - x_hat) < 1e-8

    def test_mu_zero_single_gaussian(self):
        m = _model(mu=0.0, sigma=1.0, c=1.0, tau2=1.0)
        state = BenesFilterState(np.asarray(0.4), np.asarray(0.9),
                                 np.zeros(4), np.zeros(4))
        x = np.linspace(-4.0, 5.0, 101)
        density = benes_mixture_density(m, state, 1.0, x)
        gauss = np.exp(-0.5 * (x - 0.4) ** 2 / 0.9) / np.sqrt(2 * np.pi * 0.9)
        np.testing.assert_allclose(density, gauss, atol=1e-14)

    def test_requires_positive_time_and_p(self):
        m, state = self._state()
        with pytest.raises(ValueError):
            benes_mixture_density(m, state, 0.0, np.zeros(1))
        flat = BenesFilterState(np.asarray(0.0), np.asarray(0.0),
                                np.zeros(4), np.zeros(4))
        with pytest.raises(ValueError):
            benes_mixture_density(m, flat, 1.0, np.zeros(1))


class TestKalmanReduction:
    def test_mu_zero_matches_kalman_per_step(self):
        # mu = 0 collapses the filter to the linear-Gaussian one with A=0,
        # Q=sigma^2, C=c; the step maps coincide algebraically.
        sigma, c, tau2, o0, o = 1.5, 0.7, 2.0, 4.0, 2.5
        bm = _model(mu=0.0, sigma=sigma, c=c, tau2=tau2, o0=o0, o=o)
        km = build_scalar_model(0.0, sigma ** 2, c, tau2, o, o0)
        b_state = BenesFilterState.initial()
        k_state = KbState(np.zeros(1), np.zeros((1, 1)))
        stream = NoiseStream(4, 1, 1)
        dt = 1e-3
        for k in range(2000):
            dy = np.sqrt(bm.r * dt) * stream.standard_normals(k)[0]
            b_state = benes_step(bm, b_state, dy, dt)
            k_state = kb_step(km, k_state, np.array([dy]), dt)
            assert abs(b_state.m - k_state.x_hat[0]) < 1e-10
            assert abs(b_state.P - k_state.Sigma_hat[0, 0]) < 1e-10

    def test_non_finite_statistic_raises(self):
        m = _model()
        state = BenesFilterState(np.asarray(np.inf), np.asarray(1.0),
                                 np.zeros(4), np.zeros(4))
        with np.errstate(invalid="ignore"), pytest.raises(NumericBlowupError):
            benes_step(m, state, 0.1, 1e-3)
