"""Ergodic estimators, finite-difference oracle, and L1 error curves."""

import numpy as np
import pytest

from ctsgd.diagnostics import (ErgodicEstimate, L1Curve, ScalarLinearTruth,
                               batch_means, estimate_asymptotic_loglik,
                               estimate_asymptotic_sensor_objective,
                               estimate_loglik_gradient,
                               estimate_sensor_objective_gradient,
                               finite_diff_gradient, l1_error_curve)
from ctsgd.errors import DimensionError
from ctsgd.kalman import build_scalar_model, riccati_steady_state
from ctsgd.records import TrajectoryRecord

TRUTH = ScalarLinearTruth(theta_star=1.0, q=1.0, tau2=0.5, o0=0.0)


class TestFiniteDifferences:
    def test_quadratic_exact(self):
        fn = lambda x: x[0] ** 2 + 2.0 * x[1] ** 2
        grad = finite_diff_gradient(fn, np.array([1.0, 2.0]), h=1e-5)
        np.testing.assert_allclose(grad, [2.0, 8.0], atol=1e-8)

    def test_second_order_richardson(self):
        # Central differences are O(h^2): halving h shrinks the error by
        # about 4.
        fn = lambda x: float(np.sin(x[0]))
        x = np.array([1.0])
        e1 = abs(finite_diff_gradient(fn, x, h=1e-2)[0] - np.cos(1.0))
        e2 = abs(finite_diff_gradient(fn, x, h=5e-3)[0] - np.cos(1.0))
        assert 3.0 < e1 / e2 < 5.0


class TestBatchMeans:
    def test_constant_increments(self):
        value, se = batch_means(np.full(2000, 0.01), 20.0)
        assert abs(value - 1.0) < 1e-12
        assert se < 1e-15

    def test_requires_twenty_batches(self):
        with pytest.raises(DimensionError):
            batch_means(np.ones(100), 1.0, n_batches=10)

    def test_se_shrinks_with_horizon(self):
        # Standard errors of the log-likelihood rate should scale roughly
        # like 1/sqrt(T) as the horizon doubles.
        ses = [estimate_asymptotic_loglik(TRUTH, 1.0, 1.0, T, seed=5,
                                          dt=0.01).mc_std_error
               for T in (500.0, 1000.0, 2000.0)]
        assert ses[0] > ses[1] > ses[2]
        assert 1.0 < ses[0] / ses[2] < 4.0

    def test_estimate_validation(self):
        with pytest.raises(DimensionError):
            ErgodicEstimate(np.array(0.0), np.array(0.0), horizon=1.0,
                            burn_in=2.0)


class TestLoglikEstimates:
    @staticmethod
    def _loglik_rate_oracle(theta, o):
        # Exact asymptotic rate from the stationary covariance of the joint
        # (signal, misspecified filter) diffusion: with psi = c x_hat,
        # the rate is c^2/r (E[x_hat x] - E[x_hat^2] / 2), where the
        # covariance solves a 2x2 Lyapunov equation.
        from scipy.linalg import solve_lyapunov
        c, q, theta_star = TRUTH.c, TRUTH.q, TRUTH.theta_star
        r = float(TRUTH.r(o))
        roots = np.roots([c ** 2 / r, 2.0 * theta, -q])
        Sig = float(roots[roots > 0][0])
        K = Sig * c / r
        A = np.array([[-theta_star, 0.0], [K * c, -(theta + K * c)]])
        S = solve_lyapunov(A, -np.diag([q, K ** 2 * r]))
        return (c ** 2 / r) * (S[0, 1] - 0.5 * S[1, 1])

    def test_peaked_at_true_parameter(self):
        # The exact asymptotic rate is maximized at theta*, and the ergodic
        # estimates agree with the exact rates within their Monte Carlo
        # errors.
        thetas = np.array([0.3, 1.0, 3.0])
        exact = np.array([self._loglik_rate_oracle(t, 1.0) for t in thetas])
        assert exact[1] > exact[0] and exact[1] > exact[2]
        est = estimate_asymptotic_loglik(TRUTH, thetas, np.full(3, 1.0),
                                         horizon=4000.0, seed=2)
        assert np.argmax(est.value) == 1
        np.testing.assert_array_less(np.abs(est.value - exact),
                                     4.0 * est.mc_std_error)

    def test_seed_consistency(self):
        a = estimate_asymptotic_loglik(TRUTH, 1.0, 1.0, 2000.0, seed=0)
        b = estimate_asymptotic_loglik(TRUTH, 1.0, 1.0, 2000.0, seed=1)
        assert abs(a.value - b.value) < 4.0 * (a.mc_std_error + b.mc_std_error)

    def test_zero_observation_gain(self):
        # c = 0 makes the likelihood integrand identically zero.
        truth = ScalarLinearTruth(theta_star=1.0, q=1.0, tau2=0.5, o0=0.0,
                                  c=0.0)
        est = estimate_asymptotic_loglik(truth, 1.0, 0.5, 100.0, seed=0)
        assert est.value == 0.0
        assert est.mc_std_error == 0.0

    def test_gradient_vanishes_at_optimum(self):
        est = estimate_loglik_gradient(TRUTH, 1.0, 0.5, 2000.0, seed=7)
        assert abs(est.value) < 4.0 * est.mc_std_error


class TestSensorObjective:
    def test_matches_steady_riccati(self):
        # The time-averaged filter variance converges to the steady-state
        # Riccati solution; the transient is O(1/T).
        o = 0.8
        est = estimate_asymptotic_sensor_objective(TRUTH, 1.0, o,
                                                   horizon=1000.0)
        model = build_scalar_model(1.0, TRUTH.q, 1.0, TRUTH.tau2, o, TRUTH.o0)
        target = riccati_steady_state(model)[0, 0]
        assert abs(est.value - target) < 1e-3

    def test_monotone_in_sensor_offset(self):
        os = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
        est = estimate_asymptotic_sensor_objective(TRUTH, np.full(5, 1.0), os,
                                                   horizon=200.0)
        assert np.all(np.diff(est.value) > 0)

    def test_gradient_matches_finite_differences(self):
        # The carried sensitivity equals a central finite difference of the
        # objective; both are positive above o0.
        o, horizon = 1.2, 200.0
        grad = estimate_sensor_objective_gradient(TRUTH, 1.0, o, horizon)
        fd = finite_diff_gradient(
            lambda v: estimate_asymptotic_sensor_objective(
                TRUTH, 1.0, float(v[0]), horizon).value,
            np.array([o]), h=1e-4)[0]
        assert fd > 0
        assert grad.value > 0
        assert abs(grad.value - fd) < 1e-6 * abs(fd) + 1e-12


class TestL1Curve:
    def _record(self, times, values, columns=("t", "a", "b")):
        data = np.column_stack([times] + list(values))
        return TrajectoryRecord(list(columns), data)

    def test_exact_convergence(self):
        t = np.linspace(1.0, 100.0, 50)
        rec = self._record(t, [np.ones(50), np.full(50, 2.0)])
        curve = l1_error_curve([rec], np.array([1.0, 2.0]))
        assert curve.converged_exactly
        assert curve.slope is None

    def test_synthetic_power_law_slope(self):
        t = np.logspace(0.0, 4.0, 200)
        rec = self._record(t, [1.0 + t ** -0.5, np.ones(200)])
        curve = l1_error_curve([rec], np.array([1.0, 1.0]))
        assert not curve.converged_exactly
        assert abs(curve.slope - (-0.5)) < 1e-9
        assert curve.fit_window[0] >= t[-1] / 10.0

    def test_seed_average(self):
        t = np.array([1.0, 2.0, 4.0])
        recs = [self._record(t, [np.full(3, 1.0 + d), np.ones(3)])
                for d in (0.1, 0.3)]
        curve = l1_error_curve(recs, np.array([1.0, 1.0]))
        np.testing.assert_allclose(curve.errors, 0.2)

    def test_misaligned_grids(self):
        a = self._record(np.array([1.0, 2.0]), [np.ones(2), np.ones(2)])
        b = self._record(np.array([1.0, 3.0]), [np.ones(2), np.ones(2)])
        with pytest.raises(DimensionError):
            l1_error_curve([a, b], np.array([0.0, 0.0]))

    def test_truth_length_mismatch(self):
        rec = self._record(np.array([1.0, 2.0]), [np.ones(2), np.ones(2)])
        with pytest.raises(DimensionError):
            l1_error_curve([rec], np.array([0.0]))

    def test_column_subset(self):
        t = np.logspace(0.0, 2.0, 30)
        rec = self._record(t, [1.0 + 1.0 / t, 5.0 * np.ones(30)])
        curve = l1_error_curve([rec], np.array([1.0]), columns=["a"])
        assert abs(curve.slope - (-1.0)) < 1e-9
