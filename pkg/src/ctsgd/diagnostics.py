"""Convergence diagnostics and independent oracles.

Contains ergodic (long-run time-average) estimators of the log-likelihood
rate, the sensor objective, and their gradients for the scalar
linear-Gaussian model, with batch-means Monte Carlo standard errors; a
common-random-numbers central finite-difference oracle; and seed-averaged
L1 error curves with log-log slope fits.

``finite_diff_gradient`` is deliberately free of any dependence on the
filter or algorithm code so it can act as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError
from .records import TrajectoryRecord
from .sde import NoiseStream


@dataclass
class ErgodicEstimate:
    """Time-average estimate with a batch-means standard error."""

    value: np.ndarray
    mc_std_error: np.ndarray
    horizon: float
    burn_in: float = 0.0

    def __post_init__(self):
        if not self.horizon > self.burn_in >= 0:
            raise DimensionError("need horizon > burn_in >= 0")


def batch_means(increments: np.ndarray, total_time: float,
                n_batches: int = 20) -> tuple:
    """Time-average of per-step increments and its batch-means std error.

    ``increments`` has shape (n_steps, ...); the estimate is
    sum(increments) / total_time and the standard error is computed from
    ``n_batches`` contiguous batch means.
    """
    n = increments.shape[0]
    if n_batches < 20:
        raise DimensionError("batch-means errors need at least 20 batches")
    usable = (n // n_batches) * n_batches
    inc = increments[:usable]
    batch_time = total_time * usable / n / n_batches
    means = inc.reshape(n_batches, usable // n_batches, *inc.shape[1:]).sum(axis=1) \
        / batch_time
    value = increments.sum(axis=0) / total_time
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return value, se


@dataclass(frozen=True)
class ScalarLinearTruth:
    """Data-generating scalar model dx = -theta* x dt + dv, dy = c x dt + dw."""

    theta_star: float
    q: float
    tau2: float
    o0: float
    c: float = 1.0

    def r(self, o):
        return self.tau2 + (np.asarray(o, dtype=float) - self.o0) ** 2


def _scalar_fixed_paths(truth: ScalarLinearTruth, theta, o, horizon: float,
                        dt: float, seed: int) -> dict:
    """Filter integrand streams at frozen (theta, o), batched over inputs.

    All batch entries share one noise realization (common random numbers),
    so finite differences across the batch are smooth.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    o = np.atleast_1d(np.asarray(o, dtype=float))
    theta, o = np.broadcast_arrays(theta, o)
    B = theta.shape[0]
    n_steps = int(round(horizon / dt))
    r = truth.r(o)
    r_o = 2.0 * (o - truth.o0)
    c = truth.c
    x = np.zeros(B)
    xh = np.zeros(B)
    Sig = np.zeros(B)
    xh_t = np.zeros(B)
    Sig_t = np.zeros(B)
    xh_o = np.zeros(B)
    Sig_o = np.zeros(B)
    out = {k: np.empty((n_steps, B)) for k in
           ("dL", "dL_theta", "obj", "obj_grad")}
    sx = NoiseStream(int(seed), 0, 1)
    sy = NoiseStream(int(seed), 1, 1)
    sq = np.sqrt(truth.q * dt)
    sr = np.sqrt(truth.r(o) * dt)  # truth observes at the same sensor point
    block = 8192
    for k0 in range(0, n_steps, block):
        n = min(block, n_steps - k0)
        zx = sx.standard_normal_block(k0, n)[:, 0]
        zy = sy.standard_normal_block(k0, n)[:, 0]
        for i in range(n):
            k = k0 + i
            dy = c * x * dt + sr * zy[i]
            x = x - truth.theta_star * x * dt + sq * zx[i]
            psi = c * xh
            innov = dy - psi * dt
            out["dL"][k] = psi / r * dy - 0.5 * psi ** 2 / r * dt
            out["dL_theta"][k] = c * xh_t / r * innov
            out["obj"][k] = Sig * dt
            out["obj_grad"][k] = Sig_o * dt
            K = Sig * c / r
            K_t = Sig_t * c / r
            K_o = Sig_o * c / r - Sig * c * r_o / r ** 2
            xh_t_new = xh_t + (-xh - theta * xh_t) * dt + K_t * innov \
                - K * c * xh_t * dt
            Sig_t_new = Sig_t + (-2.0 * Sig - 2.0 * theta * Sig_t
                                 - 2.0 * c ** 2 * Sig * Sig_t / r) * dt
            xh_o_new = xh_o - theta * xh_o * dt + K_o * innov - K * c * xh_o * dt
            Sig_o_new = Sig_o + (-2.0 * theta * Sig_o
                                 - 2.0 * c ** 2 * Sig * Sig_o / r
                                 + c ** 2 * Sig ** 2 * r_o / r ** 2) * dt
            xh = xh - theta * xh * dt + K * innov
            Sig = Sig + (truth.q - 2.0 * theta * Sig - c ** 2 * Sig ** 2 / r) * dt
            xh_t, Sig_t, xh_o, Sig_o = xh_t_new, Sig_t_new, xh_o_new, Sig_o_new
    return out


def _squeeze(est: ErgodicEstimate, scalar_input: bool) -> ErgodicEstimate:
    if scalar_input:
        est.value = float(est.value[0])
        est.mc_std_error = float(est.mc_std_error[0])
    return est


def estimate_asymptotic_loglik(truth: ScalarLinearTruth, theta, o,
                               horizon: float, seed: int,
                               dt: float = 0.01) -> ErgodicEstimate:
    """(1/T) L_T at frozen (theta, o): time-average of the log-likelihood
    integrand psi_C R^-1 dy - (1/2) psi_C^2 R^-1 dt."""
    scalar = np.isscalar(theta) and np.isscalar(o)
    paths = _scalar_fixed_paths(truth, theta, o, horizon, dt, seed)
    value, se = batch_means(paths["dL"], horizon)
    return _squeeze(ErgodicEstimate(value, se, horizon), scalar)


def estimate_asymptotic_sensor_objective(truth: ScalarLinearTruth, theta, o,
                                         horizon: float, seed: int = 0,
                                         dt: float = 0.01,
                                         H: float = 1.0) -> ErgodicEstimate:
    """(1/T) int Tr[H Sigma_hat] ds at frozen (theta, o)."""
    scalar = np.isscalar(theta) and np.isscalar(o)
    paths = _scalar_fixed_paths(truth, theta, o, horizon, dt, seed)
    value, se = batch_means(H * paths["obj"], horizon)
    return _squeeze(ErgodicEstimate(value, se, horizon), scalar)


def estimate_loglik_gradient(truth: ScalarLinearTruth, theta, o,
                             horizon: float, seed: int,
                             dt: float = 0.01) -> ErgodicEstimate:
    """Ergodic estimate of d/dtheta of the asymptotic log-likelihood."""
    scalar = np.isscalar(theta) and np.isscalar(o)
    paths = _scalar_fixed_paths(truth, theta, o, horizon, dt, seed)
    value, se = batch_means(paths["dL_theta"], horizon)
    return _squeeze(ErgodicEstimate(value, se, horizon), scalar)


def estimate_sensor_objective_gradient(truth: ScalarLinearTruth, theta, o,
                                       horizon: float, seed: int = 0,
                                       dt: float = 0.01,
                                       H: float = 1.0) -> ErgodicEstimate:
    """Ergodic estimate of d/do of the asymptotic sensor objective."""
    scalar = np.isscalar(theta) and np.isscalar(o)
    paths = _scalar_fixed_paths(truth, theta, o, horizon, dt, seed)
    value, se = batch_means(H * paths["obj_grad"], horizon)
    return _squeeze(ErgodicEstimate(value, se, horizon), scalar)


def finite_diff_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by
    coordinate.

    ``fn`` must be deterministic for fixed input (for stochastic estimates,
    fix the seed so perturbed evaluations share random numbers).
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        grad.flat[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return grad


@dataclass
class L1Curve:
    """Seed-averaged L1 error against time with a last-window slope fit."""

    times: np.ndarray
    errors: np.ndarray
    slope: float | None
    intercept: float | None
    converged_exactly: bool
    fit_window: tuple


def l1_error_curve(records: Sequence[TrajectoryRecord], truth: np.ndarray,
                   columns: Sequence[str] | None = None,
                   fit_decade: float = 10.0) -> L1Curve:
    """Average |iterate - truth|_1 over records and fit a log-log slope.

    All records must share the same time grid.  The slope is fitted by
    least squares over the final decade of time, t >= t_end / fit_decade.
    """
    if len(records) < 1:
        raise DimensionError("need at least one record")
    base = records[0]
    cols = list(columns) if columns is not None else base.columns[1:]
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if truth.shape[0] != len(cols):
        raise DimensionError("truth length must match the iterate columns")
    times = base.times
    errs = np.zeros_like(times)
    for rec in records:
        if rec.times.shape != times.shape or not np.allclose(rec.times, times):
            raise DimensionError("records are not aligned on a common grid")
        vals = np.column_stack([rec.column(c) for c in cols])
        errs = errs + np.abs(vals - truth).sum(axis=1)
    errs = errs / len(records)
    if np.all(errs == 0):
        return L1Curve(times, errs, None, None, True, (None, None))
    mask = (times >= times[-1] / fit_decade) & (times > 0) & (errs > 0)
    if mask.sum() < 2:
        raise DimensionError("not enough points in the fit window")
    slope, intercept = np.polyfit(np.log(times[mask]), np.log(errs[mask]), 1)
    return L1Curve(times, errs, float(slope), float(intercept), False,
                   (float(times[mask][0]), float(times[-1])))
