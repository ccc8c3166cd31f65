"""Exact finite-dimensional filter for the tanh-drift scalar diffusion.

Model:
    dx = mu * sigma * tanh(mu x / sigma) dt + dw,   Var(dw) = sigma^2 dt
    dy = c x dt + dv,                               Var(dv) = r(o) dt
    r(o) = tau2 + (o - o0)^2

The conditional law is a two-Gaussian mixture determined by a
two-dimensional statistic M = (m, P):

    dm = -c^2 r^-1 P m dt + c r^-1 P dy
    dP = (sigma^2 - c^2 r^-1 P^2) dt

Sensitivities of (m, P) with respect to (mu, sigma, c, o) are carried
alongside and advanced by the formally differentiated system.  All fields
and operations broadcast elementwise, so a whole sweep of independent runs
(with per-run parameters) can be advanced in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import NumericBlowupError

# Fixed ordering of the sensitivity directions.
PARAMS = ("mu", "sigma", "c", "o")


@dataclass
class BenesModel:
    """Model parameters; ``o`` is the current sensor location."""

    mu: np.ndarray
    sigma: np.ndarray
    c: np.ndarray
    tau2: np.ndarray
    o0: np.ndarray
    o: np.ndarray

    def __post_init__(self):
        for name in ("mu", "sigma", "c", "tau2", "o0", "o"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")
        if np.any(self.tau2 <= 0):
            raise ValueError("tau2 must be positive")
        # Parameters are fixed per instance, so the derived observation
        # variance can be computed once.
        self._r = self.tau2 + (self.o - self.o0) ** 2
        self._r_prime = 2.0 * (self.o - self.o0)

    @property
    def r(self) -> np.ndarray:
        return self._r

    @property
    def r_prime(self) -> np.ndarray:
        """d r / d o."""
        return self._r_prime


@dataclass
class BenesFilterState:
    """Statistic (m, P) and its sensitivities.

    ``m_grad`` and ``P_grad`` have a leading axis of length 4 ordered as
    PARAMS = (mu, sigma, c, o); trailing axes are batch axes matching m, P.
    """

    m: np.ndarray
    P: np.ndarray
    m_grad: np.ndarray
    P_grad: np.ndarray

    @classmethod
    def initial(cls, batch_shape: tuple = ()) -> "BenesFilterState":
        """M(0) = (0, 0) with zero sensitivities (signal pinned at x(0)=0)."""
        return cls(np.zeros(batch_shape), np.zeros(batch_shape),
                   np.zeros((len(PARAMS),) + batch_shape),
                   np.zeros((len(PARAMS),) + batch_shape))


def _tangent_update(model: BenesModel, state: BenesFilterState,
                    dy: np.ndarray, dt: float, u, v):
    """New (m_grad, P_grad) from the differentiated filter SDE.

    The coefficient derivatives with respect to PARAMS = (mu, sigma, c, o)
    are sparse, so only the nonzero rows are touched:
        d(c^2/r) = (0, 0, 2c/r, -c^2 r'/r^2)
        d(c/r)   = (0, 0, 1/r,  -c r'/r^2)
        d(sigma^2) is nonzero only in the sigma direction.
    """
    r, rp, c = model._r, model._r_prime, model.c
    m, P = state.m, state.P
    mg, Pg = state.m_grad, state.P_grad
    Pm_dt = P * m * dt
    P_dy = P * dy
    mg_new = mg + (-(u * (Pg * m + P * mg)) * dt + v * Pg * dy)
    mg_new[2] += -(2.0 * c / r) * Pm_dt + P_dy / r
    mg_new[3] += (c * rp / r ** 2) * (c * Pm_dt - P_dy)
    P2_dt = P ** 2 * dt
    Pg_new = Pg - 2.0 * u * P * Pg * dt
    Pg_new[1] += 2.0 * model.sigma * dt
    Pg_new[2] += -(2.0 * c / r) * P2_dt
    Pg_new[3] += (c ** 2 * rp / r ** 2) * P2_dt
    return mg_new, Pg_new


def benes_tangent_step(model: BenesModel, state: BenesFilterState,
                       dy: np.ndarray, dt: float):
    """Increments of (m_grad, P_grad) from the differentiated filter SDE.

    Uses the pre-step state throughout (explicit Euler).  Returns the new
    (m_grad, P_grad) arrays.
    """
    u = model.c ** 2 / model._r
    v = model.c / model._r
    return _tangent_update(model, state, dy, dt, u, v)


def benes_step(model: BenesModel, state: BenesFilterState, dy: np.ndarray,
               dt: float, step_index: int | None = None) -> BenesFilterState:
    """One Euler step of the filter statistic and its sensitivities."""
    u = model.c ** 2 / model._r
    v = model.c / model._r
    m, P = state.m, state.P
    mg_new, Pg_new = _tangent_update(model, state, dy, dt, u, v)
    m_new = m - u * P * m * dt + v * P * dy
    P_new = P + (model.sigma ** 2 - u * P ** 2) * dt
    if not (np.all(np.isfinite(m_new)) and np.all(np.isfinite(P_new))):
        raise NumericBlowupError("non-finite filter statistic",
                                 step=step_index, component="m/P")
    return BenesFilterState(m_new, P_new, mg_new, Pg_new)


def benes_closed_form_P(model: BenesModel, t: np.ndarray) -> np.ndarray:
    """P(t) = (sigma sqrt(r) / c) tanh(c sigma t / sqrt(r)) for P(0) = 0."""
    sr = np.sqrt(model.r)
    return model.sigma * sr / model.c * np.tanh(model.c * model.sigma * t / sr)


def benes_posterior_moments(model: BenesModel, state: BenesFilterState):
    """Posterior mean/variance and their sensitivities.

    x_hat     = m + a P tanh(a m),                a = mu / sigma
    Sigma_hat = P + a^2 (1 - tanh^2(a m)) P^2

    Returns (x_hat, Sigma_hat, x_hat_grad, Sigma_hat_grad) where the grad
    arrays follow the PARAMS ordering and chain through both the explicit
    (mu, sigma) dependence and the statistic sensitivities.
    """
    a = model.mu / model.sigma
    m, P = state.m, state.P
    mg, Pg = state.m_grad, state.P_grad
    T = np.tanh(a * m)
    S = 1.0 - T ** 2  # sech^2(a m)
    x_hat = m + a * P * T
    Sigma_hat = P + a ** 2 * S * P ** 2
    # da/dp for p in PARAMS.
    a_g = np.zeros_like(mg)
    a_g[0] = 1.0 / model.sigma * np.ones_like(mg[0])
    a_g[1] = -model.mu / model.sigma ** 2 * np.ones_like(mg[1])
    arg_g = a_g * m + a * mg          # d(a m)/dp
    x_g = mg + a_g * P * T + a * Pg * T + a * P * S * arg_g
    S_g = -2.0 * T * S * arg_g        # d sech^2 / dp
    Sig_g = Pg + 2.0 * a * a_g * S * P ** 2 + a ** 2 * S_g * P ** 2 \
        + 2.0 * a ** 2 * S * P * Pg
    return x_hat, Sigma_hat, x_g, Sig_g


def benes_mixture_density(model: BenesModel, state: BenesFilterState,
                          t: float, x: np.ndarray) -> np.ndarray:
    """Conditional density as a weighted two-Gaussian mixture.

    Component means m +- a P, shared variance P = 1/(2B), weights
    proportional to exp(+-a m) (computed through a sigmoid so large |m|
    cannot overflow).  The weights always sum to one.
    """
    if t <= 0:
        raise ValueError("mixture representation requires t > 0")
    P = np.asarray(state.P, dtype=float)
    if np.any(P <= 0):
        raise ValueError("mixture representation requires P > 0")
    a = model.mu / model.sigma
    m = state.m
    w_plus = expit(2.0 * a * m)
    w_minus = 1.0 - w_plus
    x = np.asarray(x, dtype=float)
    norm = 1.0 / np.sqrt(2.0 * np.pi * P)
    g_plus = norm * np.exp(-0.5 * (x - (m + a * P)) ** 2 / P)
    g_minus = norm * np.exp(-0.5 * (x - (m - a * P)) ** 2 / P)
    return w_plus * g_plus + w_minus * g_minus


def benes_mixture_params(model: BenesModel, state: BenesFilterState):
    """Diagnostic (A+, A-, B, w+, w-) of the mixture representation."""
    P = np.asarray(state.P, dtype=float)
    if np.any(P <= 0):
        raise ValueError("mixture representation requires P > 0")
    a = model.mu / model.sigma
    B = 1.0 / (2.0 * P)
    A_plus = state.m / (model.c * P) + a
    A_minus = state.m / (model.c * P) - a
    w_plus = expit(2.0 * a * state.m)
    return A_plus, A_minus, B, w_plus, 1.0 - w_plus


def benes_signal_drift(mu: np.ndarray, sigma: np.ndarray,
                       x: np.ndarray) -> np.ndarray:
    return mu * sigma * np.tanh(mu * x / sigma)
