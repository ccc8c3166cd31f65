"""Continuous-time two-timescale stochastic gradient descent primitives.

The slow iterate alpha and fast iterate beta follow

    d alpha = -gamma_1(t) [ drift_f dt + d xi_1 ]
    d beta  = -gamma_2(t) [ drift_g dt + d xi_2 ]

with polynomially decaying (or constant) learning rates, a per-coordinate
box projection, and Polyak-Ruppert running time averages.  Everything here
is problem-agnostic; the joint estimation / sensor-placement specialization
lives in the ``joint`` module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, ConfigurationError, NumericBlowupError


@dataclass(frozen=True)
class LearningRateSchedule:
    """gamma(t) = gamma0 (delta + t)^(-eta), or a constant gamma0.

    ``gamma0`` and ``eta`` may be arrays for per-coordinate rates.
    """

    gamma0: np.ndarray
    eta: np.ndarray = 1.0
    delta: float = 1.0
    mode: str = "decay"

    def __post_init__(self):
        object.__setattr__(self, "gamma0", np.asarray(self.gamma0, dtype=float))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))
        if self.mode not in ("decay", "constant"):
            raise ConfigurationError(f"unknown schedule mode {self.mode!r}")
        if np.any(self.gamma0 <= 0):
            raise ConfigurationError("gamma0 must be positive")
        if self.mode == "decay":
            if not self.delta > 0:
                raise ConfigurationError("delta must be positive")
            if np.any(self.eta <= 0) or np.any(self.eta > 1):
                raise ConfigurationError("eta must lie in (0, 1]")


def lr_eval(schedule: LearningRateSchedule, t: float) -> np.ndarray:
    if schedule.mode == "constant":
        return schedule.gamma0
    return schedule.gamma0 * (schedule.delta + t) ** (-schedule.eta)


@dataclass(frozen=True)
class RateAssumptionReport:
    """Closed-form checks of the decay-exponent conditions."""

    eta_slow: float
    eta_fast: float
    timescale_separated: bool       # eta_slow > eta_fast
    markovian_regime: bool          # both exponents in (1/2, 1], separated
    basic_regime: bool              # both exponents in (0, 1], separated

    @property
    def satisfied(self) -> bool:
        return self.markovian_regime


def check_rate_assumptions(slow: LearningRateSchedule,
                           fast: LearningRateSchedule) -> RateAssumptionReport:
    """Report on the exponent conditions for two decaying schedules.

    The Markovian-dynamics regime requires eta in (1/2, 1] for both rates
    on top of the timescale separation eta_slow > eta_fast; the basic
    regime only needs eta in (0, 1].
    """
    if slow.mode != "decay" or fast.mode != "decay":
        raise ConfigurationError("rate assumptions apply to decay schedules")
    es = float(np.max(slow.eta))  # conservative when per-coordinate
    es_min = float(np.min(slow.eta))
    ef = float(np.max(fast.eta))
    separated = bool(es_min > ef)
    in_half = bool(es_min > 0.5 and es <= 1.0 and np.min(fast.eta) > 0.5 and ef <= 1.0)
    in_unit = bool(es_min > 0.0 and es <= 1.0 and np.min(fast.eta) > 0.0 and ef <= 1.0)
    return RateAssumptionReport(
        eta_slow=es, eta_fast=ef,
        timescale_separated=separated,
        markovian_regime=separated and in_half,
        basic_regime=separated and in_unit)


@dataclass(frozen=True)
class ProjectionSet:
    """Per-coordinate closed boxes for the slow and fast iterates."""

    alpha_lower: np.ndarray
    alpha_upper: np.ndarray
    beta_lower: np.ndarray
    beta_upper: np.ndarray

    def __post_init__(self):
        for name in ("alpha_lower", "alpha_upper", "beta_lower", "beta_upper"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if np.any(self.alpha_lower >= self.alpha_upper) \
                or np.any(self.beta_lower >= self.beta_upper):
            raise ConfigurationError("projection boxes need nonempty interior")


def project_increment(value: np.ndarray, increment: np.ndarray,
                      lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Reject-coordinate projection: zero any increment whose destination
    leaves the box, leave the others untouched."""
    proposed = value + increment
    ok = (proposed >= lower) & (proposed <= upper)
    return np.where(ok, proposed, value)


@dataclass
class IterateState:
    """Iterates, running time-averages, and the trapezoid accumulators."""

    alpha: np.ndarray
    beta: np.ndarray
    t: float = 0.0
    avg_alpha: np.ndarray = None
    avg_beta: np.ndarray = None
    # Previous iterate values and running integrals for the trapezoid rule.
    prev_alpha: np.ndarray = field(default=None, repr=False)
    prev_beta: np.ndarray = field(default=None, repr=False)
    int_alpha: np.ndarray = field(default=None, repr=False)
    int_beta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.avg_alpha is None:
            self.avg_alpha = self.alpha.copy()
        if self.avg_beta is None:
            self.avg_beta = self.beta.copy()
        if self.prev_alpha is None:
            self.prev_alpha = self.alpha.copy()
        if self.prev_beta is None:
            self.prev_beta = self.beta.copy()
        if self.int_alpha is None:
            self.int_alpha = np.zeros_like(self.alpha)
        if self.int_beta is None:
            self.int_beta = np.zeros_like(self.beta)


def polyak_ruppert_update(state: IterateState, dt: float) -> IterateState:
    """Advance the trapezoid-rule running means (1/t) int_0^t iterate ds.

    Must be called once per step, after the iterates have been updated and
    the step clock advanced; ``prev_alpha``/``prev_beta`` hold the
    beginning-of-step values.
    """
    state.int_alpha = state.int_alpha + 0.5 * (state.prev_alpha + state.alpha) * dt
    state.int_beta = state.int_beta + 0.5 * (state.prev_beta + state.beta) * dt
    if state.t > 0:
        state.avg_alpha = state.int_alpha / state.t
        state.avg_beta = state.int_beta / state.t
    return state


def generic_tt_step(state: IterateState, drift_f: np.ndarray,
                    drift_g: np.ndarray, dxi1: np.ndarray, dxi2: np.ndarray,
                    slow: LearningRateSchedule, fast: LearningRateSchedule,
                    dt: float, sets: ProjectionSet | None = None) -> IterateState:
    """One Euler step of the coupled two-timescale recursion."""
    g1 = lr_eval(slow, state.t)
    g2 = lr_eval(fast, state.t)
    inc_a = -g1 * (np.asarray(drift_f, dtype=float) * dt + dxi1)
    inc_b = -g2 * (np.asarray(drift_g, dtype=float) * dt + dxi2)
    if not (np.all(np.isfinite(inc_a)) and np.all(np.isfinite(inc_b))):
        raise NumericBlowupError("non-finite iterate increment",
                                 component="alpha/beta")
    state.prev_alpha = state.alpha
    state.prev_beta = state.beta
    if sets is None:
        state.alpha = state.alpha + inc_a
        state.beta = state.beta + inc_b
    else:
        state.alpha = project_increment(state.alpha, inc_a,
                                        sets.alpha_lower, sets.alpha_upper)
        state.beta = project_increment(state.beta, inc_b,
                                       sets.beta_lower, sets.beta_upper)
    state.t += dt
    return polyak_ruppert_update(state, dt)


def surrogate_gradient(grad_alpha_f: np.ndarray, grad_beta_f: np.ndarray,
                       hess_alpha_beta_g: np.ndarray,
                       hess_beta_beta_g: np.ndarray) -> np.ndarray:
    """Total-derivative surrogate for the slow gradient in bilevel problems.

    Returns grad_alpha f - H_ab [H_bb]^{-1} grad_beta f, where H_bb must be
    invertible (strong convexity of the inner objective).
    """
    grad_alpha_f = np.asarray(grad_alpha_f, dtype=float)
    grad_beta_f = np.asarray(grad_beta_f, dtype=float)
    H_ab = np.atleast_2d(np.asarray(hess_alpha_beta_g, dtype=float))
    H_bb = np.atleast_2d(np.asarray(hess_beta_beta_g, dtype=float))
    try:
        solved = np.linalg.solve(H_bb, grad_beta_f)
    except np.linalg.LinAlgError:
        raise ConditioningError("inner Hessian is singular") from None
    if np.linalg.cond(H_bb) > 1e12:
        raise ConditioningError("inner Hessian is numerically singular")
    return grad_alpha_f - H_ab @ solved
