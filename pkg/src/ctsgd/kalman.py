"""Kalman-Bucy filter and tangent (sensitivity) filters.

All operations broadcast over arbitrary leading batch dimensions, so a
sweep of independent runs can be advanced in lockstep.  Parameter and
sensor sensitivities are carried as stacks with a leading derivative axis:
``x_hat_grad`` has shape (n_param, n_x) and ``Sigma_hat_grad`` has shape
(n_param, n_x, n_x) (plus any batch dimensions in front).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DimensionError


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


@dataclass
class LinearGaussianModel:
    """Matrices of a linear-Gaussian state-space model and their derivatives.

    dx = A x dt + dv,  Cov(dv) = Q dt
    dy = C x dt + dw,  Cov(dw) = R dt

    ``*_theta`` stacks hold the partial derivative of each matrix with
    respect to every model parameter; ``*_sens`` stacks hold derivatives
    with respect to every scalar sensor coordinate.  ``H`` is the constant
    symmetric PSD weight matrix of the sensor-placement objective
    Tr[H Sigma_hat].
    """

    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    R: np.ndarray
    A_theta: np.ndarray
    Q_theta: np.ndarray
    C_theta: np.ndarray
    R_theta: np.ndarray
    A_sens: np.ndarray
    Q_sens: np.ndarray
    C_sens: np.ndarray
    R_sens: np.ndarray
    H: np.ndarray | None = None
    R_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("A", "Q", "C", "R", "A_theta", "Q_theta", "C_theta",
                     "R_theta", "A_sens", "Q_sens", "C_sens", "R_sens"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.A.shape[-1]
        ny = self.C.shape[-2]
        if self.A.shape[-2:] != (n, n) or self.Q.shape[-2:] != (n, n):
            raise DimensionError("A and Q must be square with matching size")
        if self.C.shape[-1] != n or self.R.shape[-2:] != (ny, ny):
            raise DimensionError("C/R shapes inconsistent with A")
        for stack, proto in (("A_theta", self.A), ("Q_theta", self.Q),
                             ("C_theta", self.C), ("R_theta", self.R)):
            if getattr(self, stack).shape[-2:] != proto.shape[-2:]:
                raise DimensionError(f"{stack} slices must match {stack[0]} shape")
        try:
            self.R_inv = np.linalg.inv(self.R)
        except np.linalg.LinAlgError:
            raise ConfigurationError("observation covariance R is singular") from None
        if self.H is not None:
            self.H = np.asarray(self.H, dtype=float)
        # Model matrices are immutable per instance, so the gain factor
        # C' R^-1 can be fixed once.
        self._Ct_Rinv = np.swapaxes(self.C, -1, -2) @ self.R_inv

    @property
    def n_x(self) -> int:
        return self.A.shape[-1]

    @property
    def n_y(self) -> int:
        return self.C.shape[-2]

    @property
    def n_theta(self) -> int:
        return self.A_theta.shape[0]

    @property
    def n_sens(self) -> int:
        return self.C_sens.shape[0]

    def derivative_stacks(self, wrt: str):
        if wrt == "parameters":
            return self.A_theta, self.Q_theta, self.C_theta, self.R_theta
        if wrt == "sensors":
            return self.A_sens, self.Q_sens, self.C_sens, self.R_sens
        raise ConfigurationError(f"unknown derivative family {wrt!r}")


@dataclass
class KbState:
    """Filter mean and covariance; covariance kept symmetric by construction."""

    x_hat: np.ndarray
    Sigma_hat: np.ndarray

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float)
        self.Sigma_hat = np.asarray(self.Sigma_hat, dtype=float)


@dataclass
class KbTangent:
    """Derivative of (x_hat, Sigma_hat) with respect to a parameter family."""

    x_hat_grad: np.ndarray      # (..., n_param, n_x)
    Sigma_hat_grad: np.ndarray  # (..., n_param, n_x, n_x)

    def __post_init__(self):
        self.x_hat_grad = np.asarray(self.x_hat_grad, dtype=float)
        self.Sigma_hat_grad = np.asarray(self.Sigma_hat_grad, dtype=float)

    @classmethod
    def zeros(cls, n_param: int, n_x: int, batch_shape: tuple = ()) -> "KbTangent":
        return cls(np.zeros(batch_shape + (n_param, n_x)),
                   np.zeros(batch_shape + (n_param, n_x, n_x)))


def _mv(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Matrix-vector product broadcasting over leading axes."""
    if mat.ndim == 2 and vec.ndim == 1:
        return mat @ vec
    return np.einsum("...ij,...j->...i", mat, vec)


def kb_gain(model: LinearGaussianModel, Sigma: np.ndarray) -> np.ndarray:
    return Sigma @ model._Ct_Rinv


def kb_step(model: LinearGaussianModel, state: KbState, dy: np.ndarray,
            dt: float) -> KbState:
    """One Euler step of the Kalman-Bucy mean/covariance SDE."""
    x, S = state.x_hat, state.Sigma_hat
    K = S @ model._Ct_Rinv
    innov = dy - _mv(model.C, x) * dt
    x_new = x + _mv(model.A, x) * dt + _mv(K, innov)
    AS = model.A @ S
    drift = AS + np.swapaxes(AS, -1, -2) + model.Q \
        - K @ model.R @ np.swapaxes(K, -1, -2)
    return KbState(x_new, _sym(S + drift * dt))


def kb_tangent_step(model: LinearGaussianModel, state: KbState,
                    tangent: KbTangent, dy: np.ndarray, dt: float,
                    wrt: str = "parameters") -> KbTangent:
    """One Euler step of the formally differentiated filter SDEs.

    ``state`` must be the pre-step filter state consistent with
    ``tangent``; the same ``dy`` must be fed to kb_step.
    """
    A_p, Q_p, C_p, R_p = model.derivative_stacks(wrt)
    x, S = state.x_hat, state.Sigma_hat
    xg, Sg = tangent.x_hat_grad, tangent.Sigma_hat_grad
    Ct = np.swapaxes(model.C, -1, -2)
    Cpt = np.swapaxes(C_p, -1, -2)
    Rinv = model.R_inv
    K = S @ (Ct @ Rinv)                       # (..., n, ny)
    S_ = S[..., None, :, :]                   # broadcast over the param axis
    # K_p = Sigma_p C' R^-1 + Sigma C_p' R^-1 - Sigma C' R^-1 R_p R^-1
    K_p = Sg @ (Ct @ Rinv) + S_ @ (Cpt @ Rinv) \
        - K[..., None, :, :] @ (R_p @ Rinv)
    innov = dy - _mv(model.C, x) * dt         # (..., ny)
    # Mean sensitivity.
    dxg = (_mv(A_p, x[..., None, :]) + _mv(model.A, xg)) * dt \
        + _mv(K_p, innov[..., None, :]) \
        - _mv(K[..., None, :, :],
              (_mv(C_p, x[..., None, :]) + _mv(model.C, xg)) * dt)
    # Covariance sensitivity (differentiated Riccati drift).
    Kt = np.swapaxes(K, -1, -2)
    K_pt = np.swapaxes(K_p, -1, -2)
    lin = A_p @ S_ + model.A @ Sg
    gain = K_p @ (model.R @ Kt)[..., None, :, :] \
        + K[..., None, :, :] @ (R_p @ Kt[..., None, :, :]) \
        + (K @ model.R)[..., None, :, :] @ K_pt
    dSg = (lin + np.swapaxes(lin, -1, -2) + Q_p - gain) * dt
    return KbTangent(xg + dxg, _sym(Sg + dSg))


def riccati_steady_state(model: LinearGaussianModel, max_time: float = 1e5,
                         tol: float = 1e-9) -> np.ndarray:
    """Stabilizing solution of A S + S A' + Q - S C' R^-1 C S = 0.

    Integrates the Riccati ODE (classical RK4, step chosen from the model's
    scale) from S = 0 until the algebraic residual has Frobenius norm
    below ``tol``.  Deliberately self-contained: never calls kb_step, so it
    can serve as an independent oracle for the filter code.
    """
    A, Q, At = model.A, model.Q, model.A.T
    CtRC = model.C.T @ model.R_inv @ model.C

    def rhs(S):
        return A @ S + S @ At + Q - S @ CtRC @ S

    scale = np.linalg.norm(A, 2) + np.linalg.norm(Q, 2) * np.linalg.norm(CtRC, 2) + 1.0
    h = min(0.1, 0.5 / scale)
    S = np.zeros_like(A)
    n_steps = int(np.ceil(max_time / h))
    for k in range(n_steps):
        k1 = rhs(S)
        if k % 25 == 0 and np.linalg.norm(k1) < tol:
            return _sym(S)
        k2 = rhs(S + 0.5 * h * k1)
        k3 = rhs(S + 0.5 * h * k2)
        k4 = rhs(S + h * k3)
        S = _sym(S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        if not np.all(np.isfinite(S)):
            raise ConvergenceError("Riccati integration diverged")
    if np.linalg.norm(rhs(S)) < tol:
        return _sym(S)
    raise ConvergenceError(
        f"Riccati residual {np.linalg.norm(rhs(S)):.3e} above {tol:g} "
        f"after horizon {max_time:g}")


def psi_readouts(model: LinearGaussianModel, state: KbState):
    """Observation prediction C x_hat and objective readout Tr[H Sigma_hat]."""
    psi_c = _mv(model.C, state.x_hat)
    if model.H is None:
        psi_j = np.trace(state.Sigma_hat, axis1=-2, axis2=-1)
    else:
        psi_j = np.einsum("ij,...ji->...", model.H, state.Sigma_hat)
    return psi_c, psi_j


def build_scalar_model(theta: float, q: float, c: float, tau2: float,
                       o: float, o0: float, H: float = 1.0) -> LinearGaussianModel:
    """Scalar model dx = -theta x dt + dv, dy = c x dt + dw.

    Signal noise variance q; observation noise variance
    r(o) = tau2 + (o - o0)^2.  The single model parameter is theta and the
    single sensor coordinate is o.
    """
    r = tau2 + (o - o0) ** 2
    if r <= 0:
        raise ConfigurationError("observation variance must be positive")
    e = np.ones((1, 1, 1))
    z = np.zeros((1, 1, 1))
    return LinearGaussianModel(
        A=[[-theta]], Q=[[q]], C=[[c]], R=[[r]],
        A_theta=-e, Q_theta=z, C_theta=z, R_theta=z,
        A_sens=z, Q_sens=z, C_sens=z, R_sens=2.0 * (o - o0) * e,
        H=[[H]],
    )
