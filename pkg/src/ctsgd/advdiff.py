"""Spectral model of a stochastic advection-diffusion field on the torus.

The field on [0,1)^2 is expanded in the real Fourier basis
sqrt(2) cos(2 pi k.s), sqrt(2) sin(2 pi k.s), one pair per conjugate mode
pair k (zero mode excluded).  The advection-diffusion operator is diagonal
over complex modes with eigenvalue

    lambda_k = -2 pi i mu.k - 4 pi^2 k' Sigma k - zeta,

which the real packing realizes as 2x2 blocks [[rho, omega], [-omega, rho]]
with rho = Re lambda_k and omega = Im lambda_k.  Signal noise has a Matern
spectrum, and each sensor observes the average of the field over a disc.
Everything needed by the Kalman-Bucy tangent filters (derivatives of A, Q,
C, R in all nine model parameters and all sensor coordinates) is assembled
here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j1

from .errors import ConfigurationError, DimensionError
from .kalman import LinearGaussianModel

# Fixed ordering of the model parameter vector.
THETA_NAMES = ("rho0", "sigma2", "zeta", "rho1", "gamma_aniso", "alpha_aniso",
               "mu_x", "mu_y", "tau2")

TWO_PI = 2.0 * np.pi
FOUR_PI2 = 4.0 * np.pi ** 2


@dataclass(frozen=True)
class AdvDiffParams:
    rho0: float
    sigma2: float
    zeta: float
    rho1: float
    gamma_aniso: float
    alpha_aniso: float
    mu_x: float
    mu_y: float
    tau2: float

    def __post_init__(self):
        for name in ("rho0", "sigma2", "zeta", "rho1", "gamma_aniso", "tau2"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.alpha_aniso <= np.pi / 2:
            raise ConfigurationError("alpha_aniso must lie in [0, pi/2]")

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "AdvDiffParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (9,):
            raise DimensionError(f"theta must be a 9-vector, got {theta.shape}")
        return cls(*theta)

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in THETA_NAMES])


@dataclass(frozen=True)
class SpectralGrid:
    """Conjugate-pair mode list; real dimension is 2 * n_pairs."""

    k_max: int
    modes: np.ndarray  # (n_pairs, 2) integer representatives

    @property
    def n_pairs(self) -> int:
        return self.modes.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.modes.shape[0]


def build_grid(k_max: int) -> SpectralGrid:
    """All modes k != 0 with |k|_inf <= k_max, one representative per +-k pair.

    The representative has k1 > 0, or k1 == 0 and k2 > 0; ordering is
    lexicographic and therefore deterministic.
    """
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    reps = [(k1, k2)
            for k1 in range(0, k_max + 1)
            for k2 in range(-k_max, k_max + 1)
            if (k1 > 0) or (k1 == 0 and k2 > 0)]
    return SpectralGrid(k_max=k_max, modes=np.array(sorted(reps), dtype=int))


@dataclass(frozen=True)
class SensorConfig:
    locations: np.ndarray  # (n_y, 2), wrapped to [0, 1)
    radius: float
    targets: np.ndarray    # (n_t, 2) objective target points

    def __post_init__(self):
        object.__setattr__(self, "locations",
                           np.mod(np.asarray(self.locations, dtype=float), 1.0))
        object.__setattr__(self, "targets",
                           np.mod(np.asarray(self.targets, dtype=float), 1.0))
        if not 0 < self.radius < 0.5:
            raise ConfigurationError("disc radius must lie in (0, 0.5)")

    @property
    def n_y(self) -> int:
        return self.locations.shape[0]


def _diffusion_matrix(params: AdvDiffParams):
    """Sigma(rho1, gamma, alpha) and its derivatives in (rho1, gamma, alpha).

    Sigma^{-1} = (1/rho1^2) G' G with G = [[cos a, sin a], [-g sin a, cos a]].
    """
    g, a = params.gamma_aniso, params.alpha_aniso
    ca, sa = np.cos(a), np.sin(a)
    M = np.array([[ca ** 2 + g ** 2 * sa ** 2, ca * sa * (1.0 - g)],
                  [ca * sa * (1.0 - g), 1.0]])
    M_inv = np.linalg.inv(M)
    Sigma = params.rho1 ** 2 * M_inv
    M_g = np.array([[2.0 * g * sa ** 2, -ca * sa],
                    [-ca * sa, 0.0]])
    M_a = np.array([[2.0 * ca * sa * (g ** 2 - 1.0), (ca ** 2 - sa ** 2) * (1.0 - g)],
                    [(ca ** 2 - sa ** 2) * (1.0 - g), 0.0]])
    d_rho1 = 2.0 * Sigma / params.rho1
    d_gamma = -params.rho1 ** 2 * M_inv @ M_g @ M_inv
    d_alpha = -params.rho1 ** 2 * M_inv @ M_a @ M_inv
    return Sigma, d_rho1, d_gamma, d_alpha


def operator_blocks(params: AdvDiffParams, grid: SpectralGrid):
    """Per-pair (rho, omega) of lambda_k and their theta-derivative stacks.

    Returns (rho, omega, rho_theta, omega_theta) with shapes (n_pairs,),
    (n_pairs,), (9, n_pairs), (9, n_pairs).
    """
    k = grid.modes.astype(float)  # (np, 2)
    Sigma, S_rho1, S_gamma, S_alpha = _diffusion_matrix(params)
    quad = np.einsum("ni,ij,nj->n", k, Sigma, k)
    rho = -FOUR_PI2 * quad - params.zeta
    omega = -TWO_PI * (params.mu_x * k[:, 0] + params.mu_y * k[:, 1])
    if np.any(rho >= 0):
        raise ConfigurationError("advection-diffusion operator is not stable")
    n = grid.n_pairs
    rho_theta = np.zeros((9, n))
    omega_theta = np.zeros((9, n))
    rho_theta[2] = -1.0  # zeta
    for idx, S_d in ((3, S_rho1), (4, S_gamma), (5, S_alpha)):
        rho_theta[idx] = -FOUR_PI2 * np.einsum("ni,ij,nj->n", k, S_d, k)
    omega_theta[6] = -TWO_PI * k[:, 0]  # mu_x
    omega_theta[7] = -TWO_PI * k[:, 1]  # mu_y
    return rho, omega, rho_theta, omega_theta


def _blocks_to_dense(rho: np.ndarray, omega: np.ndarray, dim: int) -> np.ndarray:
    A = np.zeros((dim, dim))
    idx = np.arange(len(rho)) * 2
    A[idx, idx] = rho
    A[idx + 1, idx + 1] = rho
    A[idx, idx + 1] = omega
    A[idx + 1, idx] = -omega
    return A


def assemble_operator(params: AdvDiffParams, grid: SpectralGrid):
    """Dense real-packed operator A(theta) and its 9 derivative matrices."""
    rho, omega, rho_t, omega_t = operator_blocks(params, grid)
    A = _blocks_to_dense(rho, omega, grid.dim)
    A_theta = np.stack([_blocks_to_dense(rho_t[i], omega_t[i], grid.dim)
                        for i in range(9)])
    return A, A_theta


def complex_eigenvalues(A: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Recover lambda_k from the real-packed block structure."""
    idx = np.arange(grid.n_pairs) * 2
    return A[idx, idx] + 1j * A[idx, idx + 1]


def matern_spectrum(params: AdvDiffParams, grid: SpectralGrid):
    """Mode variances eta_k^2 on the real packing plus theta-derivatives.

    Returns (q_diag, q_diag_theta) with shapes (dim,), (9, dim).  Each real
    coordinate of a pair carries the full mode variance eta_k^2.
    """
    k = grid.modes.astype(float)
    kk = np.sum(k * k, axis=1)
    base = kk + 1.0 / params.rho0 ** 2
    eta2 = params.sigma2 / FOUR_PI2 * base ** -2
    d_rho0 = 4.0 * params.sigma2 / FOUR_PI2 * params.rho0 ** -3 * base ** -3
    d_sigma2 = eta2 / params.sigma2
    q_diag = np.repeat(eta2, 2)
    q_diag_theta = np.zeros((9, grid.dim))
    q_diag_theta[0] = np.repeat(d_rho0, 2)
    q_diag_theta[1] = np.repeat(d_sigma2, 2)
    return q_diag, q_diag_theta


def disc_average_factor(grid: SpectralGrid, radius: float) -> np.ndarray:
    """Disc average of each complex mode magnitude: 2 J1(z)/z, z = 2 pi r |k|."""
    k_norm = np.linalg.norm(grid.modes.astype(float), axis=1)
    z = TWO_PI * radius * k_norm
    return 2.0 * j1(z) / z


def disc_average_rows(points: np.ndarray, radius: float,
                      grid: SpectralGrid) -> np.ndarray:
    """Real-packed disc-average evaluation rows, shape (n_points, dim).

    Row entries are sqrt(2) g_k cos(2 pi k.o) on the cosine coordinate and
    sqrt(2) g_k sin(2 pi k.o) on the sine coordinate.  The closed Bessel
    form is exact on the torus for radius < 0.5 (the disc never wraps onto
    itself).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    g = disc_average_factor(grid, radius)  # (np,)
    phase = TWO_PI * points @ grid.modes.T.astype(float)  # (n_points, np)
    rows = np.empty((points.shape[0], grid.dim))
    rows[:, 0::2] = np.sqrt(2.0) * g * np.cos(phase)
    rows[:, 1::2] = np.sqrt(2.0) * g * np.sin(phase)
    return rows


def observation_matrix(sensors: SensorConfig, grid: SpectralGrid):
    """C(o) and its derivatives with respect to each sensor coordinate.

    Returns (C, C_sens) with shapes (n_y, dim) and (2 n_y, n_y, dim); the
    sensor-coordinate ordering is (x of sensor 0, y of sensor 0, x of
    sensor 1, ...).  Only the owning sensor's row has a nonzero derivative.
    """
    C = disc_average_rows(sensors.locations, sensors.radius, grid)
    ny = sensors.n_y
    g = disc_average_factor(grid, sensors.radius)
    phase = TWO_PI * sensors.locations @ grid.modes.T.astype(float)
    kf = grid.modes.astype(float)
    C_sens = np.zeros((2 * ny, ny, grid.dim))
    for i in range(ny):
        for axis in range(2):
            fac = TWO_PI * kf[:, axis]
            row = np.empty(grid.dim)
            row[0::2] = -np.sqrt(2.0) * g * fac * np.sin(phase[i])
            row[1::2] = np.sqrt(2.0) * g * fac * np.cos(phase[i])
            C_sens[2 * i + axis, i] = row
    return C, C_sens


def build_linear_model(params: AdvDiffParams, sensors: SensorConfig,
                       grid: SpectralGrid) -> LinearGaussianModel:
    """Package the spectral model for the Kalman-Bucy tangent filters.

    H = Phi' Phi where Phi holds disc-average evaluation rows at the target
    locations, so Tr[H Sigma_hat] is the summed posterior variance of the
    disc-averaged field at the targets.
    """
    A, A_theta = assemble_operator(params, grid)
    q_diag, q_diag_theta = matern_spectrum(params, grid)
    C, C_sens = observation_matrix(sensors, grid)
    ny, dim = sensors.n_y, grid.dim
    n_sens = 2 * ny
    R = params.tau2 * np.eye(ny)
    R_theta = np.zeros((9, ny, ny))
    R_theta[8] = np.eye(ny)  # tau2
    Phi = disc_average_rows(sensors.targets, sensors.radius, grid)
    return LinearGaussianModel(
        A=A, Q=np.diag(q_diag), C=C, R=R,
        A_theta=A_theta, Q_theta=np.stack([np.diag(q) for q in q_diag_theta]),
        C_theta=np.zeros((9, ny, dim)), R_theta=R_theta,
        A_sens=np.zeros((n_sens, dim, dim)), Q_sens=np.zeros((n_sens, dim, dim)),
        C_sens=C_sens, R_sens=np.zeros((n_sens, ny, ny)),
        H=Phi.T @ Phi,
    )


def stationary_variance(params: AdvDiffParams, grid: SpectralGrid) -> np.ndarray:
    """Diagonal stationary covariance eta_k^2 / (2 |rho_k|) of the signal."""
    rho, _, _, _ = operator_blocks(params, grid)
    q_diag, _ = matern_spectrum(params, grid)
    return q_diag / (2.0 * np.abs(np.repeat(rho, 2)))


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance on the unit torus, broadcasting over points."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d ** 2, axis=-1))
