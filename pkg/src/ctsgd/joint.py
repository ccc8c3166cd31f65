"""Joint online parameter estimation and optimal sensor placement.

Couples a synthesized partially observed diffusion, its exact filter and
tangent filters, and the two-timescale updates:

    d theta = gamma_1(t) [psi_C^theta]' R^-1(o) (dy - psi_C dt)
    d o     = -gamma_2(t) psi_j^o dt

with per-step ordering: synthesize dy from the beginning-of-step signal,
advance the signal, form all readouts at beginning-of-step values, update
theta then o, project, advance the filter and tangents, then update the
running averages.

Three drivers are provided:

* ``joint_rml_osp_step`` - a single generic step over a
  ``LinearGaussianModel`` bundle (reference implementation, unbatched);
* ``run_scalar_linear_joint`` and ``run_benes_joint`` - vectorized lockstep
  sweeps where every run in a batch carries its own parameters, rates and
  noise streams;
* ``run_advdiff_joint`` - the spectral advection-diffusion model, exploiting
  the 2x2 block structure of the operator for the tangent Riccati updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import advdiff, benes
from .errors import NumericBlowupError
from .kalman import KbState, KbTangent, LinearGaussianModel, kb_step, kb_tangent_step
from .sde import NoiseStream
from .twotimescale import (IterateState, LearningRateSchedule, ProjectionSet,
                           lr_eval, polyak_ruppert_update, project_increment)


def rate(gamma0, eta, delta, t, constant=False):
    """Per-coordinate learning rate; gamma0 = 0 freezes a coordinate."""
    g0 = np.asarray(gamma0, dtype=float)
    if constant:
        return g0
    return g0 * (delta + t) ** (-np.asarray(eta, dtype=float))


def _batched_normals(seeds, stream_id: int, k0: int, n: int) -> np.ndarray:
    """Unit normals for steps k0..k0+n-1 of a batch of runs, shape (n, B)."""
    cols = [NoiseStream(int(s), stream_id, 1).standard_normal_block(k0, n)[:, 0]
            for s in seeds]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Generic reference step over a LinearGaussianModel bundle.
# ---------------------------------------------------------------------------

@dataclass
class JointBundle:
    """Everything the generic joint step needs.

    ``model_fn(theta, o)`` builds the filter's model at the current
    iterates.  The truth callables synthesize the data-generating system,
    which holds the true parameters and reads the signal at the current
    sensor locations.
    """

    model_fn: Callable[[np.ndarray, np.ndarray], LinearGaussianModel]
    truth_drift: Callable[[np.ndarray], np.ndarray]
    truth_noise_chol: np.ndarray
    truth_obs: Callable[[np.ndarray, np.ndarray], np.ndarray]  # (o, x) -> C*(o) x
    obs_noise_chol: Callable[[np.ndarray], np.ndarray]         # o -> chol R(o)


@dataclass
class JointAugState:
    """Latent signal plus filter and tangent states (the controlled process)."""

    x: np.ndarray
    kb: KbState
    tan_theta: KbTangent
    tan_sens: KbTangent


def joint_rml_osp_step(bundle: JointBundle, it: IterateState,
                       aug: JointAugState, dW_x: np.ndarray, dW_y: np.ndarray,
                       dt: float, slow: LearningRateSchedule,
                       fast: LearningRateSchedule,
                       sets: ProjectionSet | None = None):
    """One step of the joint algorithm (reference implementation)."""
    model = bundle.model_fn(it.alpha, it.beta)
    # (1) synthesize the observation increment from the beginning-of-step
    # signal, then advance the signal.
    dy = bundle.truth_obs(it.beta, aug.x) * dt + bundle.obs_noise_chol(it.beta) @ dW_y
    x_new = aug.x + bundle.truth_drift(aug.x) * dt + bundle.truth_noise_chol @ dW_x
    # (2) readouts at beginning-of-step filter/tangent values.
    x_hat, Sg_t, xg_t = aug.kb.x_hat, aug.tan_theta.Sigma_hat_grad, aug.tan_theta.x_hat_grad
    psi_c = model.C @ x_hat
    psi_c_theta = np.einsum("pij,j->pi", model.C_theta, x_hat) \
        + np.einsum("ij,pj->pi", model.C, xg_t)
    H = model.H if model.H is not None else np.eye(model.n_x)
    psi_j_sens = np.einsum("ij,pji->p", H, aug.tan_sens.Sigma_hat_grad)
    innov = dy - psi_c * dt
    # (3)-(5) iterate updates with per-coordinate rejection projection.
    g1 = lr_eval(slow, it.t)
    g2 = lr_eval(fast, it.t)
    inc_theta = g1 * (psi_c_theta @ model.R_inv @ innov)
    inc_o = -g2 * psi_j_sens * dt
    if not (np.all(np.isfinite(inc_theta)) and np.all(np.isfinite(inc_o))):
        raise NumericBlowupError("non-finite iterate increment",
                                 component="theta/o")
    it.prev_alpha, it.prev_beta = it.alpha, it.beta
    if sets is None:
        it.alpha = it.alpha + inc_theta
        it.beta = it.beta + inc_o
    else:
        it.alpha = project_increment(it.alpha, inc_theta,
                                     sets.alpha_lower, sets.alpha_upper)
        it.beta = project_increment(it.beta, inc_o,
                                    sets.beta_lower, sets.beta_upper)
    # Filter and tangents advance at the beginning-of-step iterates.
    tan_theta = kb_tangent_step(model, aug.kb, aug.tan_theta, dy, dt, "parameters")
    tan_sens = kb_tangent_step(model, aug.kb, aug.tan_sens, dy, dt, "sensors")
    kb = kb_step(model, aug.kb, dy, dt)
    it.t += dt
    polyak_ruppert_update(it, dt)
    return it, JointAugState(x_new, kb, tan_theta, tan_sens)


# ---------------------------------------------------------------------------
# Scalar linear-Gaussian sweep (vectorized over a batch of runs).
# ---------------------------------------------------------------------------

@dataclass
class ScalarLinearSpec:
    """Batched joint runs on dx = -theta x dt + dv, dy = x dt + dw.

    Arrays are per-run; scalars broadcast.  r(o) = tau2 + (o - o0)^2.
    """

    theta_star: float
    q: float
    tau2: float
    o0: float
    theta0: np.ndarray
    o_init: np.ndarray
    seeds: np.ndarray
    g0_theta: np.ndarray
    eta_theta: np.ndarray
    g0_o: np.ndarray
    eta_o: np.ndarray
    theta_box: tuple
    o_box: tuple
    dt: float
    n_steps: int
    record_every: int = 1000
    delta: float = 1.0
    constant_rates: bool = False
    H: float = 1.0


def run_scalar_linear_joint(spec: ScalarLinearSpec) -> dict:
    """Lockstep sweep of the scalar joint algorithm.

    Identical in law (and, run for run, in realization) to iterating
    ``joint_rml_osp_step`` over the scalar model, but with the filter,
    tangent and update recursions written out in scalar arithmetic.
    """
    B = len(np.atleast_1d(spec.seeds))
    theta = np.broadcast_to(np.asarray(spec.theta0, float), (B,)).copy()
    o = np.broadcast_to(np.asarray(spec.o_init, float), (B,)).copy()
    x = np.zeros(B)
    xh = np.zeros(B)
    Sig = np.zeros(B)
    xh_t = np.zeros(B)   # d x_hat / d theta
    Sig_t = np.zeros(B)
    xh_o = np.zeros(B)
    Sig_o = np.zeros(B)
    int_theta = np.zeros(B)
    int_o = np.zeros(B)
    dt, q = spec.dt, spec.q
    sq = np.sqrt(q * dt)
    lo_t, hi_t = spec.theta_box
    lo_o, hi_o = spec.o_box
    n_rec = spec.n_steps // spec.record_every + 1
    rec = {k: np.empty((n_rec, B)) for k in
           ("theta", "o", "avg_theta", "avg_o", "Sigma", "obj")}
    times = np.empty(n_rec)

    def snapshot(j, t, avg_t, avg_o):
        times[j] = t
        rec["theta"][j], rec["o"][j] = theta, o
        rec["avg_theta"][j], rec["avg_o"][j] = avg_t, avg_o
        rec["Sigma"][j] = Sig
        rec["obj"][j] = spec.H * Sig

    snapshot(0, 0.0, theta, o)
    j = 1
    block = 4096
    for k0 in range(0, spec.n_steps, block):
        n = min(block, spec.n_steps - k0)
        zx = _batched_normals(spec.seeds, 0, k0, n)
        zy = _batched_normals(spec.seeds, 1, k0, n)
        for i in range(n):
            k = k0 + i
            t = k * dt
            r = spec.tau2 + (o - spec.o0) ** 2
            r_o = 2.0 * (o - spec.o0)
            dy = x * dt + np.sqrt(r * dt) * zy[i]
            x = x - spec.theta_star * x * dt + sq * zx[i]
            innov = dy - xh * dt
            g1 = rate(spec.g0_theta, spec.eta_theta, spec.delta, t,
                      spec.constant_rates)
            g2 = rate(spec.g0_o, spec.eta_o, spec.delta, t, spec.constant_rates)
            theta_prev, o_prev = theta, o
            theta = project_increment(theta, g1 * xh_t / r * innov, lo_t, hi_t)
            o = project_increment(o, -g2 * spec.H * Sig_o * dt, lo_o, hi_o)
            # Filter and tangents at beginning-of-step iterates.
            K = Sig / r
            K_t = Sig_t / r
            K_o = Sig_o / r - Sig * r_o / r ** 2
            xh_t_new = xh_t + (-xh - theta_prev * xh_t) * dt + K_t * innov \
                - K * xh_t * dt
            Sig_t_new = Sig_t + (-2.0 * Sig - 2.0 * theta_prev * Sig_t
                                 - 2.0 * Sig * Sig_t / r) * dt
            xh_o_new = xh_o - theta_prev * xh_o * dt + K_o * innov \
                - K * xh_o * dt
            Sig_o_new = Sig_o + (-2.0 * theta_prev * Sig_o
                                 - 2.0 * Sig * Sig_o / r
                                 + Sig ** 2 * r_o / r ** 2) * dt
            xh = xh - theta_prev * xh * dt + K * innov
            Sig = Sig + (q - 2.0 * theta_prev * Sig - Sig ** 2 / r) * dt
            xh_t, Sig_t, xh_o, Sig_o = xh_t_new, Sig_t_new, xh_o_new, Sig_o_new
            int_theta = int_theta + 0.5 * (theta_prev + theta) * dt
            int_o = int_o + 0.5 * (o_prev + o) * dt
            if (k + 1) % spec.record_every == 0:
                tt = (k + 1) * dt
                snapshot(j, tt, int_theta / tt, int_o / tt)
                j += 1
        if not np.all(np.isfinite(theta)):
            raise NumericBlowupError("scalar joint run diverged", step=k0)
    return {"t": times[:j], **{key: v[:j] for key, v in rec.items()},
            "final_theta": theta, "final_o": o,
            "final_avg_theta": int_theta / (spec.n_steps * dt),
            "final_avg_o": int_o / (spec.n_steps * dt)}


# ---------------------------------------------------------------------------
# Benes sweep (vectorized over a batch of runs).
# ---------------------------------------------------------------------------

@dataclass
class BenesJointSpec:
    """Batched joint runs on the tanh-drift model.

    Truth (mu_star, o0_star) may jump at configured times (tracking mode).
    A zero gamma0 freezes the corresponding coordinate.
    """

    mu_star: float
    sigma_star: float
    c_star: float
    tau2: float
    o0_star: float
    mu0: np.ndarray
    sigma0: np.ndarray
    c0: np.ndarray
    o_init: np.ndarray
    seeds: np.ndarray
    g0_mu: np.ndarray
    eta_mu: np.ndarray
    g0_o: np.ndarray
    eta_o: np.ndarray
    g0_sigma: np.ndarray = 0.0
    eta_sigma: np.ndarray = 1.0
    g0_c: np.ndarray = 0.0
    eta_c: np.ndarray = 1.0
    mu_box: tuple = (0.1, 8.0)
    sigma_box: tuple = (0.5, 8.0)
    c_box: tuple = (0.1, 4.0)
    o_box: tuple = (0.0, 8.0)
    dt: float = 0.01
    n_steps: int = 1_000_000
    record_every: int = 1000
    delta: float = 1.0
    constant_rates: bool = False
    # Tracking-mode jump schedule: list of (time, mu_star, o0_star).
    jumps: list = field(default_factory=list)


def run_benes_joint(spec: BenesJointSpec) -> dict:
    """Lockstep sweep of the joint algorithm on the Benes model."""
    B = len(np.atleast_1d(spec.seeds))

    def vec(v):
        return np.broadcast_to(np.asarray(v, float), (B,)).copy()

    mu, sig, c, o = vec(spec.mu0), vec(spec.sigma0), vec(spec.c0), vec(spec.o_init)
    x = np.zeros(B)
    state = benes.BenesFilterState.initial((B,))
    ints = {k: np.zeros(B) for k in ("mu", "sigma", "c", "o")}
    mu_star, o0_star = spec.mu_star, spec.o0_star
    jumps = sorted(spec.jumps)
    dt = spec.dt
    n_rec = spec.n_steps // spec.record_every + 1
    rec = {k: np.empty((n_rec, B)) for k in
           ("mu", "sigma", "c", "o", "avg_mu", "avg_o", "Sigma_hat",
            "mu_star", "o0_star")}
    times = np.empty(n_rec)

    def snapshot(j, t, Sigma_hat):
        times[j] = t
        rec["mu"][j], rec["sigma"][j], rec["c"][j], rec["o"][j] = mu, sig, c, o
        if t > 0:
            rec["avg_mu"][j] = ints["mu"] / t
            rec["avg_o"][j] = ints["o"] / t
        else:
            rec["avg_mu"][j], rec["avg_o"][j] = mu, o
        rec["Sigma_hat"][j] = Sigma_hat
        rec["mu_star"][j] = mu_star
        rec["o0_star"][j] = o0_star

    snapshot(0, 0.0, np.zeros(B))
    j = 1
    block = 4096
    boxes = {"mu": spec.mu_box, "sigma": spec.sigma_box,
             "c": spec.c_box, "o": spec.o_box}
    for k0 in range(0, spec.n_steps, block):
        n = min(block, spec.n_steps - k0)
        zx = _batched_normals(spec.seeds, 0, k0, n)
        zy = _batched_normals(spec.seeds, 1, k0, n)
        for i in range(n):
            k = k0 + i
            t = k * dt
            while jumps and t >= jumps[0][0]:
                _, mu_star, o0_star = jumps.pop(0)
            # Observation/signal at the true parameters, sensor at o.
            r_true = spec.tau2 + (o - o0_star) ** 2
            dy = spec.c_star * x * dt + np.sqrt(r_true * dt) * zy[i]
            x = x + benes.benes_signal_drift(mu_star, spec.sigma_star, x) * dt \
                + spec.sigma_star * np.sqrt(dt) * zx[i]
            model = benes.BenesModel(mu=mu, sigma=sig, c=c, tau2=spec.tau2,
                                     o0=o0_star, o=o)
            x_hat, Sigma_hat, x_g, Sig_g = benes.benes_posterior_moments(model, state)
            innov = dy - c * x_hat * dt
            rinv = 1.0 / model.r
            # theta ascent on the log-likelihood, o descent on Tr[Sigma_hat].
            g = {name: rate(getattr(spec, f"g0_{name}"),
                            getattr(spec, f"eta_{name}"), spec.delta, t,
                            spec.constant_rates)
                 for name in ("mu", "sigma", "c", "o")}
            inc = {
                "mu": g["mu"] * c * x_g[0] * rinv * innov,
                "sigma": g["sigma"] * c * x_g[1] * rinv * innov,
                "c": g["c"] * (x_hat + c * x_g[2]) * rinv * innov,
                "o": -g["o"] * Sig_g[3] * dt,
            }
            prev = {"mu": mu, "sigma": sig, "c": c, "o": o}
            mu = project_increment(mu, inc["mu"], *boxes["mu"])
            sig = project_increment(sig, inc["sigma"], *boxes["sigma"])
            c = project_increment(c, inc["c"], *boxes["c"])
            o = project_increment(o, inc["o"], *boxes["o"])
            state = benes.benes_step(model, state, dy, dt, step_index=k)
            for name, cur in (("mu", mu), ("sigma", sig), ("c", c), ("o", o)):
                ints[name] = ints[name] + 0.5 * (prev[name] + cur) * dt
            if (k + 1) % spec.record_every == 0:
                snapshot(j, (k + 1) * dt, Sigma_hat)
                j += 1
    return {"t": times[:j], **{key: v[:j] for key, v in rec.items()},
            "final": {"mu": mu, "sigma": sig, "c": c, "o": o,
                      "avg_mu": ints["mu"] / (spec.n_steps * dt),
                      "avg_o": ints["o"] / (spec.n_steps * dt)}}


# ---------------------------------------------------------------------------
# Advection-diffusion joint run (single run; block-structured tangents).
# ---------------------------------------------------------------------------

@dataclass
class AdvDiffJointSpec:
    theta_star: np.ndarray
    theta0: np.ndarray
    targets: np.ndarray       # (n_y, 2)
    sensors0: np.ndarray      # (n_y, 2)
    radius: float
    k_max: int
    seed: int
    g0_theta: np.ndarray      # (9,)
    eta_theta: np.ndarray
    g0_o: np.ndarray          # scalar or (2 n_y,)
    eta_o: np.ndarray
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    dt: float = 0.02
    n_steps: int = 100_000
    record_every: int = 500
    delta: float = 1.0


def _block_mul(rho, omega, M):
    """Product of the block-diagonal operator with a matrix.

    ``M`` has shape (..., dim, cols); blocks act on consecutive row pairs.
    """
    shape = M.shape
    Mr = M.reshape(shape[:-2] + (len(rho), 2, shape[-1]))
    a, b = Mr[..., 0, :], Mr[..., 1, :]
    out = np.empty_like(Mr)
    out[..., 0, :] = rho[:, None] * a + omega[:, None] * b
    out[..., 1, :] = -omega[:, None] * a + rho[:, None] * b
    return out.reshape(shape)


def _block_mul_vec(rho, omega, v):
    vr = v.reshape(len(rho), 2)
    return np.column_stack((rho * vr[:, 0] + omega * vr[:, 1],
                            -omega * vr[:, 0] + rho * vr[:, 1])).reshape(-1)


def run_advdiff_joint(spec: AdvDiffJointSpec) -> dict:
    """Joint run on the spectral advection-diffusion model.

    Performs exactly the generic joint update, but exploits the block
    structure of A(theta) so the 25 tangent Riccati equations stay cheap.
    """
    grid = advdiff.build_grid(spec.k_max)
    dim, ny = grid.dim, spec.targets.shape[0]
    n_sens = 2 * ny
    dt = spec.dt
    truth = advdiff.AdvDiffParams.from_vector(spec.theta_star)
    rho_s, omega_s, _, _ = advdiff.operator_blocks(truth, grid)
    q_diag_s, _ = advdiff.matern_spectrum(truth, grid)
    noise_scale = np.sqrt(q_diag_s * dt)
    tau2_star = truth.tau2
    H = advdiff.disc_average_rows(spec.targets, spec.radius, grid)
    H = H.T @ H

    theta = np.asarray(spec.theta0, float).copy()
    o = np.mod(np.asarray(spec.sensors0, float).copy(), 1.0)  # (ny, 2)
    rng_x = NoiseStream(int(spec.seed), 0, dim)
    rng_y = NoiseStream(int(spec.seed), 1, ny)
    rng0 = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 2]))
    stat_var = advdiff.stationary_variance(truth, grid)
    x = rng0.standard_normal(dim) * np.sqrt(stat_var)
    xh = np.zeros(dim)
    Sig = np.diag(advdiff.stationary_variance(
        advdiff.AdvDiffParams.from_vector(theta), grid))
    xh_t = np.zeros((9, dim))
    Sig_t = np.zeros((9, dim, dim))
    Sig_o = np.zeros((n_sens, dim, dim))
    int_theta = np.zeros(9)
    int_o = np.zeros((ny, 2))
    g0_o = np.broadcast_to(np.asarray(spec.g0_o, float), (n_sens,))
    eta_o = np.broadcast_to(np.asarray(spec.eta_o, float), (n_sens,))
    kf = grid.modes.astype(float)
    sqrt2 = np.sqrt(2.0)
    g_disc = advdiff.disc_average_factor(grid, spec.radius)

    n_rec = spec.n_steps // spec.record_every + 1
    rec_t = np.empty(n_rec)
    rec_theta = np.empty((n_rec, 9))
    rec_o = np.empty((n_rec, ny, 2))
    rec_obj = np.empty(n_rec)
    rec_avg_theta = np.empty((n_rec, 9))

    def obs_rows(locs):
        """C(o), plus the coordinate-derivative rows, all (ny, dim)."""
        phase = advdiff.TWO_PI * locs @ kf.T     # (ny, n_pairs)
        cp, sp = np.cos(phase), np.sin(phase)
        C = np.empty((ny, dim))
        C[:, 0::2] = sqrt2 * g_disc * cp
        C[:, 1::2] = sqrt2 * g_disc * sp
        dC = np.empty((2, ny, dim))              # axis (x, y)
        for ax in range(2):
            fac = advdiff.TWO_PI * kf[:, ax]
            dC[ax, :, 0::2] = -sqrt2 * g_disc * fac * sp
            dC[ax, :, 1::2] = sqrt2 * g_disc * fac * cp
        return C, dC

    def snapshot(j, t, obj):
        rec_t[j] = t
        rec_theta[j] = theta
        rec_o[j] = o
        rec_obj[j] = obj
        rec_avg_theta[j] = int_theta / t if t > 0 else theta

    block = 2048
    j = 1
    snapshot(0, 0.0, float(np.einsum("ij,ji->", H, Sig)))
    for k0 in range(0, spec.n_steps, block):
        n = min(block, spec.n_steps - k0)
        zx = rng_x.standard_normal_block(k0, n)
        zy = rng_y.standard_normal_block(k0, n)
        for i in range(n):
            k = k0 + i
            t = k * dt
            params = advdiff.AdvDiffParams.from_vector(theta)
            rho, omega, rho_t, omega_t = advdiff.operator_blocks(params, grid)
            q_diag, q_diag_t = advdiff.matern_spectrum(params, grid)
            tau2 = params.tau2
            C, dC = obs_rows(o)
            # Observation from the true field at the current sensors.
            dy = C @ x * dt + np.sqrt(tau2_star * dt) * zy[i]
            x = x + _block_mul_vec(rho_s, omega_s, x) * dt + noise_scale * zx[i]
            # Readouts and iterate updates (beginning-of-step values).
            innov = dy - C @ xh * dt
            g1 = rate(spec.g0_theta, spec.eta_theta, spec.delta, t)
            g2 = rate(g0_o, eta_o, spec.delta, t)
            inc_theta = g1 * ((xh_t @ C.T) @ innov) / tau2
            psi_j = np.einsum("ij,pji->p", H, Sig_o)
            inc_o = (-g2 * psi_j * dt).reshape(ny, 2)
            theta_prev = theta
            theta = project_increment(theta, inc_theta,
                                      spec.theta_lower, spec.theta_upper)
            o_prev = o
            o = np.mod(o + inc_o, 1.0)  # sensors live on the torus
            # Filter and tangent updates.
            CS = C @ Sig                     # (ny, dim)
            U_S = C.T @ CS / tau2            # C' R^-1 C Sigma
            K_innov = (CS.T @ innov) / tau2
            ASig = _block_mul(rho, omega, Sig)
            # theta tangents.
            CSg = Sig_t @ C.T / tau2         # (9, dim, ny) = Sigma_t C' R^-1
            dxh_t = (np.stack([_block_mul_vec(rho_t[p], omega_t[p], xh)
                               for p in range(9)])
                     + _block_mul(rho, omega, xh_t[..., None])[..., 0]) * dt \
                + np.einsum("pij,j->pi", CSg, innov) \
                - (xh_t @ C.T) @ (CS / tau2) * dt  # K (C xh_t) dt, per p
            dxh_t[8] += -(K_innov / tau2)  # K^tau2 = -K / tau2 acting on innov
            lin_t = np.stack([_block_mul(rho_t[p], omega_t[p], Sig)
                              for p in range(9)]) \
                + _block_mul(rho, omega, Sig_t)
            gain_t = Sig_t @ U_S
            dSig_t = lin_t + np.swapaxes(lin_t, -1, -2) \
                - gain_t - np.swapaxes(gain_t, -1, -2)
            for p in range(9):
                if np.any(q_diag_t[p]):
                    dSig_t[p][np.diag_indices(dim)] += q_diag_t[p]
            # tau2: - d/dtau2 [Sigma C' R^-1 C Sigma] extra term
            # (+ Sigma C' R^-2 C Sigma from each R^-1; two cancel one KR_pK').
            dSig_t[8] += (Sig @ U_S) / tau2
            Sig_t = Sig_t + dSig_t * dt
            Sig_t = 0.5 * (Sig_t + np.swapaxes(Sig_t, -1, -2))
            xh_t = xh_t + dxh_t
            # Sensor tangents: only C depends on the coordinates.
            lin_o = _block_mul(rho, omega, Sig_o)
            gain_o = Sig_o @ U_S
            dSig_o = lin_o + np.swapaxes(lin_o, -1, -2) \
                - gain_o - np.swapaxes(gain_o, -1, -2)
            # Rows ordered (x of sensor 0, y of sensor 0, x of sensor 1, ...).
            dC_rows = dC.transpose(1, 0, 2).reshape(2 * ny, dim)
            SdC = Sig @ dC_rows.T / tau2                   # (dim, 2 ny)
            for s in range(ny):
                for ax in range(2):
                    p = 2 * s + ax
                    outer = np.outer(SdC[:, 2 * s + ax], CS[s])
                    dSig_o[p] -= outer + outer.T
            Sig_o = Sig_o + dSig_o * dt
            Sig_o = 0.5 * (Sig_o + np.swapaxes(Sig_o, -1, -2))
            # Mean and covariance last (tangents used pre-step values).
            xh = xh + _block_mul_vec(rho, omega, xh) * dt + K_innov
            dSig = ASig + ASig.T - Sig @ U_S
            dSig[np.diag_indices(dim)] += q_diag
            Sig = Sig + dSig * dt
            Sig = 0.5 * (Sig + Sig.T)
            int_theta = int_theta + 0.5 * (theta_prev + theta) * dt
            int_o = int_o + 0.5 * (o_prev + o) * dt
            if (k + 1) % spec.record_every == 0:
                if not np.all(np.isfinite(Sig)):
                    raise NumericBlowupError("advection-diffusion run diverged",
                                             step=k + 1, component="Sigma_hat")
                snapshot(j, (k + 1) * dt, float(np.einsum("ij,ji->", H, Sig)))
                j += 1
    return {"t": rec_t[:j], "theta": rec_theta[:j], "o": rec_o[:j],
            "obj": rec_obj[:j], "avg_theta": rec_avg_theta[:j],
            "final_theta": theta, "final_o": o, "targets": spec.targets}
