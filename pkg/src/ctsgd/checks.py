"""Finite-difference validation of the tangent filters and model assembly.

Each helper reruns a deterministic computation at perturbed inputs (with
the observation path held fixed, so the perturbations share random
numbers) and compares central finite differences against the carried
sensitivities.  Returned values are worst-case relative errors.
"""

from __future__ import annotations

import numpy as np

from . import advdiff, benes
from .kalman import KbState, KbTangent, build_scalar_model, kb_step, kb_tangent_step
from .sde import NoiseStream


def _rel(analytic, fd, floor=1e-8):
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    scale = max(np.max(np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd)) / scale)


def _scalar_dy_path(theta_star, q, c, tau2, o, o0, n_steps, dt, seed):
    sx = NoiseStream(int(seed), 0, 1)
    sy = NoiseStream(int(seed), 1, 1)
    zx = sx.standard_normal_block(0, n_steps)[:, 0]
    zy = sy.standard_normal_block(0, n_steps)[:, 0]
    r = tau2 + (o - o0) ** 2
    x = 0.0
    dy = np.empty(n_steps)
    for k in range(n_steps):
        dy[k] = c * x * dt + np.sqrt(r * dt) * zy[k]
        x = x - theta_star * x * dt + np.sqrt(q * dt) * zx[k]
    return dy


def scalar_kb_tangent_fd_errors(T: float = 10.0, dt: float = 1e-3,
                                h: float = 1e-4, seed: int = 0) -> dict:
    """Tangent filter vs finite differences on the scalar linear model.

    Compares d(x_hat, Sigma_hat)/d theta and /d o at time T against central
    differences of filter reruns on a fixed observation path.
    """
    q, c, tau2, o0 = 1.0, 1.0, 0.5, 0.0
    theta, o = 0.8, 1.2
    n_steps = int(round(T / dt))
    dy = _scalar_dy_path(1.0, q, c, tau2, o, o0, n_steps, dt, seed)

    def final_state(th, oo):
        model = build_scalar_model(th, q, c, tau2, oo, o0)
        st = KbState(np.zeros(1), np.zeros((1, 1)))
        for k in range(n_steps):
            st = kb_step(model, st, dy[k:k + 1], dt)
        return st.x_hat[0], st.Sigma_hat[0, 0]

    model = build_scalar_model(theta, q, c, tau2, o, o0)
    st = KbState(np.zeros(1), np.zeros((1, 1)))
    tan_t = KbTangent.zeros(1, 1)
    tan_o = KbTangent.zeros(1, 1)
    for k in range(n_steps):
        dyk = dy[k:k + 1]
        tan_t = kb_tangent_step(model, st, tan_t, dyk, dt, "parameters")
        tan_o = kb_tangent_step(model, st, tan_o, dyk, dt, "sensors")
        st = kb_step(model, st, dyk, dt)

    out = {}
    for name, tan, base, delta in (("theta", tan_t, (theta, o), (h, 0.0)),
                                   ("o", tan_o, (theta, o), (0.0, h))):
        plus = final_state(base[0] + delta[0], base[1] + delta[1])
        minus = final_state(base[0] - delta[0], base[1] - delta[1])
        fd_x = (plus[0] - minus[0]) / (2.0 * h)
        fd_S = (plus[1] - minus[1]) / (2.0 * h)
        out[f"xhat_{name}"] = _rel(tan.x_hat_grad[0, 0], fd_x)
        out[f"Sigma_{name}"] = _rel(tan.Sigma_hat_grad[0, 0, 0], fd_S)
    return out


def benes_tangent_fd_errors(T: float = 10.0, dt: float = 1e-3,
                            h: float = 1e-4, seed: int = 0) -> dict:
    """Tangent filter vs finite differences on the tanh-drift model.

    Checks the carried sensitivities of the posterior mean and variance in
    all four directions (mu, sigma, c, o) at time T.
    """
    tau2, o0 = 2.0, 2.0
    base = {"mu": 2.0, "sigma": 2.0, "c": 0.7, "o": 3.0}
    n_steps = int(round(T / dt))
    sx = NoiseStream(int(seed), 0, 1)
    sy = NoiseStream(int(seed), 1, 1)
    zx = sx.standard_normal_block(0, n_steps)[:, 0]
    zy = sy.standard_normal_block(0, n_steps)[:, 0]
    r_true = tau2 + (base["o"] - o0) ** 2
    x = 0.0
    dy = np.empty(n_steps)
    for k in range(n_steps):
        dy[k] = base["c"] * x * dt + np.sqrt(r_true * dt) * zy[k]
        x = x + benes.benes_signal_drift(base["mu"], base["sigma"], x) * dt \
            + base["sigma"] * np.sqrt(dt) * zx[k]

    def run(p):
        model = benes.BenesModel(mu=p["mu"], sigma=p["sigma"], c=p["c"],
                                 tau2=tau2, o0=o0, o=p["o"])
        st = benes.BenesFilterState.initial()
        for k in range(n_steps):
            st = benes.benes_step(model, st, dy[k], dt)
        return model, st

    model, st = run(base)
    _, _, x_g, Sig_g = benes.benes_posterior_moments(model, st)
    out = {}
    for idx, name in enumerate(benes.PARAMS):
        pp = dict(base)
        pp[name] = base[name] + h
        mp, sp = run(pp)
        xp, Sp, _, _ = benes.benes_posterior_moments(mp, sp)
        pp[name] = base[name] - h
        mm, sm = run(pp)
        xm, Sm, _, _ = benes.benes_posterior_moments(mm, sm)
        out[f"xhat_{name}"] = _rel(x_g[idx], (xp - xm) / (2.0 * h))
        out[f"Sigma_{name}"] = _rel(Sig_g[idx], (Sp - Sm) / (2.0 * h))
    return out


def advdiff_assembly_fd_errors(h: float = 1e-6, k_max: int = 2) -> dict:
    """Analytic derivatives of the assembled (A, Q, C) vs finite differences."""
    grid = advdiff.build_grid(k_max)
    theta = np.array([0.3, 0.4, 0.3, 0.12, 1.7, 0.9, 0.25, -0.2, 0.05])
    sensors = advdiff.SensorConfig(
        locations=np.array([[0.13, 0.27], [0.61, 0.44], [0.82, 0.09]]),
        radius=0.05,
        targets=np.array([[0.3, 0.7], [0.5, 0.2]]))
    params = advdiff.AdvDiffParams.from_vector(theta)
    _, A_theta = advdiff.assemble_operator(params, grid)
    _, q_theta = advdiff.matern_spectrum(params, grid)
    C, C_sens = advdiff.observation_matrix(sensors, grid)

    err_A = err_Q = 0.0
    for p in range(9):
        e = np.zeros(9)
        e[p] = h
        pp = advdiff.AdvDiffParams.from_vector(theta + e)
        pm = advdiff.AdvDiffParams.from_vector(theta - e)
        Ap, _ = advdiff.assemble_operator(pp, grid)
        Am, _ = advdiff.assemble_operator(pm, grid)
        qp, _ = advdiff.matern_spectrum(pp, grid)
        qm, _ = advdiff.matern_spectrum(pm, grid)
        err_A = max(err_A, _rel(A_theta[p], (Ap - Am) / (2.0 * h), floor=1e-6))
        err_Q = max(err_Q, _rel(q_theta[p], (qp - qm) / (2.0 * h), floor=1e-6))

    err_C = 0.0
    locs = sensors.locations
    for i in range(locs.shape[0]):
        for ax in range(2):
            d = np.zeros_like(locs)
            d[i, ax] = h
            Cp = advdiff.disc_average_rows(locs + d, sensors.radius, grid)
            Cm = advdiff.disc_average_rows(locs - d, sensors.radius, grid)
            fd = (Cp - Cm) / (2.0 * h)
            err_C = max(err_C, _rel(C_sens[2 * i + ax], fd, floor=1e-6))
    return {"A": err_A, "Q": err_Q, "C": err_C}
