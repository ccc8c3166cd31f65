"""Seeded Euler-Maruyama integration of Ito SDE systems.

Noise is generated counter-style: every (seed, stream_id) pair labels an
independent Gaussian stream, and the increments at a given step index are a
pure function of (seed, stream_id, dim, step index).  This makes every
simulation bit-reproducible regardless of how work is scheduled, and lets
coupled systems (signal, observation noise, finite-difference twins) share
or split streams at will.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericBlowupError
from .records import TrajectoryRecord

# Gaussian variates are drawn in blocks so that long simulations do not pay
# a generator-construction cost per step.
BLOCK = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t0 + k*dt, k = 0..n_steps."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise DimensionError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise DimensionError(f"n_steps must be >= 1, got {self.n_steps}")

    def time(self, k: int) -> float:
        # t0 + k*dt exactly; never accumulate by repeated addition.
        return self.t0 + k * self.dt

    @property
    def t_end(self) -> float:
        return self.time(self.n_steps)


@lru_cache(maxsize=64)
def _noise_block(seed: int, stream_id: int, dim: int, block: int) -> np.ndarray:
    """Standard-normal block of shape (BLOCK, dim) for one stream."""
    ss = np.random.SeedSequence([int(seed), int(stream_id), int(block)])
    return np.random.default_rng(ss).standard_normal((BLOCK, dim))


@dataclass(frozen=True)
class NoiseStream:
    """Label for an independent Gaussian increment stream."""

    seed: int
    stream_id: int
    dim: int

    def standard_normals(self, step_index: int) -> np.ndarray:
        """Unit-variance normals for one step (shape (dim,))."""
        block, offset = divmod(int(step_index), BLOCK)
        return _noise_block(self.seed, self.stream_id, self.dim, block)[offset]

    def standard_normal_block(self, k0: int, n: int) -> np.ndarray:
        """Unit-variance normals for steps k0..k0+n-1 (shape (n, dim))."""
        out = np.empty((n, self.dim))
        k = int(k0)
        filled = 0
        while filled < n:
            block, offset = divmod(k, BLOCK)
            take = min(BLOCK - offset, n - filled)
            out[filled:filled + take] = _noise_block(
                self.seed, self.stream_id, self.dim, block)[offset:offset + take]
            filled += take
            k += take
        return out


def gaussian_increments(stream: NoiseStream, step_index: int, dt: float) -> np.ndarray:
    """N(0, dt) increments for one step of one stream.

    Repeatable: identical (seed, stream_id, dim, step_index, dt) always
    yields the identical vector.
    """
    if not dt > 0:
        raise DimensionError(f"dt must be positive, got {dt}")
    return np.sqrt(dt) * stream.standard_normals(step_index)


@dataclass(frozen=True)
class SdeSystem:
    """Vector diffusion dx = drift(t, x) dt + diffusion(t, x) dW."""

    dim: int
    noise_dim: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]


def _check_finite(arr: np.ndarray, what: str, step: int | None) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(np.atleast_1d(arr)))
        comp = tuple(bad[0]) if bad.size else None
        raise NumericBlowupError(
            f"non-finite {what} at step {step}, component {comp}",
            step=step, component=comp)


def euler_maruyama_step(system: SdeSystem, state: np.ndarray, t: float,
                        dt: float, dW: np.ndarray,
                        step_index: int | None = None) -> np.ndarray:
    """One explicit Euler-Maruyama step.

    Returns state + drift(t, state) dt + diffusion(t, state) @ dW.
    """
    state = np.asarray(state, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if state.shape != (system.dim,):
        raise DimensionError(
            f"state has shape {state.shape}, expected ({system.dim},)")
    if dW.shape != (system.noise_dim,):
        raise DimensionError(
            f"dW has shape {dW.shape}, expected ({system.noise_dim},)")
    mu = np.asarray(system.drift(t, state), dtype=float)
    if mu.shape != (system.dim,):
        raise DimensionError(
            f"drift output has shape {mu.shape}, expected ({system.dim},)")
    _check_finite(mu, "drift", step_index)
    sig = np.asarray(system.diffusion(t, state), dtype=float)
    if sig.shape != (system.dim, system.noise_dim):
        raise DimensionError(
            f"diffusion output has shape {sig.shape}, "
            f"expected ({system.dim}, {system.noise_dim})")
    _check_finite(sig, "diffusion", step_index)
    return state + mu * dt + sig @ dW


def simulate_path(system: SdeSystem, x0: np.ndarray, grid: TimeGrid,
                  stream: NoiseStream, record_every: int = 1) -> TrajectoryRecord:
    """Integrate over the grid, recording every record_every-th state.

    The initial and final states are always recorded.
    """
    if record_every < 1:
        raise DimensionError(f"record_every must be >= 1, got {record_every}")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (system.dim,):
        raise DimensionError(f"x0 has shape {x.shape}, expected ({system.dim},)")
    rows = [np.concatenate(([grid.time(0)], x))]
    for k in range(grid.n_steps):
        dW = gaussian_increments(stream, k, grid.dt)
        x = euler_maruyama_step(system, x, grid.time(k), grid.dt, dW,
                                step_index=k)
        if (k + 1) % record_every == 0 or k + 1 == grid.n_steps:
            rows.append(np.concatenate(([grid.time(k + 1)], x)))
    columns = ["t"] + [f"x{i}" for i in range(system.dim)]
    return TrajectoryRecord(columns=columns, data=np.array(rows))
