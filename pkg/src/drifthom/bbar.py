"""Spatially homogeneous drift models b̄(t) on the temporal torus.

Four models, all sampled on the n_t environment time nodes and returned as
(n_t, d) arrays:

* ``zero``       identically zero;
* ``periodic``   a random combination of integer-frequency sinusoids, so the
                 grid mean vanishes exactly;
* ``ou``         a stationary AR(1) chain per component, the exact
                 discretization of an Ornstein-Uhlenbeck process;
* ``rw-interp``  the derivative of a smoothstep interpolation of a simple
                 random walk, so each unit block integrates to one +-1 step.

The raw series are mean-zero in law; environment construction subtracts the
realized temporal mean on top of that. Long-run covariances for the mixing
models are available in closed form for cross-checking estimators.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .grid import SpaceTimeGrid
from .seeding import rng_for

BBAR_MODELS = ("zero", "periodic", "ou", "rw-interp")


def make_bbar(
    model: str,
    grid: SpaceTimeGrid,
    seed: int,
    amplitude: float = 1.0,
    tau: float = 0.25,
    n_modes: int = 3,
    block: float = 1.0,
) -> np.ndarray:
    """Sample a drift series for the given model on grid time nodes."""
    if model not in BBAR_MODELS:
        raise ValidationError(
            f"unknown bbar model {model!r}, expected one of {BBAR_MODELS}"
        )
    if amplitude < 0:
        raise ValidationError("amplitude must be nonnegative")
    n_t, d = grid.n_t, grid.d
    t = grid.t_nodes()

    if model == "zero" or amplitude == 0.0:
        return np.zeros((n_t, d))

    if model == "periodic":
        rng = rng_for(seed, "bbar", "periodic")
        if n_modes < 1:
            raise ValidationError("periodic model needs n_modes >= 1")
        m_max = grid.n_t // 2 - 1
        if n_modes > m_max:
            raise ValidationError(f"n_modes must be <= n_t/2 - 1 = {m_max}")
        out = np.zeros((n_t, d))
        coeff = rng.standard_normal((n_modes, d)) / np.sqrt(n_modes)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_modes, d))
        for m in range(1, n_modes + 1):
            arg = 2.0 * np.pi * m * t / grid.T_env
            out += coeff[m - 1] * np.sin(arg[:, None] + phase[m - 1])
        return amplitude * out

    if model == "ou":
        if tau <= 0:
            raise ValidationError("ou model needs tau > 0")
        rng = rng_for(seed, "bbar", "ou")
        rho = np.exp(-grid.k_t / tau)
        innov = np.sqrt(1.0 - rho * rho)
        noise = rng.standard_normal((n_t, d))
        out = np.empty((n_t, d))
        out[0] = noise[0]
        for j in range(1, n_t):
            out[j] = rho * out[j - 1] + innov * noise[j]
        return amplitude * out

    # rw-interp
    if block <= 0:
        raise ValidationError("rw-interp model needs block > 0")
    n_blocks = grid.T_env / block
    if abs(n_blocks - round(n_blocks)) > 1e-9 or round(n_blocks) < 1:
        raise ValidationError("T_env must be an integer number of blocks")
    n_blocks = int(round(n_blocks))
    rng = rng_for(seed, "bbar", "rw")
    steps = amplitude * rng.choice([-1.0, 1.0], size=(n_blocks, d))
    j = np.minimum((t / block).astype(np.int64), n_blocks - 1)
    u = t / block - j
    # derivative of the smoothstep 3u^2 - 2u^3, scaled so each block
    # integrates to exactly one walk step
    qprime = 6.0 * u * (1.0 - u) / block
    return steps[j] * qprime[:, None]


def ou_longrun_cov(grid: SpaceTimeGrid, amplitude: float, tau: float) -> np.ndarray:
    """Long-run covariance of the trapezoid-integrated discrete ou series:
    Var(w(T))/T -> k_t * amp^2 * (1+rho)/(1-rho) per component."""
    rho = np.exp(-grid.k_t / tau)
    return grid.k_t * amplitude**2 * (1.0 + rho) / (1.0 - rho) * np.eye(grid.d)


def rw_longrun_cov(grid: SpaceTimeGrid, amplitude: float, block: float) -> np.ndarray:
    """Long-run covariance of the rw-interp drift: one +-amplitude step per
    block of the given length."""
    return amplitude**2 / block * np.eye(grid.d)
