"""Periodic-box solvers for the eps-scale advection-diffusion equation, its
drift-transported formulation, and the constant-coefficient limit equation
with a Brownian coordinate shift.

Scheme: Fourier pseudo-spectral in space with 2/3 dealiasing. The mean
diffusion c0 (midpoint of the realized eigenvalue range of sym a) is
propagated by an exact integrating factor, i.e. implicitly to all orders;
the variable-coefficient flux remainder, the eps^{-1} homogeneous transport,
and the source are advanced explicitly with two-step Adams-Bashforth. The
zero mode is untouched by every explicit term when f = 0, so mass is
conserved to rounding.

Coefficients are sampled at the rescaled points (x/eps, t/eps^2) (shifted by
the drift path in the transported formulation) through the same periodic
multilinear interpolation the environment module exposes, so the direct and
transported routes discretize one and the same continuum problem.

The limit equation is solved in shifted coordinates: rho_bar(x, t) =
rho_tilde(x - shift_t, t) where rho_tilde solves the constant-coefficient
heat equation with the forcing evaluated along the shift. With f = 0 the
exponential stepping is exact for any dt.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .environment import EnvironmentRealization, _max_eig_sym, _min_eig_sym
from .errors import (
    BlowUp,
    EllipticityError,
    StabilityError,
    ValidationError,
)
from .grid import diff_symbols, fourier_shift
from .path_clt import DriftPath, integrate_path
from .seeding import rng_for

LINF_SLACK = 0.05


@dataclass(frozen=True)
class CauchyData:
    """Initial-value data on a periodic box of side L_sim with m_x points
    per dimension: initial datum g (array), source f (callable
    f(coords, t) -> array, or None), horizon T."""

    g: np.ndarray
    T: float
    L_sim: float
    m_x: int
    f: object = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if self.m_x < 8 or (self.m_x & (self.m_x - 1)) != 0:
            raise ValidationError("m_x must be a power of two >= 8")
        if g.shape != (self.m_x,) * g.ndim or g.ndim not in (2, 3):
            raise ValidationError("g must be a square d-dim array, d in {2,3}")
        if not np.isfinite(g).all():
            raise ValidationError("g must be finite")
        if not (self.T > 0 and self.L_sim > 0):
            raise ValidationError("T and L_sim must be positive")
        object.__setattr__(self, "g", g)

    @property
    def d(self) -> int:
        return self.g.ndim

    @property
    def h(self) -> float:
        return self.L_sim / self.m_x


def sim_coords(data: CauchyData):
    x = np.arange(data.m_x) * data.h
    return np.meshgrid(*([x] * data.d), indexing="ij")


def cauchy_preset(
    name: str,
    d: int = 2,
    m_x: int = 128,
    L_sim: float = 8.0,
    T: float = 0.5,
    width: float | None = None,
    f=None,
) -> CauchyData:
    """Named initial data: gaussian-bump, two-bumps, indicator-mollified."""
    x = np.arange(m_x) * (L_sim / m_x)
    coords = np.meshgrid(*([x] * d), indexing="ij")
    c0 = L_sim / 2.0
    w = L_sim / 16.0 if width is None else width

    def bump(center, ww):
        r_sq = sum((c - cc) ** 2 for c, cc in zip(coords, center))
        return np.exp(-r_sq / (2.0 * ww * ww))

    if name == "gaussian-bump":
        g = bump((c0,) * d, w)
    elif name == "two-bumps":
        g = bump((0.4 * L_sim,) * d, w) + 0.8 * bump((0.6 * L_sim,) * d, 0.7 * w)
    elif name == "indicator-mollified":
        r_sq = sum((c - c0) ** 2 for c in coords)
        ind = (r_sq <= (L_sim / 8.0) ** 2).astype(float)
        syms = diff_symbols(m_x, d, L_sim)
        k_sq = sum(s**2 for s in syms)
        moll = np.exp(-0.5 * (L_sim / 64.0) ** 2 * k_sq)
        g = np.fft.irfftn(np.fft.rfftn(ind) * moll, s=(m_x,) * d,
                          axes=tuple(range(d)))
    else:
        raise ValidationError(f"unknown data preset {name!r}")
    return CauchyData(g=g, T=T, L_sim=L_sim, m_x=m_x, f=f)


@dataclass(frozen=True)
class SolutionField:
    rho: np.ndarray
    times: np.ndarray
    norms: dict
    formulation: str
    diagnostics: dict = dc_field(default_factory=dict)


class _RescaledSampler:
    """Samples a + s (and bbar) of an environment at rescaled, optionally
    shifted, simulation points. Spatial corner weights are recomputed per
    call; the a+s field is blended in time first."""

    def __init__(self, env: EnvironmentRealization, eps: float, data: CauchyData):
        if env.grid.d != data.d:
            raise ValidationError("environment and data dimensions differ")
        self.env = env
        self.eps = eps
        self.g = env.grid
        self.comb = env.a + env.s
        pts = np.stack([c.ravel() for c in sim_coords(data)], axis=1)
        self.base_pts = pts
        self.out_shape = (data.m_x,) * data.d + (data.d, data.d)

    def bbar_at(self, t_phys: float) -> np.ndarray:
        g = self.g
        f = ((t_phys / self.eps**2) % g.T_env) / g.k_t
        lo = int(np.floor(f))
        wt = f - lo
        return (1.0 - wt) * self.env.bbar[lo % g.n_t] \
            + wt * self.env.bbar[(lo + 1) % g.n_t]

    def coeff_at(self, t_phys: float, shift=None) -> np.ndarray:
        g = self.g
        f = ((t_phys / self.eps**2) % g.T_env) / g.k_t
        lo = int(np.floor(f))
        wt = f - lo
        sl = (1.0 - wt) * self.comb[lo % g.n_t] + wt * self.comb[(lo + 1) % g.n_t]

        pts = self.base_pts if shift is None else self.base_pts + shift
        idx_f = np.mod(pts / self.eps, g.L) / g.h
        lo_i = np.floor(idx_f).astype(np.int64)
        frac = idx_f - lo_i
        out = np.zeros((pts.shape[0], g.d, g.d))
        for corner in range(1 << g.d):
            w = np.ones(pts.shape[0])
            ix = []
            for ax in range(g.d):
                bit = (corner >> ax) & 1
                ix.append((lo_i[:, ax] + bit) % g.n_x)
                w = w * (frac[:, ax] if bit else 1.0 - frac[:, ax])
            out += w[:, None, None] * sl[tuple(ix)]
        return out.reshape(self.out_shape)


def choose_dt(
    env: EnvironmentRealization,
    eps: float,
    data: CauchyData,
    n_snap: int = 17,
    safety: float = 0.35,
    fast_factor: int = 4,
    advective: bool = True,
) -> float:
    """Stable, coefficient-resolving step size, snapped so the snapshot
    times land on steps."""
    from .environment import drift_of

    g = env.grid
    d = data.d
    k_max = np.pi * data.m_x / data.L_sim * (2.0 / 3.0)  # post-dealias
    lo = float(_min_eig_sym(env.a, d).min())
    hi = float(_max_eig_sym(env.a, d).max())
    dev = 0.5 * (hi - lo)
    bounds = [data.T]
    if dev > 0:
        bounds.append(safety / (k_max**2 * dev))
    if np.abs(env.s).max() > 0:
        b_stream = drift_of(env) - env.bbar.reshape(
            (g.n_t,) + (1,) * d + (d,))
        bs = float(np.linalg.norm(b_stream, axis=-1).max()) / eps
        if bs > 0:
            bounds.append(safety / (k_max * bs))
    bmax = float(np.linalg.norm(env.bbar, axis=1).max())
    if advective and bmax > 0:
        bounds.append(safety * data.h * eps / bmax)
    # resolve the eps^2-compressed coefficient oscillation
    if np.abs(env.a - env.a[:1]).max() > 0 or np.abs(env.s - env.s[:1]).max() > 0 \
            or bmax > 0:
        bounds.append(eps**2 * g.k_t / fast_factor)
    dt_max = min(bounds)
    chunks = n_snap - 1
    n_steps = int(np.ceil(data.T / dt_max / chunks)) * chunks
    return data.T / n_steps


def _dealias_mask(m_x: int, d: int) -> np.ndarray:
    cutoff = m_x // 3
    idx = [np.abs(np.fft.fftfreq(m_x) * m_x).astype(int) for _ in range(d - 1)]
    idx.append(np.arange(m_x // 2 + 1))
    mask = np.ones((m_x,) * (d - 1) + (m_x // 2 + 1,), dtype=bool)
    for ax, ii in enumerate(idx):
        shape = [1] * d
        shape[ax] = ii.size
        mask &= (ii <= cutoff).reshape(shape)
    return mask


def _grad_from_hat(rho_hat, syms, sshape, axes):
    return [np.fft.irfftn(1j * s * rho_hat, s=sshape, axes=axes) for s in syms]


class _Norms:
    def __init__(self, h_d: float, dt: float):
        self.h_d, self.dt = h_d, dt
        self.max_l2_sq = 0.0
        self.grad_int = 0.0
        self.linf = 0.0
        self.mass0 = None
        self.mass_drift = 0.0
        self.f_int = 0.0

    def update(self, rho, grads, f_val):
        l2_sq = self.h_d * float((rho * rho).sum())
        self.max_l2_sq = max(self.max_l2_sq, l2_sq)
        self.grad_int += self.dt * self.h_d * float(
            sum((gr * gr).sum() for gr in grads))
        self.linf = max(self.linf, float(np.abs(rho).max()))
        mass = float(rho.sum())
        if self.mass0 is None:
            self.mass0 = mass
        self.mass_drift = max(self.mass_drift,
                              abs(mass - self.mass0) / max(abs(self.mass0), 1.0))
        if f_val is not None:
            self.f_int += self.dt * self.h_d * float((f_val * f_val).sum())


def _boundary_mass_fraction(rho: np.ndarray, margin_cells: int) -> float:
    total = float(np.abs(rho).sum())
    if total == 0:
        return 0.0
    inner = rho
    sl = slice(margin_cells, -margin_cells)
    core = inner[(sl,) * rho.ndim]
    return 1.0 - float(np.abs(core).sum()) / total


def _finalize(snaps, snap_times, norms: _Norms, formulation, data, lam_eff,
              extra=None):
    g_l2_sq = norms.h_d * float((data.g * data.g).sum())
    denom = g_l2_sq + norms.f_int * data.T + 1e-300
    energy_ratio = (norms.max_l2_sq + lam_eff * norms.grad_int) / denom
    diag = {
        "mass_drift": norms.mass_drift,
        "boundary_mass_frac": _boundary_mass_fraction(
            snaps[-1], max(1, data.m_x // 16)),
        "energy_ratio": float(energy_ratio),
        "linf_initial": float(np.abs(data.g).max()),
    }
    if extra:
        diag.update(extra)
    return SolutionField(
        rho=np.stack(snaps),
        times=np.asarray(snap_times),
        norms={
            "max_l2": float(np.sqrt(norms.max_l2_sq)),
            "grad_int": float(norms.grad_int),
            "linf": float(norms.linf),
        },
        formulation=formulation,
        diagnostics=diag,
    )


def _check_blowup(rho, t, data, f_bound):
    bound = float(np.abs(data.g).max()) + t * f_bound
    worst = float(np.abs(rho).max())
    if worst > bound * (1.0 + LINF_SLACK) + 1e-12:
        raise BlowUp(
            f"L-inf {worst:.3e} exceeded the comparison bound {bound:.3e} "
            f"by more than {LINF_SLACK:.0%} at t = {t:.4f}"
        )


def _run_variable(env, eps, data, dt, advect: bool, shifts, formulation,
                  n_snap, unshift_shifts=None):
    """Common stepper for the direct (advect=True, shifts=None) and
    transported (advect=False, shifts per step) formulations."""
    d, m = data.d, data.m_x
    axes = tuple(range(d))
    sshape = (m,) * d
    n_steps = int(round(data.T / dt))
    if abs(n_steps * dt - data.T) > 1e-9 * data.T:
        raise ValidationError("dt must divide T to machine accuracy")
    snap_every = max(1, n_steps // (n_snap - 1))

    sampler = _RescaledSampler(env, eps, data)
    lo = float(_min_eig_sym(env.a, d).min())
    hi = float(_max_eig_sym(env.a, d).max())
    c0 = 0.5 * (lo + hi)

    syms = diff_symbols(m, d, data.L_sim)
    k_sq = sum(s**2 for s in syms)
    efac = np.exp(-c0 * k_sq * dt)
    mask = _dealias_mask(m, d)
    eye = np.eye(d)

    coords = sim_coords(data)
    f_bound = 0.0
    if data.f is not None:
        f_bound = float(np.abs(data.f(coords, 0.0)).max())

    rho_hat = np.fft.rfftn(data.g) * mask
    norms = _Norms(data.h**d, dt)
    snaps, snap_times = [], []
    n_hat_prev = None

    def nonlinear(rho_hat_cur, t, shift):
        grads = _grad_from_hat(rho_hat_cur, syms, sshape, axes)
        c_q = sampler.coeff_at(t, shift)
        rem = c_q - c0 * eye
        f_hat_sum = None
        for i in range(d):
            flux_i = sum(rem[..., i, j] * grads[j] for j in range(d))
            term = 1j * syms[i] * np.fft.rfftn(flux_i)
            f_hat_sum = term if f_hat_sum is None else f_hat_sum + term
        phys = None
        if advect:
            bb = sampler.bbar_at(t) / eps
            if np.abs(bb).max() > 0:
                phys = sum(bb[j] * grads[j] for j in range(d))
        f_val = None
        if data.f is not None:
            if shift is None:
                f_val = data.f(coords, t)
            else:
                shifted = [np.mod(c + sh, data.L_sim)
                           for c, sh in zip(coords, shift)]
                f_val = data.f(shifted, t)
            phys = f_val if phys is None else phys + f_val
        if phys is not None:
            f_hat_sum = f_hat_sum + np.fft.rfftn(phys)
        return f_hat_sum * mask, grads, f_val

    for step in range(n_steps + 1):
        t = step * dt
        rho = np.fft.irfftn(rho_hat, s=sshape, axes=axes)
        shift = None if shifts is None else shifts[step]
        if step % snap_every == 0 or step == n_steps:
            out = rho
            if unshift_shifts is not None:
                out = fourier_shift(rho, data.L_sim, -unshift_shifts[step], axes)
            snaps.append(out)
            snap_times.append(t)
            _check_blowup(rho, t, data, f_bound)
        if step == n_steps:
            n_hat, grads, f_val = nonlinear(rho_hat, t, shift)
            norms.update(rho, grads, f_val)
            break
        n_hat, grads, f_val = nonlinear(rho_hat, t, shift)
        norms.update(rho, grads, f_val)
        if n_hat_prev is None:
            rho_hat = efac * (rho_hat + dt * n_hat)
        else:
            rho_hat = efac * rho_hat + dt * (
                1.5 * efac * n_hat - 0.5 * efac**2 * n_hat_prev)
        n_hat_prev = n_hat

    return _finalize(snaps, snap_times, norms, formulation, data, lo)


def solve_epsilon_pde(
    env: EnvironmentRealization,
    eps: float,
    data: CauchyData,
    dt: float,
    n_snap: int = 17,
) -> SolutionField:
    """Direct solve of the eps-scale equation with the full (a+s) flux and
    the explicit eps^{-1} homogeneous transport term."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    bmax = float(np.linalg.norm(env.bbar, axis=1).max())
    if bmax > 0 and dt > 0.5 * data.h * eps / bmax * (1.0 + 1e-12):
        raise StabilityError(
            f"dt = {dt:.3e} violates the advective constraint "
            f"dt <= 0.5*h*eps/max|bbar| = {0.5 * data.h * eps / bmax:.3e}"
        )
    return _run_variable(env, eps, data, dt, advect=True, shifts=None,
                         formulation="direct", n_snap=n_snap)


def solve_transported_pde(
    env: EnvironmentRealization,
    eps: float,
    data: CauchyData,
    dt: float,
    path: DriftPath | None = None,
    unshift: bool = True,
    n_snap: int = 17,
) -> SolutionField:
    """Transported solve: coefficients shifted by the rescaled drift path,
    no singular transport term; output unshifted back to the original frame
    unless unshift=False."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    n_steps = int(round(data.T / dt))
    t_steps = np.arange(n_steps + 1) * dt
    if path is None and np.abs(env.bbar).max() == 0.0:
        shifts = np.zeros((n_steps + 1, data.d))
    else:
        if path is None:
            dt_path = min(dt, eps**2 * env.grid.k_t)
            path = integrate_path(env.bbar, eps, data.T, dt_path,
                                  spacing=env.grid.k_t)
        shifts = np.stack([np.interp(t_steps, path.times, path.values[:, j])
                           for j in range(data.d)], axis=1)
    return _run_variable(
        env, eps, data, dt, advect=False, shifts=shifts,
        formulation="transported", n_snap=n_snap,
        unshift_shifts=shifts if unshift else None,
    )


def solve_limit_spde(
    a_bar: np.ndarray,
    sigma: np.ndarray,
    data: CauchyData,
    brownian_seed: int = 0,
    dt: float | None = None,
    shift_path: DriftPath | None = None,
    n_snap: int = 17,
    unshift: bool = True,
) -> SolutionField:
    """Constant-coefficient limit equation via the coordinate-shift
    reduction. The shift is sigma times a Brownian path sampled from
    brownian_seed, or, when shift_path is given, that path's values taken
    verbatim (the coupled-comparison mode)."""
    a_bar = np.asarray(a_bar, dtype=float)
    d, m = data.d, data.m_x
    if a_bar.shape != (d, d):
        raise ValidationError(f"a_bar must be {d}x{d}")
    a_sym = 0.5 * (a_bar + a_bar.T)
    if np.linalg.eigvalsh(a_sym)[0] <= 0:
        raise EllipticityError("sym(a_bar) must be positive definite")
    sigma = np.zeros((d, d)) if sigma is None else np.asarray(sigma, dtype=float)

    if dt is None:
        dt = data.T / 256
    n_steps = max(1, int(round(data.T / dt)))
    chunks = n_snap - 1
    n_steps = int(np.ceil(n_steps / chunks)) * chunks
    dt = data.T / n_steps
    t_steps = np.arange(n_steps + 1) * dt

    if shift_path is not None:
        shifts = np.stack([
            np.interp(t_steps, shift_path.times, shift_path.values[:, j])
            for j in range(d)
        ], axis=1)
    elif np.abs(sigma).max() == 0.0:
        shifts = np.zeros((n_steps + 1, d))
    else:
        rng = rng_for(brownian_seed, "brownian")
        db = rng.standard_normal((n_steps, d)) * np.sqrt(dt)
        b_path = np.vstack([np.zeros(d), np.cumsum(db, axis=0)])
        shifts = b_path @ sigma.T

    axes = tuple(range(d))
    sshape = (m,) * d
    syms = diff_symbols(m, d, data.L_sim)
    quad = np.zeros_like(syms[0] * syms[0])
    for i in range(d):
        for j in range(d):
            quad = quad + a_sym[i, j] * syms[i] * syms[j]
    efac = np.exp(-quad * dt)
    mask = _dealias_mask(m, d)

    coords = sim_coords(data)
    f_bound = 0.0
    if data.f is not None:
        f_bound = float(np.abs(data.f(coords, 0.0)).max())

    rho_hat = np.fft.rfftn(data.g) * mask
    norms = _Norms(data.h**d, dt)
    snap_every = n_steps // (n_snap - 1)
    snaps, snap_times = [], []

    for step in range(n_steps + 1):
        t = step * dt
        rho = np.fft.irfftn(rho_hat, s=sshape, axes=axes)
        if step % snap_every == 0:
            out = fourier_shift(rho, data.L_sim, -shifts[step], axes) \
                if unshift and np.abs(shifts).max() > 0 else rho
            snaps.append(out)
            snap_times.append(t)
            _check_blowup(rho, t, data, f_bound)
        grads = _grad_from_hat(rho_hat, syms, sshape, axes)
        f_val = None
        if data.f is not None:
            shifted = [np.mod(c + sh, data.L_sim)
                       for c, sh in zip(coords, shifts[step])]
            f_val = data.f(shifted, t)
        norms.update(rho, grads, f_val)
        if step == n_steps:
            break
        f_hat = 0.0 if f_val is None else np.fft.rfftn(f_val) * mask
        rho_hat = efac * (rho_hat + dt * f_hat)

    lam_eff = float(np.linalg.eigvalsh(a_sym)[0])
    return _finalize(snaps, snap_times, norms, "limit", data, lam_eff,
                     extra={"shift_final": shifts[-1].tolist()})
