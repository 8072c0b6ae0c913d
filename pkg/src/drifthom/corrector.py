"""Space-time corrector cell problems and effective matrices.

The forward corrector for direction xi solves, on the space-time torus,

    delta*phi + dphi/dt = div((a + s)(grad phi + xi)) + bbar . grad phi,

and the transpose corrector flips the time derivative's sign and replaces
the flux coefficient by (a^t - s). Discretization: spectral gradients in
space, a second-order centered periodic stencil in time, the whole system
solved monolithically by preconditioned GMRES.

The iteration runs in the subspace of fields with zero spatial mean on every
time slice and no spatial Nyquist content. That subspace is invariant under
the operator, contains the forcing, and carries a discrete Poincare
inequality, so the solve stays well-conditioned uniformly in delta and is
well-posed even at delta = 0 (this is the pinned-zero-mode variant). It also
makes the returned phi mean-zero by construction.

Effective matrices follow by torus-averaging the corrector fluxes:
a_bar e_i = <(a+s)(grad phi_i + e_i)> and m_bar e_j from the transpose
solves. Discrete integration by parts is exact here, which pins the
ellipticity identity <a_bar xi, xi> = <a (grad phi_xi + xi).(grad phi_xi
+ xi)> + delta <phi_xi^2> and the duality defect identity

    a_bar_ji - m_bar_ij = -2 <(bbar . grad phi_i) psi_j>

at any delta: with bbar = 0 the transpose relation a_bar = m_bar^t holds to
solver tolerance, while a nonzero bbar leaves a genuine finite-volume defect
that the identity quantifies.
"""

from __future__ import annotations

from dataclasses import dataclass
import warnings

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .environment import EnvironmentRealization
from .errors import (
    EllipticityViolation,
    IllPosed,
    NonConvergence,
    NonMonotoneWarning,
    ValidationError,
)
from .grid import (
    SpaceTimeGrid,
    diff_symbols,
    full_symbols,
    periodic_interp,
    spatial_divergence,
    torus_mean,
)
from .seeding import rng_for

RESTART = 48
MAX_CYCLES = 12


@dataclass(frozen=True)
class CorrectorProblem:
    env: EnvironmentRealization
    direction: np.ndarray
    delta: float = 1e-4
    transpose: bool = False

    def __post_init__(self):
        xi = np.asarray(self.direction, dtype=float)
        if xi.shape != (self.env.grid.d,):
            raise ValidationError(f"direction must have shape ({self.env.grid.d},)")
        if not np.linalg.norm(xi) > 0:
            raise ValidationError("direction must be nonzero")
        if self.delta < 0:
            raise ValidationError("delta must be >= 0")
        object.__setattr__(self, "direction", xi)


@dataclass(frozen=True)
class CorrectorField:
    """Solved corrector: phi mean-zero on every slice, grad_phi its exact
    spectral gradient, flux the full coefficient flux c (grad phi + xi),
    residual_norm the relative l2 residual of the discrete system."""

    phi: np.ndarray
    grad_phi: np.ndarray
    flux: np.ndarray
    residual_norm: float
    delta: float
    direction: np.ndarray
    transpose: bool


@dataclass(frozen=True)
class EffectiveMatrix:
    a_bar: np.ndarray
    m_bar: np.ndarray
    lambda_min: float
    upper_cert: float
    provenance: dict


def _coefficient(env: EnvironmentRealization, transpose: bool) -> np.ndarray:
    if transpose:
        return np.swapaxes(env.a, -1, -2) - env.s
    return env.a + env.s


def _project_spectral(xh: np.ndarray, grid: SpaceTimeGrid) -> None:
    """Zero the per-slice spatial mean and all spatial Nyquist planes, in the
    rfftn layout (time axis first, untouched)."""
    d, n = grid.d, grid.n_x
    xh[(slice(None),) + (0,) * d] = 0.0
    for ax in range(1, d + 1):
        sl = [slice(None)] * (d + 1)
        sl[ax] = n // 2
        xh[tuple(sl)] = 0.0


def _make_operator(env: EnvironmentRealization, c: np.ndarray, sign_t: float,
                   delta: float):
    g = env.grid
    d, n = g.d, g.n_x
    axes = tuple(range(1, d + 1))
    syms = [s.reshape((1,) + s.shape) for s in diff_symbols(n, d, g.L)]
    bb = env.bbar.reshape((g.n_t,) + (1,) * d + (g.d,))
    inv_2kt = 1.0 / (2.0 * g.k_t)

    def apply(xf: np.ndarray) -> np.ndarray:
        x = xf.reshape(g.shape)
        xh = np.fft.rfftn(x, axes=axes)
        _project_spectral(xh, g)
        x0 = np.fft.irfftn(xh, s=g.sshape, axes=axes)
        grad = np.empty(g.shape + (d,))
        for j in range(d):
            grad[..., j] = np.fft.irfftn(1j * syms[j] * xh, s=g.sshape, axes=axes)
        flux = (c @ grad[..., None])[..., 0]
        fh = np.fft.rfftn(flux, axes=axes)
        div_hat = sum(1j * syms[j] * fh[..., j] for j in range(d))
        divf = np.fft.irfftn(div_hat, s=g.sshape, axes=axes)
        conv = (bb * grad).sum(axis=-1)
        dtx = (np.roll(x0, -1, axis=0) - np.roll(x0, 1, axis=0)) * inv_2kt
        y = delta * x0 + sign_t * dtx - divf - conv
        return y.ravel()

    return apply


def _make_preconditioner(env: EnvironmentRealization, sign_t: float, delta: float):
    """Inverse of the constant-coefficient surrogate
    delta + sign_t*D_t - div(<a> grad), diagonal in space-time Fourier."""
    g = env.grid
    d, n = g.d, g.n_x
    a_mean = torus_mean(env.a, g)
    a_mean = 0.5 * (a_mean + a_mean.T)

    tsym = np.sin(2.0 * np.pi * np.fft.fftfreq(g.n_t)) / g.k_t
    tsym = tsym.reshape((g.n_t,) + (1,) * d)
    ks = full_symbols(n, d, g.L)
    quad = np.zeros((1,) + (n,) * d)
    for i in range(d):
        for j in range(d):
            quad = quad + a_mean[i, j] * ks[i].reshape((1,) + ks[i].shape) \
                * ks[j].reshape((1,) + ks[j].shape)
    mhat = delta + 1j * sign_t * tsym + quad
    # modes excluded by the subspace projection: unit symbol, keeps division safe
    mhat = np.broadcast_to(mhat, g.shape).copy()
    mhat[(slice(None),) + (0,) * d] = 1.0
    for ax in range(1, d + 1):
        sl = [slice(None)] * (d + 1)
        sl[ax] = n // 2
        mhat[tuple(sl)] = 1.0

    def apply(rf: np.ndarray) -> np.ndarray:
        r = rf.reshape(g.shape)
        return np.fft.ifftn(np.fft.fftn(r) / mhat).real.ravel()

    return apply


def _gmres_solve(apply, m_apply, rhs: np.ndarray, tol: float):
    size = rhs.size
    aop = LinearOperator((size, size), matvec=apply, dtype=float)
    mop = LinearOperator((size, size), matvec=m_apply, dtype=float)
    bnorm = np.linalg.norm(rhs)
    history: list[float] = []
    x = None
    rtol = tol
    true_res = np.inf
    for _ in range(3):
        kw = dict(x0=x, M=mop, atol=0.0, restart=RESTART, maxiter=MAX_CYCLES,
                  callback=history.append, callback_type="pr_norm")
        try:
            x, _ = gmres(aop, rhs, rtol=rtol, **kw)
        except TypeError:  # older scipy spells the kwarg tol
            x, _ = gmres(aop, rhs, tol=rtol, **kw)
        true_res = np.linalg.norm(apply(x) - rhs) / bnorm
        if true_res <= tol:
            return x, float(true_res), history
        rtol *= 0.05
    raise NonConvergence(
        f"corrector iteration stalled at relative residual {true_res:.3e}",
        residual_history=history,
    )


def solve_corrector(problem: CorrectorProblem, tol: float = 1e-9) -> CorrectorField:
    env = problem.env
    g = env.grid
    d = g.d
    axes = tuple(range(1, d + 1))
    xi = problem.direction
    c = _coefficient(env, problem.transpose)
    sign_t = -1.0 if problem.transpose else 1.0

    f_const = (c @ xi.reshape((1,) * (d + 1) + (d, 1)))[..., 0]
    rhs = spatial_divergence(f_const, g.L, axes).ravel()

    if np.abs(rhs).max() == 0.0:
        phi = np.zeros(g.shape)
        grad = np.zeros(g.shape + (d,))
        flux = f_const.copy()
        return CorrectorField(
            phi=phi, grad_phi=grad, flux=flux, residual_norm=0.0,
            delta=problem.delta, direction=xi, transpose=problem.transpose,
        )

    apply = _make_operator(env, c, sign_t, problem.delta)
    m_apply = _make_preconditioner(env, sign_t, problem.delta)
    x, res, _ = _gmres_solve(apply, m_apply, rhs, tol)
    if not np.isfinite(x).all():
        raise IllPosed("corrector solve produced non-finite values "
                       f"(delta = {problem.delta})")

    phi = x.reshape(g.shape)
    xh = np.fft.rfftn(phi, axes=axes)
    _project_spectral(xh, g)
    phi = np.fft.irfftn(xh, s=g.sshape, axes=axes)
    syms = [s.reshape((1,) + s.shape) for s in diff_symbols(g.n_x, d, g.L)]
    grad = np.empty(g.shape + (d,))
    for j in range(d):
        grad[..., j] = np.fft.irfftn(1j * syms[j] * xh, s=g.sshape, axes=axes)
    flux = (c @ (grad + xi)[..., None])[..., 0]
    return CorrectorField(
        phi=phi, grad_phi=grad, flux=flux, residual_norm=res,
        delta=problem.delta, direction=xi, transpose=problem.transpose,
    )


def effective_matrix(
    env: EnvironmentRealization, delta: float, tol: float = 1e-9
) -> EffectiveMatrix:
    """Assemble a_bar and m_bar from d forward and d transpose corrector
    solves, with the ellipticity certificate fields populated."""
    if delta <= 0:
        raise ValidationError("effective_matrix needs delta > 0")
    g = env.grid
    d = g.d
    a_bar = np.empty((d, d))
    m_bar = np.empty((d, d))
    grad_sq_sum = 0.0
    for i in range(d):
        e_i = np.zeros(d)
        e_i[i] = 1.0
        cf = solve_corrector(CorrectorProblem(env, e_i, delta, transpose=False), tol)
        a_bar[:, i] = torus_mean(cf.flux, g)
        grad_sq_sum += float(torus_mean((cf.grad_phi**2).sum(axis=-1), g))
        cft = solve_corrector(CorrectorProblem(env, e_i, delta, transpose=True), tol)
        m_bar[:, i] = torus_mean(cft.flux, g)

    lam_min = float(np.linalg.eigvalsh(0.5 * (a_bar + a_bar.T))[0])
    s_sq = float(torus_mean((env.s**2).sum(axis=(-1, -2)), g))
    upper = (env.Lam + np.sqrt(s_sq)) * (1.0 + np.sqrt(grad_sq_sum))
    if lam_min < env.lam - 10.0 * tol:
        raise EllipticityViolation(
            f"lambda_min(sym a_bar) = {lam_min:.6e} fell below the certified "
            f"lower bound {env.lam:.6e}; discretization or solver fault"
        )
    return EffectiveMatrix(
        a_bar=a_bar, m_bar=m_bar, lambda_min=lam_min, upper_cert=float(upper),
        provenance={
            "grid": (g.d, g.n_x, g.n_t, g.L, g.T_env),
            "delta": delta,
            "seed": env.seed,
            "tol": tol,
        },
    )


def energy_check(cf: CorrectorField, env: EnvironmentRealization,
                 direction=None) -> float:
    """Defect of the exact discrete energy identity
    <a grad phi . grad phi> + <F . grad phi> = -delta <phi^2>, normalized by
    <|grad phi|^2> + |xi|^2. Equals delta<phi^2>/normalizer when the solve is
    converged, so it decreases with delta."""
    g = env.grid
    xi = np.asarray(cf.direction if direction is None else direction, dtype=float)
    c = _coefficient(env, cf.transpose)
    a_quad = float(torus_mean(
        ((env.a @ cf.grad_phi[..., None])[..., 0] * cf.grad_phi).sum(axis=-1), g))
    f_const = (c @ xi.reshape((1,) * (g.d + 1) + (g.d, 1)))[..., 0]
    cross = float(torus_mean((f_const * cf.grad_phi).sum(axis=-1), g))
    grad_sq = float(torus_mean((cf.grad_phi**2).sum(axis=-1), g))
    return abs(a_quad + cross) / (grad_sq + float(xi @ xi))


def sublinearity_diagnostic(
    env: EnvironmentRealization,
    direction,
    eps_list,
    R: float,
    delta: float = 1e-4,
    tol: float = 1e-9,
    n_samples: int = 4096,
    transpose: bool = False,
) -> list[tuple[float, float]]:
    """Monte-Carlo average of (eps*phi((x + w)/eps, t/eps^2) - mean)^2 over
    the cylinder |x| <= R, t in [0, R^2], using the drift-shifted evaluation.

    The eps prefactor follows the same convention as the corrector problem
    itself (the corrector is O(1) on the torus, its large-scale build-up is
    eps * phi at the rescaled point); the transpose variant is normalized
    identically so the two tables are directly comparable.
    """
    from .path_clt import integrate_path

    g = env.grid
    cf = solve_corrector(CorrectorProblem(env, np.asarray(direction, float),
                                          delta, transpose), tol)
    rng = rng_for(env.seed, "sublin", R)
    # uniform in the ball of radius R times [0, R^2]
    dirs = rng.standard_normal((n_samples, g.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = R * rng.uniform(0.0, 1.0, n_samples) ** (1.0 / g.d)
    pts = dirs * radii[:, None]
    ts = rng.uniform(0.0, R * R, n_samples)

    table = []
    for eps in eps_list:
        if np.abs(env.bbar).max() > 0:
            path = integrate_path(env.bbar, eps, R * R, eps**2 * g.k_t,
                                  spacing=g.k_t)
            w = np.stack([
                np.interp(ts, path.times, path.values[:, j]) for j in range(g.d)
            ], axis=1)
        else:
            w = np.zeros((n_samples, g.d))
        x_fast = np.mod((pts + w) / eps, g.L)
        t_fast = np.mod(ts / eps**2, g.T_env)
        vals = eps * periodic_interp(cf.phi, g, t_fast, x_fast)
        table.append((float(eps), float(np.mean((vals - vals.mean()) ** 2))))
    return table


def delta_extrapolation(
    env: EnvironmentRealization, delta_list, tol: float = 1e-9
) -> EffectiveMatrix:
    """Richardson extrapolation of a_bar^delta to delta = 0 using the two
    finest deltas; the raw sequence rides along in provenance."""
    deltas = [float(x) for x in delta_list]
    if len(deltas) < 3:
        raise ValidationError("delta_list needs at least 3 entries")
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ValidationError("delta_list must be strictly decreasing")

    ems = [effective_matrix(env, dl, tol) for dl in deltas]
    diffs = [float(np.abs(e1.a_bar - e2.a_bar).max())
             for e1, e2 in zip(ems, ems[1:])]
    if any(d2 > d1 for d1, d2 in zip(diffs, diffs[1:])):
        warnings.warn(
            "a_bar^delta differences did not shrink monotonically over "
            f"delta_list = {deltas}: {diffs}",
            NonMonotoneWarning,
            stacklevel=2,
        )

    d1, d2 = deltas[-2], deltas[-1]
    w1 = -d2 / (d1 - d2)
    w2 = d1 / (d1 - d2)
    a_bar = w1 * ems[-2].a_bar + w2 * ems[-1].a_bar
    m_bar = w1 * ems[-2].m_bar + w2 * ems[-1].m_bar
    lam_min = float(np.linalg.eigvalsh(0.5 * (a_bar + a_bar.T))[0])
    prov = dict(ems[-1].provenance)
    prov["delta_list"] = deltas
    prov["raw_a_bars"] = [e.a_bar for e in ems]
    prov["raw_m_bars"] = [e.m_bar for e in ems]
    return EffectiveMatrix(
        a_bar=a_bar, m_bar=m_bar, lambda_min=lam_min,
        upper_cert=ems[-1].upper_cert, provenance=prov,
    )
