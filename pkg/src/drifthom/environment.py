"""Random space-time periodic environments.

A realization carries a uniformly elliptic symmetric diffusion matrix a, an
exactly skew-symmetric stream matrix s, and a spatially homogeneous mean-zero
drift bbar. The divergence-free drift of the medium is b = (nabla . s) + bbar,
assembled row-wise from the stream matrix so the construction is exactly
divergence-free in any dimension.

Gaussian channels are synthesized spectrally with a density whose spatial
tail decays like |k|^-(beta_decay + d), i.e. correlations decaying faster
than a square for beta_decay > 2. Ellipticity is built in: a = lam*I + M^t M
with bounded M, never rejection-sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .bbar import make_bbar
from .errors import EllipticityViolation, ValidationError
from .grid import SpaceTimeGrid, full_symbols, periodic_interp, spatial_divergence
from .seeding import derive_seed


@dataclass(frozen=True)
class SpectralParams:
    """Knobs of the Gaussian environment ensemble.

    lam and Lam are the lower and upper ellipticity bounds; sigma_a and
    sigma_s scale the diffusion perturbation and the stream field; ell_x,
    ell_t are correlation lengths and beta_decay the spatial decay exponent.
    """

    ell_x: float = 0.2
    ell_t: float = 0.2
    beta_decay: float = 2.5
    sigma_s: float = 1.0
    sigma_a: float = 0.3
    lam: float = 1.0
    Lam: float = 10.0

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam < np.inf):
            raise ValidationError("need 0 < lambda <= Lambda < inf")
        if self.beta_decay <= 2:
            raise ValidationError(
                "beta_decay must exceed 2: spatial correlations are required "
                "to decay faster than a square, got "
                f"beta_decay = {self.beta_decay}"
            )
        if self.ell_x <= 0 or self.ell_t <= 0:
            raise ValidationError("correlation lengths must be positive")
        if self.sigma_s < 0 or self.sigma_a < 0:
            raise ValidationError("amplitudes must be nonnegative")


def spectral_density(grid: SpaceTimeGrid, params: SpectralParams) -> np.ndarray:
    """Synthesis density over the full (n_t, n_x, ..) fftn mode lattice,
    normalized so the resulting field has unit pointwise variance:
    mean over modes equals one. Zero mode and all Nyquist planes are zeroed,
    keeping every synthesized field a mean-zero trig polynomial."""
    w = 2.0 * np.pi * np.fft.fftfreq(grid.n_t, d=grid.k_t)
    w = w.reshape((grid.n_t,) + (1,) * grid.d)
    ks = full_symbols(grid.n_x, grid.d, grid.L)
    k_sq = sum((k.reshape((1,) + k.shape)) ** 2 for k in ks)

    expo = 0.5 * (params.beta_decay + grid.d)
    dens = (1.0 + params.ell_x**2 * k_sq) ** (-expo)
    dens = dens / (1.0 + (params.ell_t * w) ** 2)

    mask = np.ones(grid.shape, dtype=bool)
    mask[tuple([0] * (grid.d + 1))] = False
    for ax, n in enumerate(grid.shape):
        sl = [slice(None)] * (grid.d + 1)
        sl[ax] = n // 2
        mask[tuple(sl)] = False
    dens = np.where(mask, np.broadcast_to(dens, grid.shape), 0.0)

    total = dens.sum()
    if total > 0:
        dens = dens * (dens.size / total)
    return dens


def sample_gaussian_field(
    grid: SpaceTimeGrid,
    params: SpectralParams,
    seed: int,
    channel_tag: str,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Stationary mean-zero periodic Gaussian field with unit variance times
    amplitude; deterministic in (seed, channel_tag)."""
    if amplitude == 0.0:
        return np.zeros(grid.shape)
    rng = np.random.default_rng(derive_seed(seed, "gauss", channel_tag))
    white = rng.standard_normal(grid.shape)
    dens = spectral_density(grid, params)
    coeff = np.fft.fftn(white) * np.sqrt(dens)
    return amplitude * np.fft.ifftn(coeff).real


@dataclass(frozen=True)
class EnvironmentRealization:
    """One sampled medium: diffusion a (n_t, *spatial, d, d), stream s with
    the same shape, homogeneous drift bbar (n_t, d), and the seed that
    reproduces it. lam/Lam record the certified ellipticity bounds."""

    grid: SpaceTimeGrid
    a: np.ndarray
    s: np.ndarray
    bbar: np.ndarray
    seed: int
    lam: float
    Lam: float
    params: SpectralParams | None = dc_field(default=None, compare=False)
    bbar_model: str = "zero"


def _min_eig_sym(a: np.ndarray, d: int) -> np.ndarray:
    if d == 2:
        tr = a[..., 0, 0] + a[..., 1, 1]
        det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
        disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
        return 0.5 * (tr - disc)
    return np.linalg.eigvalsh(a)[..., 0]


def _max_eig_sym(a: np.ndarray, d: int) -> np.ndarray:
    if d == 2:
        tr = a[..., 0, 0] + a[..., 1, 1]
        det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
        disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
        return 0.5 * (tr + disc)
    return np.linalg.eigvalsh(a)[..., -1]


def _audit_ellipticity(a: np.ndarray, d: int, lam: float, Lam: float):
    lo = _min_eig_sym(a, d).min()
    hi = _max_eig_sym(a, d).max()
    if lo < lam - 1e-12 * max(1.0, lam):
        raise EllipticityViolation(
            f"min eigenvalue {lo:.3e} fell below lambda = {lam:.3e}"
        )
    if hi > Lam * (1 + 1e-12):
        raise EllipticityViolation(
            f"max eigenvalue {hi:.3e} exceeds Lambda = {Lam:.3e}"
        )


def build_environment(
    grid: SpaceTimeGrid,
    params: SpectralParams,
    seed: int,
    bbar_model: str = "zero",
    **bbar_kwargs,
) -> EnvironmentRealization:
    """Sample one environment realization.

    a = lam*I + M^t M where M has entries sigma_a * g/(1+|g|) for independent
    Gaussian channels g, so lam <= a <= lam + d^2 sigma_a^2 pointwise; s is
    antisymmetrized from d(d-1)/2 channels scaled by sigma_s; bbar follows
    bbar_model and is de-meaned over the temporal period.
    """
    d = grid.d
    if params.lam + (d * params.sigma_a) ** 2 > params.Lam:
        raise ValidationError(
            "sigma_a too large for the requested Lambda: need "
            "lambda + (d*sigma_a)^2 <= Lambda"
        )

    a = np.zeros(grid.shape + (d, d))
    for i in range(d):
        a[..., i, i] = params.lam
    if params.sigma_a > 0:
        m = np.empty(grid.shape + (d, d))
        for p in range(d):
            for q in range(d):
                g = sample_gaussian_field(grid, params, seed, f"a:{p}{q}")
                m[..., p, q] = params.sigma_a * g / (1.0 + np.abs(g))
        a += np.einsum("...pi,...pj->...ij", m, m)

    s = np.zeros(grid.shape + (d, d))
    if params.sigma_s > 0:
        for i in range(d):
            for j in range(i + 1, d):
                c = sample_gaussian_field(
                    grid, params, seed, f"s:{i}{j}", amplitude=params.sigma_s
                )
                s[..., i, j] = c
                s[..., j, i] = -c

    bbar = make_bbar(bbar_model, grid, seed, **bbar_kwargs)
    bbar = bbar - bbar.mean(axis=0)

    _audit_ellipticity(a, d, params.lam, params.Lam)
    return EnvironmentRealization(
        grid=grid, a=a, s=s, bbar=bbar, seed=seed,
        lam=params.lam, Lam=params.Lam, params=params, bbar_model=bbar_model,
    )


def environment_from_fields(
    grid: SpaceTimeGrid,
    a: np.ndarray,
    s: np.ndarray,
    bbar: np.ndarray,
    seed: int = 0,
    bbar_model: str = "custom",
) -> EnvironmentRealization:
    """Wrap explicit field arrays as a realization, certifying the realized
    ellipticity bounds and checking structural invariants."""
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    bbar = np.asarray(bbar, dtype=float)
    want = grid.shape + (grid.d, grid.d)
    if a.shape != want or s.shape != want:
        raise ValidationError(f"a and s must have shape {want}")
    if bbar.shape != (grid.n_t, grid.d):
        raise ValidationError(f"bbar must have shape {(grid.n_t, grid.d)}")
    if np.abs(a - np.swapaxes(a, -1, -2)).max() > 0:
        raise ValidationError("a must be exactly symmetric")
    if np.abs(s + np.swapaxes(s, -1, -2)).max() > 0:
        raise ValidationError("s must be exactly skew-symmetric")
    if np.abs(bbar.mean(axis=0)).max() > 1e-10:
        raise ValidationError("bbar must have zero temporal mean")
    lam = float(_min_eig_sym(a, grid.d).min())
    Lam = float(_max_eig_sym(a, grid.d).max())
    if lam <= 0:
        raise EllipticityViolation(f"a is not positive definite: {lam:.3e}")
    return EnvironmentRealization(
        grid=grid, a=a, s=s, bbar=bbar, seed=seed,
        lam=lam, Lam=Lam, params=None, bbar_model=bbar_model,
    )


def drift_of(env: EnvironmentRealization) -> np.ndarray:
    """Divergence-free drift b = (row-wise nabla . s) + bbar, shape
    (n_t, *spatial, d)."""
    g = env.grid
    axes = tuple(range(1, g.d + 1))
    b = spatial_divergence(env.s, g.L, axes)
    return b + env.bbar.reshape((g.n_t,) + (1,) * g.d + (g.d,))


def eval_rescaled(
    env: EnvironmentRealization,
    eps: float,
    x,
    t,
    which: str = "a",
) -> np.ndarray:
    """Field value at the rescaled point: a(x/eps, t/eps^2) etc., by periodic
    multilinear interpolation. x is (d,) or (Q, d); t scalar or (Q,)."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    g = env.grid
    t_fast = np.mod(np.asarray(t, dtype=float) / eps**2, g.T_env)
    if which == "bbar":
        # temporal-only interpolation of the homogeneous drift
        tq = np.atleast_1d(t_fast)
        f = tq / g.k_t
        lo = np.floor(f).astype(np.int64)
        wt = (f - lo)[:, None]
        vals = (1 - wt) * env.bbar[lo % g.n_t] + wt * env.bbar[(lo + 1) % g.n_t]
        return vals if np.ndim(t) else vals[0]
    if which not in ("a", "s"):
        raise ValidationError("which must be one of 'a', 's', 'bbar'")
    field = env.a if which == "a" else env.s
    x_fast = np.mod(np.asarray(x, dtype=float) / eps, g.L)
    out = periodic_interp(field, g, t_fast, x_fast)
    return out if (np.ndim(t) or np.asarray(x).ndim > 1) else out[0]
