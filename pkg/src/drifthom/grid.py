"""Space-time torus grid and the spectral calculus on it.

Conventions used by every module:

* scalar fields have shape (n_t, n_x, ..., n_x) with the time axis first and
  d spatial axes after it;
* vector and matrix fields append component axes at the end, so a drift field
  is (n_t, *spatial, d) and a diffusion field (n_t, *spatial, d, d);
* the spatially homogeneous drift is a plain (n_t, d) array;
* all indexing wraps periodically in every coordinate.

Spatial derivatives are spectral. The Nyquist mode of every even-length axis
is zeroed both in the differentiation symbols and at field synthesis, which
makes each field an honest trigonometric polynomial of maximal mode
n_x/2 - 1: first derivatives then map real fields to real fields, discrete
integration by parts is exact, and Fourier shifts evaluate the same
polynomial everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * np.pi


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Periodic space-time lattice: d spatial dimensions of n_x points with
    period L, and n_t temporal points with period T_env."""

    d: int
    n_x: int
    n_t: int
    L: float = 1.0
    T_env: float = 1.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValidationError(f"spatial dimension must be 2 or 3, got {self.d}")
        for name, n in (("n_x", self.n_x), ("n_t", self.n_t)):
            if n < 4 or not _is_pow2(n):
                raise ValidationError(f"{name} must be a power of two >= 4, got {n}")
        if not (self.L > 0 and self.T_env > 0):
            raise ValidationError("periods L and T_env must be positive")

    @property
    def h(self) -> float:
        """Spatial grid spacing."""
        return self.L / self.n_x

    @property
    def k_t(self) -> float:
        """Temporal grid spacing."""
        return self.T_env / self.n_t

    @property
    def sshape(self) -> tuple:
        return (self.n_x,) * self.d

    @property
    def shape(self) -> tuple:
        return (self.n_t,) + self.sshape

    def x_nodes(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h

    def t_nodes(self) -> np.ndarray:
        return np.arange(self.n_t) * self.k_t


# cached wavenumber tables, keyed by (n, d, L, layout)
_SYMBOLS: dict = {}


def _axis_freqs(n: int, L: float, zero_nyquist: bool) -> np.ndarray:
    k = TWO_PI * np.fft.fftfreq(n, d=L / n)
    if zero_nyquist and n % 2 == 0:
        k = k.copy()
        k[n // 2] = 0.0
    return k


def diff_symbols(n: int, d: int, L: float) -> list[np.ndarray]:
    """Differentiation wavenumbers for rfftn over d trailing spatial axes.

    Returns d arrays broadcastable against an rfftn output of shape
    (..., n, ..., n, n//2+1); Nyquist modes are zeroed.
    """
    key = (n, d, L, "rfft")
    if key not in _SYMBOLS:
        ks = []
        for j in range(d):
            if j == d - 1:
                kj = TWO_PI * np.fft.rfftfreq(n, d=L / n)
                if n % 2 == 0:
                    kj = kj.copy()
                    kj[-1] = 0.0
            else:
                kj = _axis_freqs(n, L, zero_nyquist=True)
            shape = [1] * d
            shape[j] = kj.size
            ks.append(kj.reshape(shape))
        _SYMBOLS[key] = ks
    return _SYMBOLS[key]


def full_symbols(n: int, d: int, L: float) -> list[np.ndarray]:
    """Same as diff_symbols but for a full complex fftn layout."""
    key = (n, d, L, "fft")
    if key not in _SYMBOLS:
        ks = []
        for j in range(d):
            kj = _axis_freqs(n, L, zero_nyquist=True)
            shape = [1] * d
            shape[j] = n
            ks.append(kj.reshape(shape))
        _SYMBOLS[key] = ks
    return _SYMBOLS[key]


def _expand(sym: np.ndarray, ndim: int, axes: tuple[int, ...]) -> np.ndarray:
    """Reshape a d-dim symbol array so its axes land on `axes` of an
    ndim-dimensional target."""
    shape = [1] * ndim
    for ax, s in zip(axes, sym.shape):
        shape[ax] = s
    return sym.reshape(shape)


def _norm_axes(arr: np.ndarray, axes) -> tuple[int, ...]:
    return tuple(ax % arr.ndim for ax in axes)


def spatial_gradient(u: np.ndarray, L: float, axes) -> np.ndarray:
    """Spectral gradient over the given spatial axes; the component axis is
    appended last.  u may carry arbitrary leading/trailing batch axes."""
    axes = _norm_axes(u, axes)
    d = len(axes)
    n = u.shape[axes[0]]
    uh = np.fft.rfftn(u, axes=axes)
    syms = diff_symbols(n, d, L)
    out = np.empty(u.shape + (d,), dtype=u.dtype)
    for j in range(d):
        kj = _expand(syms[j], uh.ndim, axes)
        out[..., j] = np.fft.irfftn(1j * kj * uh, s=(n,) * d, axes=axes)
    return out


def spatial_divergence(v: np.ndarray, L: float, axes) -> np.ndarray:
    """Spectral divergence contracting the last axis of v against the given
    spatial axes."""
    axes = _norm_axes(v, axes)
    d = len(axes)
    if v.shape[-1] != d:
        raise ValidationError(
            f"vector field has {v.shape[-1]} components but {d} spatial axes"
        )
    n = v.shape[axes[0]]
    syms = diff_symbols(n, d, L)
    acc = None
    for j in range(d):
        vh = np.fft.rfftn(v[..., j], axes=axes)
        kj = _expand(syms[j], vh.ndim, axes)
        term = 1j * kj * vh
        acc = term if acc is None else acc + term
    return np.fft.irfftn(acc, s=(n,) * d, axes=axes)


def fourier_shift(u: np.ndarray, L: float, shift, axes) -> np.ndarray:
    """Evaluate the trigonometric interpolant of u at x + shift.

    Exact for fields synthesized without Nyquist content. shift is a length-d
    sequence in physical units.
    """
    axes = _norm_axes(u, axes)
    d = len(axes)
    n = u.shape[axes[0]]
    uh = np.fft.rfftn(u, axes=axes)
    # rfft layout needs the half-axis handled with rfftfreq
    phase = np.zeros((), dtype=complex)
    for j in range(d):
        if j == d - 1:
            kj = TWO_PI * np.fft.rfftfreq(n, d=L / n)
        else:
            kj = TWO_PI * np.fft.fftfreq(n, d=L / n)
        shape = [1] * uh.ndim
        shape[axes[j]] = kj.size
        phase = phase + 1j * shift[j] * kj.reshape(shape)
    return np.fft.irfftn(uh * np.exp(phase), s=(n,) * d, axes=axes)


def torus_mean(field: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Average over time and space axes; component axes survive."""
    return field.mean(axis=tuple(range(grid.d + 1)))


def slice_spatial_mean(field: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Per-time-slice spatial average: (n_t, ..., comps) -> (n_t, comps)."""
    return field.mean(axis=tuple(range(1, grid.d + 1)))


def periodic_interp(field: np.ndarray, grid: SpaceTimeGrid, t, x) -> np.ndarray:
    """Multilinear interpolation of a (n_t, *spatial, *comp) field at query
    times t (shape Q) and points x (shape (Q, d)), wrapping periodically.

    Returns (Q, *comp). Cheap and monotone; preserves pointwise convex
    bounds such as ellipticity.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] != t.shape[0]:
        if t.shape[0] == 1:
            t = np.broadcast_to(t, (x.shape[0],))
        elif x.shape[0] == 1:
            x = np.broadcast_to(x, (t.shape[0], grid.d))
        else:
            raise ValidationError("t and x query lengths disagree")

    idx_f = [t / grid.k_t] + [x[:, j] / grid.h for j in range(grid.d)]
    lo = [np.floor(f).astype(np.int64) for f in idx_f]
    w_hi = [f - l for f, l in zip(idx_f, lo)]
    sizes = (grid.n_t,) + grid.sshape

    comp_shape = field.shape[grid.d + 1:]
    out = np.zeros((t.shape[0],) + comp_shape, dtype=field.dtype)
    for corner in range(1 << (grid.d + 1)):
        w = np.ones(t.shape[0])
        idx = []
        for ax in range(grid.d + 1):
            bit = (corner >> ax) & 1
            idx.append((lo[ax] + bit) % sizes[ax])
            w = w * (w_hi[ax] if bit else (1.0 - w_hi[ax]))
        vals = field[tuple(idx)]
        out += w.reshape((-1,) + (1,) * len(comp_shape)) * vals
    return out
