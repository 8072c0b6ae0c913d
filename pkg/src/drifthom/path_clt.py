"""Rescaled drift paths and their Brownian limit diagnostics.

The rescaled path of a temporal drift series is

    w_eps(t) = (1/eps) * integral_0^t bbar(s/eps^2) ds,

computed by composite trapezoid quadrature on a grid fine enough to resolve
the eps^2 time compression. Long-run covariance estimates come in two
flavors: a lag-window series over unit-block increments x_j = int_{j-1}^j
bbar, and the empirical covariance of terminal path values. Distributional
convergence is probed by componentwise Kolmogorov-Smirnov tests at fixed
marginal times plus a lag-1 independence check on non-overlapping
increments.

Quadrature conventions are deliberate: paths use trapezoid (exact for
constants and for series-node-aligned steps), block integrals use left
rectangles (exact for right-continuous block-constant drifts, and blocks
partition the sample nodes so mean-zero periodic series telescope to zero
exactly).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import kstest, pearsonr

from .errors import (
    InsufficientSamples,
    ResolutionError,
    SlowMixingWarning,
    ValidationError,
)

MIN_SERIES_ENSEMBLE = 100
MIN_PATHS = 200
KS_LEVEL = 0.01


@dataclass(frozen=True)
class DriftPath:
    eps: float
    times: np.ndarray
    values: np.ndarray
    source_seed: int = 0


@dataclass(frozen=True)
class BlockIncrements:
    """x[j] = int_{j}^{j+1} bbar(s) ds (0-based storage of the unit-block
    integrals); abs_x carries int |bbar| per block for tail diagnostics."""

    x: np.ndarray
    count: int
    abs_x: np.ndarray


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma_sq: np.ndarray
    stderr: np.ndarray
    method: str
    truncation: int | None = None
    tail_estimate: float = 0.0
    psd_adjusted: bool = False


def _periodic_series_eval(bbar: np.ndarray, spacing: float, s: np.ndarray):
    """Linear interpolation of a uniformly sampled series, extended
    periodically."""
    n = bbar.shape[0]
    f = s / spacing
    lo = np.floor(f).astype(np.int64)
    frac = (f - lo)[:, None]
    return (1.0 - frac) * bbar[lo % n] + frac * bbar[(lo + 1) % n]


def integrate_path(
    bbar: np.ndarray,
    eps: float,
    T: float,
    dt: float,
    spacing: float = 1.0,
    source_seed: int = 0,
) -> DriftPath:
    """Trapezoid quadrature of w_eps(t) = -(1/eps) * integral of
    bbar(s/eps^2) over [0, t], on [0, T] with step dt (snapped to an integer
    number of steps). The series is treated as periodic with period
    len(bbar)*spacing. Requires dt <= eps^2 * spacing.

    Sign convention: with the drift entering the eps-scale equation as
    +(1/eps) bbar . grad, the function rho(x + w(t), t) of the MINUS-signed
    path solves the drift-free transported equation whose coefficients are
    queried at (x + w)/eps; equivalently rho_eps(x) = rho_tilde(x - w). The
    law of the path is unchanged by the sign."""
    bbar = np.atleast_2d(np.asarray(bbar, dtype=float))
    if eps <= 0 or T <= 0 or dt <= 0 or spacing <= 0:
        raise ValidationError("eps, T, dt, spacing must be positive")
    if dt > eps**2 * spacing * (1.0 + 1e-12):
        raise ResolutionError(
            f"dt = {dt:.3e} cannot resolve the eps^2-compressed drift: "
            f"need dt <= eps^2 * spacing = {eps**2 * spacing:.3e}"
        )
    n = max(1, int(round(T / dt)))
    dt_eff = T / n
    if dt_eff > eps**2 * spacing * (1.0 + 1e-12):
        n += 1
        dt_eff = T / n
    times = np.arange(n + 1) * dt_eff
    integrand = _periodic_series_eval(bbar, spacing, times / eps**2)
    values = -cumulative_trapezoid(integrand, dx=dt_eff, axis=0,
                                   initial=0.0) / eps
    return DriftPath(eps=eps, times=times, values=values, source_seed=source_seed)


def block_increments(
    bbar: np.ndarray, horizon: int, spacing: float = 1.0
) -> BlockIncrements:
    """Left-rectangle integrals of bbar over the unit blocks [j, j+1),
    j < horizon. The series must cover [0, horizon]."""
    bbar = np.atleast_2d(np.asarray(bbar, dtype=float))
    if horizon < 1:
        raise ValidationError("horizon must be a positive integer")
    per_block = 1.0 / spacing
    if abs(per_block - round(per_block)) > 1e-9 or round(per_block) < 1:
        raise ValidationError(
            "spacing must divide the unit block length exactly"
        )
    per_block = int(round(per_block))
    needed = horizon * per_block
    if bbar.shape[0] < needed:
        raise ValidationError(
            f"series too short: {bbar.shape[0]} samples < {needed} needed "
            f"for horizon {horizon}"
        )
    chunks = bbar[:needed].reshape(horizon, per_block, bbar.shape[1])
    x = chunks.sum(axis=1) * spacing
    abs_x = np.abs(chunks).sum(axis=1) * spacing
    return BlockIncrements(x=x, count=horizon, abs_x=abs_x)


def estimate_sigma_series(
    ensemble: list, lag_max: int
) -> CovarianceEstimate:
    """Lag-window long-run covariance from an ensemble of block-increment
    sequences: C_0 + sum_{l=1}^{lag_max-1} (C_l + C_l^t), with lagged
    cross-moments averaged within and across ensemble members."""
    if len(ensemble) < MIN_SERIES_ENSEMBLE:
        raise InsufficientSamples(
            f"need at least {MIN_SERIES_ENSEMBLE} members, got {len(ensemble)}"
        )
    count = ensemble[0].count
    d = ensemble[0].x.shape[1]
    if not (1 <= lag_max < count):
        raise ValidationError("need 1 <= lag_max < block count")

    per_member = np.empty((len(ensemble), d, d))
    tails = []
    for m, blocks in enumerate(ensemble):
        x = blocks.x
        est = x.T @ x / x.shape[0]
        member_tail = 0.0
        for lag in range(1, lag_max):
            c = x[:-lag].T @ x[lag:] / (x.shape[0] - lag)
            est = est + c + c.T
            if lag >= lag_max - 3:
                member_tail = max(member_tail, float(np.abs(c + c.T).max()))
        per_member[m] = est
        tails.append(member_tail)

    sigma_sq = per_member.mean(axis=0)
    sigma_sq = 0.5 * (sigma_sq + sigma_sq.T)
    stderr = per_member.std(axis=0, ddof=1) / np.sqrt(len(ensemble))
    tail = float(np.mean(tails))

    psd_adjusted = False
    evals, evecs = np.linalg.eigh(sigma_sq)
    if evals.min() < 0:
        sigma_sq = (evecs * np.maximum(evals, 0.0)) @ evecs.T
        sigma_sq = 0.5 * (sigma_sq + sigma_sq.T)
        psd_adjusted = True

    if tail > max(stderr.max(), 1e-300):
        warnings.warn(
            f"lag-window tail {tail:.3e} has not decayed below the standard "
            f"error {stderr.max():.3e}; increase lag_max or the mixing rate",
            SlowMixingWarning,
            stacklevel=2,
        )
    return CovarianceEstimate(
        sigma_sq=sigma_sq, stderr=stderr, method="series",
        truncation=lag_max, tail_estimate=tail, psd_adjusted=psd_adjusted,
    )


def _terminal_values(paths: list, T: float) -> np.ndarray:
    out = np.empty((len(paths), paths[0].values.shape[1]))
    for i, p in enumerate(paths):
        if p.times[-1] < T * (1 - 1e-9):
            raise ValidationError(f"path {i} ends before T = {T}")
        for j in range(out.shape[1]):
            out[i, j] = np.interp(T, p.times, p.values[:, j])
    return out


def empirical_sigma(paths: list, T: float) -> CovarianceEstimate:
    """Sample covariance of terminal path values divided by T, with Gaussian
    asymptotic standard errors."""
    if len(paths) < MIN_PATHS:
        raise InsufficientSamples(
            f"need at least {MIN_PATHS} paths, got {len(paths)}"
        )
    w = _terminal_values(paths, T)
    m = w.shape[0]
    cov = np.cov(w.T, ddof=1)
    cov = np.atleast_2d(cov)
    sigma_sq = cov / T
    se = np.sqrt(
        np.outer(np.diag(cov), np.diag(cov)) + cov**2
    ) / (np.sqrt(m - 1.0) * T)
    return CovarianceEstimate(
        sigma_sq=0.5 * (sigma_sq + sigma_sq.T), stderr=se, method="empirical",
    )


def donsker_test(paths: list, sigma_sq: np.ndarray, marginal_times) -> dict:
    """KS marginals against the target Gaussian plus a lag-1 independence
    check on non-overlapping increments; pass/fail at level 0.01."""
    if len(paths) < MIN_PATHS:
        raise InsufficientSamples(
            f"need at least {MIN_PATHS} paths, got {len(paths)}"
        )
    sigma_sq = np.atleast_2d(np.asarray(sigma_sq, dtype=float))
    d = paths[0].values.shape[1]
    T = float(min(p.times[-1] for p in paths))

    max_abs = max(float(np.abs(p.values).max()) for p in paths)
    if max_abs == 0.0:
        return {
            "verdict": "deterministic-zero",
            "passed": True,
            "level": KS_LEVEL,
            "marginals": [],
            "increment_corr": None,
        }

    marginals = []
    all_pass = True
    for t in marginal_times:
        if not (0 < t <= T * (1 + 1e-9)):
            raise ValidationError(f"marginal time {t} outside (0, T]")
        w_t = _terminal_values(paths, min(t, T))
        for comp in range(d):
            var = sigma_sq[comp, comp] * t
            if var <= 0:
                ok = bool(np.abs(w_t[:, comp]).max() < 1e-12)
                marginals.append(
                    {"t": float(t), "component": comp, "p_value": None,
                     "pass": ok, "degenerate": True}
                )
                all_pass &= ok
                continue
            z = w_t[:, comp] / np.sqrt(var)
            stat = kstest(z, "norm")
            ok = bool(stat.pvalue >= KS_LEVEL)
            marginals.append(
                {"t": float(t), "component": comp,
                 "p_value": float(stat.pvalue), "pass": ok}
            )
            all_pass &= ok

    # lag-1 correlation of non-overlapping increments over 8 equal windows
    k_win = 8
    grid_t = np.linspace(0.0, T, k_win + 1)
    vals = np.stack([
        np.stack([np.interp(grid_t, p.times, p.values[:, j]) for j in range(d)],
                 axis=1)
        for p in paths
    ])
    incr = np.diff(vals, axis=1)
    first = incr[:, :-1, :].ravel()
    second = incr[:, 1:, :].ravel()
    r, p_corr = pearsonr(first, second)
    corr_ok = bool(p_corr >= KS_LEVEL)
    all_pass &= corr_ok

    return {
        "verdict": "ok",
        "passed": bool(all_pass),
        "level": KS_LEVEL,
        "marginals": marginals,
        "increment_corr": {"r": float(r), "p_value": float(p_corr),
                           "pass": corr_ok},
    }


def moment_check(ensemble: list, delta_exp: float) -> dict:
    """Empirical (2+delta)-moment of block increments and the running-max
    growth diagnostic for int_{j-1}^j |bbar| / sqrt(j)."""
    if not (0 < delta_exp < 1):
        raise ValidationError("delta_exp must lie in (0, 1)")
    if not ensemble:
        raise ValidationError("empty ensemble")
    norms = np.concatenate([
        np.linalg.norm(blocks.x, axis=1) for blocks in ensemble
    ])
    moment = float(np.mean(norms ** (2.0 + delta_exp)))

    count = min(blocks.count for blocks in ensemble)
    j = np.arange(1, count + 1)
    ratios = np.stack([
        np.linalg.norm(blocks.abs_x[:count], axis=1) / np.sqrt(j)
        for blocks in ensemble
    ])
    running_max = np.maximum.accumulate(ratios, axis=1)
    early = running_max[:, max(count // 4 - 1, 0)]
    late = running_max[:, -1]
    growth = float(np.mean(late / np.maximum(early, 1e-300)))
    return {
        "delta_exp": float(delta_exp),
        "moment": moment,
        "max_ratio": float(running_max[:, -1].max()),
        "late_to_early_record_ratio": growth,
        "flag_growth": bool(growth > 1.2),
    }
