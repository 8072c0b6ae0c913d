"""Two-scale convergence experiments: coupled eps-PDE vs limit-equation
ensembles, probe-vector law distances, and the corrector-perturbed
test-function residual diagnostic.

Coupling convention: the pathwise comparison reuses the realized rescaled
drift path w as the shift of the limit solution (one path, two equations),
which removes the Monte-Carlo variance of an independent Brownian draw. The
law-distance comparison stays uncoupled: limit probes come from fresh
Brownian shifts with the model's long-run covariance.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist

from .bbar import ou_longrun_cov, rw_longrun_cov
from .config import ExperimentConfig
from .corrector import CorrectorProblem, delta_extrapolation, solve_corrector
from .environment import build_environment
from .errors import DimensionMismatch, ValidationError
from .grid import periodic_interp, spatial_gradient, torus_mean
from .path_clt import integrate_path
from .pde_solver import (
    CauchyData,
    cauchy_preset,
    choose_dt,
    sim_coords,
    solve_limit_spde,
    solve_transported_pde,
)
from .seeding import derive_seed, rng_for

_trapz = getattr(np, "trapezoid", None) or np.trapz

N_PROBES = 5


def law_distance(sample_a: np.ndarray, sample_b: np.ndarray) -> float:
    """Energy distance between two empirical laws of probe vectors, in the
    halved normalization E|a-b| - E|a-a'|/2 - E|b-b'|/2 (so two point
    masses one unit apart score exactly 1). V-statistic form; nonnegative,
    zero iff the empirical laws coincide."""
    a = np.atleast_2d(np.asarray(sample_a, dtype=float))
    b = np.atleast_2d(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DimensionMismatch("samples must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(
            f"probe dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return float(cdist(a, b).mean()
                 - 0.5 * cdist(a, a).mean()
                 - 0.5 * cdist(b, b).mean())


def permutation_law_test(
    sample_a: np.ndarray,
    sample_b: np.ndarray,
    n_perm: int = 500,
    seed: int = 0,
) -> tuple[float, float]:
    """Label-permutation p-value for 'same law'. Returns (statistic, p);
    the add-one estimator keeps p in (0, 1]."""
    a = np.atleast_2d(np.asarray(sample_a, dtype=float))
    b = np.atleast_2d(np.asarray(sample_b, dtype=float))
    obs = law_distance(a, b)
    pool = np.vstack([a, b])
    n = a.shape[0]
    rng = rng_for(seed, "perm")
    hits = 0
    for _ in range(n_perm):
        idx = rng.permutation(pool.shape[0])
        if law_distance(pool[idx[:n]], pool[idx[n:]]) >= obs - 1e-15:
            hits += 1
    return obs, (1.0 + hits) / (n_perm + 1.0)


@lru_cache(maxsize=8)
def _probe_stack(m_x: int, d: int, L_sim: float) -> np.ndarray:
    x = np.arange(m_x) * (L_sim / m_x)
    coords = np.meshgrid(*([x] * d), indexing="ij")
    spots = [(0.5, 0.5), (0.35, 0.5), (0.65, 0.5), (0.5, 0.35), (0.5, 0.65)]
    widths = [1 / 12, 1 / 16, 1 / 16, 1 / 10, 1 / 20]
    out = []
    for (cx, cy), wfrac in zip(spots, widths):
        center = (cx * L_sim, cy * L_sim) + (0.5 * L_sim,) * (d - 2)
        w = wfrac * L_sim
        r_sq = sum((c - cc) ** 2 for c, cc in zip(coords, center))
        out.append(np.exp(-r_sq / (2.0 * w * w)))
    return np.stack(out)


def probe_functions(m_x: int, d: int, L_sim: float) -> np.ndarray:
    """The fixed family of five bump probes (distinct centers and scales)."""
    return _probe_stack(m_x, d, float(L_sim)).copy()


def probe_vectors(rho: np.ndarray, L_sim: float) -> np.ndarray:
    d = rho.ndim
    m_x = rho.shape[0]
    probes = _probe_stack(m_x, d, float(L_sim))
    h_d = (L_sim / m_x) ** d
    return h_d * np.tensordot(probes, rho, axes=(tuple(range(1, d + 1)),
                                                 tuple(range(d))))


def model_sigma(cfg: ExperimentConfig) -> np.ndarray:
    """Matrix Sigma multiplying the Brownian shift in the limit equation,
    i.e. a square root of the drift model's long-run covariance."""
    d = cfg.d
    if cfg.sigma_mode == "zero" or cfg.bbar_model in ("zero", "periodic"):
        return np.zeros((d, d))
    if cfg.bbar_model == "ou":
        cov = ou_longrun_cov(cfg.grid(), cfg.amplitude, cfg.tau)
    elif cfg.bbar_model == "rw-interp":
        cov = rw_longrun_cov(cfg.grid(), cfg.amplitude, cfg.block)
    else:
        raise ValidationError(
            f"no analytic long-run covariance for model {cfg.bbar_model!r}")
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True)
class ConvergenceReport:
    eps_list: tuple
    n_realizations: int
    pathwise: dict
    pathwise_mean: dict
    law_dist: dict
    law_p: dict
    a_bar_mean: np.ndarray
    sigma: np.ndarray
    runtimes: dict
    schema_version: int = 1
    details: dict = dc_field(default_factory=dict)


def report_to_dict(report: ConvergenceReport) -> dict:
    def clean(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v

    return {
        "schema_version": report.schema_version,
        "eps_list": list(report.eps_list),
        "n_realizations": report.n_realizations,
        "pathwise": clean(report.pathwise),
        "pathwise_mean": clean(report.pathwise_mean),
        "law_dist": clean(report.law_dist),
        "law_p": clean(report.law_p),
        "a_bar_mean": clean(report.a_bar_mean),
        "sigma": clean(report.sigma),
        "runtimes": clean(report.runtimes),
        "details": clean(report.details),
    }


def _space_time_l2(rho_snaps: np.ndarray, times: np.ndarray, h_d: float):
    sq = h_d * (rho_snaps * rho_snaps).sum(axis=tuple(range(1, rho_snaps.ndim)))
    return float(_trapz(sq, times))


def _pathwise_error(sol_eps, sol_lim, h_d: float) -> float:
    if not np.allclose(sol_eps.times, sol_lim.times):
        raise ValidationError("snapshot times of the two solves disagree")
    num = _space_time_l2(sol_eps.rho - sol_lim.rho, sol_eps.times, h_d)
    den = _space_time_l2(sol_lim.rho, sol_lim.times, h_d)
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def _realization_task(args):
    cfg, r = args
    t0 = time.perf_counter()
    grid = cfg.grid()
    env = build_environment(grid, cfg.params,
                            derive_seed(cfg.base_seed, "env", str(r)),
                            bbar_model=cfg.bbar_model, **cfg.bbar_kwargs())
    data = cauchy_preset(cfg.preset, d=cfg.d, m_x=cfg.m_x,
                         L_sim=cfg.L_sim, T=cfg.T)
    eff = delta_extrapolation(env, list(cfg.delta_list), tol=cfg.tol)
    a_bar = eff.a_bar
    duality_defect = float(np.abs(a_bar - eff.m_bar.T).max()
                           / max(np.abs(a_bar).max(), 1e-300))

    sigma = model_sigma(cfg)
    h_d = data.h ** data.d
    out = {
        "r": r,
        "a_bar": a_bar.tolist(),
        "duality_defect": duality_defect,
        "lambda_min": eff.lambda_min,
        "pathwise": {},
        "probe_eps": {},
    }

    has_drift = bool(np.abs(env.bbar).max() > 0)
    for eps in cfg.eps_list:
        dt = choose_dt(env, eps, data, n_snap=cfg.n_snap,
                       fast_factor=cfg.fast_factor)
        path = None
        if has_drift:
            dt_path = min(dt, eps**2 * grid.k_t)
            path = integrate_path(env.bbar, eps, data.T, dt_path,
                                  spacing=grid.k_t)
        sol_eps = solve_transported_pde(env, eps, data, dt, path=path,
                                        unshift=True, n_snap=cfg.n_snap)
        dt_lim = data.T / (cfg.n_snap - 1) if data.f is None else data.T / 512
        sol_lim = solve_limit_spde(a_bar, None, data, dt=dt_lim,
                                   shift_path=path, n_snap=cfg.n_snap)
        out["pathwise"][eps] = _pathwise_error(sol_eps, sol_lim, h_d)
        out["probe_eps"][eps] = probe_vectors(sol_eps.rho[-1],
                                              cfg.L_sim).tolist()

    # uncoupled limit draw for the law-distance ensemble
    sol_law = solve_limit_spde(
        a_bar, sigma, data,
        brownian_seed=derive_seed(cfg.base_seed, "law", str(r)),
        dt=data.T / 256, n_snap=cfg.n_snap)
    out["probe_lim"] = probe_vectors(sol_law.rho[-1], cfg.L_sim).tolist()
    out["elapsed"] = time.perf_counter() - t0
    return out


def _flush_partial(out_dir, done: dict):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "partial_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"completed": sorted(done), "results":
                   [done[k] for k in sorted(done)]}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")


def homogenization_run(
    cfg: ExperimentConfig,
    workers: int = 1,
    out_dir: str | None = None,
) -> ConvergenceReport:
    """Run the full coupled/uncoupled two-scale comparison over the config's
    (eps, realization) grid and reduce to a ConvergenceReport. Partial
    per-realization results are flushed to out_dir if a task fails."""
    t0 = time.perf_counter()
    tasks = [(cfg, r) for r in range(cfg.ensemble)]
    done: dict[int, dict] = {}
    if workers <= 1:
        for task in tasks:
            try:
                res = _realization_task(task)
            except Exception:
                _flush_partial(out_dir, done)
                raise
            done[res["r"]] = res
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_realization_task, task): task[1]
                    for task in tasks}
            finished, _ = wait(futs, return_when=FIRST_EXCEPTION)
            failed = None
            for fut in finished:
                if fut.exception() is not None:
                    failed = fut
                else:
                    res = fut.result()
                    done[res["r"]] = res
            if failed is not None:
                _flush_partial(out_dir, done)
                raise failed.exception()

    results = [done[r] for r in sorted(done)]
    pathwise = {eps: tuple(res["pathwise"][eps] for res in results)
                for eps in cfg.eps_list}
    pathwise_mean = {eps: float(np.mean(v)) for eps, v in pathwise.items()}
    probe_lim = np.array([res["probe_lim"] for res in results])
    law_dist, law_p = {}, {}
    for k, eps in enumerate(cfg.eps_list):
        probe_eps = np.array([res["probe_eps"][eps] for res in results])
        if cfg.ensemble >= 2:
            stat, p = permutation_law_test(
                probe_eps, probe_lim,
                seed=derive_seed(cfg.base_seed, "permtest", str(k)))
        else:
            stat, p = law_distance(probe_eps, probe_lim), 1.0
        law_dist[eps], law_p[eps] = float(stat), float(p)

    a_bars = np.array([res["a_bar"] for res in results])
    report = ConvergenceReport(
        eps_list=cfg.eps_list,
        n_realizations=cfg.ensemble,
        pathwise=pathwise,
        pathwise_mean=pathwise_mean,
        law_dist=law_dist,
        law_p=law_p,
        a_bar_mean=a_bars.mean(axis=0),
        sigma=model_sigma(cfg),
        runtimes={
            "total_s": time.perf_counter() - t0,
            "per_realization_s": [res["elapsed"] for res in results],
        },
        details={
            "a_bar_all": a_bars.tolist(),
            "duality_defect": [res["duality_defect"] for res in results],
            "lambda_min": [res["lambda_min"] for res in results],
            "probe_eps": {str(eps): [res["probe_eps"][eps] for res in results]
                          for eps in cfg.eps_list},
            "probe_lim": probe_lim.tolist(),
        },
    )
    return report


@dataclass(frozen=True)
class ResidualPair:
    """Weak-form residuals of the reference (a_bar-flux) solution under the
    transported eps-operator: tested with the plain bump and with the
    corrector-perturbed bump."""

    plain: float
    corrected: float
    delta_terms: dict
    a_bar: np.ndarray
    m_bar: np.ndarray
    details: dict = dc_field(default_factory=dict)


def _bump_profile(data: CauchyData, width_frac: float = 0.1):
    """Spatial test bump and its first and second derivatives, with
    minimum-image displacements so the bump is smooth across the wrap."""
    L, d = data.L_sim, data.d
    w = width_frac * L
    coords = sim_coords(data)
    disp = [np.mod(c - L / 2 + L / 2, L) - L / 2 for c in coords]
    r_sq = sum(dx * dx for dx in disp)
    psi = np.exp(-r_sq / (2 * w * w))
    dpsi = np.stack([-dx / (w * w) * psi for dx in disp], axis=-1)
    ddpsi = np.empty(psi.shape + (d, d))
    for i in range(d):
        for j in range(d):
            ddpsi[..., i, j] = (disp[i] * disp[j] / w**4
                                - (1.0 if i == j else 0.0) / w**2) * psi
    return psi, dpsi, ddpsi


def perturbed_test_residual(
    env,
    eps: float,
    delta: float = 1e-4,
    psi_preset: str = "gaussian-bump",
    direction: int | None = None,
    data: CauchyData | None = None,
    deltas: tuple = (),
    tol: float = 1e-9,
    n_snap: int = 65,
) -> ResidualPair:
    """Evaluate the transported eps-operator's space-time weak form on the
    a_bar-reference solution, tested against a smooth bump chi and against
    the corrector-perturbed bump chi + eps * psi_t_i(x/eps, t/eps^2) d_i chi.

    The perturbation uses transpose correctors at the given delta. Passing
    direction selects a single perturbation direction; None sums all of
    them. For each delta in `deltas` the regularization integral
    delta * |integral of psi_t_i (x/eps) rho_eps d_i chi| is also computed
    against a transported eps-solve.

    Snapshot-level time quadrature resolves slowly-varying coefficients
    only; environments held constant in time (the intended use) are exact.
    """
    if psi_preset != "gaussian-bump":
        raise ValidationError(f"unknown test-function preset {psi_preset!r}")
    g = env.grid
    d = g.d
    if data is None:
        data = cauchy_preset("gaussian-bump", d=d, m_x=128, L_sim=2.0, T=0.25)
    dirs = range(d) if direction is None else [int(direction)]
    if direction is not None and not (0 <= direction < d):
        raise ValidationError("direction out of range")

    eye = np.eye(d)
    fwd = [solve_corrector(CorrectorProblem(env, eye[i], delta=delta), tol=tol)
           for i in range(d)]
    trs = [solve_corrector(
        CorrectorProblem(env, eye[i], delta=delta, transpose=True), tol=tol)
        for i in range(d)]
    a_bar = np.stack([torus_mean(f.flux, g) for f in fwd], axis=1)
    m_bar = np.stack([torus_mean(f.flux, g) for f in trs], axis=1)

    has_drift = bool(np.abs(env.bbar).max() > 0)
    path = None
    if has_drift:
        path = integrate_path(env.bbar, eps, data.T, eps**2 * g.k_t,
                              spacing=g.k_t)
    ref = solve_limit_spde(a_bar, None, data, dt=data.T / (n_snap - 1)
                           if data.f is None else data.T / 512,
                           shift_path=path, n_snap=n_snap, unshift=False)

    from .pde_solver import _RescaledSampler

    sampler = _RescaledSampler(env, eps, data)
    psi, dpsi, ddpsi = _bump_profile(data)
    times = ref.times
    theta = np.sin(np.pi * times / data.T) ** 2
    theta_dot = (np.pi / data.T) * np.sin(2 * np.pi * times / data.T)

    x_pts = np.stack([c.ravel() for c in sim_coords(data)], axis=1)
    sshape = (data.m_x,) * d
    h_d = data.h**d

    def spatial_grad(u):
        return spatial_gradient(u, data.L_sim, axes=tuple(range(d)))

    dphi_dtau = [
        (np.roll(t.phi, -1, axis=0) - np.roll(t.phi, 1, axis=0)) / (2 * g.k_t)
        for t in trs
    ]

    plain_t = np.zeros(len(times))
    corr_t = np.zeros(len(times))
    for m, t in enumerate(times):
        rho = ref.rho[m]
        grad_rho = spatial_grad(rho)
        shift = None
        if path is not None:
            shift = np.stack([np.interp(t, path.times, path.values[:, j])
                              for j in range(d)])
        c_m = sampler.coeff_at(t, shift)
        flux = np.einsum("...ij,...j->...i", c_m, grad_rho)
        f_val = 0.0
        if data.f is not None:
            coords = sim_coords(data)
            if shift is not None:
                coords = [np.mod(c + s, data.L_sim)
                          for c, s in zip(coords, shift)]
            f_val = data.f(coords, t)

        integrand_plain = (-rho * psi * theta_dot[m]
                           + (flux * dpsi).sum(axis=-1) * theta[m]
                           - f_val * psi * theta[m])
        plain_t[m] = h_d * integrand_plain.sum()

        t_fast = (t / eps**2) % g.T_env
        q = x_pts if shift is None else x_pts + shift
        q = np.mod(q / eps, g.L)
        corr_val = integrand_plain.copy()
        for i in dirs:
            phi_q = periodic_interp(trs[i].phi, g, t_fast, q).reshape(sshape)
            gphi_q = periodic_interp(trs[i].grad_phi, g, t_fast, q)
            gphi_q = gphi_q.reshape(sshape + (d,))
            dtau_q = periodic_interp(dphi_dtau[i], g, t_fast, q).reshape(sshape)
            chi_fast = dtau_q
            if has_drift:
                bb = sampler.bbar_at(t)
                chi_fast = chi_fast + np.einsum("...j,j->...", gphi_q, bb)
            dchi_t = (chi_fast / eps * dpsi[..., i] * theta[m]
                      + eps * phi_q * dpsi[..., i] * theta_dot[m])
            dchi_x = (gphi_q * dpsi[..., i][..., None]
                      + eps * phi_q[..., None] * ddpsi[..., i, :]) * theta[m]
            corr_val += (-rho * dchi_t
                         + (flux * dchi_x).sum(axis=-1)
                         - f_val * eps * phi_q * dpsi[..., i] * theta[m])
        corr_t[m] = h_d * corr_val.sum()

    plain = abs(float(_trapz(plain_t, times)))
    corrected = abs(float(_trapz(corr_t, times)))

    delta_terms: dict = {}
    if deltas:
        dt_eps = choose_dt(env, eps, data, n_snap=n_snap)
        sol_eps = solve_transported_pde(env, eps, data, dt_eps, path=path,
                                        unshift=False, n_snap=n_snap)
        for dl in deltas:
            trs_d = [solve_corrector(
                CorrectorProblem(env, eye[i], delta=dl, transpose=True),
                tol=tol) for i in dirs]
            vals = np.zeros(len(times))
            for m, t in enumerate(times):
                t_fast = (t / eps**2) % g.T_env
                shift = None
                if path is not None:
                    shift = np.stack([
                        np.interp(t, path.times, path.values[:, j])
                        for j in range(d)])
                q = x_pts if shift is None else x_pts + shift
                q = np.mod(q / eps, g.L)
                acc = np.zeros(sshape)
                for k_i, i in enumerate(dirs):
                    phi_q = periodic_interp(trs_d[k_i].phi, g, t_fast, q)
                    acc += (phi_q.reshape(sshape) * dpsi[..., i])
                vals[m] = h_d * (acc * sol_eps.rho[m] * theta[m]).sum()
            delta_terms[float(dl)] = abs(float(dl * _trapz(vals, times)))

    return ResidualPair(
        plain=plain,
        corrected=corrected,
        delta_terms=delta_terms,
        a_bar=a_bar,
        m_bar=m_bar,
        details={
            "eps": eps,
            "delta": delta,
            "direction": direction,
            "n_snap": n_snap,
            "residual_series_plain": plain_t.tolist(),
            "residual_series_corrected": corr_t.tolist(),
        },
    )
