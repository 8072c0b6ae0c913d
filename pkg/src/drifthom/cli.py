"""Command-line shell: one subcommand per pipeline stage, deterministic
outputs (CSV cells printed with %.17g, JSON with sorted keys, no timestamps
outside the manifest), and a manifest listing every file written.

Exit codes: 0 success; 1 any pipeline error, reported as one JSON object on
stderr; 2 usage errors (argparse).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, parse_config, parse_config_text
from .container import save_environment, write_container
from .corrector import CorrectorProblem, delta_extrapolation, solve_corrector
from .environment import build_environment, drift_of
from .errors import DriftHomError
from .experiment import homogenization_run, model_sigma, report_to_dict
from .grid import SpaceTimeGrid
from .manifest import new_manifest, record_file, write_manifest
from .path_clt import (
    block_increments,
    donsker_test,
    empirical_sigma,
    estimate_sigma_series,
    integrate_path,
)
from .pde_solver import cauchy_preset, choose_dt, solve_epsilon_pde, \
    solve_limit_spde
from .seeding import derive_seed
from .bbar import make_bbar
from .stream_solver import solve_stream_matrix, solve_stream_regularized

SUBCOMMANDS = (
    "generate-env", "stream-recover", "solve-corrector", "effective-matrix",
    "clt", "solve-eps", "solve-limit", "homogenize",
)


def _fmt_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt_cell(c) for c in row])


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _matrix_rows(mat: np.ndarray):
    return [[i] + [float(x) for x in row] for i, row in enumerate(mat)]


def _build_env(cfg: ExperimentConfig, tag: str = "0"):
    return build_environment(cfg.grid(), cfg.params,
                             derive_seed(cfg.base_seed, "env", tag),
                             bbar_model=cfg.bbar_model, **cfg.bbar_kwargs())


def _cmd_generate_env(cfg, args, out_dir, manifest):
    env = _build_env(cfg)
    path = os.path.join(out_dir, "env.bin")
    save_environment(path, env)
    record_file(manifest, path)
    summary = os.path.join(out_dir, "env_summary.json")
    _write_json(summary, {
        "seed": env.seed,
        "bbar_model": env.bbar_model,
        "lam": env.lam,
        "Lam": env.Lam,
        "grid": {"d": env.grid.d, "n_x": env.grid.n_x, "n_t": env.grid.n_t,
                 "L": env.grid.L, "T_env": env.grid.T_env},
        "bbar_max": float(np.abs(env.bbar).max()),
        "s_max": float(np.abs(env.s).max()),
    })
    record_file(manifest, summary)


def _cmd_stream_recover(cfg, args, out_dir, manifest):
    env = _build_env(cfg)
    b = drift_of(env)
    if args.alpha is not None:
        rec = solve_stream_regularized(b, env.grid, args.alpha)
    else:
        rec = solve_stream_matrix(b, env.grid)
    path = os.path.join(out_dir, "s_recovered.bin")
    write_container(path, env.grid, env.seed, {"s_rec": rec.s_rec})
    record_file(manifest, path)
    rep = os.path.join(out_dir, "stream_report.json")
    _write_json(rep, {
        "alpha": rec.alpha,
        "residual": rec.residual,
        "max_error_vs_true": float(np.abs(rec.s_rec - env.s).max()),
    })
    record_file(manifest, rep)


def _cmd_solve_corrector(cfg, args, out_dir, manifest):
    env = _build_env(cfg)
    e = np.zeros(cfg.d)
    e[args.direction] = 1.0
    problem = CorrectorProblem(env, e, delta=cfg.delta,
                               transpose=args.transpose)
    fieldout = solve_corrector(problem, tol=cfg.tol)
    path = os.path.join(out_dir, "corrector.bin")
    write_container(path, env.grid, env.seed, {
        "phi": fieldout.phi, "grad_phi": fieldout.grad_phi,
        "flux": fieldout.flux,
    })
    record_file(manifest, path)
    rep = os.path.join(out_dir, "corrector_report.json")
    _write_json(rep, {
        "delta": fieldout.delta,
        "direction": args.direction,
        "transpose": bool(args.transpose),
        "residual_norm": fieldout.residual_norm,
    })
    record_file(manifest, rep)


def _cmd_effective_matrix(cfg, args, out_dir, manifest):
    env = _build_env(cfg)
    eff = delta_extrapolation(env, list(cfg.delta_list), tol=cfg.tol)
    pa = os.path.join(out_dir, "a_bar.csv")
    _write_csv(pa, ["row"] + [f"col{j}" for j in range(cfg.d)],
               _matrix_rows(eff.a_bar))
    record_file(manifest, pa)
    pm = os.path.join(out_dir, "m_bar.csv")
    _write_csv(pm, ["row"] + [f"col{j}" for j in range(cfg.d)],
               _matrix_rows(eff.m_bar))
    record_file(manifest, pm)
    defect = float(np.abs(eff.a_bar - eff.m_bar.T).max()
                   / max(np.abs(eff.a_bar).max(), 1e-300))
    rep = os.path.join(out_dir, "effective_report.json")
    _write_json(rep, {
        "lambda_min": eff.lambda_min,
        "upper_cert": eff.upper_cert,
        "duality_defect": defect,
        "delta_list": list(cfg.delta_list),
    })
    record_file(manifest, rep)


def _cmd_clt(cfg, args, out_dir, manifest):
    d = cfg.d
    model = args.model or cfg.bbar_model
    paths = args.paths
    lag_max = args.lag_max
    horizon_units = 256
    grid_long = SpaceTimeGrid(d=d, n_x=4, n_t=16 * horizon_units,
                              L=cfg.L, T_env=float(horizon_units))
    kwargs = cfg.bbar_kwargs()
    rows = []

    n_series = max(100, min(paths, 200))
    blocks = []
    for r in range(n_series):
        series = make_bbar(model, grid_long,
                           derive_seed(cfg.base_seed, "clt-series", str(r)),
                           **kwargs)
        blocks.append(block_increments(series, horizon_units,
                                       spacing=grid_long.k_t))
    est = estimate_sigma_series(blocks, lag_max=lag_max)
    for i in range(d):
        rows.append([0.0, f"sigma_series_{i}{i}",
                     float(est.sigma_sq[i, i]), float(est.stderr[i, i])])
    rows.append([0.0, "sigma_series_tail", float(est.tail_estimate), 0.0])

    for eps in cfg.eps_list:
        ensemble = []
        for r in range(paths):
            series = make_bbar(model, grid_long,
                               derive_seed(cfg.base_seed, "clt-path", str(r)),
                               **kwargs)
            series = series - series.mean(axis=0)
            ensemble.append(integrate_path(series, eps, args.T,
                                           eps**2 * grid_long.k_t,
                                           spacing=grid_long.k_t,
                                           source_seed=r))
        emp = empirical_sigma(ensemble, args.T)
        term = np.array([p.values[-1] for p in ensemble])
        report = donsker_test(ensemble, est.sigma_sq,
                              marginal_times=(args.T / 2, args.T))
        for i in range(d):
            rows.append([eps, f"sigma_empirical_{i}{i}",
                         float(emp.sigma_sq[i, i]), float(emp.stderr[i, i])])
            rows.append([eps, f"mean_terminal_{i}", float(term[:, i].mean()),
                         float(term[:, i].std(ddof=1) / np.sqrt(paths))])
        ks_ps = [m["p_value"] for m in report["marginals"]
                 if m["p_value"] is not None]
        rows.append([eps, "ks_p_min", float(min(ks_ps)) if ks_ps else 1.0, 0.0])
        rows.append([eps, "donsker_pass", 1.0 if report["passed"] else 0.0, 0.0])

    rows.sort(key=lambda row: (row[0], row[1]))
    path = os.path.join(out_dir, "clt.csv")
    _write_csv(path, ["eps", "statistic", "value", "stderr"], rows)
    record_file(manifest, path)


def _solution_outputs(out_dir, manifest, tag, env, sol, cfg):
    path = os.path.join(out_dir, f"rho_{tag}.bin")
    write_container(path, env.grid if env is not None else cfg.grid(),
                    cfg.base_seed,
                    {"rho_final": sol.rho[-1], "times": sol.times})
    record_file(manifest, path)
    rep = os.path.join(out_dir, f"norms_{tag}.json")
    _write_json(rep, {
        "formulation": sol.formulation,
        "norms": {k: float(v) for k, v in sol.norms.items()},
        "diagnostics": {k: (float(v) if np.isscalar(v) else v)
                        for k, v in sol.diagnostics.items()},
    })
    record_file(manifest, rep)


def _cmd_solve_eps(cfg, args, out_dir, manifest):
    env = _build_env(cfg)
    data = cauchy_preset(cfg.preset, d=cfg.d, m_x=cfg.m_x,
                         L_sim=cfg.L_sim, T=cfg.T)
    for k, eps in enumerate(cfg.eps_list):
        dt = choose_dt(env, eps, data, n_snap=cfg.n_snap,
                       fast_factor=cfg.fast_factor)
        sol = solve_epsilon_pde(env, eps, data, dt, n_snap=cfg.n_snap)
        _solution_outputs(out_dir, manifest, f"eps{k}", env, sol, cfg)


def _cmd_solve_limit(cfg, args, out_dir, manifest):
    data = cauchy_preset(cfg.preset, d=cfg.d, m_x=cfg.m_x,
                         L_sim=cfg.L_sim, T=cfg.T)
    if args.a_bar is not None:
        with open(args.a_bar, "r", encoding="utf-8") as fh:
            rdr = list(csv.reader(fh))
        a_bar = np.array([[float(x) for x in row[1:]] for row in rdr[1:]])
        env = None
    else:
        env = _build_env(cfg)
        eff = delta_extrapolation(env, list(cfg.delta_list), tol=cfg.tol)
        a_bar = eff.a_bar
    sigma = model_sigma(cfg)
    sol = solve_limit_spde(a_bar, sigma, data,
                           brownian_seed=derive_seed(cfg.base_seed, "limit"),
                           n_snap=cfg.n_snap)
    _solution_outputs(out_dir, manifest, "limit", env, sol, cfg)


def _cmd_homogenize(cfg, args, out_dir, manifest):
    report = homogenization_run(cfg, workers=args.workers, out_dir=out_dir)
    rep = os.path.join(out_dir, "report.json")
    _write_json(rep, report_to_dict(report))
    record_file(manifest, rep)
    rows = []
    for eps in cfg.eps_list:
        probe_eps = report.details["probe_eps"][str(eps)]
        probe_lim = report.details["probe_lim"]
        for r in range(report.n_realizations):
            for k in range(len(probe_eps[r])):
                rows.append([eps, r, k,
                             float(probe_eps[r][k]), float(probe_lim[r][k]),
                             float(report.pathwise[eps][r])])
    path = os.path.join(out_dir, "report.csv")
    _write_csv(path, ["eps", "realization", "probe", "v_eps", "v_lim",
                      "pathwise_err"], rows)
    record_file(manifest, path)


_HANDLERS = {
    "generate-env": _cmd_generate_env,
    "stream-recover": _cmd_stream_recover,
    "solve-corrector": _cmd_solve_corrector,
    "effective-matrix": _cmd_effective_matrix,
    "clt": _cmd_clt,
    "solve-eps": _cmd_solve_eps,
    "solve-limit": _cmd_solve_limit,
    "homogenize": _cmd_homogenize,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drifthom",
        description="Random-drift homogenization laboratory",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override base seed")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--eps", default=None,
                       help="comma-separated eps list override")
        if name == "stream-recover":
            p.add_argument("--alpha", type=float, default=None)
        if name == "solve-corrector":
            p.add_argument("--direction", type=int, default=0)
            p.add_argument("--transpose", action="store_true")
        if name == "clt":
            p.add_argument("--model", default=None)
            p.add_argument("--paths", type=int, default=500)
            p.add_argument("--lag-max", type=int, default=32)
            p.add_argument("--T", type=float, default=4.0)
        if name == "solve-limit":
            p.add_argument("--a-bar", default=None,
                           help="a_bar.csv from effective-matrix")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = parse_config(args.config)
        else:
            cfg = parse_config_text("")
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, base_seed=args.seed)
        if args.eps is not None:
            eps = tuple(float(p) for p in args.eps.replace(",", " ").split())
            cfg = dataclasses.replace(cfg, eps_list=eps)
        out_dir = args.out
        os.makedirs(out_dir, exist_ok=True)
        manifest = new_manifest(args.cmd, cfg, cfg.base_seed)
        _HANDLERS[args.cmd](cfg, args, out_dir, manifest)
        write_manifest(manifest, out_dir)
        return 0
    except DriftHomError as exc:
        print(json.dumps({"subcommand": args.cmd,
                          "error": type(exc).__name__,
                          "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return 1
    except Exception as exc:  # pipeline faults still exit 1 with context
        print(json.dumps({"subcommand": args.cmd,
                          "error": type(exc).__name__,
                          "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
