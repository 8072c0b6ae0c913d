"""Experiment configuration: INI-style files with sections [grid], [params],
[bbar], [experiment], strict key validation, environment-variable overrides
(DH_<SECTION>_<KEY>), and a canonical serialization that round-trips.

The coefficient bounds are spelled `lambda` and `Lambda` in files (key case
is preserved); the corresponding override variables are DH_PARAMS_LAMBDA and
DH_PARAMS_LAMBDA_MAX, since environment names cannot carry case reliably.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields as dc_fields

from .environment import SpectralParams
from .errors import ParseError, ValidationError
from .grid import SpaceTimeGrid

ENV_PREFIX = "DH_"

_GRID_KEYS = {"d": int, "n_x": int, "n_t": int, "L": float, "T_env": float}
_PARAM_KEYS = {
    "ell_x": float, "ell_t": float, "beta_decay": float,
    "sigma_s": float, "sigma_a": float, "lambda": float, "Lambda": float,
}
_BBAR_KEYS = {
    "model": str, "amplitude": float, "tau": float,
    "n_modes": int, "block": float,
}
_EXPERIMENT_KEYS = {
    "eps_list": "float_list", "ensemble": int, "preset": str,
    "m_x": int, "L_sim": float, "T": float, "n_snap": int,
    "delta": float, "delta_list": "float_list", "tol": float,
    "sigma_mode": str, "base_seed": int, "fast_factor": int,
}
_SECTIONS = {
    "grid": _GRID_KEYS,
    "params": _PARAM_KEYS,
    "bbar": _BBAR_KEYS,
    "experiment": _EXPERIMENT_KEYS,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, immutable description of one experiment campaign."""

    d: int = 2
    n_x: int = 64
    n_t: int = 16
    L: float = 1.0
    T_env: float = 1.0
    params: SpectralParams = field(default_factory=SpectralParams)
    bbar_model: str = "zero"
    amplitude: float = 1.0
    tau: float = 0.25
    n_modes: int = 3
    block: float = 1.0
    eps_list: tuple = (0.25, 0.125)
    ensemble: int = 4
    preset: str = "gaussian-bump"
    m_x: int = 64
    L_sim: float = 4.0
    T: float = 0.25
    n_snap: int = 17
    delta: float = 1e-4
    delta_list: tuple = (1e-2, 3e-3, 1e-3)
    tol: float = 1e-8
    sigma_mode: str = "model"
    base_seed: int = 12345
    fast_factor: int = 4

    def __post_init__(self):
        object.__setattr__(self, "eps_list", tuple(float(e) for e in self.eps_list))
        object.__setattr__(self, "delta_list",
                           tuple(float(d) for d in self.delta_list))
        eps = self.eps_list
        if not eps or any(not (0.0 < e <= 1.0) for e in eps):
            raise ValidationError("eps_list entries must lie in (0, 1]")
        if any(b <= a for a, b in zip(eps[1:], eps[:-1])):
            raise ValidationError("eps_list must be strictly decreasing")
        if self.ensemble < 1:
            raise ValidationError("ensemble must be >= 1")
        if self.sigma_mode not in ("model", "zero"):
            raise ValidationError("sigma_mode must be 'model' or 'zero'")

    def grid(self) -> SpaceTimeGrid:
        return SpaceTimeGrid(d=self.d, n_x=self.n_x, n_t=self.n_t,
                             L=self.L, T_env=self.T_env)

    def bbar_kwargs(self) -> dict:
        return {"amplitude": self.amplitude, "tau": self.tau,
                "n_modes": self.n_modes, "block": self.block}


def _convert(raw: str, kind, section: str, key: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw.strip()
        if kind == "float_list":
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ParseError(f"[{section}] {key} = {raw!r}: {exc}") from exc
    raise AssertionError(kind)


def _env_override_name(section: str, key: str) -> str:
    if key == "lambda":
        return f"{ENV_PREFIX}PARAMS_LAMBDA"
    if key == "Lambda":
        return f"{ENV_PREFIX}PARAMS_LAMBDA_MAX"
    return f"{ENV_PREFIX}{section.upper()}_{key.upper()}"


def _read_ini(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # lambda vs Lambda must stay distinct
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("missing section header", line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ParseError(str(exc).splitlines()[0], line=line) from exc
    except configparser.Error as exc:
        raise ParseError(str(exc)) from exc
    return cp


def parse_config_text(text: str, environ: dict | None = None) -> ExperimentConfig:
    cp = _read_ini(text)
    environ = os.environ if environ is None else environ

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ParseError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SECTIONS[section]:
                raise ParseError(f"unknown key {key!r} in [{section}]")

    values: dict[str, dict[str, str]] = {s: dict(cp[s]) if cp.has_section(s) else {}
                                         for s in _SECTIONS}
    for section, keys in _SECTIONS.items():
        for key in keys:
            env_name = _env_override_name(section, key)
            if env_name in environ:
                values[section][key] = environ[env_name]

    def pick(section, key, default):
        raw = values[section].get(key)
        if raw is None:
            return default
        return _convert(raw, _SECTIONS[section][key], section, key)

    defaults = ExperimentConfig()
    dp = SpectralParams()
    params = SpectralParams(
        ell_x=pick("params", "ell_x", dp.ell_x),
        ell_t=pick("params", "ell_t", dp.ell_t),
        beta_decay=pick("params", "beta_decay", dp.beta_decay),
        sigma_s=pick("params", "sigma_s", dp.sigma_s),
        sigma_a=pick("params", "sigma_a", dp.sigma_a),
        lam=pick("params", "lambda", dp.lam),
        Lam=pick("params", "Lambda", dp.Lam),
    )
    cfg = ExperimentConfig(
        d=pick("grid", "d", defaults.d),
        n_x=pick("grid", "n_x", defaults.n_x),
        n_t=pick("grid", "n_t", defaults.n_t),
        L=pick("grid", "L", defaults.L),
        T_env=pick("grid", "T_env", defaults.T_env),
        params=params,
        bbar_model=pick("bbar", "model", defaults.bbar_model),
        amplitude=pick("bbar", "amplitude", defaults.amplitude),
        tau=pick("bbar", "tau", defaults.tau),
        n_modes=pick("bbar", "n_modes", defaults.n_modes),
        block=pick("bbar", "block", defaults.block),
        eps_list=pick("experiment", "eps_list", defaults.eps_list),
        ensemble=pick("experiment", "ensemble", defaults.ensemble),
        preset=pick("experiment", "preset", defaults.preset),
        m_x=pick("experiment", "m_x", defaults.m_x),
        L_sim=pick("experiment", "L_sim", defaults.L_sim),
        T=pick("experiment", "T", defaults.T),
        n_snap=pick("experiment", "n_snap", defaults.n_snap),
        delta=pick("experiment", "delta", defaults.delta),
        delta_list=pick("experiment", "delta_list", defaults.delta_list),
        tol=pick("experiment", "tol", defaults.tol),
        sigma_mode=pick("experiment", "sigma_mode", defaults.sigma_mode),
        base_seed=pick("experiment", "base_seed", defaults.base_seed),
        fast_factor=pick("experiment", "fast_factor", defaults.fast_factor),
    )
    cfg.grid()  # surface grid invariant violations at parse time
    return cfg


def parse_config(path: str, environ: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text, environ=environ)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    p = cfg.params
    lines = [
        "[grid]",
        f"d = {cfg.d}", f"n_x = {cfg.n_x}", f"n_t = {cfg.n_t}",
        f"L = {_fmt(cfg.L)}", f"T_env = {_fmt(cfg.T_env)}",
        "",
        "[params]",
        f"ell_x = {_fmt(p.ell_x)}", f"ell_t = {_fmt(p.ell_t)}",
        f"beta_decay = {_fmt(p.beta_decay)}",
        f"sigma_s = {_fmt(p.sigma_s)}", f"sigma_a = {_fmt(p.sigma_a)}",
        f"lambda = {_fmt(p.lam)}", f"Lambda = {_fmt(p.Lam)}",
        "",
        "[bbar]",
        f"model = {cfg.bbar_model}", f"amplitude = {_fmt(cfg.amplitude)}",
        f"tau = {_fmt(cfg.tau)}", f"n_modes = {cfg.n_modes}",
        f"block = {_fmt(cfg.block)}",
        "",
        "[experiment]",
        f"eps_list = {_fmt(cfg.eps_list)}", f"ensemble = {cfg.ensemble}",
        f"preset = {cfg.preset}", f"m_x = {cfg.m_x}",
        f"L_sim = {_fmt(cfg.L_sim)}", f"T = {_fmt(cfg.T)}",
        f"n_snap = {cfg.n_snap}", f"delta = {_fmt(cfg.delta)}",
        f"delta_list = {_fmt(cfg.delta_list)}", f"tol = {_fmt(cfg.tol)}",
        f"sigma_mode = {cfg.sigma_mode}", f"base_seed = {cfg.base_seed}",
        f"fast_factor = {cfg.fast_factor}",
    ]
    return "\n".join(lines) + "\n"


def config_as_dict(cfg: ExperimentConfig) -> dict:
    """Flat, JSON-ready view used for hashing and manifests."""
    out = {}
    for f in dc_fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "params":
            for pf in dc_fields(v):
                out[f"params.{pf.name}"] = getattr(v, pf.name)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out
