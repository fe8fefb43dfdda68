"""Command-line driver: key=value configs, runs, and deterministic result files.

Every run writes into ``--out``:

* ``series.csv``     time,x_left,x_right,max_height,mass,dipole_moment,left_flux
* ``snapshots.csv``  snapshot_time,x,h
* ``summary.txt``    ``key = value`` lines, ending with the resolved config
  echoed as ``config.<key> = <value>``

Floats are written with ``repr`` (shortest round-trip form), so repeated
runs of one config give byte-identical files.

Exit codes: 0 ok, 2 config error, 3 numerical instability, 4 convergence
failure.  Failures print one line ``capmound-error <kind>: <detail>`` on
stderr.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import WindowPolicy, collapse_metric, fit_powerlaw, similarity_error
from .core import InitialCondition, PhysicalParams, Profile, SeriesRecord
from .dipole import DipoleConfig, InstabilityError, RunOutput, run_dipole
from .drainage import (DrainageConfig, DrainageSpec, FloodDrainConfig, InitialFront, run_drainage,
                       run_flood_then_drain)
from .similarity import EigenProblem, ShootingError, drainage_similarity, eval_similarity, shoot_beta

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_CONVERGENCE = 0, 2, 3, 4

PROBLEMS = ("dipole", "drainage", "flood-then-drain", "eigen", "sweep", "validate-similarity")
ALIASES = {"flood-drain": "flood-then-drain"}
SERIES_COLUMNS = ("time", "x_left", "x_right", "max_height", "mass", "dipole_moment", "left_flux")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration.  ``None`` means "not given"; resolve() fills defaults."""

    problem: Optional[str] = None
    ratio: Optional[float] = None
    delta: Optional[float] = None
    kappa1: Optional[float] = None
    porosity: Optional[float] = None
    shape: Optional[str] = None
    amplitude: Optional[float] = None
    width: Optional[float] = None
    offset: Optional[float] = None
    grid_n: Optional[int] = None
    cfl: Optional[float] = None
    t_start: Optional[float] = None
    t_switch: Optional[float] = None
    t_end: Optional[float] = None
    snapshots: Optional[tuple] = None
    n_series: Optional[int] = None
    left: Optional[str] = None
    flux: Optional[float] = None
    flux_units: Optional[str] = None
    beta: Optional[float] = None
    domain_left: Optional[float] = None
    domain_right: Optional[float] = None
    ratios: Optional[tuple] = None
    workers: Optional[int] = None
    eps_tip: Optional[float] = None
    step: Optional[float] = None

    def resolve(self) -> "RunConfig":
        return resolve_config(self)

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams.from_ratio(self.ratio, kappa1=self.kappa1, porosity_m=self.porosity)

    @property
    def initial(self) -> InitialCondition:
        return InitialCondition(self.shape, self.amplitude, self.width)

    @property
    def dx(self) -> float:
        return (self.domain_right - self.domain_left) / self.grid_n


def _parse_str(v: str) -> str:
    return v


def _parse_float(v: str) -> float:
    x = float(v)
    if not math.isfinite(x):
        raise ValueError(f"{v!r} is not finite")
    return x


def _parse_int(v: str) -> int:
    x = float(v)
    if not x.is_integer():
        raise ValueError(f"{v!r} is not an integer")
    return int(x)


def _parse_floats(v: str) -> tuple:
    if v.strip() == "":
        return ()
    return tuple(_parse_float(s) for s in v.split(","))


PARSERS = {f.name: _parse_str for f in fields(RunConfig)}
PARSERS.update({k: _parse_float for k in (
    "ratio", "delta", "kappa1", "porosity", "amplitude", "width", "offset", "cfl", "t_start",
    "t_switch", "t_end", "flux", "beta", "domain_left", "domain_right", "eps_tip", "step")})
PARSERS.update({k: _parse_int for k in ("grid_n", "n_series", "workers")})
PARSERS.update({k: _parse_floats for k in ("snapshots", "ratios")})

_SHOT = ("eps_tip", "step")

# per problem: allowed keys and their defaults
DEFAULTS = {
    "eigen": dict(ratio=1.0, kappa1=1.0, porosity=1.0, eps_tip=1e-6, step=1e-3),
    "dipole": dict(ratio=1.0, kappa1=1.0, porosity=1.0, shape="parabolic", amplitude=1.0, width=1.0,
                   grid_n=400, cfl=0.25, t_start=0.1, t_end=100.0, snapshots=(), n_series=200),
    "sweep": dict(kappa1=1.0, porosity=1.0, shape="parabolic", amplitude=1.0, width=1.0, grid_n=400,
                  cfl=0.25, t_start=0.1, t_end=100.0, snapshots=(), n_series=200,
                  ratios=(1.0, 0.7, 0.5, 0.3), workers=1, eps_tip=1e-6, step=1e-3),
    "drainage": dict(ratio=1.0, kappa1=1.0, porosity=1.0, shape="parabolic", amplitude=1.0, width=1.0,
                     offset=1.0, grid_n=400, cfl=0.25, t_start=0.0, t_end=10.0, snapshots=(),
                     n_series=200, left="constant", flux_units="normalized", domain_left=0.0,
                     domain_right=8.0),
    "flood-then-drain": dict(ratio=1.0, kappa1=1.0, porosity=1.0, shape="parabolic", amplitude=1.0,
                             width=1.0, grid_n=400, cfl=0.25, t_start=0.0, t_switch=1.0, t_end=20.0,
                             snapshots=(), n_series=200, flux=2.0, domain_left=0.0, domain_right=8.0),
    "validate-similarity": dict(ratio=1.0, kappa1=1.0, porosity=1.0, beta=0.2, grid_n=100, cfl=0.25,
                                t_start=1.0, t_end=10.0, n_series=200, domain_left=0.0),
}
# keys allowed without a default
OPTIONAL_KEYS = {
    "eigen": ("delta",),
    "dipole": ("delta",) + _SHOT,
    "sweep": (),
    "drainage": ("delta", "flux"),
    "flood-then-drain": ("delta",),
    "validate-similarity": ("delta", "snapshots", "domain_right"),
}


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def resolve_config(cfg: RunConfig) -> RunConfig:
    """Apply defaults, reject keys that do not belong to the problem, check ranges."""
    _check(cfg.problem is not None, "problem: missing")
    problem = ALIASES.get(cfg.problem, cfg.problem)
    _check(problem in PROBLEMS, f"problem: unknown value {cfg.problem!r}; expected one of {', '.join(PROBLEMS)}")
    defaults = DEFAULTS[problem]
    allowed = {"problem"} | set(defaults) | set(OPTIONAL_KEYS[problem])
    given = {f.name: getattr(cfg, f.name) for f in fields(cfg) if getattr(cfg, f.name) is not None}
    stray = sorted(set(given) - allowed)
    if stray:
        raise ConfigError(f"{stray[0]}: not used by problem {problem}")
    vals = dict(defaults)
    vals.update(given)
    vals["problem"] = problem

    # physical parameters: ratio and delta are two views of one number
    if "delta" in given:
        _check(0.0 <= given["delta"] < 1.0, f"delta: must lie in [0, 1), got {given['delta']}")
        r = 1.0 - given["delta"]
        if "ratio" in given:
            _check(abs(given["ratio"] - r) <= 1e-12, "ratio: inconsistent with delta (ratio = 1 - delta)")
        vals["ratio"] = r
        del vals["delta"]
    if "ratio" in vals:
        _check(0.0 < vals["ratio"] <= 1.0, f"ratio: must lie in (0, 1], got {vals['ratio']}")
    _check(vals["kappa1"] > 0, f"kappa1: must be positive, got {vals['kappa1']}")
    _check(0 < vals["porosity"] <= 1, f"porosity: must lie in (0, 1], got {vals['porosity']}")

    if "cfl" in vals:
        _check(0 < vals["cfl"] <= 1, f"cfl: must lie in (0, 1], got {vals['cfl']}")
    if "grid_n" in vals:
        _check(vals["grid_n"] >= 8, f"grid_n: need at least 8 cells, got {vals['grid_n']}")
    if "n_series" in vals:
        _check(vals["n_series"] >= 2, f"n_series: must be at least 2, got {vals['n_series']}")
    if "shape" in vals:
        _check(vals["shape"] in ("parabolic", "cosine"), f"shape: unknown value {vals['shape']!r}")
        _check(vals["amplitude"] > 0, "amplitude: must be positive")
        _check(vals["width"] > 0, "width: must be positive")
    if "t_start" in vals:
        _check(vals["t_start"] >= 0, "t_start: must be nonnegative")
        _check(vals["t_end"] > vals["t_start"], "t_end: must exceed t_start")
    if "eps_tip" in vals:
        _check(0 < vals["eps_tip"] < 1e-2, "eps_tip: must lie in (0, 0.01)")
        _check(0 < vals["step"] <= 0.05, "step: must lie in (0, 0.05]")

    if problem == "dipole" or problem == "sweep":
        _check(vals["t_start"] > 0, "t_start: must be positive (power-law fits need log time)")
    if problem == "sweep":
        _check(len(vals["ratios"]) >= 1, "ratios: empty")
        for r in vals["ratios"]:
            _check(0 < r <= 1, f"ratios: {r} outside (0, 1]")
        _check(len(set(vals["ratios"])) == len(vals["ratios"]), "ratios: duplicates")
        _check(vals["workers"] >= 1, "workers: must be at least 1")
    if problem == "drainage":
        _check(vals["left"] in ("free", "pinned", "constant"), f"left: unknown value {vals['left']!r}")
        _check(vals["flux_units"] in ("normalized", "physical"), f"flux_units: unknown value {vals['flux_units']!r}")
        if vals["left"] == "constant":
            _check(vals.get("flux", 0) > 0, "flux: constant drainage needs flux > 0")
        else:
            _check("flux" not in vals, f"flux: not used with left = {vals['left']}")
        _check(vals["offset"] >= vals["domain_left"], "offset: initial mound starts left of the domain")
        _check(vals["offset"] + vals["width"] < vals["domain_right"], "width: initial mound does not fit in the domain")
        if vals["left"] == "pinned":
            k = (vals["offset"] - vals["domain_left"]) / ((vals["domain_right"] - vals["domain_left"]) / vals["grid_n"])
            _check(abs(k - round(k)) < 1e-9, "offset: a pinned left front must sit on a grid node")
    if problem == "flood-then-drain":
        _check(vals["flux"] >= 0, "flux: the drainage multiplier must be nonnegative")
        _check(vals["domain_left"] == 0.0, "domain_left: outflow is pinned at x = 0")
        _check(vals["t_start"] <= vals["t_switch"] <= vals["t_end"], "t_switch: need t_start <= t_switch <= t_end")
        _check(vals["t_switch"] > 0, "t_switch: must be positive")
        _check(vals["width"] < vals["domain_right"], "width: initial mound does not fit in the domain")
    if problem == "validate-similarity":
        _check(vals["ratio"] == 1.0, "ratio: the drainage similarity solution needs ratio = 1")
        _check(0 < vals["beta"] < 0.25, f"beta: must lie in (0, 0.25), got {vals['beta']}")
        _check(vals["t_start"] > 0, "t_start: must be positive")
        if "domain_right" not in vals:
            # room for the right front at t_end with a margin, on a round number
            vals["domain_right"] = math.ceil(1.25 * vals["t_end"] ** vals["beta"] / 0.5) * 0.5
        if "snapshots" not in vals:
            vals["snapshots"] = (vals["t_start"], vals["t_end"])
    if "domain_right" in vals:
        _check(vals["domain_right"] > vals["domain_left"], "domain_right: must exceed domain_left")
    if "snapshots" in vals:
        snaps = tuple(sorted(set(vals["snapshots"])))
        for t in snaps:
            _check(vals["t_start"] <= t <= vals["t_end"], f"snapshots: {t} outside [t_start, t_end]")
        vals["snapshots"] = snaps
    if "ratios" in vals:
        vals["ratios"] = tuple(vals["ratios"])
    return RunConfig(**vals)


_PAIR = re.compile(r"\s*([A-Za-z_][\w.-]*)\s*=\s*([^\s=]*)\s*")


def parse_pairs(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` pairs; '#' starts a comment, several pairs may share a line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        pos = 0
        while pos < len(line):
            if line[pos:].strip() == "":
                break
            m = _PAIR.match(line, pos)
            if not m or m.end() == pos:
                raise ConfigError(f"{source}:{lineno}: cannot parse {line[pos:].strip()!r}")
            key = m.group(1).replace("-", "_")
            if key in out:
                raise ConfigError(f"{source}:{lineno}: {key}: given twice")
            out[key] = (m.group(2), f"{source}:{lineno}")
            pos = m.end()
    return out


def config_from_pairs(pairs: dict, base: Optional[RunConfig] = None) -> RunConfig:
    vals = {}
    for key, (raw, where) in pairs.items():
        if key not in PARSERS:
            raise ConfigError(f"{where}: {key}: unknown key")
        try:
            vals[key] = PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: {key}: {exc}") from None
    return replace(base or RunConfig(), **vals)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and resolve a key=value config text."""
    return resolve_config(config_from_pairs(parse_pairs(text, source)))


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def config_echo(cfg: RunConfig) -> list[str]:
    return [f"config.{f.name} = {_fmt(getattr(cfg, f.name))}"
            for f in fields(cfg) if getattr(cfg, f.name) is not None]


def config_from_summary(text: str) -> RunConfig:
    """Rebuild the resolved config from the echo block of a summary.txt."""
    lines = [ln[len("config."):] for ln in text.splitlines() if ln.startswith("config.")]
    return parse_config("\n".join(lines), "<summary>")


# ---------------------------------------------------------------- writers

def write_series(path: Path, series: Sequence[SeriesRecord]):
    rows = [",".join(SERIES_COLUMNS)]
    for r in series:
        rows.append(",".join(repr(float(getattr(r, c))) for c in SERIES_COLUMNS))
    path.write_text("\n".join(rows) + "\n")


def write_snapshots(path: Path, snapshots: Sequence[Profile]):
    rows = ["snapshot_time,x,h"]
    for p in snapshots:
        t = repr(float(p.time))
        rows.extend(f"{t},{float(x)!r},{float(h)!r}" for x, h in zip(p.x, p.heights))
    path.write_text("\n".join(rows) + "\n")


def write_summary(path: Path, items: list, cfg: RunConfig):
    lines = [f"tool_version = {__version__}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in items]
    lines += config_echo(cfg)
    path.write_text("\n".join(lines) + "\n")


def _fit_items(prefix: str, t, y) -> list:
    try:
        fit = fit_powerlaw(t, y, WindowPolicy())
    except ValueError:
        return [(f"{prefix}_exponent", "none")]
    return [
        (f"{prefix}_exponent", fit.exponent),
        (f"{prefix}_prefactor", fit.prefactor),
        (f"{prefix}_r_squared", fit.r_squared),
        (f"{prefix}_window", f"{fit.t_min!r},{fit.t_max!r}"),
        (f"{prefix}_window_rule", fit.window_rule),
    ]


def _write_run(out_dir: Path, run: RunOutput):
    write_series(out_dir / "series.csv", run.series)
    write_snapshots(out_dir / "snapshots.csv", run.snapshots)


# ---------------------------------------------------------------- problems

def _eigen_problem(cfg: RunConfig) -> EigenProblem:
    return EigenProblem(ratio=cfg.ratio, eps_tip=cfg.eps_tip, step=cfg.step)


def run_eigen(cfg: RunConfig, out_dir: Path):
    res = shoot_beta(cfg.ratio, prob=_eigen_problem(cfg))
    rows = ["xi,f"] + [f"{float(x)!r},{float(f)!r}" for x, f in zip(res.xi, res.f)]
    (out_dir / "profile.csv").write_text("\n".join(rows) + "\n")
    items = [
        ("beta", res.beta),
        ("alpha", res.alpha),
        ("alpha_plus_2beta", res.alpha + 2 * res.beta),
        ("gamma", res.gamma),
        ("epsilon_exponent", res.epsilon_exp),
        ("switch_point", res.switch_point if res.switch_point is not None else "none"),
        ("bisection_iterations", res.iterations),
    ]
    write_summary(out_dir / "summary.txt", items, cfg)
    return dict(items)


def run_dipole_problem(cfg: RunConfig, out_dir: Path) -> dict:
    dcfg = DipoleConfig(params=cfg.params, initial=cfg.initial, n_cells=cfg.grid_n, cfl=cfg.cfl,
                        t_start=cfg.t_start, t_end=cfg.t_end, snapshot_times=cfg.snapshots,
                        n_series=cfg.n_series)
    run = run_dipole(dcfg)
    _write_run(out_dir, run)
    t = run.column("time")
    items = _fit_items("x_right", t, run.column("x_right")) + _fit_items("max_height", t, run.column("max_height"))
    d = dict(items)
    beta_fit, alpha_fit = d["x_right_exponent"], d["max_height_exponent"]
    if beta_fit != "none" and alpha_fit != "none":
        alpha_fit = -alpha_fit
        items += [("beta_fit", beta_fit), ("alpha_fit", alpha_fit), ("alpha_plus_2beta_fit", alpha_fit + 2 * beta_fit)]
    q = run.column("dipole_moment")
    items.append(("dipole_moment_drift", float(abs(q[-1] - q[0]) / q[0])))
    items.append(("dipole_moment_max_drift", float(np.max(np.abs(q - q[0])) / q[0])))
    eps, step = (cfg.eps_tip or 1e-6), (cfg.step or 1e-3)
    try:
        beta_eig = shoot_beta(cfg.ratio, prob=EigenProblem(ratio=cfg.ratio, eps_tip=eps, step=step)).beta
        items.append(("beta_eigen", beta_eig))
    except ShootingError:
        items.append(("beta_eigen", "none"))
    if len(run.snapshots) >= 2:
        items.append(("collapse_metric", collapse_metric(run.snapshots)))
    items.append(("steps", run.n_steps))
    write_summary(out_dir / "summary.txt", items, cfg)
    return dict(items)


def _extinction_items(run: RunOutput) -> list:
    return [("extinction_time", run.extinction_time if run.extinction_time is not None else "none")]


def run_drainage_problem(cfg: RunConfig, out_dir: Path) -> dict:
    if cfg.left == "constant":
        q = cfg.flux if cfg.flux_units == "normalized" else cfg.flux / (cfg.porosity * cfg.kappa1)
        spec = DrainageSpec("constant", q0=q)
    else:
        q = 0.0
        spec = DrainageSpec(cfg.left)
    dcfg = DrainageConfig(params=cfg.params, drainage=spec, initial=cfg.initial, offset=cfg.offset,
                          dx=cfg.dx, domain=(cfg.domain_left, cfg.domain_right), cfl=cfg.cfl,
                          t_start=cfg.t_start, t_end=cfg.t_end, snapshot_times=cfg.snapshots,
                          n_series=cfg.n_series)
    run = run_drainage(dcfg)
    _write_run(out_dir, run)
    items = [("normalized_flux", q)] + _extinction_items(run)
    t = run.column("time")
    if cfg.t_start > 0:
        items += _fit_items("x_right", t, run.column("x_right"))
    items.append(("steps", run.n_steps))
    write_summary(out_dir / "summary.txt", items, cfg)
    return dict(items)


def run_flood_drain_problem(cfg: RunConfig, out_dir: Path) -> dict:
    fcfg = FloodDrainConfig(params=cfg.params, initial=cfg.initial, dx=cfg.dx,
                            domain=(cfg.domain_left, cfg.domain_right), cfl=cfg.cfl,
                            t_start=cfg.t_start, t_switch=cfg.t_switch, t_end=cfg.t_end,
                            multiplier=cfg.flux, snapshot_times=cfg.snapshots, n_series=cfg.n_series)
    run = run_flood_then_drain(fcfg)
    _write_run(out_dir, run)
    t, m = run.column("time"), run.column("mass")
    after = m[t >= cfg.t_switch]
    items = [
        ("natural_flux", run.natural_flux),
        ("drainage_flux", run.q0),
        ("multiplier", cfg.flux),
    ] + _extinction_items(run) + [
        ("mass_nonincreasing_after_switch", "true" if np.all(np.diff(after) <= 0) else "false"),
        ("steps", run.n_steps),
    ]
    write_summary(out_dir / "summary.txt", items, cfg)
    return dict(items)


def run_validate_problem(cfg: RunConfig, out_dir: Path) -> dict:
    sim = drainage_similarity(cfg.beta, kappa1=cfg.kappa1)
    t0 = cfg.t_start
    ini = InitialFront(lambda x: eval_similarity(sim, x, t0), float(sim.x_left(t0)), float(sim.x_right(t0)))
    dcfg = DrainageConfig(params=cfg.params, drainage=DrainageSpec("law", law=sim.normalized_flux),
                          initial=ini, dx=cfg.dx, domain=(cfg.domain_left, cfg.domain_right), cfl=cfg.cfl,
                          t_start=t0, t_end=cfg.t_end, snapshot_times=cfg.snapshots, n_series=cfg.n_series)
    run = run_drainage(dcfg)
    _write_run(out_dir, run)
    err = similarity_error(run, sim)
    t = run.column("time")
    items = [("beta", cfg.beta), ("lambda", sim.lam), ("flux_exponent", sim.flux_exponent)]
    items += _fit_items("x_left", t, run.column("x_left")) + _fit_items("x_right", t, run.column("x_right"))
    for ts, e in zip(err.snapshot_times, err.h_rel_err):
        items.append((f"h_rel_err_t{float(ts)!r}", float(e)))
    items += [
        ("sup_h_rel_err", err.sup_h_rel_err),
        ("max_xl_rel_err", float(np.abs(err.xl_rel_err).max())),
        ("max_xr_rel_err", float(np.abs(err.xr_rel_err).max())),
    ] + _extinction_items(run) + [("steps", run.n_steps)]
    write_summary(out_dir / "summary.txt", items, cfg)
    return dict(items)


def _sweep_member(args) -> tuple:
    cfg, out_dir = args
    try:
        return run_dipole_problem(cfg, out_dir), EXIT_OK, ""
    except InstabilityError as exc:
        return {}, EXIT_UNSTABLE, str(exc)
    except ShootingError as exc:
        return {}, EXIT_CONVERGENCE, str(exc)


def run_sweep(cfg: RunConfig, out_dir: Path) -> int:
    members = []
    for r in cfg.ratios:
        sub = out_dir / f"ratio_{r!r}"
        sub.mkdir(parents=True, exist_ok=True)
        mcfg = RunConfig(problem="dipole", ratio=r, kappa1=cfg.kappa1, porosity=cfg.porosity, shape=cfg.shape,
                         amplitude=cfg.amplitude, width=cfg.width, grid_n=cfg.grid_n, cfl=cfg.cfl,
                         t_start=cfg.t_start, t_end=cfg.t_end, snapshots=cfg.snapshots,
                         n_series=cfg.n_series, eps_tip=cfg.eps_tip, step=cfg.step).resolve()
        members.append((mcfg, sub))
    if cfg.workers > 1 and len(members) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(members))) as ex:
            results = list(ex.map(_sweep_member, members))
    else:
        results = [_sweep_member(m) for m in members]
    items, code = [], EXIT_OK
    keys = ("beta_eigen", "beta_fit", "alpha_fit", "alpha_plus_2beta_fit", "dipole_moment_drift")
    for k, (r, (res, rc, why)) in enumerate(zip(cfg.ratios, results), 1):
        if rc:
            code = code or rc
            _report(rc, f"sweep member ratio={r!r}: {why}")
            items.append((f"row_{k}", f"ratio={r!r} error={_one_line(why)}"))
            continue
        cells = [f"ratio={r!r}"] + [f"{key}={_fmt(res.get(key, 'none'))}" for key in keys]
        items.append((f"row_{k}", " ".join(cells)))
    write_summary(out_dir / "summary.txt", items, cfg)
    return code


RUNNERS = {
    "eigen": run_eigen,
    "dipole": run_dipole_problem,
    "drainage": run_drainage_problem,
    "flood-then-drain": run_flood_drain_problem,
    "validate-similarity": run_validate_problem,
}


def execute(cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.problem == "sweep":
        return run_sweep(cfg, out_dir)
    RUNNERS[cfg.problem](cfg, out_dir)
    return EXIT_OK


# ---------------------------------------------------------------- analyze

def _read_csv(path: Path) -> tuple[list, np.ndarray]:
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    return head, data.reshape(-1, len(head))


def analyze_dir(run_dir: Path, out_dir: Path, policy: WindowPolicy = WindowPolicy()) -> dict:
    """Fit exponents and the collapse metric from a finished run directory."""
    head, data = _read_csv(run_dir / "series.csv")
    if tuple(head) != SERIES_COLUMNS:
        raise ConfigError(f"{run_dir / 'series.csv'}: unexpected columns {head}")
    col = {h: data[:, i] for i, h in enumerate(head)}
    items = []
    for name in ("x_right", "x_left", "max_height", "mass"):
        try:
            fit = fit_powerlaw(col["time"], np.abs(col[name]), policy)
        except ValueError:
            continue
        items += [(f"{name}_exponent", fit.exponent), (f"{name}_r_squared", fit.r_squared),
                  (f"{name}_window", f"{fit.t_min!r},{fit.t_max!r}")]
    snap_path = run_dir / "snapshots.csv"
    if snap_path.exists():
        _, s = _read_csv(snap_path)
        profiles = []
        for t in np.unique(s[:, 0]) if s.size else ():
            blk = s[s[:, 0] == t]
            if blk.shape[0] >= 2 and blk[-1, 1] > blk[0, 1]:
                profiles.append(Profile(blk[0, 1], blk[-1, 1], np.maximum(blk[:, 2], 0.0), float(t), positions=blk[:, 1]))
        if len(profiles) >= 2:
            items.append(("collapse_metric", collapse_metric(profiles)))
            items.append(("collapse_times", ",".join(repr(p.time) for p in profiles)))
    lines = [f"tool_version = {__version__}", f"run_dir = {run_dir.name}"] + [f"{k} = {_fmt(v)}" for k, v in items]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "analysis.txt").write_text("\n".join(lines) + "\n")
    return dict(items)


# ---------------------------------------------------------------- entry

def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


KINDS = {EXIT_CONFIG: "config", EXIT_UNSTABLE: "instability", EXIT_CONVERGENCE: "convergence"}


def _report(code: int, msg: str):
    print(f"capmound-error {KINDS[code]}: {_one_line(msg)}", file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report(EXIT_CONFIG, message)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="capmound", description="Groundwater mound spreading with capillary retention.")
    p.add_argument("--version", action="version", version=f"capmound {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="key=value config file (flags override it)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--ratio", help="kappa1/kappa2 = 1 - delta, in (0, 1]")
        sp.add_argument("--kappa1")
        sp.add_argument("--delta", help="trapped fraction, in [0, 1)")
        sp.add_argument("--grid-n", help="number of grid cells")
        sp.add_argument("--cfl")
        sp.add_argument("--t-start")
        sp.add_argument("--t-end")
        sp.add_argument("--snapshots", help="t1,t2,...")
        sp.add_argument("--flux", help="drainage: q0; flood-drain: multiplier of the natural flux")
        sp.add_argument("--beta", help="validate-similarity: exponent in (0, 0.25)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any other config key (repeatable)")

    for name in ("dipole", "drainage", "flood-drain", "eigen", "sweep", "validate-similarity"):
        common(sub.add_parser(name))
    an = sub.add_parser("analyze", help="fit exponents and collapse for an existing run directory")
    an.add_argument("run_dir", type=Path)
    an.add_argument("--out", type=Path, help="where analysis.txt goes (default: run_dir)")
    return p


FLAG_KEYS = ("ratio", "kappa1", "delta", "grid_n", "cfl", "t_start", "t_end", "snapshots", "flux", "beta")


def config_from_args(args) -> RunConfig:
    problem = ALIASES.get(args.command, args.command)
    base = RunConfig()
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        base = config_from_pairs(parse_pairs(text, str(args.config)))
        if base.problem is not None and ALIASES.get(base.problem, base.problem) != problem:
            raise ConfigError(f"{args.config}: problem: {base.problem} does not match subcommand {args.command}")
    pairs = {k: (getattr(args, k), f"--{k.replace('_', '-')}") for k in FLAG_KEYS if getattr(args, k) is not None}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set: expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip().replace("-", "_")] = (v.strip(), "--set")
    cfg = config_from_pairs(pairs, base)
    return resolve_config(replace(cfg, problem=problem))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            analyze_dir(args.run_dir, args.out or args.run_dir)
            return EXIT_OK
        cfg = config_from_args(args)
        return execute(cfg, args.out)
    except (ConfigError, ValueError, OSError) as exc:
        _report(EXIT_CONFIG, str(exc))
        return EXIT_CONFIG
    except InstabilityError as exc:
        _report(EXIT_UNSTABLE, str(exc))
        return EXIT_UNSTABLE
    except ShootingError as exc:
        _report(EXIT_CONVERGENCE, str(exc))
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
