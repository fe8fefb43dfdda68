"""Exponent fits, collapse metrics and the eigenvalue-vs-PDE harness."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InitialCondition, PhysicalParams, Profile
from .dipole import DipoleConfig, RunOutput, run_dipole
from .similarity import DrainageSimilarity, EigenProblem, eval_similarity, shoot_beta

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowPolicy:
    """How the straight trailing part of a log-log curve is picked.

    Local slopes come from OLS over ``span`` consecutive points.  The window
    is the longest trailing run of local slopes whose spread stays below
    ``slope_tol``; if that covers fewer than ``min_points`` samples the
    trailing ``fallback_fraction`` of the log-time range is used instead.
    """

    slope_tol: float = 0.01
    span: int = 5
    min_points: int = 8
    fallback_fraction: float = 0.5

    def __post_init__(self):
        if self.slope_tol <= 0:
            raise ValueError("slope_tol must be positive")
        if self.span < 2:
            raise ValueError("span must be at least 2")
        if self.min_points < 2:
            raise ValueError("min_points must be at least 2")
        if not 0 < self.fallback_fraction <= 1:
            raise ValueError("fallback_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float
    t_min: float
    t_max: float
    n_points: int
    # "stable" (slope criterion met) or "fallback"
    window_rule: str

    def __call__(self, t):
        return self.prefactor * np.asarray(t, dtype=float) ** self.exponent


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, icpt = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return float(slope), float(icpt), r2


def _local_slopes(lx: np.ndarray, ly: np.ndarray, span: int) -> np.ndarray:
    out = np.empty(lx.size - span + 1)
    for k in range(out.size):
        out[k] = np.polyfit(lx[k:k + span], ly[k:k + span], 1)[0]
    return out


def fit_powerlaw(t, y, policy: WindowPolicy = WindowPolicy()) -> PowerLawFit:
    """Least-squares power law y = c t^p over the straight trailing window."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError("t and y must have the same shape")
    ok = (t > 0) & (y > 0) & np.isfinite(t) & np.isfinite(y)
    t, y = t[ok], y[ok]
    if t.size < policy.min_points:
        raise ValueError(f"need at least {policy.min_points} points with t > 0 and y > 0, got {t.size}")
    order = np.argsort(t)
    lx, ly = np.log(t[order]), np.log(y[order])
    if np.any(np.diff(lx) <= 0):
        raise ValueError("times must be distinct")

    span = min(policy.span, lx.size)
    slopes = _local_slopes(lx, ly, span)
    first = slopes.size - 1
    lo_s = hi_s = slopes[-1]
    while first > 0:
        s = slopes[first - 1]
        if max(hi_s, s) - min(lo_s, s) >= policy.slope_tol:
            break
        lo_s, hi_s = min(lo_s, s), max(hi_s, s)
        first -= 1
    start = first
    rule = "stable"
    if lx.size - start < policy.min_points:
        cut = lx[-1] - policy.fallback_fraction * (lx[-1] - lx[0])
        start = int(np.searchsorted(lx, cut, side="left"))
        start = min(start, lx.size - 2)
        rule = "fallback"
    slope, icpt, r2 = _ols(lx[start:], ly[start:])
    return PowerLawFit(
        exponent=slope,
        prefactor=float(np.exp(icpt)),
        r_squared=r2,
        t_min=float(np.exp(lx[start])),
        t_max=float(np.exp(lx[-1])),
        n_points=int(lx.size - start),
        window_rule=rule,
    )


XI_GRID = np.linspace(0.0, 1.0, 201)


def normalized_shape(p: Profile, grid: np.ndarray = XI_GRID) -> np.ndarray:
    """h/max h against (x - x_l)/(x_r - x_l), linearly resampled onto ``grid``."""
    xi = (p.x - p.x_left) / (p.x_right - p.x_left)
    return np.interp(grid, xi, p.heights / p.max_height)


def collapse_metric(snapshots: Sequence[Profile]) -> float:
    """Largest pairwise sup-norm gap between normalized snapshot shapes."""
    good = []
    for p in snapshots:
        if not p.max_height > 0:
            warnings.warn(f"snapshot at t={p.time} has zero height; excluded", RuntimeWarning, stacklevel=2)
            continue
        good.append(normalized_shape(p))
    if snapshots and not good:
        raise ValueError("every snapshot is degenerate")
    worst = 0.0
    for i in range(len(good)):
        for j in range(i + 1, len(good)):
            worst = max(worst, float(np.max(np.abs(good[i] - good[j]))))
    return worst


def resample_height(p: Profile, x) -> np.ndarray:
    """Heights at ``x`` by linear interpolation of h^2 (zero outside the support).

    h^2 is linear across a front carrying a flux and h is linear at a
    front without flux, so this keeps both kinds of edge accurate where
    interpolating h itself loses a sqrt(dx) near a draining edge.
    """
    h2 = np.interp(np.asarray(x, dtype=float), p.x, p.heights**2, left=0.0, right=0.0)
    return np.sqrt(np.maximum(h2, 0.0))


def profile_discrepancy(a: Profile, b: Profile) -> float:
    """sup |h_a - h_b| over the union of sample points, relative to max h_a."""
    x = np.union1d(a.x, b.x)
    return float(np.max(np.abs(resample_height(a, x) - resample_height(b, x))) / a.max_height)


@dataclass(frozen=True)
class CompareConfig:
    n_cells: int = 400
    cfl: float = 0.25
    t_start: float = 0.1
    t_end: float = 100.0
    n_series: int = 200
    initial: InitialCondition = field(default_factory=InitialCondition)
    kappa1: float = 1.0
    policy: WindowPolicy = field(default_factory=WindowPolicy)
    eigen: EigenProblem = field(default_factory=EigenProblem)
    workers: int = 1


@dataclass(frozen=True)
class ComparisonRow:
    ratio: float
    beta_eigen: float = float("nan")
    beta_from_xr: float = float("nan")
    alpha_from_max: float = float("nan")
    alpha_plus_2beta: float = float("nan")
    xr_fit: Optional[PowerLawFit] = None
    max_fit: Optional[PowerLawFit] = None
    error: Optional[str] = None

    @property
    def beta_gap(self) -> float:
        return abs(self.beta_eigen - self.beta_from_xr)


def _compare_one(ratio: float, cfg: CompareConfig) -> ComparisonRow:
    row: dict = {"ratio": ratio}
    errors = []
    try:
        prob = EigenProblem(ratio=ratio, eps_tip=cfg.eigen.eps_tip, step=cfg.eigen.step,
                            beta_tol=cfg.eigen.beta_tol, tip_grading=cfg.eigen.tip_grading,
                            f_switch=cfg.eigen.f_switch)
        row["beta_eigen"] = shoot_beta(ratio, prob=prob).beta
    except Exception as exc:  # recorded per row, the table goes on
        errors.append(f"eigen: {exc}")
    try:
        dcfg = DipoleConfig(
            params=PhysicalParams.from_ratio(ratio, kappa1=cfg.kappa1), initial=cfg.initial,
            n_cells=cfg.n_cells, cfl=cfg.cfl, t_start=cfg.t_start, t_end=cfg.t_end,
            n_series=cfg.n_series,
        )
        out = run_dipole(dcfg)
        xr_fit = fit_powerlaw(out.column("time"), out.column("x_right"), cfg.policy)
        mx_fit = fit_powerlaw(out.column("time"), out.column("max_height"), cfg.policy)
        row.update(
            beta_from_xr=xr_fit.exponent,
            alpha_from_max=-mx_fit.exponent,
            alpha_plus_2beta=2.0 * xr_fit.exponent - mx_fit.exponent,
            xr_fit=xr_fit,
            max_fit=mx_fit,
        )
    except Exception as exc:
        errors.append(f"pde: {exc}")
    if errors:
        row["error"] = "; ".join(errors)
    return ComparisonRow(**row)


def compare_eigen_pde(ratios: Sequence[float], cfg: CompareConfig = CompareConfig()) -> list[ComparisonRow]:
    """One row per ratio: shooting eigenvalue next to exponents fitted from a dipole run."""
    for r in ratios:
        if not 0 < r <= 1:
            raise ValueError(f"ratio must lie in (0, 1], got {r}")
    if cfg.workers > 1 and len(ratios) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(ratios))) as ex:
            rows = list(ex.map(_compare_one, ratios, [cfg] * len(ratios)))
    else:
        rows = [_compare_one(r, cfg) for r in ratios]
    for row in rows:
        if row.error:
            logger.warning("ratio %g: %s", row.ratio, row.error)
    return rows


@dataclass(frozen=True)
class SimilarityError:
    snapshot_times: np.ndarray
    h_rel_err: np.ndarray
    times: np.ndarray
    xl_rel_err: np.ndarray
    xr_rel_err: np.ndarray

    @property
    def sup_h_rel_err(self) -> float:
        return float(self.h_rel_err.max()) if self.h_rel_err.size else float("nan")

    @property
    def max_front_err(self) -> float:
        return float(max(np.abs(self.xl_rel_err).max(), np.abs(self.xr_rel_err).max()))


def similarity_error(run: RunOutput, sim: DrainageSimilarity) -> SimilarityError:
    """Errors of a fixed-grid run against the drainage similarity solution.

    The height error is taken over the sampled interior points (fronts
    excluded, they are compared separately) and scaled by the exact peak.
    """
    snap_t, h_err = [], []
    for p in run.snapshots:
        exact = eval_similarity(sim, p.x, p.time)
        peak = float(np.max(eval_similarity(sim, np.linspace(sim.x_left(p.time), sim.x_right(p.time), 2001), p.time)))
        inner = slice(1, -1) if p.heights.size > 2 else slice(None)
        h_err.append(float(np.max(np.abs(p.heights[inner] - exact[inner]))) / peak)
        snap_t.append(p.time)
    t = run.column("time")
    xl = run.column("x_left") / sim.x_left(t) - 1.0
    xr = run.column("x_right") / sim.x_right(t) - 1.0
    return SimilarityError(np.array(snap_t), np.array(h_err), t, xl, xr)
