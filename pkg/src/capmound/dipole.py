"""Explicit solver for natural outflow at x = 0 in rescaled coordinates.

The mound is tracked on xi = x / x_r(t) in [0, 1] so the advancing front
stays at xi = 1.  In these coordinates::

    H_t = (kappa H^2_xixi - 2 kappa1 xi H_xi(1) H_xi) / x_r^2,
    dx_r/dt = -2 kappa1 H_xi(1) / x_r,

with H(0) = H(1) = 0.  The diffusivity follows the sign of the second
difference of H^2 at the previous time level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InitialCondition, PhysicalParams, Profile, SeriesRecord, kappa_select, make_initial_profile

logger = logging.getLogger(__name__)


class InstabilityError(RuntimeError):
    """A height fell clearly below zero; the explicit step was unstable."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.17g}")
        self.time = time


@dataclass(frozen=True)
class RescaledState:
    heights: np.ndarray
    x_r: float
    time: float
    # second difference of H^2 from the previous level (None before the first step)
    prev_d2: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.heights.size < 3:
            raise ValueError("need at least 3 grid points")
        if not self.x_r > 0:
            raise ValueError("x_r must be positive")

    @property
    def n_cells(self) -> int:
        return self.heights.size - 1

    @property
    def dxi(self) -> float:
        return 1.0 / self.n_cells

    @property
    def xi(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.heights.size)

    def to_profile(self) -> Profile:
        return Profile(0.0, self.x_r, self.heights.copy(), self.time)

    @classmethod
    def from_profile(cls, p: Profile) -> "RescaledState":
        if p.x_left != 0.0 or p.positions is not None:
            raise ValueError("rescaled state needs a uniform profile pinned at x = 0")
        h = p.heights.copy()
        h[0] = h[-1] = 0.0
        return cls(h, p.x_right, p.time)


@dataclass(frozen=True)
class DipoleConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    initial: InitialCondition = field(default_factory=InitialCondition)
    n_cells: int = 400
    cfl: float = 0.25
    t_start: float = 0.1
    t_end: float = 100.0
    snapshot_times: Sequence[float] = ()
    n_series: int = 200
    dt_max: float = np.inf
    height_floor: float = 1e-12
    clip_tol_rel: float = 1e-12
    advection: str = "centered"

    def __post_init__(self):
        if self.advection not in ("centered", "backward"):
            raise ValueError(f"unknown advection scheme {self.advection!r}")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.n_series < 2:
            raise ValueError("n_series must be at least 2")
        bad = [t for t in self.snapshot_times if not self.t_start <= t <= self.t_end]
        if bad:
            raise ValueError(f"snapshot times outside [t_start, t_end]: {bad}")


@dataclass
class RunOutput:
    series: list[SeriesRecord]
    snapshots: list[Profile]
    n_steps: int
    extinction_time: Optional[float] = None
    final: Optional[Profile] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.series])


def boundary_speed(s: RescaledState, params: PhysicalParams) -> float:
    """Front speed v = -2 kappa1 dh/dx at the tip, from the last grid cell."""
    u = s.heights
    return -2.0 * params.kappa1 * (u[-1] - u[-2]) / (s.dxi * s.x_r)


def stable_dt(s: RescaledState, params: PhysicalParams, cfl: float = 0.25,
              dt_max: float = np.inf, floor: float = 1e-12) -> float:
    if not 0 < cfl <= 1:
        raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
    h = max(float(s.heights.max()), floor)
    dt = cfl * (s.dxi * s.x_r) ** 2 / (4.0 * params.kappa_max * h)
    return min(dt, dt_max)


def step_dipole(s: RescaledState, params: PhysicalParams, dt: float, clip_tol: float = 0.0,
                advection: str = "centered") -> RescaledState:
    """Advance one forward-Euler step; heights in (-clip_tol, 0) are clipped.

    ``advection`` selects the difference used for H_xi in the frame-motion
    term: ``"centered"`` (default, conserves the dipole moment to second
    order) or ``"backward"`` (u_i - u_{i-1}).
    """
    u = s.heights
    u2 = u * u
    d2 = u2[:-2] - 2.0 * u2[1:-1] + u2[2:]
    kap = kappa_select(d2 if s.prev_d2 is None else s.prev_d2, params.kappa1, params.kappa2)
    dxi = s.dxi
    tip = u[-1] - u[-2]
    xi = s.xi[1:-1]
    if advection == "centered":
        du = 0.5 * (u[2:] - u[:-2])
    else:
        du = u[1:-1] - u[:-2]
    adv = 2.0 * params.kappa1 * xi * du * tip
    new = u.copy()
    new[1:-1] += dt / (dxi * dxi * s.x_r * s.x_r) * (kap * d2 - adv)
    new[0] = new[-1] = 0.0
    lowest = new.min()
    if lowest < 0.0:
        if lowest < -clip_tol:
            raise InstabilityError(f"negative height {lowest:.3e}", s.time + dt)
        np.maximum(new, 0.0, out=new)
    x_r = s.x_r + boundary_speed(s, params) * dt
    return RescaledState(new, x_r, s.time + dt, d2)


def sample_times(t_start: float, t_end: float, n: int) -> np.ndarray:
    """Log-spaced recording times (linear if t_start is 0)."""
    if t_end == t_start:
        return np.array([t_start])
    if t_start > 0:
        return np.geomspace(t_start, t_end, n)
    return np.linspace(t_start, t_end, n)


def run_dipole(cfg: DipoleConfig) -> RunOutput:
    p0 = make_initial_profile(cfg.initial, cfg.n_cells)
    state = RescaledState.from_profile(Profile(p0.x_left, p0.x_right, p0.heights, cfg.t_start))
    clip_tol = cfg.clip_tol_rel * max(float(p0.heights.max()), cfg.height_floor)
    params = cfg.params

    marks = sorted(set(sample_times(cfg.t_start, cfg.t_end, cfg.n_series)) | set(cfg.snapshot_times))
    snaps = set(cfg.snapshot_times)
    series_times = set(sample_times(cfg.t_start, cfg.t_end, cfg.n_series))
    series: list[SeriesRecord] = []
    snapshots: list[Profile] = []
    n_steps = 0

    def record(t):
        prof = state.to_profile()
        if t in series_times:
            series.append(SeriesRecord.from_profile(prof))
        if t in snaps:
            snapshots.append(prof)

    for t_mark in marks:
        while state.time < t_mark:
            dt = stable_dt(state, params, cfg.cfl, cfg.dt_max, cfg.height_floor)
            last = state.time + dt >= t_mark
            if last:
                dt = t_mark - state.time
            state = step_dipole(state, params, dt, clip_tol, cfg.advection)
            if last:
                state = RescaledState(state.heights, state.x_r, t_mark, state.prev_d2)
            n_steps += 1
        record(t_mark)
    logger.debug("dipole run finished after %d steps", n_steps)
    return RunOutput(series, snapshots, n_steps, final=state.to_profile())
