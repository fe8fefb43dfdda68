"""Fixed-grid front tracking for forced drainage and free spreading.

Heights live on a uniform grid; the fronts x_l, x_r fall between nodes.
The wet nodes next to each front carry finite-volume updates over the
shortened cells [x_l, x_il + dx/2] and [x_ir - dx/2, x_r] so that the
front conditions enter the scheme directly:

* right front: h = 0, d(h^2)/dx = 0, located by linear extrapolation of h;
* left front, ``constant``/``law`` mode: h = 0, d(h^2)/dx = q (normalized
  drainage flux q0/(m kappa)), located by extrapolating h^2 with slope q;
* left front, ``free`` mode: mirror image of the right front;
* left front, ``pinned`` mode: h = 0 held at a fixed node (outflow face).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import InitialCondition, PhysicalParams, Profile, SeriesRecord, kappa_select, left_normalized_flux, mass
from .dipole import InstabilityError, RunOutput, sample_times

logger = logging.getLogger(__name__)

LEFT_MODES = ("free", "pinned", "constant", "law")


@dataclass(frozen=True)
class DrainageSpec:
    """Left-front condition; fluxes are normalized, i.e. d(h^2)/dx at x_l."""

    mode: str = "free"
    q0: float = 0.0
    law: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in LEFT_MODES:
            raise ValueError(f"unknown drainage mode {self.mode!r}; expected one of {LEFT_MODES}")
        if self.mode == "constant" and not self.q0 > 0:
            raise ValueError("constant drainage needs q0 > 0")
        if self.mode == "law" and self.law is None:
            raise ValueError("law mode needs a flux law q(t)")
        if self.q0 < 0:
            raise ValueError("q0 must be nonnegative")

    @property
    def drains(self) -> bool:
        return self.mode in ("constant", "law")

    def flux(self, t: float) -> float:
        if self.mode == "constant":
            return self.q0
        if self.mode == "law":
            q = float(self.law(t))
            if q < 0:
                raise ValueError(f"drainage law returned a negative flux {q} at t={t}")
            return q
        return 0.0


@dataclass(frozen=True)
class FrontState:
    """Wet nodes il..ir of a uniform grid x_j = x0 + j*dx plus the two fronts."""

    x0: float
    dx: float
    u: np.ndarray
    il: int
    ir: int
    x_l: float
    x_r: float
    time: float = 0.0
    prev_d2: Optional[np.ndarray] = field(default=None, repr=False)

    def position(self, j):
        return self.x0 + j * self.dx

    @property
    def n_wet(self) -> int:
        return max(self.ir - self.il + 1, 0)

    @property
    def dx_l(self) -> float:
        return float(self.position(self.il)) - self.x_l

    @property
    def dx_r(self) -> float:
        return self.x_r - float(self.position(self.ir))

    def to_profile(self) -> Profile:
        xs = self.position(np.arange(self.il, self.ir + 1))
        h = self.u[self.il:self.ir + 1]
        pos = np.concatenate(([self.x_l], xs, [self.x_r]))
        hh = np.concatenate(([0.0], h, [0.0]))
        if pos[1] <= pos[0]:
            # pinned front sits on a node already holding h = 0
            pos, hh = pos[1:], hh[1:]
        return Profile(float(pos[0]), float(pos[-1]), hh, self.time, positions=pos)

    @classmethod
    def from_function(cls, h: Callable, x_l: float, x_r: float, x0: float, dx: float, n: int,
                      time: float = 0.0, pinned: bool = False) -> "FrontState":
        """Sample ``h`` at the nodes strictly inside (x_l, x_r)."""
        if not x_l < x_r:
            raise ValueError("x_l must be < x_r")
        x = x0 + dx * np.arange(n)
        if x_l < x[0] or x_r > x[-1]:
            raise ValueError("initial support does not fit in the grid")
        inside = (x > x_l) & (x < x_r)
        idx = np.flatnonzero(inside)
        if idx.size < 2:
            raise ValueError("fewer than 2 wet nodes; refine the grid")
        u = np.zeros(n)
        u[idx] = np.asarray(h(x[idx]), dtype=float)
        if np.any(u[idx] <= 0):
            raise ValueError("initial heights must be positive strictly inside the support")
        if pinned:
            j0 = int(round((x_l - x0) / dx))
            if abs(x[j0] - x_l) > 1e-9 * dx:
                raise ValueError("a pinned left front must sit on a grid node")
        return cls(x0, dx, u, int(idx[0]), int(idx[-1]), float(x_l), float(x_r), time)


def update_left_boundary(s: FrontState, q_n: float) -> float:
    """Left front for drainage: extrapolate h^2 from the first wet node with slope q_n.

    The result never lies right of the first wet node, and never more
    than one cell left of the previous front ``s.x_l``.
    """
    if not q_n > 0:
        raise ValueError("update_left_boundary needs q_n > 0; use the free-front rule otherwise")
    x_first = float(s.position(s.il))
    u_l = s.u[s.il]
    x_new = x_first - u_l * u_l / q_n
    return float(min(max(x_new, s.x_l - s.dx), x_first))


def _extrapolate_zero(x_edge, u_edge, u_next, step):
    """Zero crossing of the line through (x_edge, u_edge), (x_edge - step, u_next)."""
    if u_next <= u_edge:
        return np.inf
    return x_edge + step * u_edge / (u_next - u_edge)


def update_right_boundary(s: FrontState) -> float:
    """Right front from linear extrapolation of the last two wet heights.

    Motion is limited to one cell per step; a flat or rising tail (no
    finite crossing) takes the full one-cell move.
    """
    if s.n_wet < 2:
        return float(s.position(s.ir)) + 0.5 * s.dx
    x_last = float(s.position(s.ir))
    x_new = _extrapolate_zero(x_last, s.u[s.ir], s.u[s.ir - 1], s.dx)
    return float(min(max(x_new, s.x_r - s.dx, x_last), s.x_r + s.dx))


def _update_left_free(s: FrontState) -> float:
    if s.n_wet < 2:
        return float(s.position(s.il)) - 0.5 * s.dx
    x_first = float(s.position(s.il))
    x_new = -_extrapolate_zero(-x_first, s.u[s.il], s.u[s.il + 1], s.dx)
    return float(max(min(x_new, s.x_l + s.dx, x_first), s.x_l - s.dx))


def stable_dt(s: FrontState, params: PhysicalParams, cfl: float = 0.25,
              dt_max: float = np.inf, floor: float = 1e-12) -> float:
    h = max(float(s.u[s.il:s.ir + 1].max(initial=0.0)), floor)
    return min(cfl * s.dx * s.dx / (4.0 * params.kappa_max * h), dt_max)


def step_front(s: FrontState, params: PhysicalParams, q: DrainageSpec, dt: float,
               clip_tol: float = 0.0, left_cell: str = "balanced") -> FrontState:
    """One explicit step of the heights followed by the front updates.

    ``left_cell`` picks the update of the drained front cell: ``"balanced"``
    (default) divides the flux imbalance by the derivative of the cell mass
    for an h^2 profile of slope q, which keeps the receding control volume
    consistent; ``"fixed"`` uses the fixed volume (dx + dx_l)/2.
    """
    if s.n_wet < 1:
        return replace(s, time=s.time + dt)
    k1, k2 = params.kappa1, params.kappa2
    dx = s.dx
    il, ir = s.il, s.ir
    u = s.u
    new = u.copy()
    pinned = q.mode == "pinned"
    q_n = q.flux(s.time)

    # interior nodes: plain FTCS with kappa from the previous level
    lo = il if pinned else il + 1
    if ir - lo >= 1:
        u2 = u[lo - 1:ir + 1] ** 2
        d2 = u2[:-2] - 2.0 * u2[1:-1] + u2[2:]
        prev = d2 if s.prev_d2 is None else s.prev_d2[lo:ir]
        kap = kappa_select(prev, k1, k2)
        new[lo:ir] = u[lo:ir] + dt / (dx * dx) * kap * d2
        full_d2 = np.zeros(u.size)
        full_d2[lo:ir] = d2
    else:
        full_d2 = np.zeros(u.size)

    # front cells
    if ir > il or pinned:
        dx_r = s.dx_r
        ur, urm = u[ir], u[ir - 1]
        new[ir] = ur + 2.0 * dt / (dx + dx_r) * k1 * ((urm * urm - ur * ur) / dx - ur * ur / dx_r)
    left_done = None
    if not pinned and ir > il:
        dx_l = s.dx_l
        ul, ulp = u[il], u[il + 1]
        face = (ulp * ulp - ul * ul) / dx
        if not q.drains:
            new[il] = ul + 2.0 * dt / (dx + dx_l) * k1 * (face - ul * ul / dx_l)
        elif left_cell == "fixed":
            new[il] = ul + 2.0 * dt / (dx + dx_l) * k2 * (face - q_n)
        else:
            m_cell = _front_cell_mass(dx_l, dx, q_n) + dt * k2 * (face - q_n)
            left_done = _settle_left(s, new, il, ir, m_cell, q.flux(s.time + dt))

    check = new[il + 1:ir + 1] if q.drains else new[il:ir + 1]
    if check.size and check.min() < -clip_tol:
        raise InstabilityError(f"negative height {check.min():.3e}", s.time + dt)
    mid = FrontState(s.x0, dx, new, il, ir, s.x_l, s.x_r, s.time + dt, full_d2)
    return _move_fronts(mid, q, q_n, left_done)


def _front_cell_mass(a: float, dx: float, q: float) -> float:
    """Water in [x_l, x_il + dx/2] for h^2 = q (x - x_l), with a = x_il - x_l."""
    return (2.0 / 3.0) * np.sqrt(q) * (a + 0.5 * dx) ** 1.5


def _settle_left(s: FrontState, u: np.ndarray, il: int, ir: int, m_cell: float, q: float):
    """Place the drained front so the front cell holds ``m_cell``.

    Nodes whose cell has emptied are merged into the next one, so water is
    neither created nor lost when the front crosses a node.  Returns
    (il, x_l), with il > ir signalling that the mound is gone.
    """
    dx = s.dx
    while True:
        a = (1.5 * max(m_cell, 0.0) / np.sqrt(q)) ** (2.0 / 3.0) - 0.5 * dx if m_cell > 0 else -1.0
        if a >= 0.0 or il >= ir:
            break
        u[il] = 0.0
        il += 1
        m_cell += u[il] * dx
    if a < 0.0:
        u[il] = 0.0
        return il + 1, float(s.position(il))
    if a > dx and il - 1 >= 0:
        # front moved past the next dry node: it becomes the new front node
        u[il] = np.sqrt(q * a)
        a -= dx
        il -= 1
    u[il] = np.sqrt(q * a)
    return il, float(s.position(il)) - a


def _move_fronts(s: FrontState, q: DrainageSpec, q_n: float, left_done=None) -> FrontState:
    u = s.u
    il, ir = s.il, s.ir
    dx = s.dx
    n = u.size

    if left_done is not None:
        il, x_l = left_done
        if il > ir:
            return replace(s, u=u, il=il, ir=ir, x_l=x_l, x_r=x_l)
        s = replace(s, il=il, x_l=x_l)

    # right front
    if u[ir] <= 0.0:
        u[ir] = 0.0
        x_r = float(s.position(ir))
        ir -= 1
    else:
        x_r = update_right_boundary(s)
        if ir + 1 < n and x_r > s.position(ir + 1):
            j = ir + 1
            u[j] = u[ir] * (x_r - s.position(j)) / (x_r - s.position(ir))
            ir = j
        elif ir + 1 >= n and x_r > s.position(ir) + dx:
            raise InstabilityError("right front left the computational domain", s.time)

    if q.mode == "pinned" or left_done is not None:
        return replace(s, u=u, il=il, ir=ir, x_r=x_r)

    if q.drains:
        for _ in range(2):
            if il <= ir and u[il] <= 0.0:
                u[il] = 0.0
                il += 1
        if il > ir:
            return replace(s, u=u, il=il, ir=ir, x_l=x_r, x_r=x_r)
        probe = replace(s, u=u, il=il, ir=ir)
        x_l = update_left_boundary(probe, q_n)
        if il - 1 >= 0 and x_l < s.position(il - 1):
            j = il - 1
            u[j] = np.sqrt(max(u[il] ** 2 - q_n * dx, 0.0))
            if u[j] > 0.0:
                il = j
            else:
                x_l = float(s.position(j)) + 1e-12 * dx
    else:
        if u[il] <= 0.0:
            u[il] = 0.0
            x_l = float(s.position(il))
            il += 1
        else:
            probe = replace(s, u=u, il=il, ir=ir)
            x_l = _update_left_free(probe)
            if il - 1 >= 0 and x_l < s.position(il - 1):
                j = il - 1
                u[j] = u[il] * (s.position(j) - x_l) / (s.position(il) - x_l)
                il = j
            elif il - 1 < 0 and x_l < s.position(il) - dx:
                raise InstabilityError("left front left the computational domain", s.time)
    return replace(s, u=u, il=il, ir=ir, x_l=x_l, x_r=x_r)


@dataclass(frozen=True)
class InitialFront:
    """Initial data for the fixed-grid solver: a height function and its fronts."""

    h: Callable
    x_left: float
    x_right: float


@dataclass(frozen=True)
class DrainageConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    drainage: DrainageSpec = field(default_factory=DrainageSpec)
    initial: Union[InitialCondition, InitialFront] = field(default_factory=InitialCondition)
    # offset of an InitialCondition's support [0, d]
    offset: float = 0.0
    dx: float = 0.01
    domain: tuple[float, float] = (0.0, 10.0)
    cfl: float = 0.25
    t_start: float = 0.0
    t_end: float = 1.0
    snapshot_times: Sequence[float] = ()
    n_series: int = 200
    dt_max: float = np.inf
    mass_floor_rel: float = 1e-6
    clip_tol_rel: float = 1e-12

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if not self.domain[0] < self.domain[1]:
            raise ValueError("domain must be an increasing pair")
        if self.n_series < 2:
            raise ValueError("n_series must be at least 2")
        bad = [t for t in self.snapshot_times if not self.t_start <= t <= self.t_end]
        if bad:
            raise ValueError(f"snapshot times outside [t_start, t_end]: {bad}")


def initial_state(cfg: DrainageConfig) -> FrontState:
    x0, x1 = cfg.domain
    n = int(round((x1 - x0) / cfg.dx)) + 1
    ini = cfg.initial
    if isinstance(ini, InitialCondition):
        off = cfg.offset
        front = InitialFront(lambda x: ini(np.asarray(x) - off), off, off + ini.width)
    else:
        front = ini
    pinned = cfg.drainage.mode == "pinned"
    return FrontState.from_function(front.h, front.x_left, front.x_right, x0, cfg.dx, n,
                                    time=cfg.t_start, pinned=pinned)


def run_drainage(cfg: DrainageConfig, state: Optional[FrontState] = None) -> RunOutput:
    """Integrate from ``state`` (default: the configured initial data) to t_end or extinction."""
    if state is None:
        state = initial_state(cfg)
    params = cfg.params
    spec = cfg.drainage
    m0 = mass(state.to_profile())
    mass_floor = cfg.mass_floor_rel * m0
    clip_tol = cfg.clip_tol_rel * max(float(state.u.max()), 1e-300)

    series_times = set(sample_times(state.time, cfg.t_end, cfg.n_series)) if cfg.t_end > state.time else {state.time}
    snaps = set(t for t in cfg.snapshot_times if t >= state.time)
    marks = sorted(series_times | snaps)
    series: list[SeriesRecord] = []
    snapshots: list[Profile] = []
    n_steps = 0
    extinct_at = None

    for t_mark in marks:
        while state.time < t_mark:
            dt = stable_dt(state, params, cfg.cfl, cfg.dt_max)
            last = state.time + dt >= t_mark
            if last:
                dt = t_mark - state.time
            state = step_front(state, params, spec, dt, clip_tol)
            if last:
                state = replace(state, time=t_mark)
            n_steps += 1
            # nodal sum is a cheap stand-in for the mass near extinction
            if state.n_wet < 2 or state.u.sum() * state.dx < mass_floor:
                extinct_at = state.time
                break
        if extinct_at is not None:
            break
        prof = state.to_profile()
        if t_mark in series_times:
            series.append(SeriesRecord.from_profile(prof))
        if t_mark in snaps:
            snapshots.append(prof)
    final = state.to_profile() if state.n_wet >= 1 else None
    logger.debug("drainage run: %d steps, extinction=%s", n_steps, extinct_at)
    return RunOutput(series, snapshots, n_steps, extinction_time=extinct_at, final=final)


@dataclass(frozen=True)
class FloodDrainConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    initial: InitialCondition = field(default_factory=InitialCondition)
    dx: float = 0.01
    domain: tuple[float, float] = (0.0, 5.0)
    cfl: float = 0.25
    t_start: float = 0.0
    t_switch: float = 1.0
    t_end: float = 100.0
    multiplier: float = 2.0
    snapshot_times: Sequence[float] = ()
    n_series: int = 200
    mass_floor_rel: float = 1e-6

    def __post_init__(self):
        if not self.t_switch > 0:
            raise ValueError("t_switch must be positive")
        if not self.t_start <= self.t_switch <= self.t_end:
            raise ValueError("need t_start <= t_switch <= t_end")
        if self.multiplier < 0:
            raise ValueError("multiplier must be nonnegative")


@dataclass
class FloodDrainOutput(RunOutput):
    natural_flux: float = 0.0
    q0: float = 0.0


def run_flood_then_drain(cfg: FloodDrainConfig) -> FloodDrainOutput:
    """Natural outflow through x = 0 up to t_switch, then constant forced drainage.

    The drainage flux is ``multiplier`` times the natural normalized flux
    d(h^2)/dx at x = 0 measured at t_switch; ``multiplier = 0`` keeps the
    natural outflow for the whole run.
    """
    snaps1 = [t for t in cfg.snapshot_times if t <= cfg.t_switch]
    snaps2 = [t for t in cfg.snapshot_times if t > cfg.t_switch]
    n1 = max(2, cfg.n_series // 2)
    phase1 = DrainageConfig(
        params=cfg.params, drainage=DrainageSpec("pinned"), initial=cfg.initial, dx=cfg.dx,
        domain=cfg.domain, cfl=cfg.cfl, t_start=cfg.t_start, t_end=cfg.t_switch,
        snapshot_times=snaps1, n_series=n1, mass_floor_rel=cfg.mass_floor_rel,
    )
    out1 = run_drainage(phase1)
    natural = left_normalized_flux(out1.final)
    q0 = cfg.multiplier * natural
    spec2 = DrainageSpec("constant", q0=q0) if q0 > 0 else DrainageSpec("pinned")
    phase2 = replace(phase1, drainage=spec2, t_start=cfg.t_switch, t_end=cfg.t_end,
                     snapshot_times=snaps2, n_series=max(2, cfg.n_series - n1 + 1))
    m0 = mass(initial_state(phase1).to_profile())
    phase2 = replace(phase2, mass_floor_rel=cfg.mass_floor_rel * m0 / out1.series[-1].mass)
    state = _state_from_profile(out1.final, cfg.dx, cfg.domain, pinned=q0 == 0)
    out2 = run_drainage(phase2, state)
    series = out1.series + out2.series[1:]
    return FloodDrainOutput(
        series, out1.snapshots + out2.snapshots, out1.n_steps + out2.n_steps,
        extinction_time=out2.extinction_time, final=out2.final, natural_flux=natural, q0=q0,
    )


def _state_from_profile(p: Profile, dx: float, domain, pinned: bool) -> FrontState:
    x0, x1 = domain
    n = int(round((x1 - x0) / dx)) + 1
    return FrontState.from_function(lambda x: np.interp(x, p.x, p.heights), p.x_left, p.x_right,
                                    x0, dx, n, time=p.time, pinned=pinned)
