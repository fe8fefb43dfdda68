"""Self-similar profiles of the second kind and the shooting solver for beta.

With kappa1 normalized to 1 the profile ODE in g = f^2 reads::

    g'' = -c * s,    s = (1 - 2 beta) f + beta xi f',

with ``c = 1`` where s < 0 (advancing water) and ``c = kappa1/kappa2``
where s > 0 (receding water).  The tip conditions at xi = 1 are f = 0,
f' = -beta/2.  Integration runs from the tip towards xi = 0 with RK4
stages.  Once f starts to fall back towards zero the independent variable
is switched from xi to f itself, which removes the square-root
singularity of the g-form at a zero of f and yields the zero location as
a smooth function of beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ShootingError(RuntimeError):
    """The eigenvalue bracket could not be established or closed."""


@dataclass(frozen=True)
class EigenProblem:
    ratio: float = 1.0
    eps_tip: float = 1e-6
    step: float = 1e-3
    beta_tol: float = 1e-8
    # growth cap for steps near the tip, relative to the distance from it
    tip_grading: float = 0.25
    # f-phase starts once f has fallen below this fraction of its maximum
    f_switch: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"ratio must lie in (0, 1], got {self.ratio}")
        if not (0.0 < self.eps_tip < 1e-2):
            raise ValueError(f"eps_tip must lie in (0, 1e-2), got {self.eps_tip}")
        if not (0.0 < self.step <= 0.05):
            raise ValueError(f"step must lie in (0, 0.05], got {self.step}")
        if self.beta_tol <= 0:
            raise ValueError("beta_tol must be positive")


@dataclass(frozen=True)
class ShotResult:
    xi: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    residual: float
    switch_point: Optional[float]
    # zero of f reached by the f-phase (may be < 0 when beta is too large)
    zero: Optional[float]
    # (f^2)' at that zero
    dg_zero: Optional[float]

    @property
    def f(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.g, 0.0))


@dataclass(frozen=True)
class EigenResult:
    beta: float
    ratio: float
    xi: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    switch_point: Optional[float]
    residual: float
    iterations: int

    @property
    def alpha(self) -> float:
        return 1.0 - 2.0 * self.beta

    @property
    def gamma(self) -> float:
        return 4.0 * self.alpha - 2.0

    @property
    def epsilon_exp(self) -> float:
        return 1.0 - 4.0 * self.beta

    def profile(self, xi) -> np.ndarray:
        return np.interp(xi, self.xi, self.f, left=0.0, right=0.0)


@dataclass(frozen=True)
class DrainageSimilarity:
    """Exact self-similar solution of the forced-drainage problem.

    h(x, t) = c_h t^-(1 - 2 beta) f(x / (c_x t^beta)) on [lam, 1] in the
    similarity variable, with c_h = c_x^2 / kappa1.
    """

    beta: float
    lam: float
    xi: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    dg_lam: float
    c_x: float = 1.0
    c_h: float = 1.0
    kappa1: float = 1.0

    @property
    def alpha(self) -> float:
        return 1.0 - 2.0 * self.beta

    @property
    def flux_exponent(self) -> float:
        return 3.0 * self.beta - 2.0

    def x_right(self, t):
        return self.c_x * np.power(t, self.beta)

    def x_left(self, t):
        return self.lam * self.x_right(t)

    def normalized_flux(self, t):
        """d(h^2)/dx at the left front, i.e. q/(m kappa)."""
        return self.c_h**2 / self.c_x * np.power(t, self.flux_exponent) * self.dg_lam

    def physical_flux(self, t, porosity_m: float = 1.0):
        """Discharge rate m * kappa1 * d(h^2)/dx = m c_h c_x t^(3 beta - 2) (f^2)'(lam)."""
        return porosity_m * self.kappa1 * self.normalized_flux(t)

    def profile(self, xi) -> np.ndarray:
        return np.interp(xi, self.xi, self.f, left=0.0, right=0.0)


def taylor_start(beta: float, ratio: float, eps: float) -> tuple[float, float]:
    """Values (g, g') at xi = 1 - eps from the tip expansion.

    f = a1 e + a2 e^2 + ... in e = 1 - xi with a1 = beta/2 and
    a2 = -(1 - beta)/8; the tip lies on the advancing branch so ``ratio``
    does not enter.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    c2 = beta * beta / 4.0
    c3 = -beta * (1.0 - beta) / 8.0
    g = c2 * eps**2 + c3 * eps**3
    dg = -(2.0 * c2 * eps + 3.0 * c3 * eps**2)
    return g, dg


def branch_indicator(xi: float, g: float, dg: float, beta: float) -> float:
    """s = (1 - 2 beta) f + beta xi f' written in terms of g = f^2."""
    f = math.sqrt(g)
    return (1.0 - 2.0 * beta) * f + beta * xi * dg / (2.0 * f)


def ode_residual(xi, g, dg, d2g, beta: float, ratio: float):
    """Pointwise residual g'' + c s of the profile ODE (vectorized)."""
    xi, g, dg, d2g = (np.asarray(a, dtype=float) for a in (xi, g, dg, d2g))
    f = np.sqrt(g)
    s = (1.0 - 2.0 * beta) * f + beta * xi * dg / (2.0 * f)
    c = np.where(s < 0, 1.0, ratio)
    return d2g + c * s


def _rk4_xi(xi, g, dg, h, beta, coef):
    """One RK4 step of size h (negative: towards xi = 0); None if g leaves (0, inf)."""
    a = 1.0 - 2.0 * beta

    def acc(x, y, p):
        if y <= 0.0:
            return None
        f = math.sqrt(y)
        return -coef * (a * f + beta * x * p / (2.0 * f))

    k1 = acc(xi, g, dg)
    if k1 is None:
        return None
    g2, p2 = g + 0.5 * h * dg, dg + 0.5 * h * k1
    k2 = acc(xi + 0.5 * h, g2, p2)
    if k2 is None:
        return None
    g3, p3 = g + 0.5 * h * p2, dg + 0.5 * h * k2
    k3 = acc(xi + 0.5 * h, g3, p3)
    if k3 is None:
        return None
    g4, p4 = g + h * p3, dg + h * k3
    k4 = acc(xi + h, g4, p4)
    if k4 is None:
        return None
    gn = g + h / 6.0 * (dg + 2 * p2 + 2 * p3 + p4)
    pn = dg + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if gn <= 0.0:
        return None
    return gn, pn


def _f_phase(xi, f, p, beta, ratio, n_steps):
    """Integrate (xi, p) as functions of f from f down to 0.

    Uses dxi/df = 2f/p and dp/df = -c (2 (1-2beta) f^2 + beta xi p) / p.
    Returns the samples and whether p stayed positive.
    """
    a = 1.0 - 2.0 * beta
    df = -f / n_steps

    def rhs(ff, x, pp, c):
        return 2.0 * ff / pp, -c * (2.0 * a * ff * ff + beta * x * pp) / pp

    xs, fs, ps = [xi], [f], [p]
    for k in range(n_steps):
        s = a * f + beta * xi * p / (2.0 * f) if f > 0 else xi * p
        c = 1.0 if s < 0 else ratio
        k1 = rhs(f, xi, p, c)
        x2, p2 = xi + 0.5 * df * k1[0], p + 0.5 * df * k1[1]
        if p2 <= 0:
            return xs, fs, ps, False
        k2 = rhs(f + 0.5 * df, x2, p2, c)
        x3, p3 = xi + 0.5 * df * k2[0], p + 0.5 * df * k2[1]
        if p3 <= 0:
            return xs, fs, ps, False
        k3 = rhs(f + 0.5 * df, x3, p3, c)
        x4, p4 = xi + df * k3[0], p + df * k3[1]
        if p4 <= 0:
            return xs, fs, ps, False
        k4 = rhs(f + df, x4, p4, c)
        xi = xi + df / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + df / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        f = f + df if k < n_steps - 1 else 0.0
        if p <= 0:
            return xs, fs, ps, False
        xs.append(xi)
        fs.append(f)
        ps.append(p)
    return xs, fs, ps, True


def integrate_profile(beta: float, ratio: float, prob: Optional[EigenProblem] = None) -> ShotResult:
    """Shoot from the tip towards xi = 0 at a trial exponent ``beta``.

    The signed residual is ``-zero`` when f reaches zero at ``zero`` (to the
    right of 0 for beta below the eigenvalue, to the left of it, along the
    continued ODE, for beta above it), and ``g(0) > 0`` when f never
    returns towards zero.
    """
    if not (0.0 < beta < 0.5):
        raise ValueError(f"beta must lie in (0, 0.5), got {beta}")
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    prob = prob or EigenProblem(ratio=ratio)
    h = prob.step
    a = 1.0 - 2.0 * beta

    xi = 1.0 - prob.eps_tip
    g, dg = taylor_start(beta, ratio, prob.eps_tip)
    coef = 1.0
    branch = -1.0  # tip is on the advancing branch
    switch_point = None
    xs, gs, ps = [xi], [g], [dg]
    f_max = math.sqrt(g)
    f_phase_start = None

    while xi > 0.0:
        f = math.sqrt(g)
        f_max = max(f_max, f)
        if dg > 0 and f < prob.f_switch * f_max:
            f_phase_start = (xi, f, dg)
            break
        dx = min(h, prob.tip_grading * (1.0 - xi), xi)
        nxt = _rk4_xi(xi, g, dg, -dx, beta, coef)
        while nxt is None and dx > 1e-14:
            dx *= 0.5
            nxt = _rk4_xi(xi, g, dg, -dx, beta, coef)
        if nxt is None:
            f_phase_start = (xi, math.sqrt(g), dg)
            break
        gn, pn = nxt
        xn = xi - dx if dx < xi else 0.0
        s_new = a * math.sqrt(gn) + beta * xn * pn / (2.0 * math.sqrt(gn))
        if s_new * branch < 0 and ratio != 1.0:
            # bisect the step length to land on the branch switch
            lo, hi = 0.0, dx
            while hi - lo > 1e-10:
                mid = 0.5 * (lo + hi)
                trial = _rk4_xi(xi, g, dg, -mid, beta, coef)
                if trial is None:
                    hi = mid
                    continue
                st = branch_indicator(xi - mid, trial[0], trial[1], beta)
                if st * branch < 0:
                    hi = mid
                else:
                    lo = mid
            gn, pn = _rk4_xi(xi, g, dg, -hi, beta, coef)
            xn = xi - hi
            switch_point = xn
            branch = -branch
            coef = 1.0 if branch < 0 else ratio
        elif s_new * branch < 0:
            branch = -branch
            switch_point = switch_point if switch_point is not None else xn
        xi, g, dg = xn, gn, pn
        xs.append(xi)
        gs.append(g)
        ps.append(dg)

    zero = None
    dg_zero = None
    if f_phase_start is None and dg > 0:
        # reached xi = 0 with f still falling: continue through xi < 0
        f_phase_start = (xi, math.sqrt(g), dg)
    if f_phase_start is not None:
        n_f = max(50, int(math.ceil(0.2 / h)))
        fx, ff, fp, ok = _f_phase(*f_phase_start, beta, ratio, n_f)
        if ok:
            zero = fx[-1]
            dg_zero = fp[-1]
        # keep samples on [0, 1] only, interpolating the crossing of xi = 0
        for k in range(1, len(fx)):
            x_prev, x_k = fx[k - 1], fx[k]
            if x_k >= 0.0:
                xs.append(x_k)
                gs.append(ff[k] ** 2)
                ps.append(fp[k])
                continue
            if x_prev > 0.0:
                w = x_prev / (x_prev - x_k)
                f0 = ff[k - 1] + w * (ff[k] - ff[k - 1])
                xs.append(0.0)
                gs.append(f0 * f0)
                ps.append(fp[k - 1] + w * (fp[k] - fp[k - 1]))
            break

    if zero is not None:
        residual = -zero
    else:
        residual = max(gs[-1], 1e-300)
    order = np.argsort(xs)
    return ShotResult(
        xi=np.asarray(xs)[order],
        g=np.asarray(gs)[order],
        dg=np.asarray(ps)[order],
        residual=float(residual),
        switch_point=switch_point,
        zero=zero,
        dg_zero=dg_zero,
    )


def shoot_beta(ratio: float, tol: Optional[float] = None, prob: Optional[EigenProblem] = None,
               bracket: tuple[float, float] = (0.05, 0.45)) -> EigenResult:
    """Find beta such that the shot profile vanishes at xi = 0 (bisection)."""
    prob = prob or EigenProblem(ratio=ratio)
    if prob.ratio != ratio:
        raise ValueError("prob.ratio and ratio disagree")
    tol = prob.beta_tol if tol is None else tol
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = bracket
    r_lo = integrate_profile(lo, ratio, prob).residual
    r_hi = integrate_profile(hi, ratio, prob).residual
    # widen towards the admissible range (0, 0.5) if needed
    for _ in range(8):
        if r_lo < 0 < r_hi:
            break
        if r_lo > 0:
            lo *= 0.5
            r_lo = integrate_profile(lo, ratio, prob).residual
        if r_hi < 0:
            hi = 0.5 * (hi + 0.5)
            r_hi = integrate_profile(hi, ratio, prob).residual
    else:
        raise ShootingError(
            f"no sign change of the shooting residual on [{lo:.4g}, {hi:.4g}] "
            f"(residuals {r_lo:.3g}, {r_hi:.3g}) at ratio={ratio}"
        )
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r = integrate_profile(mid, ratio, prob).residual
        it += 1
        if r < 0:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    shot = integrate_profile(beta, ratio, prob)
    return EigenResult(
        beta=beta,
        ratio=ratio,
        xi=shot.xi,
        f=shot.f,
        switch_point=shot.switch_point if ratio < 1.0 else None,
        residual=shot.residual,
        iterations=it,
    )


def drainage_similarity(beta: float, kappa1: float = 1.0, c_x: float = 1.0,
                        prob: Optional[EigenProblem] = None) -> DrainageSimilarity:
    """Self-similar drainage profile for 0 < beta < 1/4 at equal diffusivities."""
    if not (0.0 < beta < 0.25):
        raise ValueError(f"beta must lie in (0, 0.25), got {beta}")
    prob = prob or EigenProblem(ratio=1.0)
    shot = integrate_profile(beta, 1.0, prob)
    if shot.zero is None or shot.zero <= 0.0:
        raise ShootingError(f"profile has no zero crossing in (0, 1) at beta={beta}")
    keep = shot.xi >= shot.zero
    xi = np.concatenate(([shot.zero], shot.xi[keep]))
    f = np.concatenate(([0.0], shot.f[keep]))
    xi, idx = np.unique(xi, return_index=True)
    return DrainageSimilarity(
        beta=beta,
        lam=float(shot.zero),
        xi=xi,
        f=f[idx],
        dg_lam=float(shot.dg_zero),
        c_x=c_x,
        c_h=c_x**2 / kappa1,
        kappa1=kappa1,
    )


def eval_similarity(sim, x, t: float, c_x: Optional[float] = None, c_h: Optional[float] = None):
    """Height of a self-similar solution at positions ``x`` and time ``t``.

    ``sim`` is a DrainageSimilarity (prefactors taken from it) or an
    EigenResult, in which case ``c_x`` and ``c_h`` must be supplied.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    c_x = getattr(sim, "c_x", None) if c_x is None else c_x
    c_h = getattr(sim, "c_h", None) if c_h is None else c_h
    if c_x is None or c_h is None:
        raise ValueError("prefactors c_x and c_h are required")
    xi = np.asarray(x, dtype=float) / (c_x * t**sim.beta)
    lam = getattr(sim, "lam", 0.0)
    inside = (xi >= lam) & (xi < 1.0)
    f = np.where(inside, sim.profile(np.clip(xi, 0.0, 1.0)), 0.0)
    return c_h * t ** (-(1.0 - 2.0 * sim.beta)) * f
