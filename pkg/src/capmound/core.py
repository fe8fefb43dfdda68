"""Domain types, initial conditions and integral functionals.

Heights ``h`` are in units of H, positions in L and time in T, so the
seepage diffusivities carry units of L^2/(T*H).  Every solver in the
package works from these types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SHAPES = ("parabolic", "cosine")


@dataclass(frozen=True)
class PhysicalParams:
    """Seepage coefficients of a stratum with capillary retention.

    ``kappa2`` is derived from ``kappa1`` and the trapped fraction
    ``delta``: receding water sees the reduced porosity m*(1 - delta).
    """

    kappa1: float = 1.0
    delta: float = 0.0
    porosity_m: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.kappa1) and self.kappa1 > 0):
            raise ValueError(f"kappa1 must be positive, got {self.kappa1}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if not (0.0 < self.porosity_m <= 1.0):
            raise ValueError(f"porosity_m must lie in (0, 1], got {self.porosity_m}")

    @classmethod
    def from_ratio(cls, ratio: float, kappa1: float = 1.0, porosity_m: float = 1.0) -> "PhysicalParams":
        """Build parameters from the diffusivity ratio kappa1/kappa2 = 1 - delta."""
        if not (0.0 < ratio <= 1.0):
            raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
        return cls(kappa1=kappa1, delta=1.0 - ratio, porosity_m=porosity_m)

    @property
    def kappa2(self) -> float:
        return self.kappa1 / (1.0 - self.delta)

    @property
    def ratio(self) -> float:
        return 1.0 - self.delta

    @property
    def kappa_max(self) -> float:
        return max(self.kappa1, self.kappa2)


@dataclass(frozen=True)
class Profile:
    """Sampled mound height between the left and right fronts.

    Samples are uniform on ``[x_left, x_right]`` unless ``positions`` is
    given (the fixed-grid solver produces fronts that sit between nodes).
    """

    x_left: float
    x_right: float
    heights: np.ndarray
    time: float = 0.0
    positions: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", h)
        if h.ndim != 1 or h.size < 2:
            raise ValueError("heights must be a 1-D array with at least 2 samples")
        if not self.x_left < self.x_right:
            raise ValueError(f"x_left ({self.x_left}) must be < x_right ({self.x_right})")
        if np.any(h < 0):
            raise ValueError("heights must be nonnegative")
        if self.positions is not None:
            x = np.asarray(self.positions, dtype=float)
            if x.shape != h.shape:
                raise ValueError("positions and heights must have the same shape")
            if np.any(np.diff(x) <= 0):
                raise ValueError("positions must be strictly increasing")
            object.__setattr__(self, "positions", x)

    @property
    def x(self) -> np.ndarray:
        if self.positions is not None:
            return self.positions
        return np.linspace(self.x_left, self.x_right, self.heights.size)

    @property
    def max_height(self) -> float:
        return float(self.heights.max())


@dataclass(frozen=True)
class InitialCondition:
    """Compactly supported concave bump on ``[0, width]``.

    ``parabolic``: h0 = A (1 - (2x/d - 1)^2); ``cosine``: h0 = A sin(pi x/d),
    the truncated cosine bump centred on the support.
    """

    shape: str = "parabolic"
    amplitude: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown initial shape {self.shape!r}; expected one of {SHAPES}")
        if not self.amplitude >= 0:
            raise ValueError(f"amplitude must be nonnegative, got {self.amplitude}")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")

    def __call__(self, x) -> np.ndarray:
        s = np.asarray(x, dtype=float) / self.width
        inside = (s >= 0) & (s <= 1)
        if self.shape == "parabolic":
            h = self.amplitude * (1.0 - (2.0 * s - 1.0) ** 2)
        else:
            h = self.amplitude * np.sin(np.pi * np.clip(s, 0.0, 1.0))
        return np.where(inside, np.maximum(h, 0.0), 0.0)


@dataclass(frozen=True)
class SeriesRecord:
    time: float
    x_left: float
    x_right: float
    max_height: float
    mass: float
    dipole_moment: float
    left_flux: float

    @classmethod
    def from_profile(cls, p: Profile) -> "SeriesRecord":
        return cls(
            time=p.time,
            x_left=p.x_left,
            x_right=p.x_right,
            max_height=p.max_height,
            mass=mass(p),
            dipole_moment=dipole_moment(p),
            left_flux=left_normalized_flux(p),
        )


def make_initial_profile(ic: InitialCondition, n_cells: int) -> Profile:
    """Sample ``ic`` on ``n_cells`` uniform cells spanning its support."""
    if n_cells < 8:
        raise ValueError(f"need at least 8 cells, got {n_cells}")
    x = np.linspace(0.0, ic.width, n_cells + 1)
    h = ic(x)
    h[0] = h[-1] = 0.0
    return Profile(0.0, ic.width, h)


def mass(p: Profile) -> float:
    """Trapezoid-rule integral of h over the support."""
    return float(np.trapezoid(p.heights, p.x))


def dipole_moment(p: Profile) -> float:
    """Trapezoid-rule integral of x*h over the support."""
    x = p.x
    return float(np.trapezoid(x * p.heights, x))


def kappa_select(second_diff_h2, kappa1: float, kappa2: float):
    """Diffusivity picked by the sign of the second difference of h^2.

    A positive difference means water is arriving (kappa1); a negative one
    means it is leaving (kappa2).  An exact zero resolves to kappa1.
    Works elementwise on arrays.
    """
    d = np.asarray(second_diff_h2)
    k = np.where(d < 0, kappa2, kappa1)
    return k if k.ndim else float(k)


def left_normalized_flux(p: Profile) -> float:
    """One-sided second-order estimate of d(h^2)/dx at the left front."""
    h2 = p.heights**2
    x = p.x
    if h2.size < 3:
        raise ValueError("need at least 3 samples")
    d1, d2 = x[1] - x[0], x[2] - x[1]
    # three-point one-sided derivative on a possibly nonuniform stencil
    c0 = -(2 * d1 + d2) / (d1 * (d1 + d2))
    c1 = (d1 + d2) / (d1 * d2)
    c2 = -d1 / (d2 * (d1 + d2))
    return float(c0 * h2[0] + c1 * h2[1] + c2 * h2[2])
