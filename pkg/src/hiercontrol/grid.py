"""Space-time grid and grid-snapped intervals.

The spatial grid has Nx interior nodes, x_j = j*dx for j = 0..Nx+1 with
dx = L/(Nx+1); the time grid has Nt steps, t_n = n*dt with dt = T/Nt.
Time-dependent weight functions and all control/source fields live on the
staggered midtimes t_{n-1/2} (one per step), which keeps every quantity
finite even when a weight blows up at t = 0 or t = T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Invalid grid or interval specification."""


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on (0, L) x (0, T).

    Attributes
    ----------
    L, T : float
        Interval length and time horizon.
    Nx : int
        Number of interior spatial nodes (>= 8).
    Nt : int
        Number of time steps (>= 8).
    """

    L: float
    T: float
    Nx: int
    Nt: int

    def __post_init__(self):
        if not (self.L > 0 and self.T > 0):
            raise GridError(f"L and T must be positive, got L={self.L}, T={self.T}")
        if self.Nx < 8 or self.Nt < 8:
            raise GridError(f"Nx and Nt must be >= 8, got Nx={self.Nx}, Nt={self.Nt}")

    @property
    def dx(self) -> float:
        return self.L / (self.Nx + 1)

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def x(self) -> np.ndarray:
        """Node coordinates x_0 = 0 .. x_{Nx+1} = L, shape (Nx+2,)."""
        return np.linspace(0.0, self.L, self.Nx + 2)

    @property
    def x_interior(self) -> np.ndarray:
        return self.x[1:-1]

    @property
    def x_mid(self) -> np.ndarray:
        """Cell midpoints x_{j+1/2}, shape (Nx+1,)."""
        x = self.x
        return 0.5 * (x[:-1] + x[1:])

    @property
    def t(self) -> np.ndarray:
        """Node times t_0 = 0 .. t_Nt = T, shape (Nt+1,)."""
        return np.linspace(0.0, self.T, self.Nt + 1)

    @property
    def t_mid(self) -> np.ndarray:
        """Midtimes t_{n-1/2} for steps n = 1..Nt, shape (Nt,)."""
        return (np.arange(self.Nt) + 0.5) * self.dt

    def nearest_node(self, pos: float) -> int:
        j = int(round(pos / self.dx))
        return min(max(j, 0), self.Nx + 1)


@dataclass(frozen=True)
class Interval:
    """An open subinterval of (0, L), snapped to grid nodes.

    ``lo``/``hi`` are the snapped endpoint coordinates; ``ilo``/``ihi`` the
    corresponding node indices.  The node mask marks nodes strictly inside
    (sharp indicator, value 1 on interior nodes only).
    """

    lo: float
    hi: float
    ilo: int
    ihi: int
    nnodes: int = field(default=0)

    @staticmethod
    def snapped(lo: float, hi: float, grid: SpaceTimeGrid) -> "Interval":
        if not (0.0 <= lo < hi <= grid.L):
            raise GridError(f"interval ({lo}, {hi}) not inside (0, {grid.L})")
        ilo, ihi = grid.nearest_node(lo), grid.nearest_node(hi)
        if abs(ilo * grid.dx - lo) > 0.5 * grid.dx + 1e-12 or abs(ihi * grid.dx - hi) > 0.5 * grid.dx + 1e-12:
            raise GridError(f"interval ({lo}, {hi}) cannot be snapped within dx/2")
        if ihi <= ilo:
            raise GridError(f"interval ({lo}, {hi}) collapses after snapping to the grid")
        return Interval(ilo * grid.dx, ihi * grid.dx, ilo, ihi, nnodes=max(0, ihi - ilo - 1))

    def mask(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Sharp node indicator: 1.0 strictly inside, 0.0 elsewhere; shape (Nx+2,)."""
        m = np.zeros(grid.Nx + 2)
        m[self.ilo + 1 : self.ihi] = 1.0
        return m

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def intersect(self, other: "Interval") -> "Interval | None":
        ilo, ihi = max(self.ilo, other.ilo), min(self.ihi, other.ihi)
        if ihi <= ilo:
            return None
        lo = self.lo if self.ilo == ilo else other.lo
        hi = self.hi if self.ihi == ihi else other.hi
        return Interval(lo, hi, ilo, ihi, nnodes=max(0, ihi - ilo - 1))

    def intersects(self, other: "Interval") -> bool:
        return self.intersect(other) is not None

    def same_nodes(self, other: "Interval") -> bool:
        return self.ilo == other.ilo and self.ihi == other.ihi

    def strictly_inside(self, other: "Interval") -> bool:
        return self.ilo > other.ilo and self.ihi < other.ihi

    def contained_in(self, other: "Interval") -> bool:
        return self.ilo >= other.ilo and self.ihi <= other.ihi
