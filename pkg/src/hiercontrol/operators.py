"""Per-step tridiagonal operators and the linear forward/backward solvers.

Spatial operator on interior nodes (flux form, centered convection):

    (A v)_j = [-abar_{j-1/2} v_{j-1} + (abar_{j-1/2}+abar_{j+1/2}) v_j
               - abar_{j+1/2} v_{j+1}] / dx^2  + c_j v_j + b_j (v_{j+1}-v_{j-1})/(2 dx)

with one such operator per step slab (coefficients at midtimes).  Implicit
Euler steps solve (I + dt A_n) or its exact transpose; the backward solver is
defined as that literal transpose, so the forward/adjoint pairing identity

    <y(T), phi_T>_x = << source, phi >> + <y0, phi(0)>_x

holds to round-off (the transpose of centered convection is the conservative
derivative -(b phi)_x, matching the adjoint equations' structure).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import CoefficientModel
from .fields import Field
from .grid import SpaceTimeGrid


class SingularStep(RuntimeError):
    """A tridiagonal step system is numerically singular."""


def midpoint_gradient(row: np.ndarray, dx: float) -> np.ndarray:
    """Gradients at cell midpoints, shape (Nx+1,)."""
    return np.diff(row) / dx


def centered_gradient(row: np.ndarray, dx: float) -> np.ndarray:
    """Centered gradient at interior nodes, shape (Nx,)."""
    return (row[2:] - row[:-2]) / (2.0 * dx)


def flux_divergence(flux_mid: np.ndarray, dx: float) -> np.ndarray:
    """Divergence of a midpoint flux at interior nodes, shape (Nx,)."""
    return np.diff(flux_mid) / dx


def solve_tridiag(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray,
                  rhs: np.ndarray) -> np.ndarray:
    """Solve the tridiagonal system given row-wise bands (sub_j, diag_j, sup_j)."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = sup[:-1]
    ab[1, :] = diag
    ab[2, :-1] = sub[1:]
    if np.any(np.abs(diag) < 1e-300):
        raise SingularStep("zero pivot in tridiagonal step")
    return solve_banded((1, 1), ab, rhs, check_finite=False)


@dataclass
class LinearizedOperator:
    """Per-slab tridiagonal spatial operators for a frozen coefficient set.

    ``abar`` holds midpoint diffusion coefficients (Nt, Nx+1); ``react`` and
    ``conv`` hold node reaction/convection coefficients (Nt, Nx).  Row n-1 of
    each array belongs to slab n (midtime t_{n-1/2}).
    """

    grid: SpaceTimeGrid
    abar: np.ndarray
    react: np.ndarray
    conv: np.ndarray
    scheme: str = "centered"

    def __post_init__(self):
        g = self.grid
        if self.abar.shape != (g.Nt, g.Nx + 1):
            raise ValueError("abar must have shape (Nt, Nx+1)")
        if self.react.shape != (g.Nt, g.Nx) or self.conv.shape != (g.Nt, g.Nx):
            raise ValueError("react/conv must have shape (Nt, Nx)")
        self._bands = self._build_bands()

    # -- construction -------------------------------------------------------
    @classmethod
    def at_zero_state(cls, model: CoefficientModel, grid: SpaceTimeGrid,
                      scheme: str = "centered") -> "LinearizedOperator":
        """Coefficients of the linearization at the zero state."""
        xm, xi = grid.x_mid, grid.x_interior
        tm = grid.t_mid
        abar = np.empty((grid.Nt, grid.Nx + 1))
        for k, t in enumerate(tm):
            abar[k] = model.a(0.0, t, xm)
        c0 = float(model.d1F(0.0, 0.0))
        b0 = float(model.d2F(0.0, 0.0))
        react = np.full((grid.Nt, grid.Nx), c0)
        conv = np.full((grid.Nt, grid.Nx), b0)
        return cls(grid, abar, react, conv, scheme)

    @classmethod
    def at_trajectory(cls, model: CoefficientModel, grid: SpaceTimeGrid,
                      traj: Field, scheme: str = "centered") -> "LinearizedOperator":
        """Exact Jacobian coefficients frozen at a node trajectory.

        Diffusion at midpoints uses d1a(g)*g + a(g) with g the midpoint
        gradient of the slab-end slice; reaction/convection use the F partials
        at (value, centered gradient).
        """
        g = grid
        abar = np.empty((g.Nt, g.Nx + 1))
        react = np.empty((g.Nt, g.Nx))
        conv = np.empty((g.Nt, g.Nx))
        xm, xi, tm = g.x_mid, g.x_interior, g.t_mid
        for k, t in enumerate(tm):
            row = traj.values[k + 1]
            grad_m = midpoint_gradient(row, g.dx)
            abar[k] = model.d1a(grad_m, t, xm) * grad_m + model.a(grad_m, t, xm)
            grad_c = centered_gradient(row, g.dx)
            yv = row[1:-1]
            react[k] = model.d1F(yv, grad_c)
            conv[k] = model.d2F(yv, grad_c)
        return cls(grid, abar, react, conv, scheme)

    # -- banded data ----------------------------------------------------------
    def _build_bands(self):
        g = self.grid
        dx = g.dx
        am = self.abar[:, :-1] / dx ** 2   # abar_{j-1/2}
        ap = self.abar[:, 1:] / dx ** 2    # abar_{j+1/2}
        sub = -am.copy()
        diag = am + ap + self.react
        sup = -ap.copy()
        if self.scheme == "centered":
            sub -= self.conv / (2.0 * dx)
            sup += self.conv / (2.0 * dx)
        elif self.scheme == "upwind":
            bp = np.maximum(self.conv, 0.0) / dx
            bm = np.minimum(self.conv, 0.0) / dx
            diag = diag + bp - bm
            sub = sub - bp
            sup = sup + bm
        else:
            raise ValueError(f"unknown convection scheme {self.scheme!r}")
        return sub, diag, sup

    def bands(self, n: int):
        """Row bands (sub, diag, sup) of A_n for slab n (1-based)."""
        sub, diag, sup = self._bands
        return sub[n - 1], diag[n - 1], sup[n - 1]

    # -- applies -----------------------------------------------------------
    def apply(self, n: int, v: np.ndarray) -> np.ndarray:
        """A_n v on interior values v (Nx,)."""
        sub, diag, sup = self.bands(n)
        out = diag * v
        out[1:] += sub[1:] * v[:-1]
        out[:-1] += sup[:-1] * v[1:]
        return out

    def apply_transpose(self, n: int, v: np.ndarray) -> np.ndarray:
        sub, diag, sup = self.bands(n)
        out = diag * v
        out[1:] += sup[:-1] * v[:-1]
        out[:-1] += sub[1:] * v[1:]
        return out

    def step_forward(self, n: int, rhs: np.ndarray) -> np.ndarray:
        """Solve (I + dt A_n) u = rhs."""
        sub, diag, sup = self.bands(n)
        dt = self.grid.dt
        return solve_tridiag(dt * sub, 1.0 + dt * diag, dt * sup, rhs)

    def step_backward(self, n: int, rhs: np.ndarray) -> np.ndarray:
        """Solve (I + dt A_n^T) u = rhs."""
        sub, diag, sup = self.bands(n)
        dt = self.grid.dt
        tsub = np.zeros_like(sub)
        tsup = np.zeros_like(sup)
        tsub[1:] = sup[:-1]
        tsup[:-1] = sub[1:]
        return solve_tridiag(dt * tsub, 1.0 + dt * diag, dt * tsup, rhs)


def solve_linearized_forward(op: LinearizedOperator, y0: np.ndarray,
                             source: Field | None = None) -> Field:
    """March y^n = (I + dt A_n)^{-1} (y^{n-1} + dt s^n) from the initial slice.

    ``y0`` is a full (Nx+2,) slice with zero boundary values; the source is a
    slab field.  Returns the node trajectory.
    """
    g = op.grid
    out = Field.zeros(g, "node")
    out.values[0] = y0
    y = y0[1:-1].copy()
    dt = g.dt
    src = source.values if source is not None else None
    for n in range(1, g.Nt + 1):
        rhs = y if src is None else y + dt * src[n][1:-1]
        y = op.step_forward(n, rhs)
        out.values[n, 1:-1] = y
    return out


def solve_adjoint_backward(op: LinearizedOperator, terminal: np.ndarray,
                           source: Field | None = None) -> Field:
    """March p^{n-1} = (I + dt A_n^T)^{-1} (p^n + dt g^n) from the terminal slice.

    The step operator is the exact transpose of the forward step, so the
    output is the discrete adjoint; its slab-n sample (for pairings against
    controls) is row n-1.
    """
    g = op.grid
    out = Field.zeros(g, "node")
    out.values[g.Nt] = terminal
    p = terminal[1:-1].copy()
    dt = g.dt
    src = source.values if source is not None else None
    for n in range(g.Nt, 0, -1):
        rhs = p if src is None else p + dt * src[n][1:-1]
        p = op.step_backward(n, rhs)
        out.values[n - 1, 1:-1] = p
    return out
