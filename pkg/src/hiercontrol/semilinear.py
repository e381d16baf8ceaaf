"""Implicit-Euler integrator for the semilinear state equation.

Each step solves the flux-form nonlinear system

    (w - w_prev)/dt - (a(w_x, t, x) w_x)_x + F(w, w_x) = s

by a within-step Picard iteration that freezes the diffusion coefficient and
the F-gradient at the previous iterate.  An optional background trajectory
turns the equation into its shifted form (state z = y - ybar):

    (z - z_prev)/dt - (a(z_x+g, t, x)(z_x+g) - a(g, t, x) g)_x
                    + F(z+ybar, z_x+g) - F(ybar, g) = s

which reduces to the plain equation bit-for-bit when ybar vanishes and
F(0,0) = 0.
"""

from __future__ import annotations

import numpy as np

from .coefficients import CoefficientModel
from .fields import Field
from .grid import SpaceTimeGrid
from .operators import (LinearizedOperator, centered_gradient, midpoint_gradient,
                        solve_tridiag)


class StepDivergence(RuntimeError):
    """The within-step Picard loop failed to converge."""


class SemilinearOperator:
    """Spatial part of the (possibly background-shifted) semilinear equation."""

    def __init__(self, model: CoefficientModel, grid: SpaceTimeGrid,
                 background: Field | None = None):
        self.model = model
        self.grid = grid
        self.background = background
        if background is not None and background.kind != "node":
            raise ValueError("background trajectory must be a node field")

    def _bg_row(self, n: int) -> np.ndarray | None:
        return None if self.background is None else self.background.values[n]

    def apply(self, n: int, row: np.ndarray) -> np.ndarray:
        """Nonlinear spatial operator at slab n on a full (Nx+2,) row."""
        g, m = self.grid, self.model
        t = g.t_mid[n - 1]
        xm, dx = g.x_mid, g.dx
        gw = midpoint_gradient(row, dx)
        gc = centered_gradient(row, dx)
        bg = self._bg_row(n)
        if bg is None:
            flux = m.a(gw, t, xm) * gw
            react = m.F(row[1:-1], gc)
        else:
            gb = midpoint_gradient(bg, dx)
            gcb = centered_gradient(bg, dx)
            flux = m.a(gw + gb, t, xm) * (gw + gb) - m.a(gb, t, xm) * gb
            react = m.F(row[1:-1] + bg[1:-1], gc + gcb) - m.F(bg[1:-1], gcb)
        return -np.diff(flux) / dx + react

    def frozen_coefficients(self, n: int, row: np.ndarray):
        """(abar_mid, react, conv) frozen at the given iterate row."""
        g, m = self.grid, self.model
        t = g.t_mid[n - 1]
        xm, dx = g.x_mid, g.dx
        gw = midpoint_gradient(row, dx)
        gc = centered_gradient(row, dx)
        bg = self._bg_row(n)
        if bg is None:
            abar = m.a(gw, t, xm)
            react = m.d1F(row[1:-1], gc)
            conv = m.d2F(row[1:-1], gc)
        else:
            gb = midpoint_gradient(bg, dx)
            gcb = centered_gradient(bg, dx)
            abar = m.a(gw + gb, t, xm)
            react = m.d1F(row[1:-1] + bg[1:-1], gc + gcb)
            conv = m.d2F(row[1:-1] + bg[1:-1], gc + gcb)
        return abar, react, conv

    def combined_state(self, traj: Field) -> Field:
        """traj + background (the physical state when a background is set)."""
        if self.background is None:
            return traj
        out = traj.copy()
        out.values += self.background.values
        return out

    def jacobian_operator(self, traj: Field, scheme: str = "centered") -> LinearizedOperator:
        """Exact Jacobian of the (shifted) operator frozen at a node trajectory."""
        if self.background is None:
            return LinearizedOperator.at_trajectory(self.model, self.grid, traj, scheme)
        return LinearizedOperator.at_trajectory(self.model, self.grid,
                                                self.combined_state(traj), scheme)


def solve_forward_semilinear(model: CoefficientModel, grid: SpaceTimeGrid,
                             y0: np.ndarray, source: Field | None = None,
                             background: Field | None = None,
                             tol: float = 1e-11, max_iter: int = 50) -> Field:
    """Integrate the semilinear equation from the initial slice y0.

    Parameters
    ----------
    y0 : array (Nx+2,)
        Initial slice; the Dirichlet boundary entries must vanish.
    source : Field, optional
        Slab source (controls already masked and summed).
    background : Field, optional
        Node trajectory shifting the equation (see module docstring).

    Returns the node trajectory.  Raises ``StepDivergence`` if a step's
    Picard loop exceeds ``max_iter`` without reducing the step residual
    below ``tol`` relative to the step's data scale.
    """
    if abs(y0[0]) > 0 or abs(y0[-1]) > 0:
        raise ValueError("initial slice violates the Dirichlet boundary conditions")
    op = SemilinearOperator(model, grid, background)
    out = Field.zeros(grid, "node")
    out.values[0] = y0
    dt, dx = grid.dt, grid.dx
    row = y0.copy()
    src = source.values if source is not None else None
    for n in range(1, grid.Nt + 1):
        s = src[n][1:-1] if src is not None else 0.0
        prev_int = row[1:-1]
        scale = max(1.0, float(np.max(np.abs(prev_int))) / dt,
                    float(np.max(np.abs(s))) if src is not None else 0.0)
        w = row.copy()
        converged = False
        for _ in range(max_iter):
            resid = (w[1:-1] - prev_int) / dt + op.apply(n, w) - s
            if np.max(np.abs(resid)) <= tol * scale:
                converged = True
                break
            abar, react, conv = op.frozen_coefficients(n, w)
            am, ap = abar[:-1] / dx ** 2, abar[1:] / dx ** 2
            sub = -am - conv / (2 * dx)
            diag = am + ap + react
            sup = -ap + conv / (2 * dx)
            w_int = w[1:-1]
            frozen_apply = diag * w_int
            frozen_apply[1:] += sub[1:] * w_int[:-1]
            frozen_apply[:-1] += sup[:-1] * w_int[1:]
            rhs = prev_int / dt + s - (op.apply(n, w) - frozen_apply)
            w = np.zeros_like(w)
            w[1:-1] = solve_tridiag(sub, 1.0 / dt + diag, sup, rhs)
        if not converged:
            raise StepDivergence(f"step {n}: Picard stalled after {max_iter} iterations")
        row = w
        out.values[n] = row
    return out
