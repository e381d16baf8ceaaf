"""Brute-force references for the test suite.

The dense monolithic solver assembles the fully coupled linear optimality
system on a coarse grid as one matrix and factors it directly.  The stencils
are re-derived here from the model functions on purpose: the oracle must not
share assembly code with the production solvers (only the grid type), so a
bug in either side shows up as a mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .coefficients import CoefficientModel
from .fields import Field
from .geometry import ControlGeometry
from .grid import SpaceTimeGrid
from .objectives import FollowerObjective


class SingularMatrix(RuntimeError):
    pass


class NoisyEstimate(RuntimeError):
    pass


@dataclass
class DenseSystem:
    grid: SpaceTimeGrid
    matrix: np.ndarray
    lu: tuple
    nx: int
    nt: int

    def index_y(self, n: int, j: int) -> int:
        """Unknown index of y^n_j, n = 1..Nt, j = 1..Nx."""
        return (n - 1) * self.nx + (j - 1)

    def index_p(self, i: int, n: int, j: int) -> int:
        """Unknown index of p^{i,n}_j, n = 0..Nt-1, j = 1..Nx."""
        return self.nt * self.nx * (1 + i) + n * self.nx + (j - 1)


def assemble_dense_system(model: CoefficientModel, grid: SpaceTimeGrid,
                          geom: ControlGeometry,
                          objectives: tuple[FollowerObjective, FollowerObjective],
                          ) -> DenseSystem:
    """Assemble the coupled linear system (state forward + two adjoints backward).

    Unknowns: y at rows 1..Nt and p^i at rows 0..Nt-1, interior nodes only.
    Equations are the implicit-Euler slab equations; couplings sample the
    adjoints at slab starts and the state at slab ends.
    """
    nx, nt = grid.Nx, grid.Nt
    if nx * nt > 1024:
        raise ValueError("dense oracle is capped at Nx*Nt <= 1024")
    if not model.linear:
        raise ValueError("dense oracle only covers the linear family")
    N = 3 * nx * nt
    dt, dx = grid.dt, grid.dx
    xm = grid.x_mid
    c0 = float(model.d1F(0.0, 0.0))
    b0 = float(model.d2F(0.0, 0.0))
    mo = geom.leader_domain.mask(grid)[1:-1]
    moi = [d.mask(grid)[1:-1] for d in geom.follower_domains]
    mod = [d.mask(grid)[1:-1] for d in geom.observation_domains]

    A = sp.lil_matrix((N, N))
    sys = DenseSystem(grid=grid, matrix=None, lu=None, nx=nx, nt=nt)

    for n in range(1, nt + 1):
        t = grid.t_mid[n - 1]
        aa = model.a(0.0, t, xm)  # midpoint diffusion values (Nx+1,)
        for j in range(1, nx + 1):
            am, ap = aa[j - 1] / dx ** 2, aa[j] / dx ** 2
            ry = sys.index_y(n, j)
            # state equation on slab n
            A[ry, ry] += 1.0 / dt + am + ap + c0
            if j > 1:
                A[ry, sys.index_y(n, j - 1)] += -am - b0 / (2 * dx)
            if j < nx:
                A[ry, sys.index_y(n, j + 1)] += -ap + b0 / (2 * dx)
            if n > 1:
                A[ry, sys.index_y(n - 1, j)] += -1.0 / dt
            for i in range(2):
                if moi[i][j - 1]:
                    A[ry, sys.index_p(i, n - 1, j)] += 1.0 / objectives[i].mu
            # adjoint equations on slab n (unknown p^{i,n-1})
            for i in range(2):
                rp = sys.index_p(i, n - 1, j)
                A[rp, rp] += 1.0 / dt + am + ap + c0
                # conservative transpose convection: -(b p)_x
                if j > 1:
                    A[rp, sys.index_p(i, n - 1, j - 1)] += -am + b0 / (2 * dx)
                if j < nx:
                    A[rp, sys.index_p(i, n - 1, j + 1)] += -ap - b0 / (2 * dx)
                if n < nt:
                    A[rp, sys.index_p(i, n, j)] += -1.0 / dt
                if mod[i][j - 1]:
                    A[rp, sys.index_y(n, j)] += -objectives[i].alpha

    dense = A.toarray()
    try:
        lu = scipy.linalg.lu_factor(dense)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-14:
        raise SingularMatrix("near-singular coupled system (coupling too strong?)")
    sys.matrix = dense
    sys.lu = lu
    return sys


def dense_solve_optimality(model: CoefficientModel, grid: SpaceTimeGrid,
                           geom: ControlGeometry,
                           objectives: tuple[FollowerObjective, FollowerObjective],
                           f: Field, y0: np.ndarray | None = None,
                           sources: tuple[Field, Field, Field] | None = None,
                           system: DenseSystem | None = None,
                           ) -> tuple[Field, Field, Field]:
    """Direct solve of the coupled linear optimality system; reference for
    the follower fixed point."""
    sys = system or assemble_dense_system(model, grid, geom, objectives)
    nx, nt = sys.nx, sys.nt
    dt = grid.dt
    if y0 is None:
        y0 = np.zeros(grid.Nx + 2)
    mo = geom.leader_domain.mask(grid)[1:-1]
    mod = [d.mask(grid)[1:-1] for d in geom.observation_domains]
    G = sources[0] if sources else None
    G_i = (sources[1], sources[2]) if sources else (None, None)

    rhs = np.zeros(3 * nx * nt)
    for n in range(1, nt + 1):
        base = (n - 1) * nx
        rhs[base:base + nx] = f.values[n, 1:-1] * mo
        if G is not None:
            rhs[base:base + nx] += G.values[n, 1:-1]
        if n == 1:
            rhs[base:base + nx] += y0[1:-1] / dt
        for i in range(2):
            basep = nt * nx * (1 + i) + (n - 1) * nx
            rhs[basep:basep + nx] = -objectives[i].alpha \
                * objectives[i].target.values[n, 1:-1] * mod[i]
            if G_i[i] is not None:
                rhs[basep:basep + nx] += G_i[i].values[n, 1:-1]

    sol = scipy.linalg.lu_solve(sys.lu, rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularMatrix("dense solve produced non-finite values")

    y = Field.zeros(grid, "node")
    y.values[0] = y0
    p = [Field.zeros(grid, "node"), Field.zeros(grid, "node")]
    for n in range(1, nt + 1):
        y.values[n, 1:-1] = sol[(n - 1) * nx: n * nx]
    for i in range(2):
        for n in range(0, nt):
            off = nt * nx * (1 + i) + n * nx
            p[i].values[n, 1:-1] = sol[off: off + nx]
    return y, p[0], p[1]


def fd_gradient_oracle(functional, point: np.ndarray, direction: np.ndarray,
                       h: float) -> tuple[float, float]:
    """Directional derivative by central differences with Richardson check.

    Evaluates at steps h, h/2, h/4; returns (extrapolated estimate, error
    bar).  Raises NoisyEstimate when the level differences do not shrink at
    anything like the expected O(h^2) rate.
    """
    def central(hh):
        return (functional(point + hh * direction) - functional(point - hh * direction)) / (2 * hh)

    d1, d2, d3 = central(h), central(h / 2), central(h / 4)
    gap12, gap23 = d1 - d2, d2 - d3
    floor = 1e-12 * max(1.0, abs(d3))
    if abs(gap23) > floor and abs(gap12) > floor:
        ratio = abs(gap12) / abs(gap23)
        if not (0.4 < ratio < 40.0):
            raise NoisyEstimate(
                f"level differences {gap12:.3e} -> {gap23:.3e} violate the O(h^2) decay")
    estimate = (4.0 * d3 - d2) / 3.0
    return estimate, abs(d3 - d2) / 3.0
