"""Residuals of the coupled optimality system, slab by slab.

The residual fields use exactly the same discrete operators and sampling
conventions as the solvers (state sampled at slab ends, adjoints at slab
starts), so a converged solver output has residuals at the solver tolerance.
Component meaning: state equation, one adjoint equation per follower, and
the initial slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientModel
from .fields import Field
from .geometry import ControlGeometry
from .grid import SpaceTimeGrid
from .objectives import FollowerObjective
from .operators import LinearizedOperator
from .semilinear import SemilinearOperator


@dataclass
class OptimalityResidual:
    state: Field            # slab field
    adjoint: tuple[Field, Field]
    initial: np.ndarray     # y(0) slice

    def max_norm(self) -> float:
        return max(self.state.sup_norm(), self.adjoint[0].sup_norm(),
                   self.adjoint[1].sup_norm())


def apply_optimality_residual(model: CoefficientModel, grid: SpaceTimeGrid,
                              state: tuple[Field, Field, Field, Field],
                              objectives: tuple[FollowerObjective, FollowerObjective],
                              geom: ControlGeometry, *,
                              background: Field | None = None,
                              linearized: LinearizedOperator | None = None,
                              scheme: str = "centered") -> OptimalityResidual:
    """Residuals of the coupled system at (y, p1, p2, f).

    With ``linearized`` given, the spatial operators are that frozen linear
    pair (the linearization at zero / at the background trajectory);
    otherwise the full semilinear operator and its exact Jacobian at y are
    used.  Targets enter the adjoint residuals, so a solution of the
    optimality system has residual ~ 0.
    """
    y, p1, p2, f = state
    g = grid
    dt = g.dt
    mask_O = geom.leader_domain.mask(g)
    masks_Oi = [d.mask(g) for d in geom.follower_domains]
    masks_Od = [d.mask(g) for d in geom.observation_domains]

    if linearized is None:
        semiop = SemilinearOperator(model, g, background)
        jac = semiop.jacobian_operator(y, scheme)
    else:
        semiop = None
        jac = linearized

    r_state = Field.zeros(g, "slab")
    r_adj = (Field.zeros(g, "slab"), Field.zeros(g, "slab"))
    mus = [obj.mu for obj in objectives]
    alphas = [obj.alpha for obj in objectives]
    targets = [obj.target for obj in objectives]

    for n in range(1, g.Nt + 1):
        interior = slice(1, -1)
        dydt = (y.values[n, interior] - y.values[n - 1, interior]) / dt
        if semiop is not None:
            spatial = semiop.apply(n, y.values[n])
        else:
            spatial = jac.apply(n, y.values[n, interior])
        coupling = (f.values[n, interior] * mask_O[interior]
                    - sum((1.0 / mus[i]) * p.values[n - 1, interior] * masks_Oi[i][interior]
                          for i, p in enumerate((p1, p2))))
        r_state.values[n, interior] = dydt + spatial - coupling

        for i, p in enumerate((p1, p2)):
            dpdt = (p.values[n - 1, interior] - p.values[n, interior]) / dt
            spatial_t = jac.apply_transpose(n, p.values[n - 1, interior])
            track = alphas[i] * (y.values[n, interior] - targets[i].values[n, interior]) \
                * masks_Od[i][interior]
            r_adj[i].values[n, interior] = dpdt + spatial_t - track

    return OptimalityResidual(state=r_state, adjoint=r_adj, initial=y.values[0].copy())


def nonlinear_remainder(model: CoefficientModel, grid: SpaceTimeGrid,
                        state: tuple[Field, Field, Field],
                        background: Field | None = None,
                        scheme: str = "centered") -> tuple[Field, Field, Field]:
    """Spatial-operator mismatch between the semilinear system and its
    linearization at the background (at zero when none): the Picard source.

    Returns slab fields (N_state, N_adj1, N_adj2); time-derivative, control
    and coupling terms cancel in the difference, so only the spatial applies
    are formed.
    """
    y, p1, p2 = state
    g = grid
    semiop = SemilinearOperator(model, g, background)
    jac = semiop.jacobian_operator(y, scheme)
    base = (LinearizedOperator.at_zero_state(model, g, scheme) if background is None
            else LinearizedOperator.at_trajectory(model, g, background, scheme))

    n_state = Field.zeros(g, "slab")
    n_adj = (Field.zeros(g, "slab"), Field.zeros(g, "slab"))
    interior = slice(1, -1)
    for n in range(1, g.Nt + 1):
        n_state.values[n, interior] = semiop.apply(n, y.values[n]) \
            - base.apply(n, y.values[n, interior])
        for i, p in enumerate((p1, p2)):
            n_adj[i].values[n, interior] = jac.apply_transpose(n, p.values[n - 1, interior]) \
                - base.apply_transpose(n, p.values[n - 1, interior])
    return n_state, n_adj[0], n_adj[1]
