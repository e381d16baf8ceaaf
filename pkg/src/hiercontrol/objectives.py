"""Follower cost functionals: tracking weight, control penalty, target."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Field
from .grid import Interval, SpaceTimeGrid


@dataclass
class FollowerObjective:
    """Cost (alpha/2)*||y - target||^2 on the observation set plus
    (mu/2)*||v||^2 on the control set."""

    alpha: float
    mu: float
    target: Field  # slab field, supported on the observation region

    def __post_init__(self):
        if self.alpha <= 0 or self.mu <= 0:
            raise ValueError(f"alpha and mu must be positive, got {self.alpha}, {self.mu}")
        if self.target.kind != "slab":
            raise ValueError("target must be a slab field")


def make_target(grid: SpaceTimeGrid, region: Interval, kind: str = "zero",
                amplitude: float = 0.0) -> Field:
    """Build a target supported (masked) on the observation region.

    kind: "zero"; "constant" (amplitude on the region); "bump" (space bump
    on the region times 4t(T-t)/T^2, scaled by amplitude).
    """
    f = Field.zeros(grid, "slab")
    mask = region.mask(grid)
    if kind == "zero":
        pass
    elif kind == "constant":
        f.values[1:] = amplitude * mask[None, :]
    elif kind == "bump":
        x = grid.x
        c, r = region.midpoint, max(region.length / 2.0, grid.dx)
        prof = np.clip(1.0 - ((x - c) / r) ** 2, 0.0, None) * mask
        tm = grid.t_mid
        tprof = 4.0 * tm * (grid.T - tm) / grid.T ** 2
        f.values[1:] = amplitude * tprof[:, None] * prof[None, :]
    else:
        raise ValueError(f"unknown target kind {kind!r}")
    return f
