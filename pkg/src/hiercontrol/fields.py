"""Space-time grid functions, discrete norms and duality pairings.

One array shape serves two samplings.  A ``Field`` stores values of shape
(Nt+1, Nx+2); the row semantics depend on the role:

* node fields (states, adjoints): row n is the slice at time t_n;
* slab fields (controls, sources, targets): row n is the value on the step
  slab (t_{n-1}, t_n), i.e. at the midtime t_{n-1/2}; row 0 is unused and
  kept at zero.

The implicit-Euler adjoint pairs a slab source at row n with the adjoint's
node value at row n-1 and a state's node value at row n.  Those two pairings
(`pair_control_adjoint`, `pair_state_source`) are the only inner products the
solvers use, which is what makes every duality identity exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SpaceTimeGrid


def _space_weights(grid: SpaceTimeGrid) -> np.ndarray:
    # composite trapezoid; boundary rows vanish for Dirichlet fields anyway
    w = np.full(grid.Nx + 2, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    return w


@dataclass
class Field:
    """A grid function on the space-time cylinder."""

    grid: SpaceTimeGrid
    values: np.ndarray
    kind: str = "node"  # "node" or "slab"

    def __post_init__(self):
        expected = (self.grid.Nt + 1, self.grid.Nx + 2)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != {expected}")
        if self.kind not in ("node", "slab"):
            raise ValueError(f"kind must be 'node' or 'slab', got {self.kind!r}")

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, kind: str = "node") -> "Field":
        return cls(grid, np.zeros((grid.Nt + 1, grid.Nx + 2)), kind)

    @classmethod
    def from_profile(cls, grid: SpaceTimeGrid, fn, kind: str = "slab") -> "Field":
        """Sample fn(x, t) on the natural rows for the given kind."""
        out = cls.zeros(grid, kind)
        x = grid.x
        if kind == "slab":
            for n, tm in enumerate(grid.t_mid, start=1):
                out.values[n] = fn(x, tm)
        else:
            for n, tn in enumerate(grid.t):
                out.values[n] = fn(x, tn)
        return out

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.kind)

    # -- slicing helpers ---------------------------------------------------
    def times(self) -> np.ndarray:
        return self.grid.t_mid if self.kind == "slab" else self.grid.t

    def rows(self) -> np.ndarray:
        """The meaningful rows: 1..Nt for slab fields, 0..Nt for node fields."""
        return self.values[1:] if self.kind == "slab" else self.values

    # -- norms ---------------------------------------------------------------
    def space_norm(self, n: int) -> float:
        """Discrete L2(I) norm of row n."""
        w = _space_weights(self.grid)
        return float(np.sqrt(np.sum(w * self.values[n] ** 2)))

    def spacetime_norm(self, mask: np.ndarray | None = None) -> float:
        """Discrete L2(Q) norm: slab rule in time (rows 1..Nt), trapezoid in space."""
        w = _space_weights(self.grid)
        if mask is not None:
            w = w * mask
        sq = np.sum(self.values[1:] ** 2 * w[None, :]) * self.grid.dt
        return float(np.sqrt(sq))

    def h1_norm(self, n: int) -> float:
        g = np.diff(self.values[n]) / self.grid.dx
        return float(np.sqrt(self.space_norm(n) ** 2 + self.grid.dx * np.sum(g ** 2)))

    def h3_norm(self, n: int) -> float:
        """H3 proxy: L2 plus first and third difference-quotient energies."""
        v = self.values[n]
        dx = self.grid.dx
        g1 = np.diff(v) / dx
        g3 = np.diff(v, 3) / dx ** 3
        return float(np.sqrt(self.space_norm(n) ** 2 + dx * np.sum(g1 ** 2) + dx * np.sum(g3 ** 2)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def time_derivative(self) -> "Field":
        """Backward difference quotients on slabs: row n = (v^n - v^{n-1})/dt."""
        out = Field.zeros(self.grid, "slab")
        out.values[1:] = np.diff(self.values, axis=0) / self.grid.dt
        return out


# -- inner products --------------------------------------------------------

def space_inner(grid: SpaceTimeGrid, u: np.ndarray, v: np.ndarray) -> float:
    w = _space_weights(grid)
    return float(np.sum(w * u * v))


def pair_control_adjoint(control: Field, adjoint: Field, mask: np.ndarray | None = None) -> float:
    """<< control, adjoint >> with adjoint sampled at slab starts.

    Discrete counterpart of the integral of control*adjoint over the cylinder:
    dt * sum_n <control row n, adjoint row n-1>_x.
    """
    g = control.grid
    w = _space_weights(g)
    if mask is not None:
        w = w * mask
    return float(g.dt * np.sum(control.values[1:] * adjoint.values[:-1] * w[None, :]))


def pair_state_source(state: Field, source: Field, mask: np.ndarray | None = None) -> float:
    """<< state, source >> with the state sampled at slab ends (row n)."""
    g = state.grid
    w = _space_weights(g)
    if mask is not None:
        w = w * mask
    return float(g.dt * np.sum(state.values[1:] * source.values[1:] * w[None, :]))


def pair_slabs(a: Field, b: Field, mask: np.ndarray | None = None) -> float:
    """<< a, b >> with both fields read on rows 1..Nt (slab rule)."""
    g = a.grid
    w = _space_weights(g)
    if mask is not None:
        w = w * mask
    return float(g.dt * np.sum(a.values[1:] * b.values[1:] * w[None, :]))


def weighted_sq(field_rows: np.ndarray, grid: SpaceTimeGrid, tweight: np.ndarray,
                mask: np.ndarray | None = None) -> float:
    """dt * sum_n tweight[n-1] * ||rows[n-1]||_x^2 over rows (Nt, Nx+2)."""
    w = _space_weights(grid)
    if mask is not None:
        w = w * mask
    return float(grid.dt * np.sum(tweight[:, None] * field_rows ** 2 * w[None, :]))


# -- CSV i/o ----------------------------------------------------------------

def field_to_csv(f: Field, path, name: str = "value"):
    ts = f.times()
    rows_vals = f.rows()
    with open(path, "w", newline="") as fh:
        fh.write(f"x,t,{name}\n")
        x = f.grid.x
        for irow, t in enumerate(ts):
            for j, xj in enumerate(x):
                fh.write(f"{xj:.17g},{t:.17g},{rows_vals[irow, j]:.17g}\n")


def field_from_csv(grid: SpaceTimeGrid, path, kind: str = "slab") -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    f = Field.zeros(grid, kind)
    nrows = grid.Nt if kind == "slab" else grid.Nt + 1
    expected = nrows * (grid.Nx + 2)
    if data.shape[0] != expected:
        raise ValueError(f"{path}: expected {expected} rows for a {kind} field, got {data.shape[0]}")
    vals = data[:, 2].reshape(nrows, grid.Nx + 2)
    if kind == "slab":
        f.values[1:] = vals
    else:
        f.values[:] = vals
    return f
