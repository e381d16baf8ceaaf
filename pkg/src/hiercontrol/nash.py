"""Follower game: fixed-point solve, cost evaluation, stationarity check.

Given the leader's control, the two followers' best responses satisfy
v^i = -(1/mu_i) p^i on their control sets, with p^i the adjoint of the state
equation sourced by the tracking misfit.  A block Gauss-Seidel sweep
(state forward, both adjoints backward, control update with relaxation)
contracts when mu_i dominates alpha_i.

The same machinery solves the transposed coupled system (terminal-valued
phi, forward gamma^i), which backs the observability sampler and the
penalized-HUM gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientModel
from .fields import Field, pair_slabs, pair_control_adjoint
from .geometry import ControlGeometry
from .grid import SpaceTimeGrid
from .objectives import FollowerObjective
from .operators import LinearizedOperator, solve_adjoint_backward, solve_linearized_forward
from .semilinear import solve_forward_semilinear


class FixedPointDiverged(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass
class NashSolution:
    y: Field
    p1: Field
    p2: Field
    v1: Field
    v2: Field
    iterations: int
    residual: float
    j_values: tuple[float, float]
    history: list[float] = field(default_factory=list)

    @property
    def adjoints(self):
        return (self.p1, self.p2)

    @property
    def controls(self):
        return (self.v1, self.v2)


def evaluate_functional(i: int, y: Field, v_i: Field, objective: FollowerObjective,
                        geom: ControlGeometry) -> float:
    """J_i = (alpha/2)||y - target||^2 on obs region + (mu/2)||v||^2 on control region."""
    g = y.grid
    mask_d = geom.observation_domains[i].mask(g)
    mask_c = geom.follower_domains[i].mask(g)
    diff = Field(g, y.values - objective.target.values, "node")
    track = pair_slabs(diff, diff, mask_d)
    penal = pair_slabs(v_i, v_i, mask_c)
    return 0.5 * objective.alpha * track + 0.5 * objective.mu * penal


def _state_source(f, v1, v2, geom, grid, extra=None) -> Field:
    s = Field.zeros(grid, "slab")
    s.values[1:] = (f.values[1:] * geom.leader_domain.mask(grid)[None, :]
                    + v1.values[1:] * geom.follower_domains[0].mask(grid)[None, :]
                    + v2.values[1:] * geom.follower_domains[1].mask(grid)[None, :])
    if extra is not None:
        s.values[1:] += extra.values[1:]
    return s


def _adjoint_source(y: Field, objective: FollowerObjective, mask_d, extra=None) -> Field:
    g = y.grid
    s = Field.zeros(g, "slab")
    s.values[1:] = objective.alpha * (y.values[1:] - objective.target.values[1:]) * mask_d[None, :]
    if extra is not None:
        s.values[1:] += extra.values[1:]
    return s


def solve_nash_fixed_point(model: CoefficientModel, grid: SpaceTimeGrid,
                           geom: ControlGeometry,
                           objectives: tuple[FollowerObjective, FollowerObjective],
                           f: Field, mode: str = "linear", *,
                           y0: np.ndarray | None = None,
                           sources: tuple[Field, Field, Field] | None = None,
                           background: Field | None = None,
                           tol: float = 1e-11, max_sweeps: int = 500,
                           theta: float = 1.0, scheme: str = "centered",
                           v_init: tuple[Field, Field] | None = None,
                           step_tol: float = 1e-11) -> NashSolution:
    """Block Gauss-Seidel for the coupled optimality system under a fixed leader.

    mode "linear" freezes the operators at the zero state (or at the
    background trajectory when one is given); mode "nonlinear" re-solves the
    full semilinear state each sweep and freezes the adjoint coefficients at
    the current state.  ``sources`` are optional (G, G1, G2) slab fields.

    Relaxation theta halves (floor 0.1) when the update norm grows twice in
    a row.  Raises ``FixedPointDiverged`` when the update norm explodes or
    the sweep budget is exhausted.
    """
    g = grid
    if y0 is None:
        y0 = np.zeros(g.Nx + 2)
    if mode not in ("linear", "nonlinear"):
        raise ValueError(f"mode must be 'linear' or 'nonlinear', got {mode!r}")
    G = sources[0] if sources else None
    G_i = (sources[1], sources[2]) if sources else (None, None)
    masks_Oi = [d.mask(g) for d in geom.follower_domains]
    masks_Od = [d.mask(g) for d in geom.observation_domains]

    if mode == "linear":
        if background is None:
            op0 = LinearizedOperator.at_zero_state(model, g, scheme)
        else:
            op0 = LinearizedOperator.at_trajectory(model, g, background, scheme)

    v = (v_init[0].copy(), v_init[1].copy()) if v_init else (Field.zeros(g, "slab"),
                                                             Field.zeros(g, "slab"))
    history: list[float] = []
    growth_streak = 0
    th = theta
    y = p = None
    for sweep in range(1, max_sweeps + 1):
        src = _state_source(f, v[0], v[1], geom, g, extra=G)
        if mode == "linear":
            y = solve_linearized_forward(op0, y0, src)
            op_adj = op0
        else:
            y = solve_forward_semilinear(model, g, y0, src, background, tol=step_tol)
            from .semilinear import SemilinearOperator
            op_adj = SemilinearOperator(model, g, background).jacobian_operator(y, scheme)
        p = tuple(
            solve_adjoint_backward(op_adj, np.zeros(g.Nx + 2),
                                   _adjoint_source(y, objectives[i], masks_Od[i], G_i[i]))
            for i in range(2)
        )
        v_new = []
        for i in range(2):
            vn = Field.zeros(g, "slab")
            vn.values[1:] = -(1.0 / objectives[i].mu) * p[i].values[:-1] * masks_Oi[i][None, :]
            v_new.append(vn)
        upd = np.sqrt(sum(pair_slabs(Field(g, vn.values - vo.values, "slab"),
                                     Field(g, vn.values - vo.values, "slab"))
                          for vn, vo in zip(v_new, v)))
        ref = np.sqrt(sum(pair_slabs(vn, vn) for vn in v_new)) + 1e-30
        rel = upd / ref
        history.append(rel)
        if not np.isfinite(rel) or (len(history) > 3 and rel > 1e6 * max(history[0], 1e-16)):
            raise FixedPointDiverged(
                f"follower fixed point diverged at sweep {sweep} (relative update {rel:.3e})",
                history)
        if rel <= tol:
            v = tuple(v_new)
            break
        if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
            growth_streak += 1
            th = max(0.1, th / 2.0)
        for i in range(2):
            v[i].values[1:] = (1.0 - th) * v[i].values[1:] + th * v_new[i].values[1:]
    else:
        raise FixedPointDiverged(
            f"follower fixed point did not reach {tol:.1e} in {max_sweeps} sweeps "
            f"(last update {history[-1]:.3e})", history)

    j_vals = tuple(evaluate_functional(i, y, v[i], objectives[i], geom) for i in range(2))
    return NashSolution(y=y, p1=p[0], p2=p[1], v1=v[0], v2=v[1],
                        iterations=len(history), residual=history[-1],
                        j_values=j_vals, history=history)


def solve_adjoint_nash_system(model: CoefficientModel, grid: SpaceTimeGrid,
                              geom: ControlGeometry,
                              objectives: tuple[FollowerObjective, FollowerObjective],
                              phi_T: np.ndarray, *,
                              sources: tuple[Field, Field, Field] | None = None,
                              background: Field | None = None,
                              tol: float = 1e-12, max_sweeps: int = 500,
                              scheme: str = "centered") -> tuple[Field, Field, Field]:
    """Transposed coupled system: phi backward from phi_T, gamma^i forward from 0.

    phi's equation is sourced by alpha_i gamma^i on the observation regions
    (plus an optional source); gamma^i's by -(1/mu_i) phi on the control
    regions.  Returns (phi, gamma1, gamma2).
    """
    g = grid
    if background is None:
        op0 = LinearizedOperator.at_zero_state(model, g, scheme)
    else:
        op0 = LinearizedOperator.at_trajectory(model, g, background, scheme)
    GG = sources[0] if sources else None
    GG_i = (sources[1], sources[2]) if sources else (None, None)
    masks_Oi = [d.mask(g) for d in geom.follower_domains]
    masks_Od = [d.mask(g) for d in geom.observation_domains]

    gam = (Field.zeros(g, "slab"), Field.zeros(g, "slab"))  # slab views of gamma
    gam_nodes = [Field.zeros(g, "node"), Field.zeros(g, "node")]
    phi = None
    last = np.inf
    for sweep in range(1, max_sweeps + 1):
        src = Field.zeros(g, "slab")
        src.values[1:] = sum(objectives[i].alpha * gam_nodes[i].values[1:] * masks_Od[i][None, :]
                             for i in range(2))
        if GG is not None:
            src.values[1:] += GG.values[1:]
        phi = solve_adjoint_backward(op0, phi_T, src)
        new_nodes = []
        for i in range(2):
            gsrc = Field.zeros(g, "slab")
            gsrc.values[1:] = -(1.0 / objectives[i].mu) * phi.values[:-1] * masks_Oi[i][None, :]
            if GG_i[i] is not None:
                gsrc.values[1:] += GG_i[i].values[1:]
            new_nodes.append(solve_linearized_forward(op0, np.zeros(g.Nx + 2), gsrc))
        upd = max(float(np.max(np.abs(new_nodes[i].values - gam_nodes[i].values)))
                  for i in range(2))
        ref = max(1e-30, max(float(np.max(np.abs(nn.values))) for nn in new_nodes))
        gam_nodes = new_nodes
        rel = upd / ref
        if rel <= tol:
            break
        if not np.isfinite(rel) or rel > 1e6 and sweep > 5:
            raise FixedPointDiverged(f"adjoint system fixed point diverged (update {rel:.3e})", [])
        last = rel
    else:
        raise FixedPointDiverged(
            f"adjoint system did not reach {tol:.1e} in {max_sweeps} sweeps", [])
    return phi, gam_nodes[0], gam_nodes[1]


@dataclass
class GradientReport:
    directional: list[float]
    normalized: list[float]
    richardson_gap: list[float]
    max_normalized: float


def verify_quasi_equilibrium(model: CoefficientModel, grid: SpaceTimeGrid,
                             geom: ControlGeometry,
                             objectives: tuple[FollowerObjective, FollowerObjective],
                             f: Field, sol: NashSolution, n_directions: int = 20,
                             seed: int = 0, mode: str = "linear",
                             h_scale: float = 1e-5, step_tol: float = 1e-12,
                             background: Field | None = None) -> GradientReport:
    """Central-difference directional derivatives of J_i through full re-solves.

    For random unit directions supported on each follower's control region,
    estimates J_i'(v)(w) with steps h and h/2 (Richardson gap reported) and
    normalizes by the direction norm times max(1, J_i).
    """
    g = grid
    rng = np.random.default_rng(seed)
    report = GradientReport([], [], [], 0.0)

    def j_at(i, v1v, v2v):
        src = _state_source(f, v1v, v2v, geom, g)
        if mode == "linear":
            op0 = (LinearizedOperator.at_zero_state(model, g) if background is None
                   else LinearizedOperator.at_trajectory(model, g, background))
            y = solve_linearized_forward(op0, sol.y.values[0], src)
        else:
            y = solve_forward_semilinear(model, g, sol.y.values[0], src, background,
                                         tol=step_tol)
        vi = (v1v, v2v)[i]
        return evaluate_functional(i, y, vi, objectives[i], geom)

    vnorm_scale = max(1.0, np.sqrt(sum(pair_slabs(v, v) for v in sol.controls)))
    for k in range(n_directions):
        i = k % 2
        mask = geom.follower_domains[i].mask(g)
        w = Field.zeros(g, "slab")
        w.values[1:] = rng.standard_normal((g.Nt, g.Nx + 2)) * mask[None, :]
        wn = np.sqrt(pair_slabs(w, w))
        if wn == 0.0:
            continue
        w.values[1:] /= wn
        h = h_scale * vnorm_scale

        def central(hh):
            vp = [sol.v1.copy(), sol.v2.copy()]
            vm = [sol.v1.copy(), sol.v2.copy()]
            vp[i].values[1:] += hh * w.values[1:]
            vm[i].values[1:] -= hh * w.values[1:]
            return (j_at(i, vp[0], vp[1]) - j_at(i, vm[0], vm[1])) / (2 * hh)

        d1 = central(h)
        d2 = central(h / 2)
        richardson = (4 * d2 - d1) / 3.0
        jval = sol.j_values[i]
        denom = max(1.0, abs(jval))
        report.directional.append(richardson)
        report.normalized.append(abs(richardson) / denom)
        report.richardson_gap.append(abs(d2 - d1))
    report.max_normalized = max(report.normalized) if report.normalized else 0.0
    return report


def divergence_threshold(model: CoefficientModel, grid: SpaceTimeGrid,
                         geom: ControlGeometry, base_alpha: float,
                         target_mu: float, f: Field, y0: np.ndarray,
                         ratios: np.ndarray, max_sweeps: int = 200) -> float:
    """Smallest sampled alpha/mu coupling ratio at which the fixed point fails.

    Empirical stand-in for the non-constructive mu threshold: sweeps the
    coupling ratio upward and reports the first failure (inf if all pass).
    """
    from .objectives import FollowerObjective, make_target
    for r in np.sort(ratios):
        alpha = r * target_mu
        objs = tuple(
            FollowerObjective(alpha=alpha, mu=target_mu,
                              target=make_target(grid, geom.observation_domains[i]))
            for i in range(2)
        )
        try:
            solve_nash_fixed_point(model, grid, geom, objs, f, "linear", y0=y0,
                                   max_sweeps=max_sweeps)
        except FixedPointDiverged:
            return float(r)
    return float("inf")
