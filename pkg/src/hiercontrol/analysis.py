"""Empirical checks of the inequality machinery.

Everything here is diagnostic: weighted functionals of actual solutions,
ratio distributions for the observability inequality, and the second-order
directional form that separates first-order stationary points from genuine
equilibria.  Weighted quadratures use the tempered families (see weights),
with the scale factors echoed in every report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientModel
from .fields import Field, pair_control_adjoint, pair_slabs, weighted_sq
from .geometry import SAME_OBSERVATION, ControlGeometry
from .grid import SpaceTimeGrid
from .leader import NullControlResult
from .nash import NashSolution, solve_adjoint_nash_system, solve_nash_fixed_point
from .objectives import FollowerObjective
from .operators import (LinearizedOperator, centered_gradient, midpoint_gradient,
                        solve_adjoint_backward, solve_linearized_forward)
from .semilinear import SemilinearOperator, solve_forward_semilinear
from .weights import CarlemanWeights, TemperedWeights, ell


class DegenerateSample(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# pointwise-weight functional with difference-quotient derivatives
# ---------------------------------------------------------------------------

@dataclass
class CarlemanFunctionalValue:
    second_order: float   # weighted |psi_t|^2 + |psi_xx|^2 mass
    gradient: float       # weighted |psi_x|^2 mass
    zero_order: float     # weighted |psi|^2 mass
    total: float
    kappa: float


def carleman_functional(psi: Field, w: CarlemanWeights, m: int = 0,
                        variant: str = "plain", cap: float = 23.0,
                        ref_fraction: float = 1.0 / 64.0) -> CarlemanFunctionalValue:
    """The three-part weighted functional of a Dirichlet field.

    second-order part: s^{m-4} lam^{m-3} * integral of W xi^{m-4} (psi_t^2 + psi_xx^2)
    gradient part:     s^{m-2} lam^{m-1} * integral of W xi^{m-2} psi_x^2
    zero-order part:   s^m     lam^{m+1} * integral of W xi^m     psi^2

    W is the untruncated exponential weight with tempered exponent (scale
    reported as kappa).  ``variant`` picks the plain family (shared
    observation case) or the family of profile i ("indexed_1"/"indexed_2").
    """
    g = psi.grid
    if variant == "plain":
        idx = 0
        sigma, xi = w.sigma_i[idx], w.xi_i[idx]
    elif variant in ("indexed_1", "indexed_2"):
        idx = int(variant[-1]) - 1
        if idx >= len(w.sigma_i):
            raise ValueError(f"{variant} unavailable: only {len(w.sigma_i)} profile(s)")
        sigma, xi = w.sigma_i[idx], w.xi_i[idx]
    else:
        raise ValueError(f"unknown variant {variant!r}")

    s, lam, T = w.s, w.lam, g.T
    M = w.etas[idx].sup_norm
    e_top, e_bot = np.exp(4.0 * lam * M), np.exp(2.0 * lam * M)
    t_ref = T * (1.0 - ref_fraction)
    denom_ref = t_ref * (T - t_ref)
    delta_ref = (e_top - e_bot) * (1.0 / denom_ref - 4.0 / T ** 2)
    kappa = cap / (2.0 * s * delta_ref)
    sig_min = sigma.min()
    W = np.exp(-2.0 * kappa * s * (sigma - sig_min))

    dt, dx = g.dt, g.dx
    vals = psi.values
    # slab-rule samples: row n for the field, slab n-1 index into W
    v = vals[1:, :]
    psi_t = np.diff(vals, axis=0) / dt
    psi_x = np.diff(v, axis=1) / dx                       # midpoints
    psi_xx = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / dx ** 2

    W_mid = 0.5 * (W[:, 1:] + W[:, :-1])
    xi_mid = 0.5 * (xi[:, 1:] + xi[:, :-1])

    # second order: nodes (interior) for psi_xx, full rows for psi_t
    sec = dt * dx * (np.sum(W * xi ** (m - 4) * psi_t ** 2)
                     + np.sum(W[:, 1:-1] * xi[:, 1:-1] ** (m - 4) * psi_xx ** 2))
    grad = dt * dx * np.sum(W_mid * xi_mid ** (m - 2) * psi_x ** 2)
    zero = dt * dx * np.sum(W * xi ** m * v ** 2)

    sec *= s ** (m - 4) * lam ** (m - 3)
    grad *= s ** (m - 2) * lam ** (m - 1)
    zero *= s ** m * lam ** (m + 1)
    return CarlemanFunctionalValue(second_order=sec, gradient=grad, zero_order=zero,
                                   total=sec + grad + zero, kappa=kappa)


# ---------------------------------------------------------------------------
# observability ratio sampling
# ---------------------------------------------------------------------------

@dataclass
class ObservabilityReport:
    n_samples: int
    lhs: list
    rhs: list
    ratios: list
    max_ratio: float
    h_term: list
    degenerate_resamples: int
    s: float
    lam: float
    kappa: float
    seed: int


def observability_sample(model: CoefficientModel, grid: SpaceTimeGrid,
                         geom: ControlGeometry,
                         objectives: tuple[FollowerObjective, FollowerObjective],
                         w: CarlemanWeights, tw: TemperedWeights,
                         n_samples: int = 100, seed: int = 0, *,
                         scheme: str = "centered",
                         adjoint_tol: float = 1e-12) -> ObservabilityReport:
    """Ratio of the weighted adjoint mass to its observed-region mass.

    Random unit terminal data drive the coupled transposed system; for each
    sample the report records

      lhs = ||phi(0)||^2 + integral of W5 xi*^{-3} (phi^2 + gamma1^2 + gamma2^2)
      rhs = integral over the leader region of W4 xi*^4 phi^2

    (tempered exponents, zero sources) plus the combined-adjoint mass under
    the lhs weight, reported separately without an asserted bound.
    """
    g = grid
    rng = np.random.default_rng(seed)
    lhs_w, _, rhs_obs_w = tw.observability()
    mo = geom.leader_domain.mask(g)
    alphas = [o.alpha for o in objectives]

    rep = ObservabilityReport(n_samples=n_samples, lhs=[], rhs=[], ratios=[],
                              max_ratio=0.0, h_term=[], degenerate_resamples=0,
                              s=w.s, lam=w.lam, kappa=tw.kappa, seed=seed)
    while len(rep.ratios) < n_samples:
        phi_T = np.zeros(g.Nx + 2)
        phi_T[1:-1] = rng.standard_normal(g.Nx)
        nrm = np.sqrt(g.dx * np.sum(phi_T[1:-1] ** 2))
        if nrm == 0.0:
            rep.degenerate_resamples += 1
            if rep.degenerate_resamples > 10:
                raise DegenerateSample("could not draw a nonzero terminal datum")
            continue
        phi_T /= nrm

        phi, g1, g2 = solve_adjoint_nash_system(model, g, geom, objectives, phi_T,
                                                tol=adjoint_tol, scheme=scheme)
        # adjoint-type field sampled at slab starts; forward-type at slab ends
        lhs = phi.space_norm(0) ** 2
        lhs += weighted_sq(phi.values[:-1], g, lhs_w)
        lhs += weighted_sq(g1.values[1:], g, lhs_w) + weighted_sq(g2.values[1:], g, lhs_w)
        rhs = weighted_sq(phi.values[:-1], g, rhs_obs_w, mo)
        h = alphas[0] * g1.values + alphas[1] * g2.values
        h_mass = weighted_sq(h[1:], g, lhs_w)
        if rhs <= 0.0 or not np.isfinite(rhs):
            rep.degenerate_resamples += 1
            if rep.degenerate_resamples > 10:
                raise DegenerateSample("terminal data keep vanishing on the leader region")
            continue
        rep.lhs.append(lhs)
        rep.rhs.append(rhs)
        rep.ratios.append(lhs / rhs)
        rep.h_term.append(h_mass)
    rep.max_ratio = max(rep.ratios) if rep.ratios else float("nan")
    return rep


# ---------------------------------------------------------------------------
# second-derivative (equilibrium vs quasi-equilibrium) scan
# ---------------------------------------------------------------------------

@dataclass
class EquilibriumReport:
    mu_grid: list
    min_form: list            # per mu: min over directions of the quadratic form
    oracle_gap: list          # per mu: worst relative gap to the second difference
    mu_star: float | None
    per_direction: dict = field(default_factory=dict)


def second_derivative_form(model: CoefficientModel, grid: SpaceTimeGrid,
                           geom: ControlGeometry, objective: FollowerObjective,
                           sol: NashSolution, w_dir: Field, *, mode: str,
                           scheme: str = "centered") -> float:
    """Exact discrete second derivative of the first follower's cost along w.

    Solves the linearized response h (forward, Jacobian at the converged
    state), assembles the second-order adjoint source using the model's
    second partials and the converged adjoint, solves the second-order
    adjoint backward, and returns <<eta, w>> + mu ||w||^2.  In the linear
    family the coupling terms vanish and the value reduces to the exact
    quadratic expansion.
    """
    g = grid
    mask1 = geom.follower_domains[0].mask(g)
    maskd = geom.observation_domains[0].mask(g)
    if mode == "linear":
        op = LinearizedOperator.at_zero_state(model, g, scheme)
    else:
        op = SemilinearOperator(model, g).jacobian_operator(sol.y, scheme)

    src = Field.zeros(g, "slab")
    src.values[1:] = w_dir.values[1:] * mask1[None, :]
    h = solve_linearized_forward(op, np.zeros(g.Nx + 2), src)

    eta_src = Field.zeros(g, "slab")
    eta_src.values[1:] = objective.alpha * h.values[1:] * maskd[None, :]
    if mode != "linear":
        dx = g.dx
        phi = sol.p1
        for n in range(1, g.Nt + 1):
            t = g.t_mid[n - 1]
            yrow = sol.y.values[n]
            hrow = h.values[n]
            prow = phi.values[n - 1]
            gm = midpoint_gradient(yrow, dx)
            hm = midpoint_gradient(hrow, dx)
            pm = midpoint_gradient(prow, dx)
            kappa_m = model.d11a(gm, t, g.x_mid) * gm + 2.0 * model.d1a(gm, t, g.x_mid)
            flux = kappa_m * pm * hm
            t_flux = -np.diff(flux) / dx
            yv, hv, pv = yrow[1:-1], hrow[1:-1], prow[1:-1]
            gc = centered_gradient(yrow, dx)
            hc = centered_gradient(hrow, dx)
            c12 = model.d12F(yv, gc) * pv
            t_nodes = model.d11F(yv, gc) * pv * hv + c12 * hc
            prod = np.zeros(g.Nx + 2)
            prod[1:-1] = c12 * hv
            t_nodes -= (prod[2:] - prod[:-2]) / (2.0 * dx)
            prod22 = np.zeros(g.Nx + 2)
            prod22[1:-1] = model.d22F(yv, gc) * pv * hc
            t_nodes -= (prod22[2:] - prod22[:-2]) / (2.0 * dx)
            eta_src.values[n, 1:-1] -= t_flux + t_nodes
    eta = solve_adjoint_backward(op, np.zeros(g.Nx + 2), eta_src)

    quad = pair_control_adjoint(w_dir, eta, mask1)
    quad += objective.mu * pair_slabs(w_dir, w_dir, mask1)
    return float(quad)


def second_difference_oracle(model: CoefficientModel, grid: SpaceTimeGrid,
                             geom: ControlGeometry,
                             objectives: tuple[FollowerObjective, FollowerObjective],
                             f: Field, sol: NashSolution, w_dir: Field, *,
                             mode: str, step: float = 1e-4,
                             step_tol: float = 1e-13,
                             scheme: str = "centered") -> float:
    """(J1(v1 + s w) - 2 J1(v1) + J1(v1 - s w)) / s^2 through full re-solves."""
    from .nash import _state_source, evaluate_functional

    g = grid

    def j_at(shift: float) -> float:
        v1 = sol.v1.copy()
        v1.values[1:] += shift * w_dir.values[1:] * geom.follower_domains[0].mask(g)[None, :]
        srcf = _state_source(f, v1, sol.v2, geom, g)
        if mode == "linear":
            op = LinearizedOperator.at_zero_state(model, g, scheme)
            y = solve_linearized_forward(op, sol.y.values[0], srcf)
        else:
            y = solve_forward_semilinear(model, g, sol.y.values[0], srcf, tol=step_tol)
        return evaluate_functional(0, y, v1, objectives[0], geom)

    j0 = j_at(0.0)
    return (j_at(step) - 2.0 * j0 + j_at(-step)) / step ** 2


def equilibrium_second_derivative(model: CoefficientModel, grid: SpaceTimeGrid,
                                  geom: ControlGeometry,
                                  base_objectives: tuple[FollowerObjective, FollowerObjective],
                                  f: Field, mu_grid, n_directions: int = 20,
                                  seed: int = 0, *, mode: str = "nonlinear",
                                  oracle_step: float = 1e-4,
                                  nash_opts: dict | None = None,
                                  with_oracle: bool = True) -> EquilibriumReport:
    """Scan the penalty weight: re-solve the equilibrium per mu and test the
    positivity of the second-derivative form over random unit directions.

    mu_star is the smallest scanned mu with a positive minimum.  The oracle
    column (second central differences of the cost) certifies the assembled
    form where computed.
    """
    g = grid
    nash_opts = dict(nash_opts or {})
    mask1 = geom.follower_domains[0].mask(g)
    rep = EquilibriumReport(mu_grid=list(mu_grid), min_form=[], oracle_gap=[],
                            mu_star=None)
    rng0 = np.random.default_rng(seed)
    dirs = []
    for _ in range(n_directions):
        wd = Field.zeros(g, "slab")
        wd.values[1:] = rng0.standard_normal((g.Nt, g.Nx + 2)) * mask1[None, :]
        nrm = np.sqrt(pair_slabs(wd, wd))
        wd.values[1:] /= nrm
        dirs.append(wd)

    for mu in rep.mu_grid:
        objs = tuple(FollowerObjective(alpha=o.alpha, mu=mu, target=o.target)
                     for o in base_objectives)
        sol = solve_nash_fixed_point(model, g, geom, objs, f, mode, **nash_opts)
        forms = []
        gaps = []
        for k, wd in enumerate(dirs):
            val = second_derivative_form(model, g, geom, objs[0], sol, wd, mode=mode)
            forms.append(val)
            if with_oracle:
                ora = second_difference_oracle(model, g, geom, objs, f, sol, wd,
                                               mode=mode, step=oracle_step)
                gaps.append(abs(val - ora) / max(abs(ora), 1e-30))
        rep.min_form.append(min(forms))
        rep.oracle_gap.append(max(gaps) if gaps else float("nan"))
        rep.per_direction[mu] = forms
    for mu, mn in zip(rep.mu_grid, rep.min_form):
        if mn > 0:
            rep.mu_star = mu
            break
    return rep


# ---------------------------------------------------------------------------
# weighted a-priori estimate diagnostics
# ---------------------------------------------------------------------------

@dataclass
class EstimateDiagnostics:
    lhs_first: float
    lhs_second: float
    rhs: float
    ratio_first: float | str
    ratio_second: float | str
    pieces: dict


def weighted_estimate_report(result: NullControlResult, tw: TemperedWeights,
                             geom: ControlGeometry,
                             objectives: tuple[FollowerObjective, FollowerObjective],
                             y0: np.ndarray) -> EstimateDiagnostics:
    """Sup-in-time and integral weighted masses of the controlled solution
    against the data-side masses, reported as empirical ratios ("vacuous"
    when the data side vanishes).

    The first-level left side carries the rho2/rho3 masses of the state and
    adjoints (values, gradients, time derivatives, curvatures); the second
    level the rho4/rho5 masses of the time-differentiated state.  Difference
    quotients throughout.
    """
    nash = result.nash
    g = nash.y.grid
    dt, dx = g.dt, g.dx
    wts = {k: tw.rho_sq(k) for k in ("rho", "rho0", "rho1", "rho2", "rho3",
                                     "rho4", "rho5")}
    mo = geom.leader_domain.mask(g)

    def sup_w(rows, wt):
        """max over slabs of wt * ||row||_x^2 (rows aligned with midtimes)."""
        return float(np.max(wt[: rows.shape[0]] * dx * np.sum(rows ** 2, axis=1)))

    def int_w(rows, wt):
        return float(dt * dx * np.sum(wt[: rows.shape[0], None] * rows ** 2))

    def gradm(rows):
        return np.diff(rows, axis=1) / dx

    def secc(rows):
        return (rows[:, 2:] - 2 * rows[:, 1:-1] + rows[:, :-2]) / dx ** 2

    y_rows = nash.y.values[1:]                      # state at slab ends
    p_rows = [p.values[:-1] for p in (nash.p1, nash.p2)]   # adjoints at slab starts
    yt = np.diff(nash.y.values, axis=0) / dt        # per-slab time quotients
    pt = [np.diff(p.values, axis=0) / dt for p in (nash.p1, nash.p2)]

    pieces = {}
    lhs1 = sup_w(y_rows, wts["rho2"]) + sum(sup_w(p, wts["rho2"]) for p in p_rows)
    lhs1 += int_w(gradm(y_rows), wts["rho2"])
    lhs1 += sum(int_w(gradm(p), wts["rho2"]) for p in p_rows)
    lhs1 += sup_w(gradm(y_rows), wts["rho3"])
    lhs1 += sum(sup_w(gradm(p), wts["rho3"]) for p in p_rows)
    lhs1 += int_w(yt, wts["rho3"]) + int_w(secc(y_rows), wts["rho3"])
    lhs1 += sum(int_w(q, wts["rho3"]) for q in pt)
    lhs1 += sum(int_w(secc(p), wts["rho3"]) for p in p_rows)
    pieces["lhs_first"] = lhs1

    ytt = np.diff(yt, axis=0) / dt                  # rows 2..Nt
    lhs2 = sup_w(yt, wts["rho4"]) + int_w(gradm(yt), wts["rho4"])
    lhs2 += sup_w(gradm(yt), wts["rho5"])
    lhs2 += int_w(ytt, wts["rho5"][1:]) + int_w(secc(yt), wts["rho5"])
    lhs2 += sup_w(secc(y_rows), wts["rho5"])
    pieces["lhs_second"] = lhs2

    G, G1, G2 = result.sources if result.sources else (None, None, None)
    rhs = float(dx * np.sum(y0[1:-1] ** 2))
    for s_field in (G, G1, G2):
        if s_field is not None:
            rhs += weighted_sq(s_field.values[1:], g, wts["rho"])
    if G is not None:
        gt = np.diff(G.values[1:], axis=0) / dt
        rhs += float(dt * dx * np.sum(wts["rho3"][1:, None] * gt ** 2))
        rhs += float(dx * np.sum(gradm(G.values[1:2]) ** 2))  # first-slab gradient mass
    rhs += weighted_sq(result.f.values[1:], g, wts["rho1"], mo)
    rhs += weighted_sq(y_rows, g, wts["rho0"])
    for p in p_rows:
        rhs += weighted_sq(p, g, wts["rho0"])
    pieces["rhs"] = rhs

    def ratio(a, b):
        return "vacuous" if b == 0.0 else a / b

    return EstimateDiagnostics(lhs_first=lhs1, lhs_second=lhs2, rhs=rhs,
                               ratio_first=ratio(lhs1, rhs),
                               ratio_second=ratio(lhs2, rhs), pieces=pieces)
