"""Auxiliary spatial profiles for the exponential weights.

A profile is positive inside (0, L), vanishes at the endpoints, and has a
nonvanishing derivative outside a designated small interval omega (where its
single critical point lives).  Candidate family:

    eta(x) = N * x (L - x) * exp(-kappa (x - x*)^2),   x* = omega midpoint,

with N normalizing the sup to exactly 1 and kappa the smallest value moving
the critical point into omega (construct-and-verify; existence statements in
the literature are non-constructive, any verified candidate serves).

For two profiles tied to disjoint omegas the second is built as a monotone
reparametrization of the first inside the auxiliary inner interval: node
values agree exactly outside that interval and the sup norms are exactly
equal (same value set), while the critical point moves to the second omega.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SAME_OBSERVATION, ControlGeometry
from .grid import Interval, SpaceTimeGrid


class ConstructionFailed(RuntimeError):
    """No admissible profile found for the given omega set."""


KAPPA_MAX_SCALED = 500.0  # cap on kappa * L^2; larger would underflow exp(-kappa x^2)


@dataclass
class EtaFunction:
    values: np.ndarray       # node values, shape (Nx+2,)
    deriv: np.ndarray        # analytic derivative at nodes
    critical_mask: np.ndarray
    sup_norm: float
    x_star: float
    kappa: float
    omega: Interval
    warp: "object | None" = None

    def check(self, grid: SpaceTimeGrid) -> None:
        interior = self.values[1:-1]
        if not np.all(interior > 0):
            raise ConstructionFailed("profile not positive on interior nodes")
        if abs(self.values[0]) > 0 or abs(self.values[-1]) > 0:
            raise ConstructionFailed("profile does not vanish at the boundary")
        outside = self.omega.mask(grid) == 0.0
        if np.any(np.abs(self.deriv[outside]) == 0.0):
            raise ConstructionFailed("derivative vanishes at a node outside omega")


def _critical_point(L: float, x_star: float, kappa: float) -> float:
    """Unique root of (L - 2x) - 2 kappa (x - x*) x (L - x) in (0, L)."""

    def phi(x):
        return (L - 2.0 * x) - 2.0 * kappa * (x - x_star) * x * (L - x)

    lo, hi = 1e-12 * L, L * (1.0 - 1e-12)
    flo = phi(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = phi(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


class _BaseProfile:
    """The candidate family with analytic values and derivative."""

    def __init__(self, L: float, x_star: float, kappa: float):
        self.L, self.x_star, self.kappa = L, x_star, kappa
        x0 = _critical_point(L, x_star, kappa)
        peak = x0 * (L - x0) * np.exp(-kappa * (x0 - x_star) ** 2)
        if peak <= 0:
            raise ConstructionFailed("degenerate candidate profile")
        self.x_peak = x0
        self.norm = 1.0 / peak

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.norm * x * (self.L - x) * np.exp(-self.kappa * (x - self.x_star) ** 2)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        expf = np.exp(-self.kappa * (x - self.x_star) ** 2)
        phi = (self.L - 2.0 * x) - 2.0 * self.kappa * (x - self.x_star) * x * (self.L - x)
        return self.norm * expf * phi


class _Warp:
    """Monotone C1 reparametrization of (A, B), identity outside.

    Composition of elementary moves u -> u + d * w(u)/w(q) with
    w(u) = u^2 (1-u)^2 on the unit interval; each move shifts the tracked
    point q a step along the path and keeps the map strictly increasing.
    """

    W_PRIME_MAX = 0.1925  # max |w'| on [0, 1]

    def __init__(self, A: float, B: float, u_from: float, u_to: float):
        self.A, self.B = A, B
        span = B - A
        q0, q1 = (u_from - A) / span, (u_to - A) / span
        if not (0.0 < q0 < 1.0 and 0.0 < q1 < 1.0):
            raise ConstructionFailed("warp endpoints must lie strictly inside the inner interval")
        path_min = min(q0, q1, 1.0 - q0, 1.0 - q1)
        w_min = path_min ** 2 * (1.0 - path_min) ** 2
        steps = int(np.ceil(abs(q1 - q0) * self.W_PRIME_MAX / (0.5 * w_min))) + 1
        self.qs = np.linspace(q0, q1, steps + 1)

    @staticmethod
    def _w(u):
        return u * u * (1.0 - u) ** 2

    @staticmethod
    def _wp(u):
        return 2.0 * u * (1.0 - u) * (1.0 - 2.0 * u)

    def __call__(self, x):
        """Return (tau(x), tau'(x)) with exact identity outside (A, B)."""
        x = np.asarray(x, dtype=float)
        u = np.where((x > self.A) & (x < self.B), (x - self.A) / (self.B - self.A), np.nan)
        inside = ~np.isnan(u)
        uu = np.where(inside, u, 0.5)
        du = np.ones_like(uu)
        for k in range(len(self.qs) - 1):
            q, qn = self.qs[k], self.qs[k + 1]
            wq = self._w(q)
            delta = (qn - q) / wq
            du = du * (1.0 + delta * self._wp(uu))
            uu = uu + delta * self._w(uu)
        tau = np.where(inside, self.A + (self.B - self.A) * uu, x)
        dtau = np.where(inside, du, 1.0)
        if np.any(dtau <= 0.0):
            raise ConstructionFailed("warp lost monotonicity")
        return tau, dtau


def _verify_nodes(profile_vals, profile_deriv, omega: Interval, grid: SpaceTimeGrid) -> bool:
    outside = omega.mask(grid) == 0.0
    if np.any(np.abs(profile_deriv[outside]) == 0.0):
        return False
    if np.any(profile_vals[1:-1] <= 0.0):
        return False
    return True


def _build_single(grid: SpaceTimeGrid, omega: Interval) -> EtaFunction:
    if omega.nnodes < 1:
        raise ConstructionFailed("omega set contains no interior grid node")
    L = grid.L
    x = grid.x
    x_star = omega.midpoint
    kappa_cap = KAPPA_MAX_SCALED / L ** 2

    def passes(kappa: float):
        prof = _BaseProfile(L, x_star, kappa)
        ok = (omega.lo < prof.x_peak < omega.hi) and _verify_nodes(
            prof.value(x), prof.deriv(x), omega, grid)
        return ok, prof

    ok0, prof0 = passes(0.0)
    if ok0:
        kappa = 0.0
        prof = prof0
    else:
        k_hi = 1.0 / L ** 2
        bracket = None
        for _ in range(50):
            ok, prof = passes(k_hi)
            if ok:
                bracket = k_hi
                break
            k_hi *= 2.0
            if k_hi > kappa_cap:
                break
        if bracket is None:
            raise ConstructionFailed(
                "no admissible kappa before the underflow cap; omega too small or misplaced")
        k_lo = 0.0
        for _ in range(50):
            k_mid = 0.5 * (k_lo + bracket)
            ok, _ = passes(k_mid)
            if ok:
                bracket = k_mid
            else:
                k_lo = k_mid
        kappa = bracket
        _, prof = passes(kappa)

    vals = prof.value(x)
    vals[0] = vals[-1] = 0.0
    deriv = prof.deriv(x)
    crit = np.abs(deriv) < 1e-9 * np.max(np.abs(deriv))
    eta = EtaFunction(values=vals, deriv=deriv, critical_mask=crit, sup_norm=1.0,
                      x_star=prof.x_peak, kappa=kappa, omega=omega)
    eta.check(grid)
    return eta


def construct_eta(geom: ControlGeometry, grid: SpaceTimeGrid,
                  shape_params: dict | None = None) -> tuple[EtaFunction, ...]:
    """Build the profile(s) for the geometry's omega set(s).

    One profile for the shared-observation case, two otherwise.  In the
    two-profile case the second one equals the first at every node outside
    the auxiliary inner interval and has exactly the same sup norm.
    Raises ``ConstructionFailed`` when the verify step cannot pass.
    """
    if geom.case_tag == SAME_OBSERVATION:
        return (_build_single(grid, geom.aux_omega[0]),)

    omega1, omega2 = geom.aux_omega
    if omega2.nnodes < 1:
        raise ConstructionFailed("second omega set contains no interior grid node")
    eta1 = _build_single(grid, omega1)
    inner = geom.aux_inner
    warp = _Warp(inner.lo, inner.hi, u_from=omega2.midpoint, u_to=eta1.x_star)
    x = grid.x
    tau, dtau = warp(x)
    base = _BaseProfile(grid.L, eta1.x_star, eta1.kappa)
    vals = base.value(tau)
    vals[0] = vals[-1] = 0.0
    deriv = base.deriv(tau) * dtau
    crit = np.abs(deriv) < 1e-9 * np.max(np.abs(deriv))
    eta2 = EtaFunction(values=vals, deriv=deriv, critical_mask=crit, sup_norm=1.0,
                       x_star=omega2.midpoint, kappa=eta1.kappa, omega=omega2, warp=warp)
    eta2.check(grid)
    outside_inner = inner.mask(grid) == 0.0
    if np.any(eta1.values[outside_inner] != eta2.values[outside_inner]):
        raise ConstructionFailed("profiles differ at a node outside the inner interval")
    return (eta1, eta2)
