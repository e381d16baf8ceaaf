"""Exponential weight families built from the auxiliary profiles.

All families are evaluated at the staggered midtimes and stored either
directly (sigma/xi values are polynomially sized) or as logarithms (the rho
exponentials overflow IEEE doubles for every admissible parameter pair, so
log grids are the faithful representation).  Consumers that need linear
weights use a *tempered* view: exponents rescaled by a grid-independent
factor so the profile spans a configurable log-range, normalized to 1 on the
early-time plateau.  Tempering preserves the profile shape, the vanishing of
the reciprocals toward the final time, and every structural identity the
solvers rely on; the scale is reported alongside any weighted quantity.

Time envelope: ell(t) equals T^2/4 up to T/2 and t(T-t) after, so the
truncated families are finite at t = 0 and blow up only at t = T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eta import EtaFunction
from .geometry import SAME_OBSERVATION
from .grid import SpaceTimeGrid

RHO_KEYS = ("rho", "rho0", "rho1", "rho2", "rho3", "rho4", "rho5")
# exponents (q, r): log rho_k = q * s * beta_bar_star + r * log xi_bar_star
RHO_EXPONENTS = {
    "rho": (2.5, 1.5),
    "rho0": (2.0, 0.0),
    "rho1": (2.0, -2.0),
    "rho2": (1.5, -3.0),
    "rho3": (1.5, -8.0),
    "rho4": (1.5, -9.0),
    "rho5": (1.5, -10.0),
}


class WeightInequalityViolated(RuntimeError):
    """The envelope comparison inequalities fail (lambda too small)."""


def ell(t: np.ndarray, T: float) -> np.ndarray:
    """Plateau-then-parabola time envelope: T^2/4 before T/2, t(T-t) after."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= 0.5 * T, 0.25 * T * T, t * (T - t))


def default_s(grid: SpaceTimeGrid, c_s: float = 1.0) -> float:
    return c_s * (grid.T + grid.T ** 2)


def default_lambda(etas: tuple[EtaFunction, ...]) -> float:
    """2/sup-norm already clears the envelope-inequality threshold (e^{lam*sup} > 4)."""
    return max(2.0 / e.sup_norm for e in etas)


def _family_grids(eta: EtaFunction, lam: float, denom: np.ndarray):
    """sigma and xi grids over (midtimes, nodes) for one profile and envelope."""
    M = eta.sup_norm
    e_top = np.exp(4.0 * lam * M)
    e_prof = np.exp(lam * (2.0 * M + eta.values))
    sigma = (e_top - e_prof)[None, :] / denom[:, None]
    xi = e_prof[None, :] / denom[:, None]
    return sigma, xi


@dataclass
class CarlemanWeights:
    grid: SpaceTimeGrid
    s: float
    lam: float
    case_tag: str
    etas: tuple[EtaFunction, ...]
    sigma: np.ndarray          # untruncated family of etas[0], (Nt, Nx+2)
    xi: np.ndarray
    sigma_bar: np.ndarray      # truncated (ell) family of etas[0]
    xi_bar: np.ndarray
    sigma_i: list = field(default_factory=list)       # untruncated per profile
    xi_i: list = field(default_factory=list)
    sigma_bar_i: list = field(default_factory=list)
    xi_bar_i: list = field(default_factory=list)
    selected_index: int = 0

    # -- envelopes ----------------------------------------------------------
    @staticmethod
    def _envelopes(sigma_bar, xi_bar):
        return sigma_bar.max(axis=1), sigma_bar.min(axis=1), xi_bar.max(axis=1)

    @property
    def sigma_star(self):
        return self.sigma_bar_i[self.selected_index].max(axis=1)

    @property
    def sigma_hat(self):
        return self.sigma_bar_i[self.selected_index].min(axis=1)

    @property
    def beta_bar_star(self) -> np.ndarray:
        """Selected time envelope: max over space of (2/5) * truncated sigma."""
        return 0.4 * self.sigma_star

    @property
    def beta_bar_hat(self) -> np.ndarray:
        return 0.4 * self.sigma_hat

    @property
    def xi_bar_star(self) -> np.ndarray:
        return self.xi_bar_i[self.selected_index].max(axis=1)

    def log_rho(self, key: str) -> np.ndarray:
        q, r = RHO_EXPONENTS[key]
        return q * self.s * self.beta_bar_star + r * np.log(self.xi_bar_star)

    def rho_reciprocal_at_node_times(self, key: str) -> np.ndarray:
        """1/rho_k at node times t_0..t_Nt; exactly 0 at t = T (weight blow-up)."""
        q, r = RHO_EXPONENTS[key]
        t = self.grid.t
        M = self.etas[self.selected_index].sup_norm
        e_top = np.exp(4.0 * self.lam * M)
        e_bot = np.exp(2.0 * self.lam * M)
        e_max = np.exp(3.0 * self.lam * M)
        with np.errstate(divide="ignore"):
            inv_l = np.where(ell(t, self.grid.T) > 0.0, 1.0 / ell(t, self.grid.T), np.inf)
        beta = 0.4 * (e_top - e_bot) * inv_l
        log_xi = np.log(e_max) + np.log(inv_l)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.exp(-(q * self.s * beta + r * log_xi))
        return np.where(np.isfinite(out), out, 0.0)

    # -- verification ---------------------------------------------------------
    def envelope_violations(self) -> list[str]:
        """Node-wise check of sigma_hat <= sigma_bar < 5/4 sigma_hat and
        4/5 sigma_star < sigma_bar <= sigma_star, for every profile family."""
        bad: list[str] = []
        for i, (sb, _) in enumerate(zip(self.sigma_bar_i, self.xi_bar_i)):
            star, hat = sb.max(axis=1), sb.min(axis=1)
            tags = [
                ("upper_vs_hat", sb < 1.25 * hat[:, None]),
                ("lower_vs_star", sb > 0.8 * star[:, None]),
            ]
            for name, ok in tags:
                if not np.all(ok):
                    k, j = np.argwhere(~ok)[0]
                    bad.append(
                        f"family {i}: {name} fails first at midtime index {k}, node {j} "
                        f"(sigma_bar={sb[k, j]:.6g}, hat={hat[k]:.6g}, star={star[k]:.6g})")
        return bad

    def tempered(self, cap: float = 23.0, ref_fraction: float = 1.0 / 64.0) -> "TemperedWeights":
        return TemperedWeights(self, cap, ref_fraction)


@dataclass(init=False)
class TemperedWeights:
    """Linear-space weight views with exponents rescaled to a usable range.

    ``kappa`` multiplies every log weight so that the state-weight reciprocal
    spans exp(-cap) at the reference time T(1 - ref_fraction); each family is
    normalized to 1 on the early-time plateau.  All arrays live on midtimes.
    """

    kappa: float
    cap: float
    ref_fraction: float

    def __init__(self, w: CarlemanWeights, cap: float, ref_fraction: float):
        self.weights = w
        self.cap = float(cap)
        self.ref_fraction = float(ref_fraction)
        g = w.grid
        T = g.T
        M = w.etas[w.selected_index].sup_norm
        e_top, e_bot = np.exp(4.0 * w.lam * M), np.exp(2.0 * w.lam * M)
        beta_of = lambda t: 0.4 * (e_top - e_bot) / ell(np.asarray(t), T)
        t_ref = T * (1.0 - self.ref_fraction)
        delta_ref = float(beta_of(t_ref) - beta_of(0.0))
        if delta_ref <= 0:
            raise ValueError("reference time must lie past the envelope plateau")
        self.kappa = self.cap / (4.0 * w.s * delta_ref)
        self._log_rho = {k: w.log_rho(k) for k in RHO_KEYS}
        self._ref = {k: v[0] for k, v in self._log_rho.items()}  # plateau value
        self.delta_beta = w.beta_bar_star - w.beta_bar_star[0]

    def rho_sq(self, key: str) -> np.ndarray:
        """Tempered rho_k^2, equal to 1 on the plateau (midtime array)."""
        return np.exp(2.0 * self.kappa * (self._log_rho[key] - self._ref[key]))

    def rho_sq_scaled(self, key: str, cap: float) -> np.ndarray:
        """Tempered rho_k^2 rescaled to a different log-range cap."""
        k = self.kappa * (cap / self.cap)
        return np.exp(2.0 * k * (self._log_rho[key] - self._ref[key]))

    def recip_sq(self, key: str) -> np.ndarray:
        """Tempered rho_k^{-2}; decays toward the final time, 1 on the plateau."""
        return np.exp(-2.0 * self.kappa * (self._log_rho[key] - self._ref[key]))

    def observability(self):
        """(lhs_weight, rhs_source_weight, rhs_obs_weight) midtime arrays."""
        w = self.weights
        s_eff = self.kappa * w.s
        xi = w.xi_bar_star
        lhs = np.exp(-5.0 * s_eff * self.delta_beta) * xi ** -3.0
        rhs_src = np.exp(-4.0 * s_eff * self.delta_beta)
        rhs_obs = rhs_src * xi ** 4.0
        return lhs, rhs_src, rhs_obs


def build_weights(etas: tuple[EtaFunction, ...], grid: SpaceTimeGrid,
                  s: float | None = None, lam: float | None = None,
                  case_tag: str = SAME_OBSERVATION, c_s: float = 1.0,
                  lambda_doublings: int = 20) -> CarlemanWeights:
    """Assemble every weight family on the midtime grid and verify the
    envelope inequalities a posteriori.

    ``s`` defaults to c_s*(T + T^2); ``lam`` defaults to 2/sup-norm, doubled
    until the envelope inequalities pass.  Raises WeightInequalityViolated
    (with the first failing node) if they cannot be satisfied.
    """
    s_min = default_s(grid, c_s)
    if s is None:
        s = s_min
    if s < s_min - 1e-12:
        raise ValueError(f"s = {s} below the admissible threshold {s_min}")

    lam_given = lam is not None
    lam = lam if lam_given else default_lambda(etas)

    t_mid = grid.t_mid
    denom_full = t_mid * (grid.T - t_mid)
    denom_trunc = ell(t_mid, grid.T)

    def assemble(lam_val: float) -> CarlemanWeights:
        sig_i, xi_i, sigb_i, xib_i = [], [], [], []
        for e in etas:
            sg, xg = _family_grids(e, lam_val, denom_full)
            sgb, xgb = _family_grids(e, lam_val, denom_trunc)
            sig_i.append(sg)
            xi_i.append(xg)
            sigb_i.append(sgb)
            xib_i.append(xgb)
        selected = 0
        return CarlemanWeights(
            grid=grid, s=s, lam=lam_val, case_tag=case_tag, etas=etas,
            sigma=sig_i[0], xi=xi_i[0], sigma_bar=sigb_i[0], xi_bar=xib_i[0],
            sigma_i=sig_i, xi_i=xi_i, sigma_bar_i=sigb_i, xi_bar_i=xib_i,
            selected_index=selected,
        )

    w = assemble(lam)
    if not lam_given:
        for _ in range(lambda_doublings):
            if not w.envelope_violations():
                break
            lam *= 2.0
            w = assemble(lam)
    bad = w.envelope_violations()
    if bad:
        raise WeightInequalityViolated("; ".join(bad))
    return w


@dataclass
class WeightDiagnostics:
    s: float
    lam: float
    ratio_bar_over_hat: tuple[float, float]
    ratio_bar_over_star: tuple[float, float]
    chain_constants: dict
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations and all(np.isfinite(v) for v in self.chain_constants.values())


def weight_report(w: CarlemanWeights) -> WeightDiagnostics:
    """Envelope ratio ranges and the empirical chain constants, log-safe."""
    sb = w.sigma_bar_i[w.selected_index]
    star, hat = sb.max(axis=1), sb.min(axis=1)
    r_hat = sb / hat[:, None]
    r_star = sb / star[:, None]

    logs = {k: w.log_rho(k) for k in RHO_KEYS}
    chain = {}
    order = ("rho0", "rho1", "rho2", "rho3", "rho4", "rho5")
    for a, b in zip(order[1:], order[:-1]):
        chain[f"{a}_over_{b}"] = float(np.exp(np.max(logs[a] - logs[b])))
    chain["rho0_over_rho"] = float(np.exp(np.max(logs["rho0"] - logs["rho"])))
    chain["rho_over_rho5_sq"] = float(np.exp(np.max(logs["rho"] - 2.0 * logs["rho5"])))
    dt = w.grid.dt
    for k in ("rho2", "rho3", "rho4", "rho5"):
        dlog = np.gradient(logs[k], dt)
        prev = order[order.index(k) - 1]
        with np.errstate(divide="ignore"):
            expo = 2.0 * logs[k] + np.log(np.abs(dlog) + 1e-300) - 2.0 * logs[prev]
        chain[f"abs_{k}_d{k}_over_{prev}_sq"] = float(np.exp(np.max(expo)))

    return WeightDiagnostics(
        s=w.s, lam=w.lam,
        ratio_bar_over_hat=(float(r_hat.min()), float(r_hat.max())),
        ratio_bar_over_star=(float(r_star.min()), float(r_star.max())),
        chain_constants=chain,
        violations=w.envelope_violations(),
    )
