"""Diffusion/nonlinearity models with consistent analytic partial derivatives.

The state equation is  y_t - (a(y_x, t, x) y_x)_x + F(y, y_x) = controls.
Every model ships the first, second and third partials of ``a`` (arguments
named s = gradient slot, t, x) and first and second partials of ``F``
(arguments y and q = gradient slot) needed by the linearized, adjoint and
second-order systems.  A finite-difference self-test runs at construction so
an inconsistent derivative can never reach a solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FAMILIES = ("constant", "linear", "bounded-rational-diffusion", "sine-nonlinearity")

_A_PARTIALS = ("d1a", "d2a", "d3a", "d11a", "d12a", "d13a", "d111a")
_F_PARTIALS = ("d1F", "d2F", "d11F", "d12F", "d21F", "d22F")


class CoefficientError(ValueError):
    """Bad model parameters or inconsistent derivatives."""


def _zero3(s, t, x):
    return np.zeros(np.broadcast(s, t, x).shape)


def _zero2(y, q):
    return np.zeros(np.broadcast(y, q).shape)


@dataclass
class CoefficientModel:
    """A diffusion a(s, t, x) and nonlinearity F(y, q) with all partials.

    ``a0``/``a1`` are uniform diffusion bounds, ``M`` bounds the sum of the
    absolute a-partials (M = 0 for gradient-independent diffusion).
    """

    family_tag: str
    params: dict
    a: Callable
    d1a: Callable
    d2a: Callable
    d3a: Callable
    d11a: Callable
    d12a: Callable
    d13a: Callable
    d111a: Callable
    F: Callable
    d1F: Callable
    d2F: Callable
    d11F: Callable
    d12F: Callable
    d21F: Callable
    d22F: Callable
    a0: float
    a1: float
    M: float
    linear: bool = False

    def check_derivatives(self, n_points: int = 1000, seed: int = 1234,
                          rel_tol: float = 1e-6, span: float = 2.0,
                          T: float = 1.0, L: float = 1.0) -> float:
        """Compare each analytic partial against centered differences.

        Samples ``n_points`` random (s, t, x) and (y, q) triples/pairs and
        returns the worst relative error; raises if it exceeds ``rel_tol``.
        """
        rng = np.random.default_rng(seed)
        s = rng.uniform(-span, span, n_points)
        t = rng.uniform(0.0, T, n_points)
        x = rng.uniform(0.0, L, n_points)
        y = rng.uniform(-span, span, n_points)
        q = rng.uniform(-span, span, n_points)
        h = 1e-5 * max(span, 1.0)

        def d_s(f):
            return lambda s, t, x: (f(s + h, t, x) - f(s - h, t, x)) / (2 * h)

        def d_t(f):
            return lambda s, t, x: (f(s, t + h, x) - f(s, t - h, x)) / (2 * h)

        def d_x(f):
            return lambda s, t, x: (f(s, t, x + h) - f(s, t, x - h)) / (2 * h)

        def d_y(f):
            return lambda y, q: (f(y + h, q) - f(y - h, q)) / (2 * h)

        def d_q(f):
            return lambda y, q: (f(y, q + h) - f(y, q - h)) / (2 * h)

        pairs3 = [
            (self.d1a, d_s(self.a)), (self.d2a, d_t(self.a)), (self.d3a, d_x(self.a)),
            (self.d11a, d_s(self.d1a)), (self.d12a, d_t(self.d1a)), (self.d13a, d_x(self.d1a)),
            (self.d111a, d_s(self.d11a)),
        ]
        pairs2 = [
            (self.d1F, d_y(self.F)), (self.d2F, d_q(self.F)),
            (self.d11F, d_y(self.d1F)), (self.d12F, d_q(self.d1F)),
            (self.d21F, d_y(self.d2F)), (self.d22F, d_q(self.d2F)),
        ]
        worst = 0.0
        scale = max(1.0, abs(self.a1), self.M)
        for exact, approx in pairs3:
            err = np.max(np.abs(exact(s, t, x) - approx(s, t, x)))
            worst = max(worst, err / max(scale, np.max(np.abs(exact(s, t, x))) or 1.0))
        for exact, approx in pairs2:
            err = np.max(np.abs(exact(y, q) - approx(y, q)))
            worst = max(worst, err / max(scale, np.max(np.abs(exact(y, q))) or 1.0))
        if worst > rel_tol:
            raise CoefficientError(
                f"{self.family_tag}: analytic partials disagree with finite differences "
                f"(relative error {worst:.3e} > {rel_tol:.0e})"
            )
        return worst

    def check_bounds(self, n_points: int = 10_000, seed: int = 4321, span: float = 5.0,
                     T: float = 1.0, L: float = 1.0):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-span, span, n_points)
        t = rng.uniform(0.0, T, n_points)
        x = rng.uniform(0.0, L, n_points)
        vals = self.a(s, t, x)
        if vals.min() < self.a0 - 1e-12 or vals.max() > self.a1 + 1e-12:
            raise CoefficientError(
                f"{self.family_tag}: diffusion leaves [{self.a0}, {self.a1}] "
                f"(sampled range [{vals.min():.6g}, {vals.max():.6g}])"
            )
        if self.M > 0:
            total = sum(np.abs(getattr(self, name)(s, t, x)) for name in _A_PARTIALS)
            if total.max() > self.M + 1e-12:
                raise CoefficientError(
                    f"{self.family_tag}: summed |a partials| exceed M={self.M} "
                    f"(sampled max {total.max():.6g})"
                )


def builtin_coefficient(family_tag: str, params: dict | None = None, *,
                        self_test: bool = True) -> CoefficientModel:
    """Construct one of the built-in model families.

    constant:                  a = a_value, F = 0.
    linear:                    a = a_value, F = c1*y + c2*q  (makes the
                               semilinear system coincide with its own
                               linearization at zero, sources absent).
    bounded-rational-diffusion: a = base + amp*s^2/(1+s^2), F = 0.
    sine-nonlinearity:         a = a_value, F = amp*sin(y) + conv*q.
    """
    params = dict(params or {})
    if family_tag not in FAMILIES:
        raise CoefficientError(f"unknown coefficient family {family_tag!r}")

    zero3 = {name: _zero3 for name in _A_PARTIALS}
    zero2 = {name: _zero2 for name in _F_PARTIALS}

    if family_tag in ("constant", "linear", "sine-nonlinearity"):
        a_value = float(params.setdefault("a_value", 1.0))
        if a_value <= 0:
            raise CoefficientError("a_value must be positive")

        def a(s, t, x, _v=a_value):
            return np.full(np.broadcast(s, t, x).shape, _v)

        base = dict(zero3)
        base.update(zero2)
        common = dict(family_tag=family_tag, params=params, a=a, a0=a_value, a1=a_value,
                      M=0.0, **base)
        if family_tag == "constant":
            common["F"] = _zero2
            model = CoefficientModel(linear=True, **common)
        elif family_tag == "linear":
            c1 = float(params.setdefault("c1", 0.0))
            c2 = float(params.setdefault("c2", 0.0))
            common["F"] = lambda y, q: c1 * y + c2 * q
            common["d1F"] = lambda y, q: np.full(np.broadcast(y, q).shape, c1)
            common["d2F"] = lambda y, q: np.full(np.broadcast(y, q).shape, c2)
            model = CoefficientModel(linear=True, **common)
        else:
            amp = float(params.setdefault("amp", 1.0))
            conv = float(params.setdefault("conv", 0.1))
            common["F"] = lambda y, q: amp * np.sin(y) + conv * q
            common["d1F"] = lambda y, q: amp * np.cos(y) * np.ones(np.broadcast(y, q).shape)
            common["d2F"] = lambda y, q: np.full(np.broadcast(y, q).shape, conv)
            common["d11F"] = lambda y, q: -amp * np.sin(y) * np.ones(np.broadcast(y, q).shape)
            model = CoefficientModel(linear=False, **common)

    else:  # bounded-rational-diffusion
        base_v = float(params.setdefault("base", 1.0))
        amp = float(params.setdefault("amp", 0.5))
        if base_v <= 0 or amp < 0:
            raise CoefficientError("need base > 0 and amp >= 0")

        def a(s, t, x):
            s = np.asarray(s, dtype=float)
            return base_v + amp * s * s / (1.0 + s * s) + np.zeros(np.broadcast(s, t, x).shape)

        def d1a(s, t, x):
            s = np.asarray(s, dtype=float)
            return 2.0 * amp * s / (1.0 + s * s) ** 2 + np.zeros(np.broadcast(s, t, x).shape)

        def d11a(s, t, x):
            s = np.asarray(s, dtype=float)
            return 2.0 * amp * (1.0 - 3.0 * s * s) / (1.0 + s * s) ** 3 + np.zeros(np.broadcast(s, t, x).shape)

        def d111a(s, t, x):
            s = np.asarray(s, dtype=float)
            return 24.0 * amp * s * (s * s - 1.0) / (1.0 + s * s) ** 4 + np.zeros(np.broadcast(s, t, x).shape)

        # |d1a| <= 3*sqrt(3)/8*amp, |d11a| <= 2*amp, |d111a| <= 24*amp*max|s(s^2-1)|/(1+s^2)^4 <= 4*amp
        M = amp * (3.0 * np.sqrt(3.0) / 8.0 + 2.0 + 4.0)
        fields = dict(zero3)
        fields.update(zero2)
        fields.update(d1a=d1a, d11a=d11a, d111a=d111a)
        model = CoefficientModel(family_tag=family_tag, params=params, a=a,
                                 F=_zero2, a0=base_v, a1=base_v + amp, M=M,
                                 linear=(amp == 0.0), **fields)

    if self_test:
        model.check_derivatives()
        model.check_bounds()
    return model
