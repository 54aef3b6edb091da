"""Compactly supported space-time test functions with analytic derivatives.

Built from the C^2 bump (1-u^2)^3, optionally modulated by a sine mode, so
weak-formulation pairings never need numerical differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def _bump(u):
    return (1.0 - u * u) ** 3 if -1.0 < u < 1.0 else 0.0


def _bump_d(u):
    return -6.0 * u * (1.0 - u * u) ** 2 if -1.0 < u < 1.0 else 0.0


@dataclass(frozen=True)
class SpaceTimeTestFunction:
    """phi(t,x) = bump_t(t) * bump_x(x) * sin-mode, supported in
    (t0,t1) x (x0,x1), twice continuously differentiable."""

    t0: float
    t1: float
    x0: float
    x1: float
    mode: int = 0
    name: str = ""

    def __post_init__(self):
        if not (self.t0 < self.t1 and self.x0 < self.x1):
            raise ValueError("empty support")
        if not (0.0 <= self.x0 and self.x1 <= 1.0):
            raise ValueError("spatial support must lie inside [0,1]")

    def _ut(self, t):
        return (2.0 * t - (self.t0 + self.t1)) / (self.t1 - self.t0)

    def _ux(self, x):
        return (2.0 * x - (self.x0 + self.x1)) / (self.x1 - self.x0)

    def _space(self, x):
        u = self._ux(x)
        b = _bump(u)
        if self.mode == 0 or b == 0.0:
            return b
        s = (x - self.x0) / (self.x1 - self.x0)
        return b * math.sin(math.pi * self.mode * s)

    def _space_d(self, x):
        du = 2.0 / (self.x1 - self.x0)
        u = self._ux(x)
        b, bd = _bump(u), _bump_d(u) * du
        if self.mode == 0:
            return bd
        if b == 0.0 and bd == 0.0:
            return 0.0
        w = math.pi * self.mode / (self.x1 - self.x0)
        s = (x - self.x0) / (self.x1 - self.x0)
        return bd * math.sin(math.pi * self.mode * s) + b * w * math.cos(
            math.pi * self.mode * s
        )

    def __call__(self, t, x):
        return _bump(self._ut(t)) * self._space(x)

    def dt(self, t, x):
        return _bump_d(self._ut(t)) * (2.0 / (self.t1 - self.t0)) * self._space(x)

    def dx(self, t, x):
        return _bump(self._ut(t)) * self._space_d(x)


def default_test_functions(t_end: float, x_lo: float = 0.2, x_hi: float = 0.8):
    """Small built-in family used by the weak-residual reports."""
    return [
        SpaceTimeTestFunction(0.05 * t_end, 0.95 * t_end, x_lo, x_hi, mode=0, name="bump"),
        SpaceTimeTestFunction(0.05 * t_end, 0.95 * t_end, x_lo, x_hi, mode=1, name="sin1"),
        SpaceTimeTestFunction(0.10 * t_end, 0.90 * t_end, x_lo, x_hi, mode=2, name="sin2"),
    ]
