"""Thermodynamics of the anharmonic spring: potential, Gibbs function, conjugate
pair (strain <-> tension), free/internal energy and canonical sampling.

Every other module gets its equilibrium quantities from here. All quadratures
run over fixed Gauss-Legendre panels split at the mollification band edges, so
evaluation errors vary smoothly with the arguments and finite differences of
tabulated values stay meaningful down to ~1e-12.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq


class ThermoError(RuntimeError):
    """Numerical failure inside the thermodynamic engine."""


@dataclass(frozen=True)
class PotentialParams:
    """Anharmonic spring: quadratic with stiffness 1 under extension, 1-kappa
    under compression, blended by a cubic smoothstep on |r| <= moll_width.

    kappa = 0 degenerates to the harmonic spring (used by exact oracles).
    """

    kappa: float = 0.25
    moll_width: float = 0.1

    def __post_init__(self) -> None:
        if not (math.isfinite(self.kappa) and 0.0 <= self.kappa < 1.0 / 3.0):
            raise ValueError(f"kappa must lie in [0, 1/3), got {self.kappa}")
        if not (math.isfinite(self.moll_width) and self.moll_width > 0.0):
            raise ValueError(f"moll_width must be positive, got {self.moll_width}")

    @property
    def c1(self) -> float:
        return 1.0 - self.kappa

    @property
    def c2(self) -> float:
        return 1.0


def _smoothstep(x):
    # s(x) = 0 for x<=-1, 1 for x>=1, cubic blend in between
    x = np.clip(x, -1.0, 1.0)
    return (3.0 * x - x**3 + 2.0) / 4.0


def _smoothstep_i1(x):
    # integral of _smoothstep from -1 to x
    x = np.clip(x, -1.0, 1.0)
    return 3.0 * x**2 / 8.0 - x**4 / 16.0 + x / 2.0 + 3.0 / 16.0


def _smoothstep_i2(x):
    # double integral: antiderivative of _smoothstep_i1 vanishing at -1
    x = np.clip(x, -1.0, 1.0)
    return x**3 / 8.0 - x**5 / 80.0 + x**2 / 4.0 + 3.0 * x / 16.0 + 1.0 / 20.0


def eval_potential(params: PotentialParams, r):
    """Return (V, V', V'') of the mollified potential at r (scalar or array).

    Outside the band: V' and V'' equal the piecewise-quadratic closed form
    exactly; V matches it exactly for r <= -moll_width and carries the
    constant kappa*h^2/10 on the extension side (antiderivative continuity).
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("potential evaluated at non-finite strain")
    k, h = params.kappa, params.moll_width
    x = r / h
    d2 = (1.0 - k) + k * _smoothstep(x)
    d1 = (1.0 - k) * r + k * np.where(
        r >= h, r, np.where(r <= -h, 0.0, h * _smoothstep_i1(x))
    )
    v = (1.0 - k) * r**2 / 2.0 + k * np.where(
        r >= h,
        r**2 / 2.0 + h**2 / 10.0,
        np.where(r <= -h, 0.0, h**2 * _smoothstep_i2(x)),
    )
    if v.ndim == 0:
        return float(v), float(d1), float(d2)
    return v, d1, d2


@dataclass(frozen=True)
class GibbsSample:
    """i.i.d. draws from the single-spring canonical measure."""

    r: np.ndarray
    p: np.ndarray


class ThermoModel:
    """Canonical thermodynamics at inverse temperature beta.

    Exposes the exact quadrature path (log_partition, mean_strain,
    tension_of_strain, free_energy, internal_energy, sample_canonical) plus a
    lazily built spline table (tau_of_rho, rho_of_tau, ...) for hot loops.
    """

    def __init__(
        self,
        beta: float = 1.0,
        potential: PotentialParams | None = None,
        quad_tol: float = 1e-30,
        n_quad: int = 80,
    ):
        if not (math.isfinite(beta) and beta > 0.0):
            raise ValueError(f"beta must be positive, got {beta}")
        if not (0.0 < quad_tol < 1.0):
            raise ValueError(f"quad_tol must lie in (0,1), got {quad_tol}")
        self.beta = float(beta)
        self.potential = potential if potential is not None else PotentialParams()
        self.quad_tol = float(quad_tol)
        self.c1 = self.potential.c1
        self.c2 = self.potential.c2
        # integration half-width: Gaussian domination V >= V(r*) + c1 (r-r*)^2/2
        # puts the tail mass below quad_tol at this distance from the maximizer
        self._halfwidth = math.sqrt(2.0 * math.log(1.0 / quad_tol) / (self.beta * self.c1))
        self._gl_nodes, self._gl_weights = np.polynomial.legendre.leggauss(n_quad)
        self._table = None
        self._verify_curvature_bounds()

    # -- potential shorthands ------------------------------------------------

    def V(self, r):
        return eval_potential(self.potential, r)[0]

    def dV(self, r):
        return eval_potential(self.potential, r)[1]

    def d2V(self, r):
        return eval_potential(self.potential, r)[2]

    def _verify_curvature_bounds(self) -> None:
        grid = np.linspace(-8.0, 8.0, 4001)
        d2 = self.d2V(grid)
        if d2.min() < self.c1 - 1e-12 or d2.max() > self.c2 + 1e-12:
            raise ThermoError(
                f"V'' escapes [{self.c1}, {self.c2}]: range "
                f"[{d2.min()}, {d2.max()}]"
            )

    # -- exact quadrature core ----------------------------------------------

    def _argmax_exponent(self, tau: float) -> float:
        # maximizer of tau*r - V(r), i.e. V'(r*) = tau (V' strictly increasing)
        k, h = self.potential.kappa, self.potential.moll_width
        if tau >= h:
            return float(tau)
        if tau <= -(1.0 - k) * h:
            return float(tau / (1.0 - k))
        if k == 0.0:
            return float(tau)
        return brentq(lambda r: self.dV(r) - tau, -h, h, xtol=1e-15, rtol=8.9e-16)

    def _moments(self, tau_values):
        """Batched canonical moments at each tau.

        Returns arrays (G, rho, var, EV): log partition, mean strain, strain
        variance and mean potential energy under exp(-beta V + beta tau r).
        """
        taus = np.atleast_1d(np.asarray(tau_values, dtype=float))
        if not np.all(np.isfinite(taus)):
            raise ValueError("non-finite tension in quadrature")
        beta = self.beta
        h = self.potential.moll_width
        w = self._halfwidth
        rstar = np.array([self._argmax_exponent(t) for t in taus])
        vstar = self.V(rstar)

        lo = rstar - w
        hi = rstar + w
        # split each window at the band edges that fall inside it
        cuts = [lo, np.clip(-h, lo, hi), np.clip(h, lo, hi), hi]
        z = np.zeros_like(taus)
        m1 = np.zeros_like(taus)
        m2 = np.zeros_like(taus)
        mv = np.zeros_like(taus)
        for a, b in zip(cuts[:-1], cuts[1:]):
            half = (b - a) / 2.0
            mid = (b + a) / 2.0
            r = mid[:, None] + half[:, None] * self._gl_nodes[None, :]
            v, _, _ = eval_potential(self.potential, r)
            f = np.exp(beta * (taus[:, None] * (r - rstar[:, None]) - v + vstar[:, None]))
            wts = half[:, None] * self._gl_weights[None, :]
            z += np.sum(f * wts, axis=1)
            m1 += np.sum(f * wts * r, axis=1)
            m2 += np.sum(f * wts * r * r, axis=1)
            mv += np.sum(f * wts * v, axis=1)
        if np.any(z <= 0.0) or not np.all(np.isfinite(z)):
            raise ThermoError(f"quadrature non-convergence at tau={taus}, Z={z}")
        g = beta * (taus * rstar - vstar) + np.log(z)
        rho = m1 / z
        var = m2 / z - rho**2
        ev = mv / z
        return g, rho, var, ev

    def log_partition(self, tau: float) -> float:
        """G(beta, tau) = log of the single-spring partition integral."""
        return float(self._moments(tau)[0][0])

    def mean_strain(self, tau: float) -> float:
        """rho(beta, tau): canonical mean of r (direct quadrature)."""
        return float(self._moments(tau)[1][0])

    def strain_variance(self, tau: float) -> float:
        return float(self._moments(tau)[2][0])

    def internal_energy(self, tau: float) -> float:
        """U(beta, tau) = 1/(2 beta) + E[V(r)] (kinetic part exact)."""
        return 0.5 / self.beta + float(self._moments(tau)[3][0])

    def tension_of_strain(self, rho: float, tol: float = 1e-12) -> float:
        """Invert rho(tau) = rho by safeguarded Newton with bisection fallback.

        The slope d rho/d tau = beta Var(r) lies in [1/c2, 1/c1], so a bracket
        built from the c1/c2 secants always contains the root.
        """
        if not math.isfinite(rho):
            raise ValueError(f"non-finite strain {rho}")
        _, rho0, var0, _ = self._moments(0.0)
        d = rho - float(rho0[0])
        lo = min(self.c1 * d, self.c2 * d) - 1e-9
        hi = max(self.c1 * d, self.c2 * d) + 1e-9
        tau = min(max(self.c2 * d, lo), hi)
        flo = None
        fhi = None
        for it in range(200):
            _, rh, var, _ = self._moments(tau)
            f = float(rh[0]) - rho
            if abs(f) <= tol:
                return float(tau)
            if f > 0.0:
                hi, fhi = tau, f
            else:
                lo, flo = tau, f
            if it < 50:
                slope = self.beta * float(var[0])
                cand = tau - f / slope
            else:
                cand = 0.5 * (lo + hi)
            if not (lo < cand < hi):
                cand = 0.5 * (lo + hi)
            tau = cand
        raise ThermoError(
            f"tension inversion failed for rho={rho}: bracket [{lo},{hi}], "
            f"residuals ({flo}, {fhi})"
        )

    def free_energy(self, rho: float) -> float:
        """F(beta, rho) = tau rho - G(beta,tau)/beta at the conjugate tau."""
        tau = self.tension_of_strain(rho)
        return tau * rho - self.log_partition(tau) / self.beta

    def tau_derivatives(self, rho: float, step: float = 1e-4) -> tuple[float, float]:
        """(tau', tau'') at rho by central finite differences of the exact path."""
        tm = self.tension_of_strain(rho - step)
        t0 = self.tension_of_strain(rho)
        tp = self.tension_of_strain(rho + step)
        return (tp - tm) / (2.0 * step), (tp - 2.0 * t0 + tm) / step**2

    # -- sampling -------------------------------------------------------------

    def sample_canonical(self, pbar: float, tau: float, n: int, seed) -> GibbsSample:
        """n i.i.d. draws from the canonical single-spring measure.

        Momenta are exactly Gaussian(pbar, 1/beta). Strains come from rejection
        against the Gaussian envelope N(r*, 1/(beta c1)), valid because
        V'' >= c1 makes the target log-concave under that envelope.
        """
        if n < 1:
            raise ValueError(f"need n >= 1 samples, got {n}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        beta = self.beta
        p = pbar + rng.standard_normal(n) / math.sqrt(beta)
        rstar = self._argmax_exponent(tau)
        vstar = self.V(rstar)
        sd = 1.0 / math.sqrt(beta * self.c1)
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(int(1.25 * (n - filled)) + 16, 64)
            cand = rstar + sd * rng.standard_normal(m)
            v, _, _ = eval_potential(self.potential, cand)
            log_acc = beta * (
                tau * (cand - rstar) - v + vstar + self.c1 * (cand - rstar) ** 2 / 2.0
            )
            keep = cand[np.log(rng.random(m)) < log_acc]
            take = min(keep.size, n - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return GibbsSample(r=out, p=p)

    # -- tabulated fast path ----------------------------------------------------

    def _build_table(self, rho_min=-10.0, rho_max=10.0, n_nodes=3600):
        # uniform knots in rho so spline coefficients can be exported as flat
        # arrays for compiled hot loops (O(1) knot lookup)
        rho_nodes = np.linspace(rho_min, rho_max, n_nodes)
        taus = rho_nodes.copy()  # Newton start; global convergence from the
        # slope bounds 1/c2 <= d rho/d tau <= 1/c1
        for _ in range(60):
            g, rho, var, ev = self._moments(taus)
            res = rho - rho_nodes
            if np.max(np.abs(res)) <= 1e-12:
                break
            taus = taus - res / (self.beta * var)
        else:
            raise ThermoError("table inversion did not converge")
        rho = rho_nodes
        if np.any(np.diff(taus) <= 0.0):
            raise ThermoError("tabulated tension is not strictly increasing")
        slopes = 1.0 / (self.beta * var)
        free = taus * rho - g / self.beta
        table = {
            "tau": taus,
            "rho": rho,
            "tau_of_rho": CubicSpline(rho, taus),
            "rho_of_tau": CubicSpline(taus, rho),
            "F_of_rho": CubicSpline(rho, free),
            "tau_prime_of_rho": CubicSpline(rho, slopes),
            "U_of_tau": CubicSpline(taus, 0.5 / self.beta + ev),
        }
        table["packed"] = {
            "rho0": float(rho[0]),
            "h": float(rho[1] - rho[0]),
            "n": int(n_nodes),
            "c_tau": np.ascontiguousarray(table["tau_of_rho"].c),
            "c_F": np.ascontiguousarray(table["F_of_rho"].c),
        }
        # certify against off-node exact values and the slope bounds
        probe = 0.5 * (taus[:-1:40] + taus[1::40])
        _, rho_p, var_p, _ = self._moments(probe)
        err_tau = np.max(np.abs(table["tau_of_rho"](rho_p) - probe))
        err_rho = np.max(np.abs(table["rho_of_tau"](probe) - rho_p))
        dense = np.linspace(rho[0], rho[-1], 20001)
        slope_dense = table["tau_of_rho"].derivative()(dense)
        mono_ok = (
            slope_dense.min() >= self.c1 - 1e-6 and slope_dense.max() <= self.c2 + 1e-6
        )
        table["certificate"] = {
            "max_tau_error": float(err_tau),
            "max_rho_error": float(err_rho),
            "slope_range": (float(slope_dense.min()), float(slope_dense.max())),
            "monotone_within_bounds": bool(mono_ok),
        }
        if err_tau > 5e-8 or err_rho > 5e-8 or not mono_ok:
            raise ThermoError(f"thermo table failed certification: {table['certificate']}")
        return table

    @property
    def table(self):
        if self._table is None:
            self._table = self._build_table()
        return self._table

    def tau_of_rho(self, rho):
        """Spline tension, vectorized; certified against the exact inversion."""
        return self.table["tau_of_rho"](rho)

    def rho_of_tau(self, tau):
        return self.table["rho_of_tau"](tau)

    def free_energy_of_rho(self, rho):
        return self.table["F_of_rho"](rho)

    def tau_prime_of_rho(self, rho):
        return self.table["tau_prime_of_rho"](rho)

    def internal_energy_of_tau(self, tau):
        return self.table["U_of_tau"](tau)

    def invert_tau_table(self, tau: float) -> float:
        """Invert the tabulated tau_of_rho spline itself (Newton), so callers
        needing tau(r*) = tau to hold in the *spline* sense get it to
        rounding rather than to table accuracy."""
        spline = self.table["tau_of_rho"]
        deriv = spline.derivative()
        rho = float(self.table["rho_of_tau"](tau))
        for _ in range(8):
            f = float(spline(rho)) - tau
            if abs(f) <= 1e-14 * max(1.0, abs(tau)):
                break
            rho -= f / float(deriv(rho))
        return rho

    # -- export ------------------------------------------------------------------

    def export_table(self, path, rho_grid) -> None:
        """CSV with columns (rho, tau, F, U, tau_prime, tau_second)."""
        from .csvio import write_csv

        rows = []
        for rho in np.asarray(rho_grid, dtype=float):
            tau = self.tension_of_strain(float(rho))
            tp, ts = self.tau_derivatives(float(rho))
            rows.append(
                (
                    rho,
                    tau,
                    tau * rho - self.log_partition(tau) / self.beta,
                    self.internal_energy(tau),
                    tp,
                    ts,
                )
            )
        write_csv(path, ["rho", "tau", "F", "U", "tau_prime", "tau_second"], rows)


def harmonic_checks(model: ThermoModel) -> dict:
    """Closed-form harmonic (kappa=0) reference values for self-tests."""
    beta = model.beta
    return {
        "G0": 0.5 * math.log(2.0 * math.pi / beta),
        "rho_of_tau": lambda tau: tau,
        "F": lambda rho: rho**2 / 2.0 - 0.5 * math.log(2.0 * math.pi / beta) / beta,
        "U": lambda tau: 1.0 / beta + tau**2 / 2.0,
    }
