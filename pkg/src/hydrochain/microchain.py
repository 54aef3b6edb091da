"""N-particle chain with boundary tension and momentum/strain-exchange noise.

Integrates the coupled SDEs for (r_1..r_N, p_1..p_N) with the wall convention
p_0 = 0 by Euler-Maruyama, and keeps the trajectory energy/work/heat ledger.

Ledger convention: within each step the displacement splits into Hamiltonian
drift, noise drift and noise coupling; the heat columns are the exact kinetic
and potential energy changes along the two noise legs, with the deterministic
quadratic-variation counterterms (2/beta per momentum bond, (V''_i+V''_{i+1})
/beta per strain bond) reported inside Q_p/Q_r so those columns match the
generator computation, while martingale_p/martingale_r carry the zero-mean
remainder. The first-law residual is then exactly the energy the explicit
Hamiltonian leg fails to conserve, which vanishes linearly in dt.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .noise import BridgedNoise, initial_state_rng
from .schedules import ConstantSchedule
from .thermo import PotentialParams, ThermoModel, eval_potential

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard performance dependency
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

log = logging.getLogger(__name__)

THETA_MAX = 0.25
_CHUNK_COARSE = 1024


class BlowUpError(RuntimeError):
    """State left the finite range during integration."""


def default_sigma(n: int) -> int:
    """ceil(N^(3/4)): ergodic at micro scale, vanishing at macro scale."""
    return int(math.ceil(n**0.75 - 1e-9))


@dataclass
class ChainConfig:
    N: int
    beta: float = 1.0
    tension_schedule: object = field(default_factory=ConstantSchedule)
    sigma: float | None = None
    theta: float = 0.1
    dt: float | None = None  # coarse step; defaults to theta / (N sigma)
    t_end: float = 1.0
    seed: int = 0
    record_times: np.ndarray | None = None
    refine_level: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"need N >= 2 particles, got {self.N}")
        if self.beta <= 0.0 or not math.isfinite(self.beta):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.sigma is None:
            self.sigma = float(default_sigma(self.N))
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 < self.theta <= THETA_MAX):
            raise ValueError(f"theta must lie in (0, {THETA_MAX}], got {self.theta}")
        if self.dt is None:
            self.dt = self.theta / (self.N * self.sigma)
        if self.dt > THETA_MAX / (self.N * self.sigma) * (1.0 + 1e-12):
            raise ValueError(
                f"dt={self.dt} violates the stability bound "
                f"theta/(N sigma) with theta <= {THETA_MAX}"
            )
        if self.t_end <= 0.0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.refine_level < 0:
            raise ValueError("refine_level must be >= 0")
        if self.sigma / self.N >= 1.0 or self.N / self.sigma**2 >= 1.0:
            warnings.warn(
                f"noise scaling far from the hydrodynamic regime: "
                f"sigma/N={self.sigma / self.N:.3g}, N/sigma^2={self.N / self.sigma**2:.3g}",
                stacklevel=2,
            )
        self.n_coarse = max(1, int(round(self.t_end / self.dt)))
        self.t_end_eff = self.n_coarse * self.dt
        if self.record_times is None:
            self.record_times = np.linspace(0.0, self.t_end_eff, 200)
        self.record_times = np.asarray(self.record_times, dtype=float)
        t_max = max(self.t_end, self.t_end_eff)
        if np.any(self.record_times < 0.0) or np.any(
            self.record_times > t_max * (1.0 + 1e-9) + 1e-12
        ):
            raise ValueError("record_times must lie inside [0, t_end]")
        if np.any(np.diff(self.record_times) < 0.0):
            raise ValueError("record_times must be sorted")

    @property
    def dt_fine(self) -> float:
        return self.dt / 2**self.refine_level

    @property
    def n_steps(self) -> int:
        return self.n_coarse * 2**self.refine_level


@dataclass
class ChainState:
    r: np.ndarray
    p: np.ndarray
    t: float

    def copy(self) -> "ChainState":
        return ChainState(self.r.copy(), self.p.copy(), self.t)


@dataclass
class Ledger:
    """Cumulative per-particle energy bookkeeping along one trajectory."""

    E: float = 0.0
    W: float = 0.0
    Q_p: float = 0.0
    Q_r: float = 0.0
    martingale_p: float = 0.0
    martingale_r: float = 0.0

    @property
    def heat(self) -> float:
        return self.Q_p + self.Q_r + self.martingale_p + self.martingale_r

    def residual(self, e0: float) -> float:
        return self.E - e0 - self.W - self.heat


@dataclass
class LedgerSeries:
    t: np.ndarray
    E: np.ndarray
    W: np.ndarray
    Q_p: np.ndarray
    Q_r: np.ndarray
    martingale_p: np.ndarray
    martingale_r: np.ndarray

    @property
    def heat(self) -> np.ndarray:
        return self.Q_p + self.Q_r + self.martingale_p + self.martingale_r

    @property
    def first_law_residual(self) -> np.ndarray:
        return self.E - self.E[0] - self.W - self.heat


@dataclass
class TrajectoryResult:
    snapshots: list
    ledger: LedgerSeries
    config: ChainConfig
    n_steps: int


# -- numba kernel -------------------------------------------------------------


@njit(cache=True)
def _pot_v(r, kappa, h):
    if r >= h:
        return (1.0 - kappa) * r * r / 2.0 + kappa * (r * r / 2.0 + h * h / 10.0)
    if r <= -h:
        return (1.0 - kappa) * r * r / 2.0
    x = r / h
    s2 = x**3 / 8.0 - x**5 / 80.0 + x * x / 4.0 + 3.0 * x / 16.0 + 1.0 / 20.0
    return (1.0 - kappa) * r * r / 2.0 + kappa * h * h * s2


@njit(cache=True)
def _pot_dv(r, kappa, h):
    if r >= h:
        return r
    if r <= -h:
        return (1.0 - kappa) * r
    x = r / h
    s1 = 3.0 * x * x / 8.0 - x**4 / 16.0 + x / 2.0 + 3.0 / 16.0
    return (1.0 - kappa) * r + kappa * h * s1


@njit(cache=True)
def _pot_d2v(r, kappa, h):
    if r >= h:
        return 1.0
    if r <= -h:
        return 1.0 - kappa
    x = r / h
    return (1.0 - kappa) + kappa * (3.0 * x - x**3 + 2.0) / 4.0


@njit(cache=True)
def _segment_kernel(r, p, dw, dwt, taubars, dt, nn, sigma, beta, kappa, h, acc):
    """Advance (r, p) by dw.shape[0] steps, accumulating the ledger in acc.

    acc layout: [W, Q_p, Q_r, M_p, M_r]. Returns the first step index with a
    non-finite update, or -1.
    """
    n = r.shape[0]
    nsteps = dw.shape[0]
    coeff = math.sqrt(2.0 * nn * sigma / beta)
    ndt = nn * dt
    nsdt = nn * sigma * dt
    inv_n = 1.0 / nn
    ct_p = 2.0 * sigma * (n - 1) * dt / (beta * nn)
    ct_r_fac = sigma * dt / (beta * nn)
    a = np.empty(n)
    d2 = np.empty(n)
    lap_a = np.empty(n)
    lap_p = np.empty(n)
    for s in range(nsteps):
        taub = taubars[s]
        for i in range(n):
            a[i] = _pot_dv(r[i], kappa, h)
            d2[i] = _pot_d2v(r[i], kappa, h)
        for i in range(n):
            left_a = a[i - 1] - a[i] if i > 0 else 0.0
            right_a = a[i + 1] - a[i] if i < n - 1 else 0.0
            lap_a[i] = left_a + right_a
            left_p = p[i - 1] - p[i] if i > 0 else 0.0
            right_p = p[i + 1] - p[i] if i < n - 1 else 0.0
            lap_p[i] = left_p + right_p
        k1 = 0.0
        k2 = 0.0
        k3 = 0.0
        v1 = 0.0
        v2 = 0.0
        v3 = 0.0
        dr_tot = 0.0
        ct_r_sum = 0.0
        p_prev = 0.0  # pre-update momentum of the previous site (wall p_0 = 0)
        for i in range(n):
            a_next = a[i + 1] if i < n - 1 else taub
            drh = ndt * (p[i] - p_prev)
            p_prev = p[i]
            dph = ndt * (a_next - a[i])
            drnd = nsdt * lap_a[i]
            dpnd = nsdt * lap_p[i]
            er_left = dwt[s, i - 1] if i > 0 else 0.0
            er_right = dwt[s, i] if i < n - 1 else 0.0
            eta_r = coeff * (er_left - er_right)
            ep_left = dw[s, i - 1] if i > 0 else 0.0
            ep_right = dw[s, i] if i < n - 1 else 0.0
            eta_p = coeff * (ep_left - ep_right)
            r1 = r[i] + drh
            r2 = r1 + drnd
            r3 = r2 + eta_r
            q1 = p[i] + dph
            q2 = q1 + dpnd
            q3 = q2 + eta_p
            k1 += q1 * q1
            k2 += q2 * q2
            k3 += q3 * q3
            v1 += _pot_v(r1, kappa, h)
            v2 += _pot_v(r2, kappa, h)
            v3 += _pot_v(r3, kappa, h)
            dr_tot += r3 - r[i]
            deg = 2.0 if 0 < i < n - 1 else 1.0
            ct_r_sum += deg * d2[i]
            r[i] = r3
            p[i] = q3
        acc[0] += taub * inv_n * dr_tot
        acc[1] += (k2 - k1) / (2.0 * nn) + ct_p
        acc[2] += (v2 - v1) * inv_n + ct_r_fac * ct_r_sum
        acc[3] += (k3 - k2) / (2.0 * nn) - ct_p
        acc[4] += (v3 - v2) * inv_n - ct_r_fac * ct_r_sum
        if not (math.isfinite(k3) and math.isfinite(v3) and math.isfinite(dr_tot)):
            return s
    return -1


# -- public operations ---------------------------------------------------------


def _neumann_lap(x: np.ndarray) -> np.ndarray:
    # path-graph Laplacian: rows sum to zero, so noise drift conserves sums
    d = np.diff(x)
    out = np.empty_like(x)
    out[0] = d[0]
    out[-1] = -d[-1]
    out[1:-1] = d[1:] - d[:-1]
    return out


def _noise_vectors(dw: np.ndarray, dwt: np.ndarray, coeff: float):
    # row i gets coeff * (dw_{i-1} - dw_i) with w_0 = w_N = 0: exact telescoping
    eta_p = np.empty(dw.size + 1)
    eta_p[0] = -dw[0]
    eta_p[-1] = dw[-1]
    eta_p[1:-1] = dw[:-1] - dw[1:]
    eta_r = np.empty(dwt.size + 1)
    eta_r[0] = -dwt[0]
    eta_r[-1] = dwt[-1]
    eta_r[1:-1] = dwt[:-1] - dwt[1:]
    return coeff * eta_r, coeff * eta_p


def energy_per_particle(state: ChainState, model: ThermoModel) -> float:
    return float(np.mean(state.p**2) / 2.0 + np.mean(model.V(state.r)))


def make_initial_state(config: ChainConfig, tau0: float, model: ThermoModel) -> ChainState:
    """Product Gibbs sample at (beta, pbar=0, tau0): N-uniform entropy bound."""
    rng = initial_state_rng(config.seed)
    sample = model.sample_canonical(0.0, tau0, config.N, rng)
    return ChainState(r=sample.r, p=sample.p, t=0.0)


def drift(state: ChainState, tau_bar: float, config: ChainConfig, model: ThermoModel):
    """Deterministic part of the SDE: rates (dr/dt, dp/dt)."""
    n, sigma = config.N, config.sigma
    a = model.dV(state.r)
    p = state.p
    dr = n * (p - np.concatenate(([0.0], p[:-1]))) + n * sigma * _neumann_lap(a)
    dp = n * (np.concatenate((a[1:], [tau_bar])) - a) + n * sigma * _neumann_lap(p)
    return dr, dp


def draw_increments(rng: np.random.Generator, n: int, dt: float):
    """(dw, dwt): one step of the 2(N-1) independent Brownian increments."""
    z = rng.standard_normal((2, n - 1)) * math.sqrt(dt)
    return z[0], z[1]


def _split_displacements(state, tau_bar, config, model, increments):
    dt = config.dt_fine
    n, sigma = config.N, config.sigma
    a = model.dV(state.r)
    p = state.p
    drh = n * dt * (p - np.concatenate(([0.0], p[:-1])))
    dph = n * dt * (np.concatenate((a[1:], [tau_bar])) - a)
    drnd = n * sigma * dt * _neumann_lap(a)
    dpnd = n * sigma * dt * _neumann_lap(p)
    dw, dwt = increments
    coeff = math.sqrt(2.0 * n * sigma / config.beta)
    eta_r, eta_p = _noise_vectors(np.asarray(dw), np.asarray(dwt), coeff)
    return drh, dph, drnd, dpnd, eta_r, eta_p


def step(
    state: ChainState,
    config: ChainConfig,
    increments,
    model: ThermoModel,
    tau_bar: float | None = None,
) -> ChainState:
    """One Euler-Maruyama step of size config.dt_fine."""
    if tau_bar is None:
        tau_bar = float(config.tension_schedule(state.t))
    drh, dph, drnd, dpnd, eta_r, eta_p = _split_displacements(
        state, tau_bar, config, model, increments
    )
    r2 = state.r + (drh + drnd + eta_r)
    p2 = state.p + (dph + dpnd + eta_p)
    t2 = state.t + config.dt_fine
    if not (math.isfinite(r2.sum()) and math.isfinite(p2.sum())):
        raise BlowUpError(f"non-finite state after step at t={t2:.6g}")
    return ChainState(r=r2, p=p2, t=t2)


def accumulate_ledger(
    state_before: ChainState,
    state_after: ChainState,
    tau_bar: float,
    config: ChainConfig,
    increments,
    model: ThermoModel,
) -> Ledger:
    """Ledger increments for one step.

    W is tau_bar * Delta(mean strain) exactly; Q/M columns are the exact
    energy changes along the noise-drift and noise-coupling displacement legs,
    with the quadratic-variation counterterms shifted into Q_p/Q_r.
    """
    n, sigma, beta = config.N, config.sigma, config.beta
    dt = config.dt_fine
    drh, dph, drnd, dpnd, eta_r, eta_p = _split_displacements(
        state_before, tau_bar, config, model, increments
    )
    r1 = state_before.r + drh
    r2 = r1 + drnd
    r3 = r2 + eta_r
    p1 = state_before.p + dph
    p2 = p1 + dpnd
    p3 = p2 + eta_p
    v1 = float(np.sum(model.V(r1)))
    v2 = float(np.sum(model.V(r2)))
    v3 = float(np.sum(model.V(r3)))
    k1 = float(np.dot(p1, p1))
    k2 = float(np.dot(p2, p2))
    k3 = float(np.dot(p3, p3))
    d2 = model.d2V(state_before.r)
    deg = np.full(n, 2.0)
    deg[0] = deg[-1] = 1.0
    ct_p = 2.0 * sigma * (n - 1) * dt / (beta * n)
    ct_r = sigma * dt * float(np.dot(deg, d2)) / (beta * n)
    return Ledger(
        E=energy_per_particle(state_after, model),
        W=tau_bar * float(np.mean(state_after.r) - np.mean(state_before.r)),
        Q_p=(k2 - k1) / (2.0 * n) + ct_p,
        Q_r=(v2 - v1) / n + ct_r,
        martingale_p=(k3 - k2) / (2.0 * n) - ct_p,
        martingale_r=(v3 - v2) / n - ct_r,
    )


def run_trajectory(
    config: ChainConfig,
    tau0: float,
    model: ThermoModel | None = None,
    initial_state: ChainState | None = None,
) -> TrajectoryResult:
    """Integrate from the Gibbs initial state to t_end, recording snapshots and
    the cumulative ledger at config.record_times (snapped to step boundaries)."""
    if model is None:
        model = ThermoModel(beta=config.beta, potential=PotentialParams())
    if abs(model.beta - config.beta) > 1e-12:
        raise ValueError("thermo model beta disagrees with chain config")
    n = config.N
    dt = config.dt_fine
    n_steps = config.n_steps
    kappa = model.potential.kappa
    h = model.potential.moll_width

    state = initial_state.copy() if initial_state is not None else make_initial_state(
        config, tau0, model
    )
    r, p = state.r.copy(), state.p.copy()

    rec_steps = np.minimum(np.round(config.record_times / dt).astype(int), n_steps)
    acc = np.zeros(5)
    out = {key: [] for key in ("t", "E", "W", "Q_p", "Q_r", "M_p", "M_r")}
    snapshots = []

    def record(k: int):
        t_k = k * dt
        st = ChainState(r=r.copy(), p=p.copy(), t=t_k)
        snapshots.append(st)
        out["t"].append(t_k)
        out["E"].append(energy_per_particle(st, model))
        out["W"].append(acc[0])
        out["Q_p"].append(acc[1])
        out["Q_r"].append(acc[2])
        out["M_p"].append(acc[3])
        out["M_r"].append(acc[4])

    rec_idx = 0
    while rec_idx < len(rec_steps) and rec_steps[rec_idx] == 0:
        record(0)
        rec_idx += 1

    noise = BridgedNoise(config.seed, n - 1, config.dt, config.refine_level)
    k = 0
    for c0 in range(0, config.n_coarse, _CHUNK_COARSE):
        dw_chunk, dwt_chunk = noise.next_chunk(min(_CHUNK_COARSE, config.n_coarse - c0))
        chunk_len = dw_chunk.shape[0]
        # split the chunk at record boundaries so the kernel runs segment-wise
        pos = 0
        while pos < chunk_len:
            seg_end = chunk_len
            if rec_idx < len(rec_steps):
                # records at step <= k were drained, so this stays > pos
                seg_end = min(seg_end, pos + int(rec_steps[rec_idx]) - k)
            times = (k + np.arange(seg_end - pos)) * dt
            taubars = np.asarray(config.tension_schedule(times), dtype=float)
            if taubars.ndim == 0:
                taubars = np.full(seg_end - pos, float(taubars))
            bad = _segment_kernel(
                r,
                p,
                dw_chunk[pos:seg_end],
                dwt_chunk[pos:seg_end],
                taubars,
                dt,
                float(n),
                float(config.sigma),
                config.beta,
                kappa,
                h,
                acc,
            )
            if bad >= 0:
                raise BlowUpError(
                    f"non-finite state at step {k + bad + 1}, t={(k + bad + 1) * dt:.6g}"
                )
            k += seg_end - pos
            pos = seg_end
            while rec_idx < len(rec_steps) and rec_steps[rec_idx] == k:
                record(k)
                rec_idx += 1
        log.debug("chain N=%d t=%.4g (%d/%d steps)", n, k * dt, k, n_steps)

    series = LedgerSeries(
        t=np.asarray(out["t"]),
        E=np.asarray(out["E"]),
        W=np.asarray(out["W"]),
        Q_p=np.asarray(out["Q_p"]),
        Q_r=np.asarray(out["Q_r"]),
        martingale_p=np.asarray(out["M_p"]),
        martingale_r=np.asarray(out["M_r"]),
    )
    return TrajectoryResult(snapshots=snapshots, ledger=series, config=config, n_steps=k)


def write_snapshot_csv(path, snapshots) -> None:
    """Long-format (t, i, r, p) dump of the recorded states."""
    from .csvio import write_csv

    rows = []
    for st in snapshots:
        for i in range(st.r.size):
            rows.append((st.t, i + 1, st.r[i], st.p[i]))
    write_csv(path, ["t", "i", "r", "p"], rows)


def write_ledger_csv(path, series: LedgerSeries) -> None:
    from .csvio import write_csv

    resid = series.first_law_residual
    rows = [
        (
            series.t[k],
            series.E[k],
            series.W[k],
            series.Q_p[k],
            series.Q_r[k],
            series.martingale_p[k],
            series.martingale_r[k],
            resid[k],
        )
        for k in range(series.t.size)
    ]
    write_csv(
        path,
        ["t", "E", "W", "Q_p", "Q_r", "M_p", "M_r", "first_law_residual"],
        rows,
    )
