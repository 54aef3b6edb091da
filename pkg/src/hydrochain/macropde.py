"""Viscous p-system solver with the chain's boundary conditions.

    dr/dt - dp/dx       = delta1 * d2/dx2 tau(r)
    dp/dt - d tau(r)/dx = delta2 * d2/dx2 p
    p(t,0) = 0,  tau(r(t,1)) = taubar(t),  dp/dx(t,1) = 0,  dr/dx(t,0) = 0.

Collocated uniform grid, central second-order stencils, ghost cells for the
boundary conditions, Heun time stepping. The solver accumulates the free
energy, boundary work and dissipation every step so the energy balance

    F(t) - F(0) = W(t) - D(t)

can be checked against the discretization error, and the Clausius gap
W - (F(rho1) - F(rho0)) evaluated after relaxation. The time loop runs in a
compiled kernel working on the tabulated tension/free-energy splines; the
numpy implementations of the same stencils stay as the reference path.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .microchain import BlowUpError
from .schedules import ConstantSchedule
from .thermo import ThermoModel

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

log = logging.getLogger(__name__)


@dataclass
class MacroConfig:
    M: int = 400
    delta1: float = 1e-3
    delta2: float = 1e-3
    beta: float = 1.0
    tension_schedule: object = field(default_factory=ConstantSchedule)
    cfl: float = 0.4
    t_end: float = 1.0
    record_times: np.ndarray | None = None

    def __post_init__(self):
        if self.M < 8:
            raise ValueError(f"need at least 8 cells, got M={self.M}")
        if self.delta1 < 0.0 or self.delta2 < 0.0:
            raise ValueError("viscosities must be nonnegative")
        if not (0.0 < self.cfl < 1.0):
            raise ValueError(f"cfl must lie in (0,1), got {self.cfl}")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        self.dx = 1.0 / self.M
        # advective bound with max wave speed sqrt(c2) = 1; diffusive bound
        # with the larger of delta1 c2 and delta2
        adv = self.dx
        dif_coeff = max(self.delta1 * 1.0, self.delta2)
        dif = self.dx**2 / (2.0 * dif_coeff) if dif_coeff > 0.0 else math.inf
        dt_stable = self.cfl * min(adv, dif)
        self.n_steps = max(1, int(math.ceil(self.t_end / dt_stable - 1e-12)))
        self.dt = self.t_end / self.n_steps
        if self.record_times is None:
            self.record_times = np.linspace(0.0, self.t_end, 200)
        self.record_times = np.asarray(self.record_times, dtype=float)
        if np.any(self.record_times < 0.0) or np.any(
            self.record_times > self.t_end * (1.0 + 1e-9) + 1e-12
        ):
            raise ValueError("record_times must lie inside [0, t_end]")

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.dx


@dataclass
class MacroState:
    r: np.ndarray
    p: np.ndarray
    t: float

    def copy(self) -> "MacroState":
        return MacroState(self.r.copy(), self.p.copy(), self.t)


@dataclass
class MacroTrajectory:
    config: MacroConfig
    times: np.ndarray  # recorded snapshot times
    r: np.ndarray  # (n_rec, M)
    p: np.ndarray
    t_hist: np.ndarray  # per-step times including 0
    F_hist: np.ndarray
    W_hist: np.ndarray
    D_hist: np.ndarray

    def state_at(self, t: float) -> MacroState:
        """Snapshot linearly interpolated in time between records."""
        k = int(np.searchsorted(self.times, t - 1e-12))
        if k == 0:
            return MacroState(self.r[0].copy(), self.p[0].copy(), float(self.times[0]))
        if k >= self.times.size:
            return MacroState(self.r[-1].copy(), self.p[-1].copy(), float(self.times[-1]))
        t0, t1 = self.times[k - 1], self.times[k]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return MacroState(
            (1 - w) * self.r[k - 1] + w * self.r[k],
            (1 - w) * self.p[k - 1] + w * self.p[k],
            t,
        )


def uniform_state(config: MacroConfig, rho: float) -> MacroState:
    return MacroState(r=np.full(config.M, float(rho)), p=np.zeros(config.M), t=0.0)


# -- reference (numpy) implementations of the spec operations -------------------


def apply_bcs(state: MacroState, tau_bar: float, model: ThermoModel):
    """(r_pad, p_pad) of length M+2 with ghost cells enforcing
    p(0)=0, dr/dx(0)=0, tau(r(1))=tau_bar, dp/dx(1)=0."""
    r, p = state.r, state.p
    r_pad = np.empty(r.size + 2)
    p_pad = np.empty(p.size + 2)
    r_pad[1:-1] = r
    p_pad[1:-1] = p
    p_pad[0] = -p[0]  # face value at x=0 is exactly 0
    r_pad[0] = r[0]
    r_face = model.invert_tau_table(tau_bar)
    r_pad[-1] = 2.0 * r_face - r[-1]
    p_pad[-1] = p[-1]
    return r_pad, p_pad


def viscous_rhs(state: MacroState, tau_bar: float, config: MacroConfig, model: ThermoModel):
    """(dr/dt, dp/dt) by central differences on the ghost-padded arrays."""
    dx = config.dx
    r_pad, p_pad = apply_bcs(state, tau_bar, model)
    tau_pad = np.asarray(model.tau_of_rho(r_pad))
    dp_dx = (p_pad[2:] - p_pad[:-2]) / (2.0 * dx)
    dtau_dx = (tau_pad[2:] - tau_pad[:-2]) / (2.0 * dx)
    lap_tau = (tau_pad[2:] - 2.0 * tau_pad[1:-1] + tau_pad[:-2]) / dx**2
    lap_p = (p_pad[2:] - 2.0 * p_pad[1:-1] + p_pad[:-2]) / dx**2
    return dp_dx + config.delta1 * lap_tau, dtau_dx + config.delta2 * lap_p


def free_energy_functional(state: MacroState, model: ThermoModel) -> float:
    """int_0^1 (p^2/2 + F(beta, r)) dx by midpoint quadrature."""
    f_vals = np.asarray(model.free_energy_of_rho(state.r))
    return float(np.mean(state.p**2 / 2.0 + f_vals))


def balance_integrands(state: MacroState, tau_bar: float, config: MacroConfig, model):
    """(work rate, dissipation rate) at one instant, face-based."""
    dx = config.dx
    r, p = state.r, state.p
    tau = np.asarray(model.tau_of_rho(r))
    # tau gradients at the M+1 faces: Neumann r at x=0 zeroes the first one,
    # the Dirichlet tension at x=1 gives a half-cell one-sided difference
    g_tau = np.empty(config.M + 1)
    g_tau[0] = 0.0
    g_tau[1:-1] = np.diff(tau) / dx
    g_tau[-1] = (tau_bar - tau[-1]) / (0.5 * dx)
    g_p = np.empty(config.M + 1)
    g_p[0] = p[0] / (0.5 * dx)  # p(0) = 0
    g_p[1:-1] = np.diff(p) / dx
    g_p[-1] = 0.0  # Neumann p at x=1
    w_face = np.full(config.M + 1, dx)
    w_face[0] = w_face[-1] = dx / 2.0
    diss = float(np.sum(w_face * (config.delta1 * g_tau**2 + config.delta2 * g_p**2)))
    work = tau_bar * (p[-1] + config.delta1 * g_tau[-1])
    return work, diss


# -- compiled kernel -------------------------------------------------------------


@njit(cache=True)
def _spl(c, x0, h, nk, x):
    j = int((x - x0) / h)
    if j < 0:
        j = 0
    if j > nk - 2:
        j = nk - 2
    s = x - (x0 + j * h)
    return ((c[0, j] * s + c[1, j]) * s + c[2, j]) * s + c[3, j]


@njit(cache=True)
def _macro_rhs_kernel(r, p, rface, taub, dx, d1, d2, c_tau, x0, h, nk, out_r, out_p, tau_cells):
    m = r.size
    inv2dx = 1.0 / (2.0 * dx)
    invdx2 = 1.0 / (dx * dx)
    tau_lo = _spl(c_tau, x0, h, nk, r[0])  # ghost r = r[0] (Neumann)
    tau_hi = _spl(c_tau, x0, h, nk, 2.0 * rface - r[m - 1])
    for i in range(m):
        tau_cells[i] = _spl(c_tau, x0, h, nk, r[i])
    for i in range(m):
        pm = -p[0] if i == 0 else p[i - 1]
        pp_ = p[m - 1] if i == m - 1 else p[i + 1]
        tm = tau_lo if i == 0 else tau_cells[i - 1]
        tp_ = tau_hi if i == m - 1 else tau_cells[i + 1]
        out_r[i] = (pp_ - pm) * inv2dx + d1 * (tp_ - 2.0 * tau_cells[i] + tm) * invdx2
        out_p[i] = (tp_ - tm) * inv2dx + d2 * (pp_ - 2.0 * p[i] + pm) * invdx2


@njit(cache=True)
def _macro_balance_kernel(r, p, taub, dx, d1, d2, c_tau, c_f, x0, h, nk, tau_cells, out):
    """out = (work rate, dissipation rate, free energy)."""
    m = r.size
    diss = 0.0
    fsum = 0.0
    for i in range(m):
        tau_cells[i] = _spl(c_tau, x0, h, nk, r[i])
        fsum += p[i] * p[i] / 2.0 + _spl(c_f, x0, h, nk, r[i])
    g0p = p[0] / (0.5 * dx)
    diss += 0.5 * dx * d2 * g0p * g0p  # tau face gradient at x=0 is 0
    for i in range(m - 1):
        gt = (tau_cells[i + 1] - tau_cells[i]) / dx
        gp = (p[i + 1] - p[i]) / dx
        diss += dx * (d1 * gt * gt + d2 * gp * gp)
    gN = (taub - tau_cells[m - 1]) / (0.5 * dx)
    diss += 0.5 * dx * d1 * gN * gN  # p face gradient at x=1 is 0
    out[0] = taub * (p[m - 1] + d1 * gN)
    out[1] = diss
    out[2] = fsum / m


@njit(cache=True)
def _macro_segment(
    r,
    p,
    dt,
    dx,
    d1,
    d2,
    taubars,
    rfaces,
    c_tau,
    c_f,
    x0,
    h,
    nk,
    f_hist,
    w_hist,
    d_hist,
    k_off,
):
    """Heun steps k_off+1 .. k_off+nsteps; taubars/rfaces indexed 0..nsteps.

    Returns the first 1-based local step with a non-finite state, else -1."""
    m = r.size
    nsteps = taubars.size - 1
    k1r = np.empty(m)
    k1p = np.empty(m)
    k2r = np.empty(m)
    k2p = np.empty(m)
    rs = np.empty(m)
    ps = np.empty(m)
    tau_cells = np.empty(m)
    out = np.empty(3)
    _macro_balance_kernel(r, p, taubars[0], dx, d1, d2, c_tau, c_f, x0, h, nk, tau_cells, out)
    w_rate = out[0]
    d_rate = out[1]
    for k in range(1, nsteps + 1):
        _macro_rhs_kernel(
            r, p, rfaces[k - 1], taubars[k - 1], dx, d1, d2, c_tau, x0, h, nk, k1r, k1p, tau_cells
        )
        for i in range(m):
            rs[i] = r[i] + dt * k1r[i]
            ps[i] = p[i] + dt * k1p[i]
        _macro_rhs_kernel(
            rs, ps, rfaces[k], taubars[k], dx, d1, d2, c_tau, x0, h, nk, k2r, k2p, tau_cells
        )
        chk = 0.0
        for i in range(m):
            r[i] = r[i] + 0.5 * dt * (k1r[i] + k2r[i])
            p[i] = p[i] + 0.5 * dt * (k1p[i] + k2p[i])
            chk += r[i] + p[i]
        if not math.isfinite(chk):
            return k
        _macro_balance_kernel(r, p, taubars[k], dx, d1, d2, c_tau, c_f, x0, h, nk, tau_cells, out)
        f_hist[k_off + k] = out[2]
        w_hist[k_off + k] = w_hist[k_off + k - 1] + 0.5 * dt * (w_rate + out[0])
        d_hist[k_off + k] = d_hist[k_off + k - 1] + 0.5 * dt * (d_rate + out[1])
        w_rate = out[0]
        d_rate = out[1]
    return -1


def _invert_tau_batch(model: ThermoModel, taus: np.ndarray) -> np.ndarray:
    """Vectorized spline-consistent inversion (see ThermoModel.invert_tau_table)."""
    spline = model.table["tau_of_rho"]
    deriv = spline.derivative()
    uniq, inv = np.unique(taus, return_inverse=True)
    rho = np.asarray(model.table["rho_of_tau"](uniq), dtype=float)
    for _ in range(8):
        res = np.asarray(spline(rho)) - uniq
        if np.max(np.abs(res)) <= 1e-14 * max(1.0, np.max(np.abs(uniq))):
            break
        rho = rho - res / np.asarray(deriv(rho))
    return rho[inv]


def advance(
    state: MacroState,
    config: MacroConfig,
    model: ThermoModel,
    t_target: float | None = None,
) -> MacroTrajectory:
    """Heun integration to t_target (default config.t_end), recording
    snapshots at config.record_times and the balance ledger every step."""
    t_target = config.t_end if t_target is None else t_target
    n_steps = int(round(t_target / config.dt))
    dt = config.dt
    rec_steps = np.minimum(np.round(config.record_times / dt).astype(int), n_steps)

    packed = model.table["packed"]
    c_tau, c_f = packed["c_tau"], packed["c_F"]
    x0, h, nk = packed["rho0"], packed["h"], packed["n"]

    step_times = state.t + dt * np.arange(n_steps + 1)
    taubars = np.asarray(config.tension_schedule(step_times), dtype=float)
    if taubars.ndim == 0:
        taubars = np.full(n_steps + 1, float(taubars))
    rfaces = _invert_tau_batch(model, taubars)

    r = state.r.copy()
    p = state.p.copy()
    t_hist = step_times
    f_hist = np.empty(n_steps + 1)
    w_hist = np.empty(n_steps + 1)
    d_hist = np.empty(n_steps + 1)
    f_hist[0] = free_energy_functional(MacroState(r, p, state.t), model)
    w_hist[0] = 0.0
    d_hist[0] = 0.0
    snapshots_t, snaps_r, snaps_p = [], [], []

    rec_idx = 0
    k = 0
    while rec_idx < rec_steps.size and rec_steps[rec_idx] == 0:
        snapshots_t.append(state.t)
        snaps_r.append(r.copy())
        snaps_p.append(p.copy())
        rec_idx += 1
    while k < n_steps:
        k_next = n_steps if rec_idx >= rec_steps.size else int(rec_steps[rec_idx])
        k_next = max(k + 1, min(k_next, n_steps))
        bad = _macro_segment(
            r,
            p,
            dt,
            config.dx,
            config.delta1,
            config.delta2,
            taubars[k : k_next + 1],
            rfaces[k : k_next + 1],
            c_tau,
            c_f,
            x0,
            h,
            nk,
            f_hist,
            w_hist,
            d_hist,
            k,
        )
        if bad >= 0:
            raise BlowUpError(
                f"macro solver blew up at step {k + bad}, t={(k + bad) * dt:.6g}"
            )
        k = k_next
        while rec_idx < rec_steps.size and rec_steps[rec_idx] == k:
            snapshots_t.append(float(step_times[k]))
            snaps_r.append(r.copy())
            snaps_p.append(p.copy())
            rec_idx += 1
        log.debug("macro M=%d t=%.4g (%d/%d steps)", config.M, step_times[k], k, n_steps)

    return MacroTrajectory(
        config=config,
        times=np.asarray(snapshots_t),
        r=np.asarray(snaps_r),
        p=np.asarray(snaps_p),
        t_hist=t_hist,
        F_hist=f_hist,
        W_hist=w_hist,
        D_hist=d_hist,
    )


def work_and_dissipation(traj: MacroTrajectory):
    """(W(t), D(t), |F(t)-F(0)-W(t)+D(t)|) sampled at every step."""
    residual = np.abs(traj.F_hist - traj.F_hist[0] - traj.W_hist + traj.D_hist)
    return traj.W_hist, traj.D_hist, residual


def clausius_gap(
    traj: MacroTrajectory,
    model: ThermoModel,
    tau0: float,
    tau1: float,
    stationarity_tol: float = 1e-3,
) -> float:
    """W - (F(beta, rho(tau1)) - F(beta, rho(tau0))) at the end of the run.

    Nonnegative up to discretization error; equals the accumulated
    dissipation once the final state has relaxed."""
    p_norm = math.sqrt(float(np.mean(traj.p[-1] ** 2)))
    if p_norm > stationarity_tol:
        warnings.warn(
            f"final state not stationary: ||p||_2 = {p_norm:.3g}", stacklevel=2
        )
    df = model.free_energy(model.mean_strain(tau1)) - model.free_energy(
        model.mean_strain(tau0)
    )
    return float(traj.W_hist[-1] - df)


def entropy_pair(model: ThermoModel):
    """Mechanical Lax pair eta = p^2/2 + F(r), q = -p tau(r) and its partials."""

    def eta(r, p):
        return p**2 / 2.0 + np.asarray(model.free_energy_of_rho(r))

    def q(r, p):
        return -p * np.asarray(model.tau_of_rho(r))

    def eta_r(r, p):
        return np.asarray(model.tau_of_rho(r)) + 0.0 * np.asarray(p)

    def eta_p(r, p):
        return np.asarray(p) + 0.0 * np.asarray(r)

    def q_r(r, p):
        return -np.asarray(p) * np.asarray(model.tau_prime_of_rho(r))

    def q_p(r, p):
        return -np.asarray(model.tau_of_rho(r)) + 0.0 * np.asarray(p)

    return {"eta": eta, "q": q, "eta_r": eta_r, "eta_p": eta_p, "q_r": q_r, "q_p": q_p}


def entropy_pair_residual(traj: MacroTrajectory, model: ThermoModel, phi) -> float:
    """int int (eta dphi/dt + q dphi/dx) dx dt over the recorded trajectory.

    For vanishing-viscosity trajectories this is >= -O(delta) and strictly
    positive at entropy-producing shocks."""
    if phi.t0 < traj.times[0] - 1e-12 or phi.t1 > traj.times[-1] + 1e-12:
        raise ValueError("test function time support exceeds the trajectory")
    if phi.x0 < 0.0 or phi.x1 > 1.0:
        raise ValueError("test function space support exceeds (0,1)")
    pair = entropy_pair(model)
    x = traj.config.x
    vals = np.empty(traj.times.size)
    for k in range(traj.times.size):
        t = traj.times[k]
        r, p = traj.r[k], traj.p[k]
        eta = pair["eta"](r, p)
        qv = pair["q"](r, p)
        dphi_t = np.array([phi.dt(t, xi) for xi in x])
        dphi_x = np.array([phi.dx(t, xi) for xi in x])
        vals[k] = np.mean(eta * dphi_t + qv * dphi_x)
    return float(np.trapezoid(vals, traj.times))


def write_fields_csv(path, traj: MacroTrajectory, model: ThermoModel) -> None:
    from .csvio import write_csv

    x = traj.config.x
    rows = []
    for k in range(traj.times.size):
        tau = np.asarray(model.tau_of_rho(traj.r[k]))
        for j in range(x.size):
            rows.append((traj.times[k], x[j], traj.r[k, j], traj.p[k, j], tau[j]))
    write_csv(path, ["t", "x", "r", "p", "tau"], rows)


def write_balance_csv(path, traj: MacroTrajectory) -> None:
    from .csvio import write_csv

    _, _, residual = work_and_dissipation(traj)
    rows = [
        (traj.t_hist[k], traj.F_hist[k], traj.W_hist[k], traj.D_hist[k], residual[k])
        for k in range(traj.t_hist.size)
    ]
    write_csv(path, ["t", "F", "W", "D", "residual"], rows)
