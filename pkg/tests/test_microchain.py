"""Chain integrator tests: drift fixed points, exact noise conservation,
determinism, ledger identities and the dt-refinement behavior of the first
law."""

import math

import numpy as np
import pytest

from hydrochain.microchain import (
    BlowUpError,
    ChainConfig,
    ChainState,
    accumulate_ledger,
    draw_increments,
    drift,
    make_initial_state,
    run_trajectory,
    step,
)
from hydrochain.noise import BridgedNoise
from hydrochain.schedules import ConstantSchedule, RampSchedule, StepSchedule
from hydrochain.thermo import PotentialParams, ThermoModel


@pytest.fixture(scope="module")
def model():
    return ThermoModel(beta=1.0, potential=PotentialParams(kappa=0.25, moll_width=0.1))


def fixed_point_state(model, n, rho=0.7):
    return ChainState(r=np.full(n, rho), p=np.zeros(n), t=0.0), float(model.dV(rho))


class TestConfig:
    def test_defaults(self):
        cfg = ChainConfig(N=256, t_end=0.1)
        assert cfg.sigma == 64.0
        assert cfg.dt == pytest.approx(0.1 / (256 * 64))
        assert cfg.record_times[-1] == pytest.approx(cfg.t_end_eff)

    def test_sigma_defaults(self):
        assert ChainConfig(N=128, t_end=0.1).sigma == 39.0
        assert ChainConfig(N=512, t_end=0.1).sigma == 108.0

    def test_stability_bound_enforced(self):
        with pytest.raises(ValueError, match="stability"):
            ChainConfig(N=128, t_end=0.1, dt=1.0)

    def test_record_times_outside_range(self):
        with pytest.raises(ValueError, match="record_times"):
            ChainConfig(N=64, t_end=0.1, record_times=np.array([0.0, 0.2]))

    def test_scaling_warning(self):
        with pytest.warns(UserWarning, match="hydrodynamic"):
            ChainConfig(N=8, sigma=16.0, t_end=0.01)


class TestInitialState:
    def test_moments(self, model):
        cfg = ChainConfig(N=10**4, t_end=0.01, seed=2)
        st = make_initial_state(cfg, 0.5, model)
        rho = model.mean_strain(0.5)
        se_r = st.r.std() / 100.0
        se_p = st.p.std() / 100.0
        assert abs(st.r.mean() - rho) <= 4 * se_r
        assert abs(st.p.mean()) <= 4 * se_p
        assert st.r.size == st.p.size == 10**4
        assert st.t == 0.0

    def test_seed_determinism(self, model):
        cfg = ChainConfig(N=100, t_end=0.01, seed=9)
        a = make_initial_state(cfg, 0.3, model)
        b = make_initial_state(cfg, 0.3, model)
        assert np.array_equal(a.r, b.r) and np.array_equal(a.p, b.p)


class TestDrift:
    def test_equilibrium_fixed_point(self, model):
        cfg = ChainConfig(N=32, t_end=0.01)
        st, taub = fixed_point_state(model, 32)
        dr, dp = drift(st, taub, cfg, model)
        assert np.allclose(dr, 0.0, atol=1e-13)
        assert np.allclose(dp, 0.0, atol=1e-13)

    def test_boundary_forcing_only(self, model):
        cfg = ChainConfig(N=32, t_end=0.01)
        st, taub = fixed_point_state(model, 32)
        dr, dp = drift(st, taub + 1.0, cfg, model)
        assert np.allclose(dr, 0.0, atol=1e-13)
        assert np.allclose(dp[:-1], 0.0, atol=1e-13)
        assert dp[-1] == pytest.approx(32.0)

    def test_constant_field_laplacians_vanish(self, model):
        cfg = ChainConfig(N=16, t_end=0.01, sigma=8.0)
        st = ChainState(r=np.full(16, -1.3), p=np.full(16, 0.4), t=0.0)
        taub = float(model.dV(-1.3))
        dr, dp = drift(st, taub, cfg, model)
        # r-drift reduces to the wall gradient term, p-drift to boundary forcing
        assert dr[0] == pytest.approx(16 * 0.4)
        assert np.allclose(dr[1:], 0.0, atol=1e-13)
        assert np.allclose(dp, 0.0, atol=1e-12)


class TestStep:
    def test_fixed_point_with_zero_noise(self, model):
        cfg = ChainConfig(N=24, t_end=0.01)
        st, taub = fixed_point_state(model, 24)
        zero = (np.zeros(23), np.zeros(23))
        st2 = step(st, cfg, zero, model, tau_bar=taub)
        assert np.allclose(st2.r, st.r, atol=1e-15)
        assert np.allclose(st2.p, st.p, atol=1e-15)
        assert st2.t == pytest.approx(cfg.dt_fine)

    def test_noise_only_conservation(self, model):
        # at the drift fixed point the update is pure noise: sums telescoped
        cfg = ChainConfig(N=100, t_end=0.01, seed=4)
        st, taub = fixed_point_state(model, 100, rho=0.7)
        rng = np.random.default_rng(17)
        for _ in range(20):
            inc = draw_increments(rng, cfg.N, cfg.dt_fine)
            st2 = step(st, cfg, inc, model, tau_bar=taub)
            scale_r = np.abs(st2.r).sum() + 1.0
            scale_p = np.abs(st2.p).sum() + 1.0
            assert abs(st2.r.sum() - st.r.sum()) <= 1e-12 * scale_r
            assert abs(st2.p.sum() - st.p.sum()) <= 1e-12 * scale_p
            # drift contributions stay zero only at the fixed point; reset r
            st = ChainState(st.r, st2.p - (st2.p - st.p), st.t)

    def test_trajectory_determinism(self, model):
        cfg = ChainConfig(N=48, t_end=0.02, seed=21, tension_schedule=ConstantSchedule(0.2))
        a = run_trajectory(cfg, 0.2, model)
        b = run_trajectory(cfg, 0.2, model)
        for sa, sb in zip(a.snapshots, b.snapshots):
            assert np.array_equal(sa.r, sb.r) and np.array_equal(sa.p, sb.p)
        assert np.array_equal(a.ledger.W, b.ledger.W)
        assert np.array_equal(a.ledger.first_law_residual, b.ledger.first_law_residual)

    def test_blow_up_detection(self, model):
        cfg = ChainConfig(N=16, t_end=0.01)
        st = ChainState(r=1e308 * (-1.0) ** np.arange(16), p=np.zeros(16), t=0.0)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(BlowUpError):
            step(st, cfg, (np.zeros(15), np.zeros(15)), model, tau_bar=0.0)

    def test_run_blow_up_names_step(self, model):
        cfg = ChainConfig(N=16, t_end=0.01, seed=1)
        bad = ChainState(r=1e300 * (-1.0) ** np.arange(16), p=np.zeros(16), t=0.0)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(
            BlowUpError, match="step"
        ):
            run_trajectory(cfg, 0.0, model, initial_state=bad)


class TestLedger:
    def test_frozen_chain_net_zero(self, model):
        # zero increments at the drift fixed point: no energy, work or heat
        # moves; the QV counterterm only shifts between Q and M columns
        cfg = ChainConfig(N=24, t_end=0.01)
        st, taub = fixed_point_state(model, 24)
        zero = (np.zeros(23), np.zeros(23))
        st2 = step(st, cfg, zero, model, tau_bar=taub)
        led = accumulate_ledger(st, st2, taub, cfg, zero, model)
        e1 = np.mean(st.p**2) / 2 + np.mean(model.V(st.r))
        assert led.W == 0.0
        assert led.heat == pytest.approx(0.0, abs=1e-15)
        assert led.E == pytest.approx(e1, abs=1e-15)
        assert led.Q_p == pytest.approx(-led.martingale_p, abs=1e-15)

    def test_work_is_taubar_dL_exactly(self, model):
        cfg = ChainConfig(N=64, t_end=0.01, seed=3)
        st = make_initial_state(cfg, 0.4, model)
        rng = np.random.default_rng(8)
        inc = draw_increments(rng, cfg.N, cfg.dt_fine)
        st2 = step(st, cfg, inc, model, tau_bar=0.9)
        led = accumulate_ledger(st, st2, 0.9, cfg, inc, model)
        assert led.W == pytest.approx(0.9 * (st2.r.mean() - st.r.mean()), abs=1e-16)

    def test_public_ops_match_kernel(self, model):
        """step + accumulate_ledger replayed stepwise reproduce run_trajectory."""
        cfg = ChainConfig(
            N=32,
            t_end=20 * 0.1 / (32 * 14),
            seed=13,
            tension_schedule=RampSchedule(0.1, 0.6, t1=0.01),
            record_times=np.array([0.0, 20 * 0.1 / (32 * 14)]),
        )
        res = run_trajectory(cfg, 0.1, model)
        st = make_initial_state(cfg, 0.1, model)
        noise = BridgedNoise(cfg.seed, cfg.N - 1, cfg.dt, 0)
        dw, dwt = noise.next_chunk(cfg.n_coarse)
        acc = {"W": 0.0, "Q_p": 0.0, "Q_r": 0.0, "M_p": 0.0, "M_r": 0.0}
        for k in range(cfg.n_steps):
            taub = float(cfg.tension_schedule(k * cfg.dt))
            st2 = step(st, cfg, (dw[k], dwt[k]), model, tau_bar=taub)
            led = accumulate_ledger(st, st2, taub, cfg, (dw[k], dwt[k]), model)
            acc["W"] += led.W
            acc["Q_p"] += led.Q_p
            acc["Q_r"] += led.Q_r
            acc["M_p"] += led.martingale_p
            acc["M_r"] += led.martingale_r
            st = st2
        assert np.allclose(st.r, res.snapshots[-1].r, atol=1e-12)
        assert np.allclose(st.p, res.snapshots[-1].p, atol=1e-12)
        assert acc["W"] == pytest.approx(res.ledger.W[-1], abs=1e-12)
        assert acc["Q_p"] == pytest.approx(res.ledger.Q_p[-1], abs=1e-10)
        assert acc["Q_r"] == pytest.approx(res.ledger.Q_r[-1], abs=1e-10)
        assert acc["M_p"] == pytest.approx(res.ledger.martingale_p[-1], abs=1e-10)
        assert acc["M_r"] == pytest.approx(res.ledger.martingale_r[-1], abs=1e-10)

    def test_first_law_refinement_smoke(self, model):
        sched = RampSchedule(tau0=0.0, tau1=0.5, t1=0.025)
        res = []
        for lev in range(2):
            cfg = ChainConfig(
                N=64,
                t_end=0.05,
                seed=6,
                tension_schedule=sched,
                refine_level=lev,
                record_times=np.array([0.0, 0.05]),
            )
            out = run_trajectory(cfg, 0.0, model)
            res.append(out.ledger.first_law_residual[-1])
        assert 0.25 <= res[1] / res[0] <= 0.75


class TestTrajectoryStatistics:
    def test_stationarity_smoke(self, model):
        cfg = ChainConfig(
            N=128,
            t_end=0.2,
            seed=31,
            tension_schedule=ConstantSchedule(0.5),
            record_times=np.linspace(0.0, 0.2, 41),
        )
        res = run_trajectory(cfg, 0.5, model)
        rho = model.mean_strain(0.5)
        tail = [s for s in res.snapshots if s.t >= 0.1]
        r_avg = np.mean([s.r.mean() for s in tail])
        p_avg = np.mean([s.p.mean() for s in tail])
        vp_avg = np.mean([model.dV(s.r).mean() for s in tail])
        # single replica: allow generous Monte Carlo bands ~ 3 sd of a single
        # site mean (time correlation of the conserved fields is long)
        band = 3.0 * math.sqrt(1.4 / cfg.N)
        assert abs(r_avg - rho) <= band
        assert abs(p_avg) <= band
        assert abs(vp_avg - 0.5) <= band

    def test_energy_bound_uniform_in_n(self, model):
        vals = {}
        for n in (128, 256):
            cfg = ChainConfig(
                N=n,
                t_end=0.05,
                seed=7,
                tension_schedule=ConstantSchedule(0.3),
                record_times=np.array([0.05]),
            )
            res = run_trajectory(cfg, 0.3, model)
            st = res.snapshots[-1]
            vals[n] = float(np.mean(st.p**2 + st.r**2))
        assert vals[128] < 4.0 and vals[256] < 4.0

    def test_step_schedule_runs(self, model):
        cfg = ChainConfig(
            N=32,
            t_end=0.02,
            seed=3,
            tension_schedule=StepSchedule(0.0, 0.5, t_step=0.01),
            record_times=np.array([0.0, 0.02]),
        )
        res = run_trajectory(cfg, 0.0, model)
        assert math.isfinite(res.ledger.W[-1])


class TestBridgedNoise:
    def test_children_sum_to_parent(self):
        coarse = BridgedNoise(99, 10, 1e-4, 0)
        fine = BridgedNoise(99, 10, 1e-4, 2)
        dw0, dwt0 = coarse.next_chunk(8)
        dw2, dwt2 = fine.next_chunk(8)
        assert np.allclose(dw2.reshape(8, 4, 10).sum(axis=1), dw0, atol=1e-15)
        assert np.allclose(dwt2.reshape(8, 4, 10).sum(axis=1), dwt0, atol=1e-15)

    def test_variance_scaling(self):
        fine = BridgedNoise(5, 200, 1e-4, 3)
        dw, dwt = fine.next_chunk(256)
        assert dw.var() == pytest.approx(1e-4 / 8, rel=0.05)
        assert dwt.var() == pytest.approx(1e-4 / 8, rel=0.05)

    def test_chunking_invariance(self):
        a = BridgedNoise(42, 31, 2e-5, 1)
        b = BridgedNoise(42, 31, 2e-5, 1)
        one = a.next_chunk(64)
        parts = [b.next_chunk(16) for _ in range(4)]
        assert np.array_equal(one[0], np.concatenate([q[0] for q in parts]))
        assert np.array_equal(one[1], np.concatenate([q[1] for q in parts]))
