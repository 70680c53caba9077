"""Cycle engine tests.

The hand-checkable facts frozen here:

* minimum cycle length is 200 + 10 + 1700 = 1910 ticks = 1.910 s;
* at an exact noise-free equilibrium every norm stays identically zero;
* rollback restores the estimate bit-for-bit, so the estimated norm right
  after rollback equals its value at the checkpoint instant exactly;
* the frozen input during the restart window is bit-identical across rows.
"""

import numpy as np
import pytest

from srlab.numkit import rk4_step
from srlab.plant import hover_state, nonlinear_derivative
from srlab.srsm import (
    Checkpoint,
    CycleStatus,
    Mode,
    SRConfig,
    mode_legal,
    run_cycle,
)


@pytest.fixture(scope="module")
def cfg():
    return SRConfig()


def start_at(system, position, offset=None):
    x = hover_state(position)
    if offset is not None:
        x = x + offset
    return x, x.copy(), hover_state(position)


class TestSRConfig:
    def test_defaults_and_derived(self, cfg):
        assert cfg.t_uc == pytest.approx(0.21)
        assert cfg.n_mc == 200 and cfg.n_rb == 10 and cfg.n_est == 1700
        assert cfg.min_cycle_steps == 1910

    def test_validation(self):
        with pytest.raises(ValueError):
            SRConfig(t_mc=-0.1)
        with pytest.raises(ValueError):
            SRConfig(t_mc=0.2005, dt=1e-3 * 2)
        with pytest.raises(ValueError):
            SRConfig(v_unstable=0.0)

    def test_frozen(self, cfg):
        with pytest.raises(AttributeError):
            cfg.t_mc = 1.0


class TestModeMachine:
    def test_cycle_order(self):
        assert mode_legal(Mode.CP, Mode.MC)
        assert mode_legal(Mode.MC, Mode.RB)
        assert mode_legal(Mode.RB, Mode.SC)
        assert mode_legal(Mode.SC, Mode.CP)

    def test_self_loops(self):
        assert mode_legal(Mode.SC, Mode.SC)
        assert mode_legal(Mode.MC, Mode.MC)
        assert mode_legal(Mode.RB, Mode.RB)
        assert not mode_legal(Mode.CP, Mode.CP)  # checkpoint is instantaneous

    def test_shortcuts_rejected(self):
        assert not mode_legal(Mode.MC, Mode.SC)
        assert not mode_legal(Mode.CP, Mode.SC)
        assert not mode_legal(Mode.SC, Mode.MC)
        assert not mode_legal(Mode.RB, Mode.CP)


class TestCheckpoint:
    def test_snapshot_is_immutable_copy(self):
        xh = np.ones(12)
        sp = np.zeros(12)
        ck = Checkpoint.take(xh, sp)
        xh[0] = 99.0
        assert ck.x_hat[0] == 1.0
        with pytest.raises(ValueError):
            ck.x_hat[0] = 5.0


class TestEquilibriumCycle:
    def test_exact_equilibrium(self, quiet_system, cfg):
        x, xh, sp = start_at(quiet_system, [1.0, 1.0, 1.0])
        x2, xh2, trace = run_cycle(x, xh, sp, quiet_system, cfg, np.random.default_rng(0))
        assert trace.status is CycleStatus.OK
        assert trace.steps == 1910
        assert abs(trace.duration - 1.910) < 1e-12
        assert trace.r_mpn == 0.0
        assert np.array_equal(x2, x)
        assert np.array_equal(xh2, xh)

    def test_monotone_clock(self, quiet_system, cfg):
        x, xh, sp = start_at(quiet_system, [0.0, 0.0, 0.0])
        _, _, trace = run_cycle(x, xh, sp, quiet_system, cfg, np.random.default_rng(0))
        dts = np.diff(trace.t)
        assert np.all(dts > 0.0)
        assert np.max(np.abs(dts - cfg.dt)) < 1e-12
        assert trace.t[0] == 0.0
        assert len(trace.t) == 1911  # CP row + one row per tick

    def test_mode_sequence(self, quiet_system, cfg):
        x, xh, sp = start_at(quiet_system, [0.0, 0.0, 0.0])
        _, _, trace = run_cycle(x, xh, sp, quiet_system, cfg, np.random.default_rng(0))
        assert trace.mode[0] == "CP"
        assert trace.mode[1] == "MC" and trace.mode[200] == "MC"
        assert trace.mode[201] == "RB" and trace.mode[210] == "RB"
        assert trace.mode[211] == "SC" and trace.mode[-1] == "SC"
        assert set(trace.mode) == {"CP", "MC", "RB", "SC"}


class TestCycleMechanics:
    def offset_start(self, system):
        # state and estimate agree, both displaced from the setpoint the way
        # a governor step displaces them
        sp = hover_state([0.0, 0.0, 0.0])
        off = np.zeros(12)
        off[0:3] = -0.05 / np.sqrt(3.0)
        x = sp + off
        return x, x.copy(), sp

    def test_rollback_discontinuity(self, default_system, cfg):
        x, xh, sp = self.offset_start(default_system)
        _, _, trace = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(3))
        assert trace.status is CycleStatus.OK
        # exact restore: the estimated norm right after rollback equals the
        # checkpoint-instant value bit for bit
        assert trace.est_norm_sq_post_rollback == trace.est_norm_sq_at_cp
        # and the recorded rows show the jump at the RB->SC boundary
        last_rb = 210
        first_sc = 211
        jump_to_cp = abs(trace.norm_est[first_sc] - trace.est_norm_sq_at_cp)
        drift = abs(trace.norm_est[first_sc] - trace.norm_est[last_rb])
        assert jump_to_cp < 0.1 * drift

    def test_input_frozen_during_restart(self, default_system, cfg):
        x, xh, sp = self.offset_start(default_system)
        _, _, trace = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(4))
        rb_rows = [i for i, m in enumerate(trace.mode) if m == "RB"]
        assert len(rb_rows) == 10
        u0 = trace.u[rb_rows[0]]
        for i in rb_rows[1:]:
            assert np.array_equal(trace.u[i], u0)
        # estimate does not move while the observer is halted
        for i in rb_rows:
            assert np.array_equal(trace.x_hat[i], trace.x_hat[rb_rows[0]])

    def test_recovery_condition_conjunctive(self, quiet_system, cfg):
        # noise-free, small offset: the estimate is inside the recovery
        # ellipsoid long before t_est, yet SC still lasts the full window
        x, xh, sp = self.offset_start(quiet_system)
        _, _, trace = run_cycle(x, xh, sp, quiet_system, cfg, np.random.default_rng(5))
        assert trace.steps == cfg.min_cycle_steps
        sc_rows = [i for i, m in enumerate(trace.mode) if m == "SC"]
        assert trace.norm_est[sc_rows[len(sc_rows) // 2]] <= quiet_system.metric.rho_s

    def test_summary_tracks_rows(self, default_system, cfg):
        x, xh, sp = self.offset_start(default_system)
        _, _, trace = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(6))
        assert trace.r_mpn == pytest.approx(np.max(trace.norm_true), rel=0, abs=0)
        mc_rows = [i for i, m in enumerate(trace.mode) if m in ("CP", "MC")]
        assert trace.mc_peak_true_norm_sq == np.max(trace.norm_true[mc_rows])
        assert trace.mc_peak_est_norm_sq == np.max(trace.norm_est[mc_rows])
        assert trace.mc_entry_est_norm_sq == trace.norm_est[0]

    def test_decimation(self, default_system, cfg):
        x, xh, sp = self.offset_start(default_system)
        _, _, full = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(7), record_every=1)
        x, xh, sp = self.offset_start(default_system)
        _, _, dec = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(7), record_every=10)
        assert len(dec.t) == (full.steps // 10) + 1
        assert np.array_equal(dec.norm_true, full.norm_true[::10])
        # summaries are decimation-independent
        assert dec.r_mpn == full.r_mpn
        x, xh, sp = self.offset_start(default_system)
        _, _, none = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(7), record_every=0)
        assert len(none.t) == 0
        assert none.r_mpn == full.r_mpn

    def test_determinism(self, default_system, cfg):
        x, xh, sp = self.offset_start(default_system)
        x1, xh1, tr1 = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(11))
        x, xh, sp = self.offset_start(default_system)
        x2, xh2, tr2 = run_cycle(x, xh, sp, default_system, cfg, np.random.default_rng(11))
        assert np.array_equal(x1, x2)
        assert np.array_equal(xh1, xh2)
        assert np.array_equal(tr1.norm_true, tr2.norm_true)
        assert np.array_equal(tr1.u, tr2.u)

    def test_settling_peaks_decrease_at_fixed_setpoint(self, quiet_system, cfg):
        # repeated cycles at one setpoint: the per-cycle monitored peak decays
        x, xh, sp = self.offset_start(quiet_system)
        peaks = []
        for _ in range(3):
            x, xh, trace = run_cycle(x, xh, sp, quiet_system, cfg, np.random.default_rng(0))
            assert trace.status is CycleStatus.OK
            peaks.append(trace.r_mpn)
        assert peaks[1] < peaks[0]
        assert peaks[2] < peaks[1]


class TestDivergence:
    def test_unstable_flagged(self, default_system):
        # an absurdly low divergence bar forces the unstable path
        cfg = SRConfig(v_unstable=1e-8)
        sp = hover_state([0.0, 0.0, 0.0])
        off = np.zeros(12)
        off[0] = -0.05
        x = sp + off
        _, _, trace = run_cycle(x, x.copy(), sp, default_system, cfg, np.random.default_rng(0))
        assert trace.status is CycleStatus.UNSTABLE
        assert trace.r_mpn == cfg.v_unstable
        assert trace.steps < cfg.min_cycle_steps

    def test_sc_timeout(self, default_system):
        # recovery ellipsoid impossibly tight and a short patience window
        from srlab.control import SafetyMetric
        from srlab.srsm import SimSystem

        tight = SafetyMetric(p=default_system.metric.p, rho_s=1e-12, rho_m=0.01)
        sys2 = SimSystem(
            params=default_system.params,
            a=default_system.a,
            b=default_system.b,
            c=default_system.c,
            gains=default_system.gains,
            metric=tight,
            noise_std=default_system.noise_std,
        )
        cfg = SRConfig(t_sc_max=2.0)
        sp = hover_state([0.0, 0.0, 0.0])
        off = np.zeros(12)
        off[0] = -0.05
        x = sp + off
        _, _, trace = run_cycle(x, x.copy(), sp, sys2, cfg, np.random.default_rng(0))
        assert trace.status is CycleStatus.SC_TIMEOUT


class TestUncontrolledWindowMatters:
    def test_frozen_wrong_input_escapes_monitoring_ellipsoid(self, quiet_system, cfg):
        # from the monitoring boundary, a large wrong input held for the
        # uncontrolled window t_mc + t_rb drives the true norm past rho_m:
        # the window length is exactly what the monitoring margin insures
        metric = quiet_system.metric
        x_sp = hover_state([0.0, 0.0, 0.0])
        v = np.zeros(12)
        v[2] = 1.0
        scale = np.sqrt(metric.rho_m / metric.norm_sq(v))
        x = x_sp + scale * v  # on the boundary of the monitoring ellipsoid
        assert metric.norm_sq(x, x_sp) == pytest.approx(metric.rho_m, rel=1e-9)
        u_bad = np.array([5.0, 0.0, 0.0, 0.0])  # hard climb, no attitude correction
        for _ in range(round(cfg.t_uc / cfg.dt)):
            x = rk4_step(
                lambda s, _: nonlinear_derivative(quiet_system.params, s, u_bad), x, None, cfg.dt
            )
        assert metric.norm_sq(x, x_sp) > metric.rho_m
