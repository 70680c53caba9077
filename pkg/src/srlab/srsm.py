"""Rejuvenation cycle engine.

One cycle of the protected controller:

    CP  checkpoint: snapshot (xh, x_sp), instantaneous
    MC  monitored control for t_mc: feedback runs, norms audited
    RB  restart window for t_rb: input frozen, observer halted
        -> rollback: xh restored from the checkpoint, instantaneous
    SC  safety control until the estimate is back inside the recovery
        ellipsoid *and* at least t_est has elapsed

The plant and the observer advance as one stacked 24-state RK4 system per
``dt`` tick, with the input and the measurement-noise draw held across the
four stages.  For a linear plant this makes the estimation error follow an
exact RK4 discretization of ``e' = (A - LC) e``.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import plant as plantmod
from .control import GainSet, SafetyMetric
from .numkit import NonFinite, rk4_step
from .plant import GimbalLock, MEASURED_INDICES, QuadParams


class Mode(enum.Enum):
    CP = "CP"
    MC = "MC"
    RB = "RB"
    SC = "SC"


# the cycle order, self-loops for the timed phases, and the wrap-around edge
# taken when a setpoint update fires at a recovery instant
_LEGAL = {
    (Mode.CP, Mode.MC),
    (Mode.MC, Mode.MC),
    (Mode.MC, Mode.RB),
    (Mode.RB, Mode.RB),
    (Mode.RB, Mode.SC),
    (Mode.SC, Mode.SC),
    (Mode.SC, Mode.CP),
}


def mode_legal(frm, to):
    """Whether the mode machine may move from ``frm`` to ``to``."""
    return (frm, to) in _LEGAL


class CycleStatus(enum.Enum):
    OK = "Ok"
    UNSTABLE = "Unstable"
    SC_TIMEOUT = "ScTimeout"


@dataclass(frozen=True)
class SRConfig:
    """Timing and divergence limits of the rejuvenation cycle."""

    t_mc: float = 0.200
    t_rb: float = 0.010
    t_est: float = 1.7
    dt: float = 1e-3
    v_unstable: float = 10.0
    t_sc_max: float = 30.0

    def __post_init__(self):
        for name in ("t_mc", "t_rb", "t_est", "dt", "t_sc_max"):
            val = getattr(self, name)
            if val <= 0.0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.v_unstable <= 0.0:
            raise ValueError("v_unstable must be positive")
        for name in ("t_mc", "t_rb", "t_est", "t_sc_max"):
            val = getattr(self, name)
            if abs(val - round(val / self.dt) * self.dt) > 1e-9:
                raise ValueError(f"dt must divide {name} to 1e-9")

    @property
    def t_uc(self):
        """Length of the uncontrolled window (frozen input): t_mc + t_rb."""
        return self.t_mc + self.t_rb

    @property
    def n_mc(self):
        return round(self.t_mc / self.dt)

    @property
    def n_rb(self):
        return round(self.t_rb / self.dt)

    @property
    def n_est(self):
        return round(self.t_est / self.dt)

    @property
    def n_sc_max(self):
        return round(self.t_sc_max / self.dt)

    @property
    def min_cycle_steps(self):
        return self.n_mc + self.n_rb + self.n_est


@dataclass(frozen=True)
class Checkpoint:
    """Immutable snapshot of (estimate, setpoint) taken at CP."""

    x_hat: np.ndarray
    x_sp: np.ndarray

    def __post_init__(self):
        for arr in (self.x_hat, self.x_sp):
            arr.flags.writeable = False

    @staticmethod
    def take(x_hat, x_sp):
        return Checkpoint(x_hat=x_hat.copy(), x_sp=x_sp.copy())


@dataclass
class SimSystem:
    """Everything run_cycle needs about one designed plant."""

    params: QuadParams
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    gains: GainSet
    metric: SafetyMetric
    noise_std: np.ndarray
    meas_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        self.meas_idx = np.array(MEASURED_INDICES)


@dataclass
class CycleTrace:
    """Sampled rows plus summary scalars for one cycle.

    Rows are recorded every ``record_every`` ticks (0 disables row recording);
    the summary scalars are always computed over every tick.
    """

    t: np.ndarray
    mode: list
    x: np.ndarray
    x_hat: np.ndarray
    sp: np.ndarray
    norm_true: np.ndarray
    norm_est: np.ndarray
    u: np.ndarray
    status: CycleStatus
    steps: int
    duration: float
    r_mpn: float
    mc_entry_est_norm_sq: float
    mc_peak_true_norm_sq: float
    mc_peak_est_norm_sq: float
    est_norm_sq_at_cp: float
    est_norm_sq_post_rollback: float
    record_every: int


def run_cycle(x, x_hat, x_sp, sys, cfg, rng, record_every=1):
    """Run one full rejuvenation cycle from a just-updated setpoint.

    Parameters
    ----------
    x, x_hat : ndarray, shape (12,)
        True state and estimate at the CP instant.
    x_sp : ndarray, shape (12,)
        Setpoint, already advanced by the governor for this cycle.
    sys : SimSystem
    cfg : SRConfig
    rng : numpy Generator
        Measurement-noise stream; one 6-draw per tick.
    record_every : int
        Row decimation; 0 records no rows.

    Returns
    -------
    x, x_hat : ndarray
        State and estimate at the end of the cycle (a recovery instant
        unless the cycle aborted).
    trace : CycleTrace

    Notes
    -----
    Divergence (true norm above ``v_unstable``, a non-finite integration
    step, or gimbal lock) aborts the cycle with status Unstable and the
    monitored peak forced to ``v_unstable``.
    """
    params = sys.params
    a = sys.a
    b = sys.b
    l_gain = sys.gains.l
    k_fb = sys.gains.k
    p = sys.metric.p.m
    sel = sys.meas_idx
    noise_std = sys.noise_std
    dt = cfg.dt
    nonlin = plantmod.nonlinear_derivative

    x = np.asarray(x, dtype=float).copy()
    x_hat = np.asarray(x_hat, dtype=float).copy()
    x_sp = np.asarray(x_sp, dtype=float)
    checkpoint = Checkpoint.take(x_hat, x_sp)

    rows_t, rows_mode, rows_x, rows_xh, rows_nt, rows_ne, rows_u = [], [], [], [], [], [], []

    def record(step, mode, x_, xh_, nt, ne, u_):
        if record_every and step % record_every == 0:
            rows_t.append(step * dt)
            rows_mode.append(mode.value)
            rows_x.append(x_.copy())
            rows_xh.append(xh_.copy())
            rows_nt.append(nt)
            rows_ne.append(ne)
            rows_u.append(u_.copy())

    d = x - x_sp
    nt = float(d @ (p @ d))
    d = x_hat - x_sp
    ne = float(d @ (p @ d))
    est_at_cp = ne
    mc_entry = ne
    r_mpn = nt
    mc_peak_true = nt
    mc_peak_est = ne
    u = -(k_fb @ (x_hat - x_sp))
    record(0, Mode.CP, x, x_hat, nt, ne, u)

    status = CycleStatus.OK
    est_post_rollback = float("nan")
    step = 0
    z = np.concatenate((x, x_hat))
    mode = Mode.CP

    def make_joint(u_held, w_held):
        bu = b @ u_held
        lw = l_gain @ w_held

        def joint(zz, _):
            xs = zz[:12]
            xh = zz[12:]
            dx = nonlin(params, xs, u_held)
            dxh = a @ xh + bu + lw + l_gain @ (xs[sel] - xh[sel])
            return np.concatenate((dx, dxh))

        return joint

    unstable = False
    try:
        # --- MC: monitored control -------------------------------------
        assert mode_legal(mode, Mode.MC)
        mode = Mode.MC
        for _ in range(cfg.n_mc):
            u = -(k_fb @ (z[12:] - x_sp))
            w = noise_std * rng.standard_normal(6)
            z = rk4_step(make_joint(u, w), z, None, dt)
            step += 1
            d = z[:12] - x_sp
            nt = float(d @ (p @ d))
            d = z[12:] - x_sp
            ne = float(d @ (p @ d))
            record(step, mode, z[:12], z[12:], nt, ne, u)
            r_mpn = nt if nt > r_mpn else r_mpn
            mc_peak_true = nt if nt > mc_peak_true else mc_peak_true
            mc_peak_est = ne if ne > mc_peak_est else mc_peak_est
            if nt > cfg.v_unstable:
                unstable = True
                break

        # --- RB: restart window, input frozen, observer halted ---------
        if not unstable:
            assert mode_legal(mode, Mode.RB)
            mode = Mode.RB
            u_frozen = u.copy()
            for _ in range(cfg.n_rb):
                z[:12] = rk4_step(lambda xs, _: nonlin(params, xs, u_frozen), z[:12], None, dt)
                step += 1
                d = z[:12] - x_sp
                nt = float(d @ (p @ d))
                d = z[12:] - x_sp
                ne = float(d @ (p @ d))
                record(step, mode, z[:12], z[12:], nt, ne, u_frozen)
                r_mpn = nt if nt > r_mpn else r_mpn
                if nt > cfg.v_unstable:
                    unstable = True
                    break

        # --- rollback: estimate restored from the checkpoint -----------
        if not unstable:
            z[12:] = checkpoint.x_hat
            d = z[12:] - x_sp
            est_post_rollback = float(d @ (p @ d))

            # --- SC: safety control until recovery ---------------------
            assert mode_legal(mode, Mode.SC)
            mode = Mode.SC
            sc_steps = 0
            rho_s = sys.metric.rho_s
            while True:
                u = -(k_fb @ (z[12:] - x_sp))
                w = noise_std * rng.standard_normal(6)
                z = rk4_step(make_joint(u, w), z, None, dt)
                step += 1
                sc_steps += 1
                d = z[:12] - x_sp
                nt = float(d @ (p @ d))
                d = z[12:] - x_sp
                ne = float(d @ (p @ d))
                record(step, mode, z[:12], z[12:], nt, ne, u)
                r_mpn = nt if nt > r_mpn else r_mpn
                if nt > cfg.v_unstable:
                    unstable = True
                    break
                if sc_steps >= cfg.n_est and ne <= rho_s:
                    break
                if sc_steps > cfg.n_sc_max:
                    status = CycleStatus.SC_TIMEOUT
                    break
    except (NonFinite, GimbalLock):
        unstable = True

    if unstable:
        status = CycleStatus.UNSTABLE
        r_mpn = cfg.v_unstable

    trace = CycleTrace(
        t=np.array(rows_t),
        mode=rows_mode,
        x=np.array(rows_x).reshape(-1, 12),
        x_hat=np.array(rows_xh).reshape(-1, 12),
        sp=np.tile(x_sp[:3], (len(rows_t), 1)),
        norm_true=np.array(rows_nt),
        norm_est=np.array(rows_ne),
        u=np.array(rows_u).reshape(-1, 4),
        status=status,
        steps=step,
        duration=step * dt,
        r_mpn=r_mpn,
        mc_entry_est_norm_sq=mc_entry,
        mc_peak_true_norm_sq=mc_peak_true,
        mc_peak_est_norm_sq=mc_peak_est,
        est_norm_sq_at_cp=est_at_cp,
        est_norm_sq_post_rollback=est_post_rollback,
        record_every=record_every,
    )
    return z[:12].copy(), z[12:].copy(), trace
