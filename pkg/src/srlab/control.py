"""Gain synthesis, safety metric, feedback law and state observer.

Conventions that matter:

* the observer propagates ``xh' = A xh + B u + L (y - C xh)`` -- innovation
  with a **positive** sign on ``(y - C xh)`` -- so the estimation error
  ``e = x - xh`` obeys ``e' = (A - L C) e``;
* the safety metric P solves ``Acl' P + P Acl = -kappa I`` and is scaled so
  the unit ellipsoid ``{v : v' P v <= 1}`` reaches at most ``d_safe`` metres
  along any position axis.
"""

from dataclasses import dataclass

import numpy as np

from . import numkit
from .numkit import SymPosDef, lu_solve, rk4_step, solve_lyapunov, solve_riccati_ode


@dataclass(frozen=True)
class LqrWeights:
    """Diagonal weights for the regulator and observer Riccati designs.

    ``obs_q_vel`` weights the unmeasured states (velocities and body rates)
    in the observer design; raising it relative to ``obs_q`` speeds up the
    slow estimation modes, which must die out within the estimation window.
    """

    q_pos: float = 10.0
    q_other: float = 1.0
    r_input: float = 1.0
    obs_q: float = 1.0
    obs_q_vel: float = 9.0
    obs_r: float = 0.01


@dataclass(frozen=True)
class GainSet:
    """State-feedback and observer gains for one plant."""

    k: np.ndarray  # (4, 12)
    l: np.ndarray  # (12, 6)


def design_gains(a, b, c, weights=LqrWeights()):
    """LQR state feedback plus a dual-design observer gain.

    The observer gain comes from the same Riccati solver applied to the
    transposed system: ``L = (solve(A', C', Q_l, R_l).gain)'``.

    Returns
    -------
    GainSet

    Raises
    ------
    numkit.NoConvergence
        If either Riccati integration fails, or a closed loop fails its
        Hurwitz certificate.
    """
    n = a.shape[0]
    n_in = b.shape[1]
    n_out = c.shape[0]
    n_pos = min(3, n)
    q_k = np.diag([weights.q_pos] * n_pos + [weights.q_other] * (n - n_pos))
    r_k = weights.r_input * np.eye(n_in)
    k, _ = solve_riccati_ode(a, b, q_k, r_k)

    q_l_diag = np.full(n, weights.obs_q)
    if n == 12:
        q_l_diag[3:6] = weights.obs_q_vel
        q_l_diag[9:12] = weights.obs_q_vel
    q_l = np.diag(q_l_diag)
    r_l = weights.obs_r * np.eye(n_out)
    l_t, _ = solve_riccati_ode(a.T, c.T, q_l, r_l)
    l = l_t.T

    # solve_riccati_ode certifies a - b k and a' - c' l' internally; assert the
    # observer loop in its untransposed form as well
    if not numkit.hurwitz_certificate(a - l @ c):
        raise numkit.NoConvergence("observer closed loop failed its certificate")
    return GainSet(k=k, l=l)


@dataclass(frozen=True)
class SafetyMetric:
    """Lyapunov metric and the ellipsoid levels used by the rejuvenation logic.

    ``rho_s`` is the recovery level, ``rho_m`` the monitoring level; both are
    levels of ``v' P v``.  ``d_safe`` is the position extent, in metres, of
    the unit ellipsoid.
    """

    p: SymPosDef
    rho_s: float = 0.0012
    rho_m: float = 0.01
    d_safe: float = 1.8

    def __post_init__(self):
        if not (0.0 < self.rho_s < self.rho_m < 1.0):
            raise ValueError("need 0 < rho_s < rho_m < 1")
        if self.d_safe <= 0.0:
            raise ValueError("d_safe must be positive")

    def norm_sq(self, v, c=None):
        return numkit.p_norm_sq(self.p, v, c)

    @property
    def sqrt_rho_s(self):
        return float(np.sqrt(self.rho_s))

    @property
    def sqrt_rho_m(self):
        return float(np.sqrt(self.rho_m))


def position_extents(p):
    """Largest |position_i| over the unit ellipsoid of P, for i = x, y, z.

    The extent of ``{v : v' P v <= 1}`` along coordinate ``i`` is
    ``sqrt((P^-1)_ii)``.
    """
    m = p.m if isinstance(p, SymPosDef) else np.asarray(p, dtype=float)
    inv = lu_solve(m, np.eye(m.shape[0]))
    return np.sqrt(np.array([inv[i, i] for i in range(min(3, m.shape[0]))]))


def build_safety_metric(a_cl, rho_s=0.0012, rho_m=0.01, d_safe=1.8):
    """Safety metric from a Lyapunov solve against identity.

    The raw solution is rescaled by ``kappa = max_i (P_raw^-1)_ii / d_safe**2``
    over the three position coordinates, which puts the largest position
    extent of the unit ellipsoid exactly at ``d_safe``.
    """
    p_raw = solve_lyapunov(a_cl, np.eye(a_cl.shape[0]))
    inv = lu_solve(p_raw.m, np.eye(a_cl.shape[0]))
    kappa = max(inv[i, i] for i in range(min(3, a_cl.shape[0]))) / d_safe**2
    return SafetyMetric(p=SymPosDef(kappa * p_raw.m), rho_s=rho_s, rho_m=rho_m, d_safe=d_safe)


def control_input(k, x_hat, x_sp):
    """State feedback about the setpoint: ``u = -K (xh - x_sp)``."""
    return -(k @ (x_hat - x_sp))


def observer_step(a, b, l, c, x_hat, u, y, dt):
    """Advance the observer one RK4 step with ``u`` and ``y`` held.

    Integrates ``xh' = (A - L C) xh + (B u + L y)``, which is the standard
    innovation form rearranged so the constant part is computed once.
    """
    a_obs = a - l @ c
    const = b @ u + l @ y
    return rk4_step(lambda xh, _: a_obs @ xh + const, x_hat, None, dt)
