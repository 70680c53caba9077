"""Quadrotor vehicle model.

State layout (12-vector, world-frame NED-free convention with Z up):

    0:3   position      px, py, pz          [m]
    3:6   velocity      vx, vy, vz          [m/s]
    6:9   Euler angles  roll, pitch, yaw    [rad], ZYX convention
    9:12  body rates    wx, wy, wz          [rad/s]

Inputs are deviations from hover: collective thrust offset and three body
torques, ``u = (dT, tau_x, tau_y, tau_z)``.  The linearization below is about
hover, which is why thrust enters as ``dT/m`` and gravity tilts couple pitch
to x and roll to (negative) y.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numkit import NonFinite

N_STATES = 12
N_INPUTS = 4

POS = slice(0, 3)
VEL = slice(3, 6)
ANG = slice(6, 9)
RATE = slice(9, 12)

MEASURED_INDICES = (0, 1, 2, 6, 7, 8)  # positions and angles

GIMBAL_MARGIN = math.pi / 2.0 - 1e-6


class GimbalLock(Exception):
    """Pitch too close to +-pi/2 for the Euler-rate map to be invertible."""


@dataclass(frozen=True)
class QuadParams:
    """Physical constants of the vehicle."""

    mass: float = 1.0
    gravity: float = 9.81
    inertia: tuple[float, float, float] = (0.01, 0.01, 0.02)

    def __post_init__(self):
        if self.mass <= 0.0 or self.gravity <= 0.0 or min(self.inertia) <= 0.0:
            raise ValueError("mass, gravity and inertia must all be positive")


def hover_linearization(params):
    """Continuous-time (A, B, C) of the model linearized about hover.

    Returns
    -------
    a : ndarray, shape (12, 12)
    b : ndarray, shape (12, 4)
    c : ndarray, shape (6, 12)
        Output map selecting positions and Euler angles.
    """
    g = params.gravity
    a = np.zeros((12, 12))
    a[0, 3] = a[1, 4] = a[2, 5] = 1.0  # position integrates velocity
    a[3, 7] = g      # pitch tips thrust into +x
    a[4, 6] = -g     # roll tips thrust into -y
    a[6, 9] = a[7, 10] = a[8, 11] = 1.0  # Euler rates equal body rates at hover
    b = np.zeros((12, 4))
    b[5, 0] = 1.0 / params.mass
    b[9, 1] = 1.0 / params.inertia[0]
    b[10, 2] = 1.0 / params.inertia[1]
    b[11, 3] = 1.0 / params.inertia[2]
    c = np.zeros((6, 12))
    for row, idx in enumerate(MEASURED_INDICES):
        c[row, idx] = 1.0
    return a, b, c


def nonlinear_derivative(params, x, u):
    """Full rigid-body derivative at state ``x`` under input ``u``.

    Thrust acts along the body z axis rotated into the world frame by the
    ZYX Euler rotation; Euler-angle rates come from the standard body-rate
    transformation; rotational dynamics are ``J w_dot = tau - w x (J w)``.

    Raises
    ------
    GimbalLock
        If ``|pitch| >= pi/2 - 1e-6``.
    NonFinite
        If the derivative comes out NaN/Inf.
    """
    phi = x[6]
    theta = x[7]
    psi = x[8]
    if abs(theta) >= GIMBAL_MARGIN:
        raise GimbalLock(f"pitch {theta:.6f} rad too close to +-pi/2")

    m = params.mass
    g = params.gravity
    jx, jy, jz = params.inertia
    wx, wy, wz = x[9], x[10], x[11]

    sphi, cphi = math.sin(phi), math.cos(phi)
    sth, cth = math.sin(theta), math.cos(theta)
    spsi, cpsi = math.sin(psi), math.cos(psi)
    tth = sth / cth

    thrust = m * g + u[0]
    acc = thrust / m
    # world-frame direction of the body z axis (third column of R_zyx)
    ax = acc * (cpsi * sth * cphi + spsi * sphi)
    ay = acc * (spsi * sth * cphi - cpsi * sphi)
    az = acc * (cth * cphi) - g

    # Euler kinematics: [phi. theta. psi.]' = E(phi, theta) w
    dphi = wx + sphi * tth * wy + cphi * tth * wz
    dtheta = cphi * wy - sphi * wz
    dpsi = (sphi * wy + cphi * wz) / cth

    # J w. = tau - w x (J w), diagonal inertia
    dwx = (u[1] - (jz - jy) * wy * wz) / jx
    dwy = (u[2] - (jx - jz) * wz * wx) / jy
    dwz = (u[3] - (jy - jx) * wx * wy) / jz

    out = np.array(
        [x[3], x[4], x[5], ax, ay, az, dphi, dtheta, dpsi, dwx, dwy, dwz]
    )
    if not np.all(np.isfinite(out)):
        raise NonFinite("plant derivative produced NaN/Inf")
    return out


def hover_state(position):
    """12-state hover equilibrium at the given position."""
    x = np.zeros(12)
    x[POS] = np.asarray(position, dtype=float)
    return x


def measure(c, x, noise_std, rng):
    """Noisy output ``y = C x + w`` with per-channel Gaussian noise.

    ``noise_std`` is a length-6 vector of standard deviations; the generator
    is always advanced by one draw per channel so that runs with different
    noise settings stay stream-aligned.
    """
    return c @ x + noise_std * rng.standard_normal(len(noise_std))


def measurement_noise_std(pos_std, ang_std):
    """Per-channel noise vector for the position/angle measurement stack."""
    return np.array([pos_std] * 3 + [ang_std] * 3)
