"""
Designing the protected tracking loop
=====================================

Builds the hover-linearized vehicle, the LQR regulator, the observer, and
the Lyapunov safety metric, then prints everything a mission depends on:
the gain matrices, the stability certificates, the ellipsoid geometry, and
the step sizes the governors will use.
"""

import numpy as np

from srlab.control import position_extents
from srlab.governor import conservative_alpha
from srlab.harness import RunConfig, build_bundle
from srlab.numkit import hurwitz_certificate

cfg = RunConfig()
bundle = build_bundle(cfg)
sysm = bundle.system

np.set_printoptions(precision=4, suppress=True, linewidth=120)

# the twelve states are position, velocity, attitude, and body rates; the
# regulator maps the estimated deviation from the setpoint to four inputs
print("state feedback K (4 x 12):")
print(sysm.gains.k)
print()
print("observer gain L (12 x 6):")
print(sysm.gains.l)
print()

# both closed loops must be certified stable; the raw plant is not, since
# every position state is an undamped integrator chain
a_cl = sysm.a - sysm.b @ sysm.gains.k
a_obs = sysm.a - sysm.gains.l @ sysm.c
print("certified stable: regulator", hurwitz_certificate(a_cl),
      "| observer", hurwitz_certificate(a_obs),
      "| raw plant", hurwitz_certificate(sysm.a))
print()

# the metric is normalized so the unit ellipsoid extends exactly d_safe
# metres in its widest position direction
ext = position_extents(sysm.metric.p)
print(f"unit-ellipsoid position extents (m): {ext}")
print(f"widest extent = d_safe = {cfg.d_safe}")
print()

# the two working levels and the step arithmetic that follows from them:
# a full recovery leaves the estimate inside sqrt(rho_s), and a setpoint
# move of alpha grows the distance by at most alpha, so the largest always
# safe step is sqrt(rho_m) - sqrt(rho_s)
m = sysm.metric
print(f"recovery level rho_s = {m.rho_s}  (radius {m.sqrt_rho_s:.6f})")
print(f"monitored level rho_m = {m.rho_m}  (radius {m.sqrt_rho_m:.6f})")
print(f"conservative step alpha = {conservative_alpha(m):.6f}")
print(f"mission step ceiling alpha_max = {cfg.alpha_max}")
