"""srlab: a desk-scale lab for rejuvenation-protected quadrotor tracking.

The package simulates a 12-state quadrotor whose controller is periodically
restarted from a checkpoint while the mission setpoint is advanced by a
governor -- either a fixed conservative rule, an online ellipsoid-margin rule,
or a learned soft actor-critic policy.
"""

__version__ = "0.1.0"
