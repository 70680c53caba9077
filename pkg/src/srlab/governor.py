"""Setpoint governors: rules for stepping the hover target along a waypoint line.

A mission is a polyline of position waypoints.  At every recovery instant the
governor picks a step size ``alpha`` (metres) and the setpoint slides that far
along the unit direction toward the active waypoint, snapping onto the
waypoint when the step would overshoot it.  Three rules are provided:

* ``conservative_alpha`` -- a constant step sized from the safety ellipsoids
  alone, usable without any run-time information.
* ``baseline_alpha`` -- spends the slack between the current estimate-to-
  setpoint distance and the monitored ellipsoid radius, so it steps farther
  whenever the observer has reconverged tightly.
* ``learned_alpha`` -- delegates to a trained stochastic policy whose raw
  action in (-1, 1) is mapped affinely onto [0, alpha_max].

Setpoints are full hover states: position on the segment, every other
component exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import SafetyMetric
from .plant import N_STATES, POS, hover_state

# Smallest waypoint separation we are willing to normalize.
DIRECTION_TOL = 1e-12

# Ceiling for the learned step.  Sized so that even a fully saturated action
# keeps the post-update estimate distance inside the monitored ellipsoid
# (the unit position directions measure at most ~0.81 in the default metric,
# so 0.12 * 0.81 plus the recovery residual stays below sqrt(0.01)), while
# leaving real headroom above the feedback rule's typical pace.
ALPHA_MAX_DEFAULT = 0.12


class DegenerateDirection(Exception):
    """Setpoint and waypoint coincide; no direction can be normalized."""


class PreconditionViolated(Exception):
    """Governor invoked outside a recovery instant."""


class ModelNotLoaded(Exception):
    """Learned rule selected but no trained policy was attached."""


@dataclass(frozen=True)
class Mission:
    """Ordered waypoint positions plus the arrival tolerance.

    ``waypoints`` holds at least two positions and consecutive entries must
    be distinct; the vehicle starts hovering at the first one and the run is
    complete when the true position is within ``goal_tol`` of the last.
    """

    waypoints: tuple = ((1.0, 1.0, 1.0), (5.0, 5.0, 5.0))
    goal_tol: float = 0.05

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in w) for w in self.waypoints)
        if len(pts) < 2:
            raise ValueError("mission needs at least two waypoints")
        for w in pts:
            if len(w) != 3:
                raise ValueError("waypoints are 3-dim positions")
        for prev, nxt in zip(pts, pts[1:]):
            gap = np.linalg.norm(np.subtract(nxt, prev))
            if gap < DIRECTION_TOL:
                raise ValueError("consecutive waypoints must be distinct")
        if not self.goal_tol > 0.0:
            raise ValueError("goal_tol must be positive")
        object.__setattr__(self, "waypoints", pts)

    def waypoint(self, index):
        """Waypoint ``index`` as a float array."""
        return np.array(self.waypoints[index], dtype=float)

    @property
    def start(self):
        return self.waypoint(0)

    @property
    def goal(self):
        return self.waypoint(len(self.waypoints) - 1)


def unit_direction(x_sp, w_next):
    """Unit vector (full state, positions only) from setpoint toward a waypoint.

    Raises DegenerateDirection when the two positions are closer than
    ``DIRECTION_TOL``.
    """
    x_sp = np.asarray(x_sp, dtype=float)
    delta = np.asarray(w_next, dtype=float) - x_sp[POS]
    dist = float(np.linalg.norm(delta))
    if dist < DIRECTION_TOL:
        raise DegenerateDirection(
            f"setpoint sits on the waypoint (separation {dist:.3e})"
        )
    v = np.zeros(N_STATES)
    v[POS] = delta / dist
    return v


def conservative_alpha(metric: SafetyMetric) -> float:
    """Constant step: the gap between the two ellipsoid radii.

    Any estimate inside the recovery ellipsoid moved by this much stays
    inside the monitored one, so the rule never needs the estimate itself.
    """
    return metric.sqrt_rho_m - metric.sqrt_rho_s


def baseline_alpha(x_hat, x_sp, metric: SafetyMetric) -> float:
    """Feedback step: spend the distance left to the monitored radius.

    Valid only at recovery instants; raises PreconditionViolated when the
    estimate-to-setpoint distance still exceeds the recovery ellipsoid.
    """
    nsq = metric.norm_sq(x_hat, x_sp)
    if nsq > metric.rho_s:
        raise PreconditionViolated(
            f"estimate norm-squared {nsq:.6g} exceeds recovery bound {metric.rho_s}"
        )
    return metric.sqrt_rho_m - float(np.sqrt(nsq))


def learned_alpha(agent, s, alpha_max=ALPHA_MAX_DEFAULT, deterministic=False, rng=None):
    """Step chosen by a trained policy on the error state ``s = x_hat - x_sp``.

    The raw action ``a`` lies in (-1, 1); the step is the affine image
    ``alpha_max * (a + 1) / 2`` in [0, alpha_max].  ``deterministic`` selects
    the squashed mean instead of a sample.
    """
    if agent is None:
        raise ModelNotLoaded("learned rule selected but no policy attached")
    s = np.asarray(s, dtype=float)
    raw = float(agent.act(s, deterministic=deterministic, rng=rng))
    return alpha_max * (raw + 1.0) / 2.0


def apply_setpoint(x_sp, alpha, v, w_next):
    """Advance the setpoint by ``alpha`` along ``v``, snapping at the waypoint.

    Returns ``(new_setpoint, reached)`` where ``reached`` flags that the
    step landed exactly on ``w_next`` (a snapped overshoot or an exact hit).
    The result is always a hover state.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")
    x_sp = np.asarray(x_sp, dtype=float)
    w_next = np.asarray(w_next, dtype=float)
    dist = float(np.linalg.norm(w_next - x_sp[POS]))
    if alpha + DIRECTION_TOL >= dist:
        return hover_state(w_next), True
    return hover_state(x_sp[POS] + alpha * np.asarray(v, dtype=float)[POS]), False


@dataclass
class AlphaPolicy:
    """Dispatcher bundling the rule choice with its learned-policy handle.

    ``kind`` is one of ``conservative``, ``baseline`` or ``rl``; the last
    requires ``agent`` (anything exposing ``act(s, deterministic, rng)``).
    """

    kind: str = "baseline"
    alpha_max: float = ALPHA_MAX_DEFAULT
    agent: object = field(default=None, repr=False)

    KINDS = ("conservative", "baseline", "rl")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown governor kind {self.kind!r}")
        if not self.alpha_max > 0.0:
            raise ValueError("alpha_max must be positive")

    def choose(self, x_hat, x_sp, metric, deterministic=False, rng=None):
        """Step size for the current recovery instant."""
        if self.kind == "conservative":
            return conservative_alpha(metric)
        if self.kind == "baseline":
            return baseline_alpha(x_hat, x_sp, metric)
        s = np.asarray(x_hat, dtype=float) - np.asarray(x_sp, dtype=float)
        return learned_alpha(
            self.agent, s, self.alpha_max, deterministic=deterministic, rng=rng
        )
