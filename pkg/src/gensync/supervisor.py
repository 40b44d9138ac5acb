"""Connection logic: decides when the follower may be switched onto the bus.

The follower only sees the corrupted bus phase theta3 + d.  A connection
fires when its own angle sits within ``max_phase_error`` of a 2 pi multiple
of that measurement while the speed mismatch is admissible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, InvalidTarget
from .model import PostSyncState, PreSyncState

TWO_PI = 2.0 * math.pi
SPEED_CHECK_MODES = ("true", "measured")


def wrap_phase(x: float) -> float:
    """Representative of x modulo 2 pi in (-pi, pi]."""
    r = math.remainder(x, TWO_PI)
    return math.pi if r <= -math.pi else r


@dataclass(frozen=True)
class SyncThresholds:
    max_speed_error: float = 0.134 * math.pi
    max_phase_error: float = 0.055 * math.pi
    freq_band: float = math.pi

    def __post_init__(self):
        for name in ("max_speed_error", "max_phase_error", "freq_band"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError("must be finite and > 0", name)


@dataclass(frozen=True)
class ConnectionEvent:
    time: float
    wrapped_phase_error: float
    speed_error: float
    true_phase_error: float


def check_connection(
    state: PreSyncState,
    measured_theta3_plus_d: float,
    true_omega3: float,
    thresholds: SyncThresholds,
    t: float = math.nan,
) -> ConnectionEvent | None:
    """Single-instant test; returns the event when both conditions hold."""
    phase = wrap_phase(state.theta2 - measured_theta3_plus_d)
    speed = state.omega2 - true_omega3
    if abs(phase) <= thresholds.max_phase_error and abs(speed) <= thresholds.max_speed_error:
        return ConnectionEvent(t, phase, speed, wrap_phase(state.theta2 - state.theta3))
    return None


def connect(state: PreSyncState, z: float = 0.0) -> PostSyncState:
    """Post-sync state continuing ``state``; the bus angle becomes an explicit state."""
    return PostSyncState(state.theta1, state.omega1, state.theta2, state.omega2, state.theta3, z)


def phase_dev_bound(disturbance_amplitude: float, thresholds: SyncThresholds) -> float:
    """Worst true phase deviation at connection: band plus the unseen offset."""
    if disturbance_amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    return thresholds.max_phase_error + disturbance_amplitude


def waiting_time_estimate(params, eps: float, e_target: float) -> float:
    """Time for an error starting at omega0 to decay to ``e_target``.

    Uses the rate D1 eps / (1 + eps); larger eps approaches the pure rate D1.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if not 0 < e_target:
        raise InvalidTarget("e_target must be > 0")
    if e_target >= params.omega0:
        if e_target == params.omega0:
            return 0.0
        raise InvalidTarget(f"e_target={e_target!r} must be below omega0={params.omega0!r}")
    rate = params.d1_0 * eps / (1.0 + eps)
    return math.log(params.omega0 / e_target) / rate


def _band_interval(x0, x1, limit):
    """Sub-interval of s in [0, 1] where |x0 + s (x1 - x0)| <= limit, or None."""
    dx = x1 - x0
    if dx == 0.0:
        return (0.0, 1.0) if abs(x0) <= limit else None
    a = (-limit - x0) / dx
    b = (limit - x0) / dx
    lo, hi = (a, b) if a <= b else (b, a)
    lo, hi = max(lo, 0.0), min(hi, 1.0)
    return (lo, hi) if lo <= hi else None


class Supervisor:
    """Stateful monitor fed one integration step at a time.

    ``speed_mode='true'`` uses the actual e = omega2 - omega3;
    ``speed_mode='measured'`` replaces omega3 with the backward-difference
    rate of the measured phase, which is what a follower without bus-speed
    sensing could compute.  After ``give_up_after`` seconds without a
    connection it stops checking and reports no connection.
    """

    def __init__(self, thresholds: SyncThresholds, speed_mode: str = "true", give_up_after: float | None = None):
        if speed_mode not in SPEED_CHECK_MODES:
            raise ConfigError(f"expected one of {SPEED_CHECK_MODES}", "speed_mode")
        self.thresholds = thresholds
        self.speed_mode = speed_mode
        self.give_up_after = give_up_after
        self.event: ConnectionEvent | None = None
        self.gave_up = False
        self._prev = None

    @property
    def active(self) -> bool:
        return self.event is None and not self.gave_up

    def observe(self, t, theta2, omega2, measured, omega3, theta3):
        """Feed the sample at time t.

        Returns the fraction s in [0, 1] of the step since the previous
        sample at which the connection fired, or None.  Both error signals
        are interpolated linearly across the step and the earliest instant
        inside both bands is taken.
        """
        if not self.active:
            return None
        if self.give_up_after is not None and t > self.give_up_after:
            self.gave_up = True
            return None
        prev = self._prev
        phase = wrap_phase(theta2 - measured)
        true = theta2 - theta3
        if self.speed_mode == "true":
            speed = omega2 - omega3
        else:
            speed = None if prev is None else omega2 - (measured - prev[2]) / (t - prev[0])
        self._prev = (t, phase, measured, speed, true)
        th = self.thresholds
        if prev is None:
            if speed is not None and abs(phase) <= th.max_phase_error and abs(speed) <= th.max_speed_error:
                self.event = ConnectionEvent(t, phase, speed, wrap_phase(true))
                return 0.0
            return None
        t0, phase0, _, speed0, true0 = prev
        if speed0 is None:
            speed0 = speed
        # phase may wrap across +-pi inside a step; unwrap relative to the end point
        phase0 = phase - wrap_phase(phase - phase0)
        iv_p = _band_interval(phase0, phase, th.max_phase_error)
        if iv_p is None:
            return None
        iv_s = _band_interval(speed0, speed, th.max_speed_error)
        if iv_s is None:
            return None
        lo = max(iv_p[0], iv_s[0])
        if lo > min(iv_p[1], iv_s[1]):
            return None
        self.event = ConnectionEvent(
            t0 + lo * (t - t0),
            wrap_phase(phase0 + lo * (phase - phase0)),
            speed0 + lo * (speed - speed0),
            wrap_phase(true0 + lo * (true - true0)),
        )
        return lo
