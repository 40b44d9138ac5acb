"""Leader integral control, disturbance-fed follower control and post-connection AGC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

AGC_INIT_MODES = ("bumpless", "zero")


@dataclass(frozen=True)
class AgcParams:
    """Participation factors and engagement settings for the frequency integrator.

    ``engage_time`` is measured from scenario start; the AGC never engages
    before the connection.  ``init`` picks the integrator value at
    engagement: ``bumpless`` sets z to the summed mechanical input at that
    instant, ``zero`` starts from z = 0.
    """

    alpha1: float = 0.5
    alpha2: float = 0.5
    engage_time: float = 400.0
    init: str = "bumpless"

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError("participation factor must lie in [0, 1]", name)
        if abs(self.alpha1 + self.alpha2 - 1.0) > 1e-12:
            raise ConfigError("alpha1 + alpha2 must equal 1", "alpha2")
        if not math.isfinite(self.engage_time) or self.engage_time < 0:
            raise ConfigError("must be finite and >= 0", "engage_time")
        if self.init not in AGC_INIT_MODES:
            raise ConfigError(f"expected one of {AGC_INIT_MODES}", "init")

    def initial_z(self, u1: float, u2: float) -> float:
        return u1 + u2 if self.init == "bumpless" else 0.0


def leader_control(theta1: float, t: float, params) -> float:
    """u1 = -k (theta1 - omega0 t)."""
    return -params.k * (theta1 - params.omega0 * t)


def follower_control(measured_theta3_plus_d: float, omega2: float, t: float, params) -> float:
    """Follower input built from the corrupted bus phase.

    It mimics the leader's integral law around the shifted angle
    theta3 + d + theta13_bar, feeds forward the nominal electrical load and
    swaps the follower's own damping for the leader's.
    """
    th = params.theta13_bar
    return (
        -params.k * (measured_theta3_plus_d + th)
        + params.k * params.omega0 * t
        - float(params.b1(th))
        + (params.d2_0 - params.d1_0) * omega2
    )


def follower_field(params):
    """Fast closure ``(measured, omega2, t) -> u2`` equal to :func:`follower_control`."""
    k, w0, th = params.k, params.omega0, params.theta13_bar
    offset = -k * th - float(params.b1(th))
    dd = params.d2_0 - params.d1_0

    def f(measured, omega2, t):
        return -k * measured + k * w0 * t + offset + dd * omega2

    return f


def agc_control(omega1, omega2, z, agc: AgcParams, params):
    """Returns (z_dot, u1, u2) for the shared frequency integrator."""
    d1, d2 = params.d1_0, params.d2_0
    z_dot = -((d1 * omega1 + d2 * omega2) / (d1 + d2) - params.omega0)
    return z_dot, agc.alpha1 * z, agc.alpha2 * z


def shifted_leader_matrix(params) -> np.ndarray:
    """State matrix of the leader in (omega1 - omega0, theta1 - omega0 t - delta_eq) coordinates."""
    return np.array([[-params.d1_0, -params.k], [1.0, 0.0]])


def shifted_leader_rates(omega_bar, delta_bar, ell_dot, params):
    """Right-hand side of the shifted leader dynamics.

    With u1 from :func:`leader_control` and the equilibrium
    delta_eq(t) = -(ell(t) + D1 omega0) / k, the shifted states obey
    A x + (0, ell_dot / k).
    """
    a = shifted_leader_matrix(params)
    return a @ np.array([omega_bar, delta_bar]) + np.array([0.0, ell_dot / params.k])
