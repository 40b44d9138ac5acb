"""Damped generator / bus / follower dynamics and their small-signal form.

Angles are absolute (rad), speeds in electrical rad/s, powers in per-unit.
Before connection the leader state carries the generator-bus angle
difference ``theta13`` rather than the bus angle itself, which turns the
implicit power balance ``ell = B1(theta13) + D1(theta13) * dtheta13/dt`` into
an explicit ODE.  After connection the bus speed is solved from the
two-machine power balance at every evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import DegenerateDamping, ModelError, NoRoot, NonMonotoneBracket

DAMPING_FLOOR = 1e-12

REFERENCE_VALUES = dict(
    k=0.01,
    omega0=120 * math.pi,
    d1_0=0.0531,
    d2_0=0.0531,
    k1=0.6434,
    k2=0.4167,
    x1=0.0742,
    x2=0.0742,
    c1=0.0656,
    c2=0.00548,
    ell_bar=0.5,
)


def eval_b(kcoef, xcoef, s):
    """Power-angle curve ``K sin(s) + X sin(2s)``."""
    return kcoef * np.sin(s) + xcoef * np.sin(2.0 * s)


def eval_b_prime(kcoef, xcoef, s):
    return kcoef * np.cos(s) + 2.0 * xcoef * np.cos(2.0 * s)


def eval_d(c1, c2, s):
    """Angle-dependent damping ``C1 cos^2(s) + C2 sin^2(s)``."""
    c = np.cos(s)
    sn = np.sin(s)
    return c1 * c * c + c2 * sn * sn


def eval_d_prime(c1, c2, s):
    return (c2 - c1) * np.sin(2.0 * s)


def _peak_angle(kcoef, xcoef):
    """First maximiser of K sin s + X sin 2s on (0, pi/2]."""
    if xcoef <= 0.0:
        return math.pi / 2
    # B'(s) = 0  <=>  4X c^2 + K c - 2X = 0 with c = cos(s)
    c = (-kcoef + math.sqrt(kcoef * kcoef + 32.0 * xcoef * xcoef)) / (8.0 * xcoef)
    return math.acos(min(1.0, max(0.0, c)))


def steady_theta13(params, ell, bracket=None, tol=1e-13):
    """Steady generator-bus angle solving ``B1(theta) = ell``.

    With no explicit ``bracket`` the search runs on (0, pi/2) truncated at the
    peak of B1, where B1 is strictly increasing.  An explicit bracket is
    checked for monotonicity and rejected if B1' changes sign inside it.
    """
    kc, xc = params.k1, params.x1
    if bracket is None:
        lo, hi = 0.0, _peak_angle(kc, xc)
    else:
        lo, hi = float(bracket[0]), float(bracket[1])
        grid = np.linspace(lo, hi, 2049)
        slope = eval_b_prime(kc, xc, grid)
        if np.any(slope > 0) and np.any(slope < 0):
            raise NonMonotoneBracket(
                f"B1' changes sign on [{lo:.6g}, {hi:.6g}]; choose a narrower bracket"
            )
    b_lo = float(eval_b(kc, xc, lo))
    b_hi = float(eval_b(kc, xc, hi))
    if ell == b_lo:
        return lo
    if not (min(b_lo, b_hi) <= ell <= max(b_lo, b_hi)):
        raise NoRoot(
            f"load {ell!r} outside B1 range [{min(b_lo, b_hi):.6g}, {max(b_lo, b_hi):.6g}] on bracket"
        )
    increasing = b_hi > b_lo
    # plain bisection: the bracket is monotone so it converges unconditionally
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (float(eval_b(kc, xc, mid)) < ell) == increasing:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GeneratorParams:
    """Per-unit constants of the damped leader / follower pair.

    ``theta13_bar`` defaults to the root of ``B1(theta) = ell_bar``.  D2 uses
    the same (c1, c2) pair as D1.
    """

    k: float
    omega0: float
    d1_0: float
    d2_0: float
    k1: float
    k2: float
    x1: float
    x2: float
    c1: float
    c2: float
    ell_bar: float
    theta13_bar: float | None = None
    inertia: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not math.isfinite(v):
                raise ModelError(f"{f.name} must be finite, got {v!r}")
        if self.k <= 0:
            raise ModelError("k must be > 0")
        if self.d1_0 <= 0 or self.d2_0 <= 0:
            raise ModelError("d1_0 and d2_0 must be > 0")
        if self.k1 <= 0:
            raise ModelError("k1 must be > 0")
        if self.x1 < 0 or self.x2 < 0:
            raise ModelError("x1 and x2 must be >= 0")
        if self.c1 < 0 or self.c2 < 0 or (self.c1 == 0 and self.c2 == 0):
            raise ModelError("c1, c2 must be >= 0 and not both zero")
        if self.inertia <= 0:
            raise ModelError("inertia must be > 0")
        if self.theta13_bar is None:
            object.__setattr__(self, "theta13_bar", steady_theta13(self, self.ell_bar))
        elif abs(float(eval_b(self.k1, self.x1, self.theta13_bar)) - self.ell_bar) > 1e-9:
            raise ModelError(
                f"theta13_bar={self.theta13_bar!r} does not satisfy B1(theta13_bar) = ell_bar "
                "to 1e-9; omit it to have it computed"
            )

    @classmethod
    def reference(cls, **overrides):
        """The reference parameter set (k = 0.01, omega0 = 120 pi, ...)."""
        values = dict(REFERENCE_VALUES)
        values.update(overrides)
        return cls(**values)

    def with_(self, **changes):
        if "theta13_bar" not in changes and {"k1", "x1", "ell_bar"} & changes.keys():
            changes["theta13_bar"] = None
        return replace(self, **changes)

    def b1(self, s):
        return eval_b(self.k1, self.x1, s)

    def b2(self, s):
        return eval_b(self.k2, self.x2, s)

    def d1(self, s):
        return eval_d(self.c1, self.c2, s)

    def d2(self, s):
        return eval_d(self.c1, self.c2, s)

    def equilibrium_u1(self):
        return self.ell_bar + self.d1_0 * self.omega0


@dataclass(frozen=True)
class PreSyncState:
    theta1: float
    omega1: float
    theta13: float
    theta2: float
    omega2: float

    @property
    def theta3(self):
        return self.theta1 - self.theta13

    def as_tuple(self):
        return (self.theta1, self.omega1, self.theta13, self.theta2, self.omega2)


@dataclass(frozen=True)
class PostSyncState:
    theta1: float
    omega1: float
    theta2: float
    omega2: float
    theta3: float
    z: float = 0.0

    @property
    def theta13(self):
        return self.theta1 - self.theta3

    @property
    def theta23(self):
        return self.theta2 - self.theta3

    def as_tuple(self):
        return (self.theta1, self.omega1, self.theta2, self.omega2, self.theta3, self.z)


@dataclass(frozen=True)
class PostSyncRates:
    """Time derivative of a post-sync state plus the algebraic outputs."""

    derivative: PostSyncState
    omega3: float
    p1: float
    p2: float


def theta13_field(params):
    """Fast closure ``g(theta13, ell) -> dtheta13/dt`` from the leader power balance."""
    k1, x1, c1, c2 = params.k1, params.x1, params.c1, params.c2
    sin, cos = math.sin, math.cos

    def g(th13, ell):
        c = cos(th13)
        s = sin(th13)
        damp = c1 * c * c + c2 * s * s
        if damp <= DAMPING_FLOOR:
            raise DegenerateDamping(f"D1({th13!r}) = {damp!r}")
        return (ell - k1 * s - x1 * 2.0 * s * c) / damp

    return g


def presync_field(params):
    """Fast closure ``f(y, u1, u2, ell) -> dy`` over tuples.

    ``y = (theta1, omega1, theta13, theta2, omega2)``.
    """
    g = theta13_field(params)
    d10, d20, m = params.d1_0, params.d2_0, params.inertia

    def f(y, u1, u2, ell):
        return (
            y[1],
            (u1 - ell - d10 * y[1]) / m,
            g(y[2], ell),
            y[4],
            (u2 - d20 * y[4]) / m,
        )

    return f


def presync_rhs(state, u1, u2, ell, params):
    """Derivative of a :class:`PreSyncState` under inputs ``u1``, ``u2`` and load ``ell``."""
    dy = presync_field(params)(state.as_tuple(), u1, u2, ell)
    return PreSyncState(*dy)


def presync_bus_speed(state, ell, params):
    """omega3 = omega1 - dtheta13/dt before connection."""
    th13 = state.theta13
    return state.omega1 - (ell - float(params.b1(th13))) / float(params.d1(th13))


def postsync_field(params):
    """Fast closure ``f(y, u1, u2, ell, zdot) -> (dy, omega3, p1, p2)``.

    ``y = (theta1, omega1, theta2, omega2, theta3, z)``; the bus speed comes
    from solving the joint power balance for omega3.
    """
    k1, x1, k2, x2, c1, c2 = params.k1, params.x1, params.k2, params.x2, params.c1, params.c2
    d10, d20, m = params.d1_0, params.d2_0, params.inertia
    sin, cos = math.sin, math.cos

    def f(y, u1, u2, ell, zdot=0.0):
        th1, w1, th2, w2, th3 = y[0], y[1], y[2], y[3], y[4]
        a = th1 - th3
        b = th2 - th3
        ca, sa, cb, sb = cos(a), sin(a), cos(b), sin(b)
        da = c1 * ca * ca + c2 * sa * sa
        db = c1 * cb * cb + c2 * sb * sb
        if da + db <= DAMPING_FLOOR:
            raise DegenerateDamping(f"D1 + D2 = {da + db!r}")
        ba = k1 * sa + x1 * 2.0 * sa * ca
        bb = k2 * sb + x2 * 2.0 * sb * cb
        w3 = (da * w1 + db * w2 + ba + bb - ell) / (da + db)
        p1 = ba + da * (w1 - w3)
        p2 = bb + db * (w2 - w3)
        dy = (w1, (u1 - p1 - d10 * w1) / m, w2, (u2 - p2 - d20 * w2) / m, w3, zdot)
        return dy, w3, p1, p2

    return f


def postsync_rhs(state, u1, u2, ell, params, z_dot=0.0):
    dy, w3, p1, p2 = postsync_field(params)(state.as_tuple(), u1, u2, ell, z_dot)
    return PostSyncRates(PostSyncState(*dy), w3, p1, p2)


@dataclass(frozen=True)
class SmallSignal:
    """Linearisation of the theta13 ODE about (theta13_bar, ell_bar).

    ``d(dtheta)/dt = a * dtheta + b * dell``; the augmented form acts on
    (dtheta, dtheta_dot) with inputs (dell, dell_dot).
    """

    a: float
    b: float
    state_matrix: np.ndarray = field(repr=False)
    input_matrix: np.ndarray = field(repr=False)


def small_signal_jacobian(params, theta13_bar=None):
    th = params.theta13_bar if theta13_bar is None else theta13_bar
    damp = float(params.d1(th))
    if damp <= DAMPING_FLOOR:
        raise DegenerateDamping(f"D1({th!r}) = {damp!r}")
    slope = float(eval_b_prime(params.k1, params.x1, th))
    a = -slope / damp
    b = 1.0 / damp
    return SmallSignal(
        a=a,
        b=b,
        state_matrix=np.array([[a], [a * a]]),
        input_matrix=np.array([[b, 0.0], [a * b, b]]),
    )


def flipped_small_signal(params, theta13_bar=None):
    """Small-signal matrices in the alternative sign convention.

    This input matrix has the opposite sign to the direct
    linearisation returned by :func:`small_signal_jacobian`; it is kept only
    for side-by-side comparison.
    """
    th = params.theta13_bar if theta13_bar is None else theta13_bar
    damp = float(params.d1(th))
    slope = float(eval_b_prime(params.k1, params.x1, th))
    state = np.array([[-slope / damp], [(slope / damp) ** 2]])
    inputs = np.array([[-1.0 / damp, 0.0], [slope / damp**2, -1.0 / damp]])
    return state, inputs
