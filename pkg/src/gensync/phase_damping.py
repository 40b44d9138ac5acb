"""Leader with angle-dependent damping: controls, slowly-varying LTV constants and the ISS gain.

The leader obeys omega1' = u1 - D1(theta1) omega1 + xi1(t) with a known
signal xi1.  The follower cancels its own damping, copies the leader's
damping at the measured angle and feeds xi1 forward, so the speed error
e = omega2 - omega1 is driven only by the measurement offset d.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .analysis import decay_constants_kd
from .errors import ConfigError, EmptyDomain, GainTooSmall
from .integrate import check_finite
from .supervisor import wrap_phase

TWO_PI = 2.0 * math.pi
PROFILE_KINDS = ("constant", "sinusoidal", "table")
DENSE_SAMPLES = 200_001


@dataclass(frozen=True)
class DampingProfile:
    """2 pi periodic damping map with its bounds and derivative bound.

    Build through :meth:`constant`, :meth:`sinusoidal` or :meth:`table`.
    For the first two the bounds are analytic; for a table they come from
    dense sampling of the periodic cubic spline through the points.
    """

    kind: str
    d0: float
    amplitude: float = 0.0
    points: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    d_lower: float = field(init=False)
    d_upper: float = field(init=False)
    eps_deriv: float = field(init=False)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ConfigError(f"expected one of {PROFILE_KINDS}", "damping.kind")
        if self.kind == "table":
            spline = self._spline()
            r = np.linspace(0.0, TWO_PI, DENSE_SAMPLES)
            vals = spline(r)
            lo, hi, eps = float(vals.min()), float(vals.max()), float(np.max(np.abs(spline(r, 1))))
        else:
            if not (math.isfinite(self.d0) and math.isfinite(self.amplitude)):
                raise ConfigError("must be finite", "damping")
            a = abs(self.amplitude) if self.kind == "sinusoidal" else 0.0
            if a >= self.d0:
                raise ConfigError("amplitude must be below d0 so the damping stays positive", "damping.amplitude")
            lo, hi, eps = self.d0 - a, self.d0 + a, a
        if not lo > 0:
            raise ConfigError(f"damping must stay positive, min is {lo!r}", "damping")
        object.__setattr__(self, "d_lower", lo)
        object.__setattr__(self, "d_upper", hi)
        object.__setattr__(self, "eps_deriv", eps)

    @classmethod
    def constant(cls, d: float) -> "DampingProfile":
        return cls("constant", float(d))

    @classmethod
    def sinusoidal(cls, d0: float, amplitude: float) -> "DampingProfile":
        """D(r) = d0 + a sin r, so D_lower = d0 - |a|, D_upper = d0 + |a|, eps = |a|."""
        return cls("sinusoidal", float(d0), float(amplitude))

    @classmethod
    def table(cls, angles, values) -> "DampingProfile":
        """Periodic spline through (angle, value) pairs on [0, 2 pi).

        The point at 2 pi is implied by periodicity and must not be listed.
        """
        angles = tuple(float(a) for a in angles)
        values = tuple(float(v) for v in values)
        if len(angles) != len(values) or len(angles) < 3:
            raise ConfigError("need at least 3 (angle, value) pairs of equal length", "damping.points")
        if any(b <= a for a, b in zip(angles, angles[1:])) or angles[0] < 0 or angles[-1] >= TWO_PI:
            raise ConfigError("angles must increase strictly within [0, 2 pi)", "damping.points")
        if not all(math.isfinite(v) for v in values):
            raise ConfigError("values must be finite", "damping.points")
        return cls("table", float(np.mean(values)), 0.0, (angles, values))

    def _spline(self) -> CubicSpline:
        angles, values = self.points
        return CubicSpline(list(angles) + [angles[0] + TWO_PI], list(values) + [values[0]], bc_type="periodic")

    def scalar_fns(self) -> tuple[Callable[[float], float], Callable[[float], float]]:
        """Fast scalar closures (D(r), D'(r)) for the integration loop."""
        d0, a = self.d0, self.amplitude
        if self.kind == "constant":
            return (lambda r: d0), (lambda r: 0.0)
        if self.kind == "sinusoidal":
            sin, cos = math.sin, math.cos
            return (lambda r: d0 + a * sin(r)), (lambda r: a * cos(r))
        spline = self._spline()
        xs = [float(x) for x in spline.x]
        coef = [[float(c) for c in col] for col in spline.c.T]
        right = bisect.bisect_right

        def locate(r):
            r = r % TWO_PI
            i = min(max(right(xs, r) - 1, 0), len(coef) - 1)
            return coef[i], r - xs[i]

        def d_fn(r):
            c, h = locate(r)
            return ((c[0] * h + c[1]) * h + c[2]) * h + c[3]

        def d_prime(r):
            c, h = locate(r)
            return (3.0 * c[0] * h + 2.0 * c[1]) * h + c[2]

        return d_fn, d_prime

    def d_fn(self, r):
        """Vectorised D(r)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full_like(r, self.d0)
        if self.kind == "sinusoidal":
            return self.d0 + self.amplitude * np.sin(r)
        return self._spline()(np.mod(r, TWO_PI))

    def d_prime(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(r)
        if self.kind == "sinusoidal":
            return self.amplitude * np.cos(r)
        return self._spline()(np.mod(r, TWO_PI), 1)


@dataclass(frozen=True)
class KnownSignal:
    """Exogenous leader input xi1(t) shared with the follower, with |xi1'| <= xi_dot_bound."""

    xi: Callable[[float], float]
    xi_dot: Callable[[float], float]
    xi_dot_bound: float

    @classmethod
    def constant(cls, value: float = 0.0) -> "KnownSignal":
        return cls(lambda t: value, lambda t: 0.0, 0.0)

    @classmethod
    def sinusoid(cls, offset: float, amplitude: float, frequency: float) -> "KnownSignal":
        sin, cos = math.sin, math.cos
        return cls(
            lambda t: offset + amplitude * sin(frequency * t),
            lambda t: amplitude * frequency * cos(frequency * t),
            abs(amplitude * frequency),
        )

    @classmethod
    def from_load(cls, profile) -> "KnownSignal":
        """xi1 = -ell(t): the load of the constant-damping model seen as a known input."""
        ev = profile.evaluator()
        bound = profile.delta_ell_dot if profile.shape != "user-samples" else float(
            np.max(np.abs(np.diff(profile.samples[1]) / np.diff(profile.samples[0])))
        )
        return cls(lambda t: -ev(t)[0], lambda t: -ev(t)[1], abs(bound))


@dataclass(frozen=True)
class LtvConstants:
    lam: float
    c: float
    L: float
    L_closed_form: float
    beta1: float
    beta2: float
    mu_max: float
    c_bar: float
    lambda_bar: float
    mu: float = 0.0


@dataclass(frozen=True)
class IssGain:
    """phi(r) from the grid search, the Lipschitz envelope and a certified upper value."""

    r: float
    phi: float
    envelope: float
    certified: float
    omega_sup: float


def pd_leader_rhs(theta1, omega1, u1, profile: DampingProfile, signal: KnownSignal, t):
    """(theta1', omega1') = (omega1, u1 - D1(theta1) omega1 + xi1(t))."""
    return omega1, u1 - float(profile.d_fn(theta1)) * omega1 + signal.xi(t)


def pd_leader_control(theta1, t, params):
    return -params.k * (theta1 - params.omega0 * t)


def pd_equilibrium_delta(theta1, t, profile: DampingProfile, signal: KnownSignal, params):
    """Frozen-time equilibrium of the leader's delta1 = theta1 - omega0 t."""
    return (signal.xi(t) - float(profile.d_fn(theta1)) * params.omega0) / params.k


def pd_nu(theta1, omega1, t, profile: DampingProfile, signal: KnownSignal, params):
    """Drive of the shifted leader dynamics from the moving equilibrium."""
    return (float(profile.d_prime(theta1)) * omega1 * params.omega0 - signal.xi_dot(t)) / params.k


def pd_state_matrix(theta1, profile: DampingProfile, params) -> np.ndarray:
    return np.array([[-float(profile.d_fn(theta1)), -params.k], [1.0, 0.0]])


def pd_shifted_rates(omega1, delta1, t, profile: DampingProfile, signal: KnownSignal, params):
    """A(t) (omega_bar, delta_bar) + (0, nu) at the state (omega1, delta1) and time t."""
    theta1 = delta1 + params.omega0 * t
    x = np.array([omega1 - params.omega0, delta1 - pd_equilibrium_delta(theta1, t, profile, signal, params)])
    nu = pd_nu(theta1, omega1, t, profile, signal, params)
    return pd_state_matrix(theta1, profile, params) @ x + np.array([0.0, nu])


def pd_follower_control(measured, omega2, theta2, t, d1: DampingProfile, d2: DampingProfile, signal: KnownSignal, params):
    """u2 from the corrupted leader angle ``measured`` = theta1 + d.

    Cancels the follower's damping, imposes the leader's damping at the
    measured angle, mimics u1 on the measured angle and feeds xi1 forward.
    """
    k = params.k
    return (
        (float(d2.d_fn(theta2)) - float(d1.d_fn(measured))) * omega2
        - k * measured
        + k * params.omega0 * t
        + signal.xi(t)
    )


def pd_error_rate(e, theta1, omega1, d, profile: DampingProfile, params):
    """e' for e = omega2 - omega1 under both closed loops."""
    dm = float(profile.d_fn(theta1 + d))
    return -dm * e - (dm - float(profile.d_fn(theta1))) * omega1 - params.k * d


def largest_singular_value(damping: float, k: float) -> float:
    """||[[-D, -k], [1, 0]]||_2 from the eigenvalues of A^T A = [[D^2 + 1, D k], [D k, k^2]]."""
    tr = damping * damping + 1.0 + k * k
    det = k * k
    return math.sqrt(0.5 * (tr + math.sqrt(max(tr * tr - 4.0 * det, 0.0))))


def closed_form_singular_bound(damping: float, k: float) -> float:
    """Same bound with the k^2 corner of A^T A dropped."""
    s = damping * damping + 1.0
    return math.sqrt(0.5 * (s + math.sqrt(s * s + 4.0 * damping * damping * k * k)))


def ltv_constants(profile: DampingProfile, params, mu: float = 0.0) -> LtvConstants:
    """Constants for the slowly time-varying leader system.

    The decay rate uses D_lower and the overshoot uses D_upper.  L is the
    exact spectral norm at D_upper, where it is largest because the norm
    grows with D; ``L_closed_form`` is the variant without the k^2 term.
    """
    k = params.k
    lo, hi = profile.d_lower, profile.d_upper
    if not k > hi * hi / 4.0:
        raise GainTooSmall(f"k={k!r} must exceed D_upper^2/4={hi * hi / 4.0!r}")
    _, c = decay_constants_kd(k, hi)
    lam = 0.5 * lo
    big_l = largest_singular_value(hi, k)
    beta1 = 1.0 / (2.0 * big_l)
    beta2 = c * c / (2.0 * lam)
    if mu < 0:
        raise ValueError("mu must be >= 0")
    return LtvConstants(
        lam=lam,
        c=c,
        L=big_l,
        L_closed_form=closed_form_singular_bound(hi, k),
        beta1=beta1,
        beta2=beta2,
        mu_max=beta1 / (2.0 * beta2 ** 3),
        c_bar=math.sqrt(beta2 / beta1),
        lambda_bar=1.0 / beta2 - 2.0 * beta2 * beta2 * mu / beta1,
        mu=mu,
    )


def default_omega_box(params) -> tuple[tuple[float, float], tuple[float, float]]:
    return (0.0, TWO_PI), (params.omega0 - math.pi, params.omega0 + math.pi)


def iss_gain_phi(profile: DampingProfile, r: float, params, omega_box=None, resolution: float = 1e-3,
                 chunk: int = 512) -> IssGain:
    """phi(r) = max over the box and |d| <= r of |(D(theta + d) - D(theta)) omega1| + k r.

    The objective is linear in omega1, so only the largest |omega1| in the
    box matters.  The angle part is a grid search; ``certified`` adds the
    worst interpolation slack of a 2 eps / eps Lipschitz function and is
    capped by the envelope eps r sup|omega1| + k r.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    if omega_box is None:
        omega_box = default_omega_box(params)
    (th_lo, th_hi), (w_lo, w_hi) = omega_box
    if not (th_hi > th_lo and w_hi >= w_lo):
        raise EmptyDomain(f"empty box {omega_box!r}")
    w_sup = max(abs(w_lo), abs(w_hi))
    eps = profile.eps_deriv
    envelope = (eps * w_sup + params.k) * r
    if r == 0 or profile.kind == "constant":
        # difference term vanishes, so the envelope is exact
        return IssGain(r, params.k * r, envelope, envelope, w_sup)
    span = min(th_hi - th_lo, TWO_PI)
    n_th = max(int(math.ceil(span / resolution)), 1) + 1
    thetas = np.linspace(th_lo, th_lo + span, n_th)
    n_d = max(int(math.ceil(r / resolution)), 1) + 1
    ds = np.linspace(0.0, r, n_d)
    ds = np.concatenate([-ds[:0:-1], ds])
    base = profile.d_fn(thetas)
    best = 0.0
    for i in range(0, ds.size, chunk):
        block = ds[i:i + chunk]
        diff = profile.d_fn(thetas[None, :] + block[:, None]) - base[None, :]
        best = max(best, float(np.max(np.abs(diff))))
    h_th = thetas[1] - thetas[0] if n_th > 1 else 0.0
    h_d = ds[1] - ds[0]
    slack = eps * (h_th + 0.5 * h_d)
    phi = best * w_sup + params.k * r
    certified = min(envelope, (best + slack) * w_sup + params.k * r)
    return IssGain(r, phi, envelope, certified, w_sup)


def iss_error_bound(profile: DampingProfile, r: float, params, **kw) -> float:
    """Ultimate bound phi(r) / D_lower on |omega2 - omega1|."""
    return iss_gain_phi(profile, r, params, **kw).phi / profile.d_lower


def leader_initial_angle(profile: DampingProfile, signal: KnownSignal, params) -> float:
    """theta1(0) solving k theta - xi1(0) + D1(theta) omega0 = 0, the frozen equilibrium at t = 0."""
    k, w0 = params.k, params.omega0
    xi0 = signal.xi(0.0)

    def h(th):
        return k * th - xi0 + float(profile.d_fn(th)) * w0

    guess = (xi0 - profile.d0 * w0) / k
    # |D - d0| <= max(d0 - D_lower, D_upper - d0), so the root sits within this span of the guess
    span = w0 * max(profile.d_upper - profile.d0, profile.d0 - profile.d_lower) / k + 1.0
    lo, hi = guess - span, guess + span
    if h(lo) * h(hi) > 0:
        raise ConfigError("no leader equilibrium angle at t = 0", "damping")
    if profile.kind == "constant":
        return guess
    return brentq(h, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)


def _pd_stepper(params, d1: DampingProfile, d2: DampingProfile, signal: KnownSignal, dist):
    """RK4 step for (theta1, omega1, theta2, omega2) with both controls inlined."""
    k, w0 = params.k, params.omega0
    dfn1, _ = d1.scalar_fns()
    dfn2, _ = d2.scalar_fns()
    xi = signal.xi

    def rates(t, th1, w1, th2, w2, x, d):
        u1 = -k * (th1 - w0 * t)
        m = th1 + d
        dd2 = dfn2(th2)
        u2 = (dd2 - dfn1(m)) * w2 - k * m + k * w0 * t + x
        return u1 - dfn1(th1) * w1 + x, u2 - dd2 * w2

    def step(t, y, h):
        h2 = 0.5 * h
        tm, te = t + h2, t + h
        x0, xm, x1 = xi(t), xi(tm), xi(te)
        d0, dm, d1_ = dist(t), dist(tm), dist(te)
        a1, w1, b1, v1 = y
        p1, q1 = rates(t, a1, w1, b1, v1, x0, d0)
        a2, w2, b2, v2 = a1 + h2 * w1, w1 + h2 * p1, b1 + h2 * v1, v1 + h2 * q1
        p2, q2 = rates(tm, a2, w2, b2, v2, xm, dm)
        a3, w3, b3, v3 = a1 + h2 * w2, w1 + h2 * p2, b1 + h2 * v2, v1 + h2 * q2
        p3, q3 = rates(tm, a3, w3, b3, v3, xm, dm)
        a4, w4, b4, v4 = a1 + h * w3, w1 + h * p3, b1 + h * v3, v1 + h * q3
        p4, q4 = rates(te, a4, w4, b4, v4, x1, d1_)
        h6 = h / 6.0
        return (
            a1 + h6 * (w1 + 2.0 * (w2 + w3) + w4),
            w1 + h6 * (p1 + 2.0 * (p2 + p3) + p4),
            b1 + h6 * (v1 + 2.0 * (v2 + v3) + v4),
            v1 + h6 * (q1 + 2.0 * (q2 + q3) + q4),
        )

    return step


def run_phase_damping(sc):
    """Pre-connection run of the angle-dependent damping pair.

    The leader plays the bus, so theta3/omega3 columns hold theta1/omega1
    and e = omega2 - omega1.  No connection is attempted; power columns and
    theta13 are NaN.
    """
    from .sim import COLUMNS, MODE_PRE, Event, Trajectory

    p = sc.params
    d1 = sc.damping if sc.damping is not None else DampingProfile.constant(p.d1_0)
    d2 = DampingProfile.constant(p.d2_0)
    signal = sc.signal if sc.signal is not None else KnownSignal.from_load(sc.load)
    dist = sc.disturbance.evaluator()
    load = sc.load.evaluator()
    k, w0 = p.k, p.omega0
    dfn1, _ = d1.scalar_fns()
    dfn2, _ = d2.scalar_fns()
    step = _pd_stepper(p, d1, d2, signal, dist)

    if sc.initial is not None:
        th1, w1, _, th2, w2 = (float(v) for v in sc.initial)
        y = (th1, w1, th2, w2)
    else:
        y = (leader_initial_angle(d1, signal, p), w0, 0.0, 0.0)
    check_finite(0.0, y, "initial state")

    nan = math.nan

    def row(t, y):
        th1, w1, th2, w2 = y
        d = dist(t)
        x = signal.xi(t)
        m = th1 + d
        u1 = -k * (th1 - w0 * t)
        u2 = (dfn2(th2) - dfn1(m)) * w2 - k * m + k * w0 * t + x
        return (t, th1, w1, th1, w1, th2, w2, w2 - w1, load(t)[0], d, MODE_PRE, u1, u2, nan, nan, 0.0, nan,
                wrap_phase(th2 - th1 - d))

    dt = sc.dt
    n_steps = int(round(sc.horizon / dt))
    stride = max(1, int(round(sc.record_every / dt)))
    rows = [row(0.0, y)]
    max_fdev = abs(y[1] - w0)
    for n in range(n_steps):
        y = step(n * dt, y, dt)
        fd = abs(y[1] - w0)
        if fd > max_fdev:
            max_fdev = fd
        if (n + 1) % stride == 0 or n + 1 == n_steps:
            t1 = (n + 1) * dt
            check_finite(t1, y, "phase-damping")
            rows.append(row(t1, y))
    arr = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
    data = {name: arr[:, i].copy() for i, name in enumerate(COLUMNS)}
    events = [Event(n_steps * dt, "no_connection", (("allowed", False),))]
    return Trajectory(data, events, None, None, max_fdev)
