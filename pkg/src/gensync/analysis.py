"""Closed-form decay constants and ultimate bounds for the leader and the sync error."""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .errors import AnalysisError, GainTooSmall
from .integrate import check_finite
from .model import theta13_field

SAFETY_FACTOR = 1.1
TAIL_FRACTION = 0.2


def decay_constants_kd(k: float, damping: float) -> tuple[float, float]:
    """(lambda, c) for A = [[-D, -k], [1, 0]] with P = [[1, D/2], [D/2, k]]."""
    if not k > damping * damping / 4.0:
        raise GainTooSmall(f"k={k!r} must exceed D^2/4={damping * damping / 4.0!r}")
    s = math.sqrt((k - 1.0) ** 2 + damping * damping)
    return 0.5 * damping, math.sqrt((k + 1.0 + s) / (k + 1.0 - s))


def decay_constants(params) -> tuple[float, float]:
    return decay_constants_kd(params.k, params.d1_0)


def lyapunov_matrix_kd(k: float, damping: float) -> np.ndarray:
    return np.array([[1.0, 0.5 * damping], [0.5 * damping, k]])


def lyapunov_matrix(params) -> np.ndarray:
    return lyapunov_matrix_kd(params.k, params.d1_0)


def lti_matrix_kd(k: float, damping: float) -> np.ndarray:
    a = np.array([[-damping, -k], [1.0, 0.0]])
    if np.max(np.linalg.eigvals(a).real) >= 0:
        raise AnalysisError(f"A is not Hurwitz for k={k!r}, D={damping!r}")
    return a


def lti_matrix(params) -> np.ndarray:
    """Leader state matrix in shifted coordinates; Hurwitz for every k > 0."""
    return lti_matrix_kd(params.k, params.d1_0)


def lyapunov_residual(k: float, damping: float) -> float:
    """max |P A + A^T P + D P|, zero in exact arithmetic."""
    a = lti_matrix_kd(k, damping)
    p = lyapunov_matrix_kd(k, damping)
    return float(np.max(np.abs(p @ a + a.T @ p + damping * p)))


def regulation_bound(params, delta_ell_dot: float) -> float:
    """Ultimate bound on |(omega1 - omega0, delta1 - delta_eq)|: c dl / (lambda k)."""
    if delta_ell_dot < 0:
        raise ValueError("delta_ell_dot must be >= 0")
    lam, c = decay_constants(params)
    return c * delta_ell_dot / (lam * params.k)


def sync_error_bound(params, d_sup: float, delta_theta: float, delta_theta_dot: float) -> float:
    """Ultimate bound on |omega2 - omega3| before connection."""
    if min(d_sup, delta_theta, delta_theta_dot) < 0:
        raise ValueError("inputs must be >= 0")
    coef_dot = params.c1 + params.c2 + params.d1_0
    coef = params.k + params.k1 + 2.0 * params.x1
    return (params.k * d_sup + coef_dot * delta_theta_dot + coef * delta_theta) / params.d1_0


def estimate_theta_bounds(params, profile, horizon: float = 600.0, dt: float = 1e-3, safety: float = SAFETY_FACTOR):
    """Sup of |theta13 - theta13_bar| and |dtheta13/dt| along a leader-only run, times ``safety``.

    The leader starts at its steady angle.  theta13 obeys a scalar ODE driven
    by the load alone, so only that state is integrated.
    """
    if safety < 1.0:
        raise ValueError("safety factor must be >= 1")
    g = theta13_field(params)
    load = profile.evaluator()
    th_bar = params.theta13_bar
    th = th_bar
    n = int(round(horizon / dt))
    max_dev = 0.0
    max_rate = abs(g(th, load(0.0)[0]))
    h2, h6 = 0.5 * dt, dt / 6.0
    for i in range(n):
        t = i * dt
        ell0 = load(t)[0]
        ellm = load(t + h2)[0]
        ell1 = load(t + dt)[0]
        k1 = g(th, ell0)
        k2 = g(th + h2 * k1, ellm)
        k3 = g(th + h2 * k2, ellm)
        k4 = g(th + dt * k3, ell1)
        th = th + h6 * (k1 + 2.0 * (k2 + k3) + k4)
        dev = abs(th - th_bar)
        rate = abs(g(th, ell1))
        if dev > max_dev:
            max_dev = dev
        if rate > max_rate:
            max_rate = rate
    check_finite(n * dt, (th,), "leader-only run")
    return safety * max_dev, safety * max_rate


@dataclass(frozen=True)
class BoundsReport:
    lam: float
    c: float
    regulation_bound: float
    sync_error_bound: float
    slope_in_d: float
    delta_theta: float
    delta_theta_dot: float
    d_sup: float
    delta_ell_dot: float
    k: float
    d1_0: float
    safety: float = SAFETY_FACTOR

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            name = "lambda" if f.name == "lam" else f.name
            lines.append(f"{name}={getattr(self, f.name):.10g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def csv_header(cls) -> str:
        return ",".join("lambda" if f.name == "lam" else f.name for f in fields(cls))

    def to_csv_row(self) -> str:
        return ",".join(f"{v:.10g}" for v in asdict(self).values())

    def with_d(self, d_sup: float, params) -> "BoundsReport":
        """Same constants, sync bound re-evaluated at another disturbance size."""
        return BoundsReport(
            **{
                **asdict(self),
                "d_sup": d_sup,
                "sync_error_bound": sync_error_bound(params, d_sup, self.delta_theta, self.delta_theta_dot),
            }
        )


def bounds_report(params, profile, d_sup: float, horizon: float = 600.0, dt: float = 1e-3, safety: float = SAFETY_FACTOR):
    lam, c = decay_constants(params)
    dth, dthd = estimate_theta_bounds(params, profile, horizon, dt, safety)
    return BoundsReport(
        lam=lam,
        c=c,
        regulation_bound=regulation_bound(params, profile.delta_ell_dot),
        sync_error_bound=sync_error_bound(params, d_sup, dth, dthd),
        slope_in_d=params.k / params.d1_0,
        delta_theta=dth,
        delta_theta_dot=dthd,
        d_sup=d_sup,
        delta_ell_dot=profile.delta_ell_dot,
        k=params.k,
        d1_0=params.d1_0,
        safety=safety,
    )


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    buf.write(BoundsReport.csv_header() + "\n")
    for r in reports:
        buf.write(r.to_csv_row() + "\n")
    return buf.getvalue()


def empirical_overshoot(a: np.ndarray, lam: float, t_max: float | None = None, n: int = 4001) -> float:
    """sup_t ||exp(A t)|| exp(lam t) on a grid; a lower bound for any valid c at rate lam."""
    if t_max is None:
        t_max = 20.0 / max(lam, 1e-6)
    ts = np.linspace(0.0, t_max, n)
    dt = ts[1] - ts[0]
    step = expm(a * dt)
    m = np.eye(a.shape[0])
    best = 1.0
    for t in ts[1:]:
        m = m @ step
        best = max(best, float(np.linalg.norm(m, 2)) * math.exp(lam * t))
    return best


def refine_overshoot(params, lam: float | None = None) -> tuple[float, np.ndarray]:
    """Smallest sqrt(cond P) over P = [[1, p], [p, q]] > 0 with P A + A^T P <= -2 lam P.

    Starts from the closed-form P (feasible for lam <= D/2).  At lam = D/2
    the constraint forces equality and the closed form is already optimal;
    below it the overshoot can be traded against the decay rate.
    """
    d = params.d1_0
    if lam is None:
        lam = 0.5 * d
    if not 0 < lam <= 0.5 * d:
        raise ValueError("lam must lie in (0, D/2]")
    a = lti_matrix(params)
    p0 = lyapunov_matrix(params)

    def cost(x):
        p = np.array([[1.0, x[0]], [x[0], x[1]]])
        ev = np.linalg.eigvalsh(p)
        if ev[0] <= 0:
            return 1e12
        lmi = np.linalg.eigvalsh(p @ a + a.T @ p + 2.0 * lam * p)
        if lmi[-1] > 1e-12 * max(1.0, abs(lmi[0])):
            return 1e12
        return math.sqrt(ev[-1] / ev[0])

    x0 = np.array([p0[0, 1], p0[1, 1]])
    res = minimize(cost, x0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 4000})
    best = min(cost(x0), float(res.fun))
    x = res.x if res.fun <= cost(x0) else x0
    return best, np.array([[1.0, x[0]], [x[0], x[1]]])


def tail_sup(t, x, fraction: float = TAIL_FRACTION) -> float:
    """sup |x| over the last ``fraction`` of the time span."""
    t = np.asarray(t)
    x = np.asarray(x)
    start = t[-1] - fraction * (t[-1] - t[0])
    mask = t >= start
    return float(np.max(np.abs(x[mask])))


def shifted_leader_norm(t, theta1, omega1, ell, params) -> np.ndarray:
    """|(omega1 - omega0, delta1 - delta_eq(t))| with delta_eq = -(ell + D1 omega0) / k."""
    t = np.asarray(t)
    w_bar = np.asarray(omega1) - params.omega0
    d_bar = np.asarray(theta1) - params.omega0 * t + (np.asarray(ell) + params.d1_0 * params.omega0) / params.k
    return np.hypot(w_bar, d_bar)
