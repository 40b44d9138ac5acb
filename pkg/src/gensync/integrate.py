"""Classical fixed-step Runge-Kutta on plain float tuples.

Tuples keep the per-step overhead low for the 5 to 17 dimensional systems
simulated here, where numpy's call overhead would dominate.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

from .errors import NonFiniteState

Vector = tuple[float, ...]


def rk4_step(f: Callable[[float, Vector], Sequence[float]], t: float, y: Vector, h: float) -> Vector:
    """Advance ``y' = f(t, y)`` by one step of size h."""
    h2 = 0.5 * h
    k1 = f(t, y)
    k2 = f(t + h2, [a + h2 * b for a, b in zip(y, k1)])
    k3 = f(t + h2, [a + h2 * b for a, b in zip(y, k2)])
    k4 = f(t + h, [a + h * b for a, b in zip(y, k3)])
    h6 = h / 6.0
    return tuple([a + h6 * (b1 + 2.0 * (b2 + b3) + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)])


def check_finite(t: float, y: Vector, where: str = "") -> None:
    for v in y:
        if not math.isfinite(v):
            raise NonFiniteState(t, y, where)


def integrate(f, t0: float, y0: Vector, dt: float, t_end: float, record=None) -> Vector:
    """Fixed steps of ``dt`` from t0, with a final partial step landing on t_end.

    Step times are computed as t0 + n dt so they do not drift.  ``record`` is
    called as record(t, y) after every step.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n_full = int(math.floor((t_end - t0) / dt + 1e-9))
    y = tuple(float(v) for v in y0)
    t = t0
    for n in range(1, n_full + 1):
        y = rk4_step(f, t, y, dt)
        t = t0 + n * dt
        check_finite(t, y)
        if record is not None:
            record(t, y)
    rest = t_end - t
    if rest > 1e-12 * max(1.0, abs(t_end)):
        y = rk4_step(f, t, y, rest)
        t = t_end
        check_finite(t, y)
        if record is not None:
            record(t, y)
    return y


def lerp(y0: Vector, y1: Vector, s: float) -> Vector:
    return tuple(a + s * (b - a) for a, b in zip(y0, y1))
