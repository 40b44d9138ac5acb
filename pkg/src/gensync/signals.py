"""Bounded load and phase-disturbance signals.

Every profile is an immutable description.  ``load_at`` / ``disturbance_at``
evaluate it once; ``evaluator()`` returns a closure for the integrator's
inner loop.
"""

from __future__ import annotations

import csv
import logging
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, RateViolation

log = logging.getLogger(__name__)

LOAD_SHAPES = ("constant", "sinusoid", "ramp-hold", "user-samples")
DIST_SHAPES = ("zero", "constant", "sinusoid", "user-samples")

# largest phase offset assumed to go unnoticed by the measurement unit
STEALTH_CAP = 0.25 * math.pi
RATE_SLACK = 1e-9


def load_samples_csv(path):
    """Read a two-column ``t,value`` CSV.  A single non-numeric header row is allowed."""
    ts, vs = [], []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) < 2:
                raise ConfigError(f"row {i + 1} needs two columns", path=str(path))
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                if i == 0:
                    continue
                raise ConfigError(f"row {i + 1} is not numeric", path=str(path)) from None
            ts.append(t)
            vs.append(v)
    return _check_samples(ts, vs, str(path))


def _check_samples(ts, vs, where):
    t = np.asarray(ts, dtype=float)
    v = np.asarray(vs, dtype=float)
    if t.ndim != 1 or t.shape != v.shape or t.size < 2:
        raise ConfigError("need at least two (t, value) samples", path=where)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise ConfigError("samples must be finite", path=where)
    if np.any(np.diff(t) <= 0):
        raise ConfigError("sample times must be strictly increasing", path=where)
    return tuple(t.tolist()), tuple(v.tolist())


def _interp_closure(ts, vs):
    """Piecewise-linear interpolant returning (value, slope); held flat outside the samples."""
    t_arr = ts
    v_arr = vs
    n = len(t_arr)
    slopes = tuple((v_arr[i + 1] - v_arr[i]) / (t_arr[i + 1] - t_arr[i]) for i in range(n - 1))

    def f(t):
        if t <= t_arr[0]:
            return v_arr[0], 0.0
        if t >= t_arr[-1]:
            return v_arr[-1], 0.0
        i = bisect_right(t_arr, t) - 1
        s = slopes[i]
        return v_arr[i] + s * (t - t_arr[i]), s

    return f, slopes


@dataclass(frozen=True)
class LoadProfile:
    """Electrical load around ``ell_bar`` with size bound ``delta_ell`` and rate bound ``delta_ell_dot``.

    Shapes:
      * ``constant``: ell_bar throughout.
      * ``sinusoid``: ell_bar + delta_ell sin(w (t - onset)), w = delta_ell_dot / delta_ell,
        so both bounds are attained.
      * ``ramp-hold``: rises at delta_ell_dot from onset until it reaches ell_bar + delta_ell.
      * ``user-samples``: linear interpolation of ``samples`` (absolute load values).
    """

    ell_bar: float = 0.5
    delta_ell: float = 0.0
    delta_ell_dot: float = 0.0
    onset_time: float = 5.0
    shape: str = "constant"
    samples: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.shape not in LOAD_SHAPES:
            raise ConfigError(f"unknown load shape {self.shape!r}; expected one of {LOAD_SHAPES}", "shape")
        for name in ("ell_bar", "delta_ell", "delta_ell_dot", "onset_time"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", name)
        if self.delta_ell < 0 or self.delta_ell_dot < 0:
            raise ConfigError("bounds must be >= 0", "delta_ell")
        if self.onset_time < 0:
            raise ConfigError("must be >= 0", "onset_time")
        if self.shape == "sinusoid" and (self.delta_ell > 0) != (self.delta_ell_dot > 0):
            raise ConfigError("sinusoid needs both bounds positive or both zero", "delta_ell_dot")
        if self.shape == "user-samples":
            if self.samples is None:
                raise ConfigError("user-samples shape requires samples", "samples")
            ts, vs = _check_samples(*self.samples, where="samples")
            object.__setattr__(self, "samples", (ts, vs))
            self._validate_samples(ts, vs)

    def _validate_samples(self, ts, vs):
        dev = max(abs(v - self.ell_bar) for v in vs)
        if dev > self.delta_ell + RATE_SLACK:
            raise ConfigError(
                f"sample deviation {dev:.6g} exceeds delta_ell={self.delta_ell:.6g}", "samples"
            )
        _, slopes = _interp_closure(ts, vs)
        worst = max(abs(s) for s in slopes)
        if worst > self.delta_ell_dot + RATE_SLACK:
            raise RateViolation(
                f"sampled load changes at {worst:.6g}/s, above delta_ell_dot={self.delta_ell_dot:.6g}"
            )

    @classmethod
    def from_csv(cls, path, ell_bar, delta_ell, delta_ell_dot, onset_time=0.0):
        return cls(ell_bar, delta_ell, delta_ell_dot, onset_time, "user-samples", load_samples_csv(path))

    def evaluator(self) -> Callable[[float], tuple[float, float]]:
        """Closure ``t -> (ell, ell_dot)``."""
        lb, dl, dld, t0 = self.ell_bar, self.delta_ell, self.delta_ell_dot, self.onset_time
        if self.shape == "constant" or (self.shape != "user-samples" and (dl == 0 or dld == 0)):
            return lambda t: (lb, 0.0)
        if self.shape == "sinusoid":
            w = dld / dl
            sin, cos = math.sin, math.cos

            def sinus(t):
                if t < t0:
                    return lb, 0.0
                ph = w * (t - t0)
                return lb + dl * sin(ph), dld * cos(ph)

            return sinus
        if self.shape == "ramp-hold":
            t1 = t0 + dl / dld

            def ramp(t):
                if t < t0:
                    return lb, 0.0
                if t < t1:
                    return lb + dld * (t - t0), dld
                return lb + dl, 0.0

            return ramp
        f, _ = _interp_closure(*self.samples)
        return f


def load_at(profile: LoadProfile, t: float) -> tuple[float, float]:
    if t < 0:
        raise ValueError("t must be >= 0")
    return profile.evaluator()(t)


@dataclass(frozen=True)
class Disturbance:
    """Additive offset d(t) on the measured bus phase (rad).

    ``constant`` returns ``amplitude`` itself, which may be negative.
    ``sinusoid`` is amplitude * sin(frequency * t + phase).
    """

    shape: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    samples: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.shape not in DIST_SHAPES:
            raise ConfigError(f"unknown disturbance shape {self.shape!r}; expected one of {DIST_SHAPES}", "shape")
        for name in ("amplitude", "frequency", "phase"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError("must be finite", name)
        if self.shape == "sinusoid" and self.amplitude < 0:
            raise ConfigError("sinusoid amplitude must be >= 0", "amplitude")
        if self.shape == "user-samples":
            if self.samples is None:
                raise ConfigError("user-samples shape requires samples", "samples")
            ts, vs = _check_samples(*self.samples, where="samples")
            object.__setattr__(self, "samples", (ts, vs))
            object.__setattr__(self, "amplitude", max(abs(v) for v in vs))
        if self.sup > STEALTH_CAP + 1e-12:
            log.info("disturbance sup %.4g rad exceeds the %.4g rad stealth cap", self.sup, STEALTH_CAP)

    @property
    def sup(self) -> float:
        return 0.0 if self.shape == "zero" else abs(self.amplitude)

    @property
    def undetectable(self) -> bool:
        return self.sup <= STEALTH_CAP + 1e-12

    @classmethod
    def from_csv(cls, path):
        return cls("user-samples", samples=load_samples_csv(path))

    def evaluator(self) -> Callable[[float], float]:
        a = self.amplitude
        if self.shape == "zero":
            return lambda t: 0.0
        if self.shape == "constant":
            return lambda t: a
        if self.shape == "sinusoid":
            w, p, sin = self.frequency, self.phase, math.sin
            return lambda t: a * sin(w * t + p)
        f, _ = _interp_closure(*self.samples)
        return lambda t: f(t)[0]


def disturbance_at(dist: Disturbance, t: float) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    return dist.evaluator()(t)


def measured_phase(theta3: float, d: float) -> float:
    """theta3 + d reduced to [0, 2 pi)."""
    return (theta3 + d) % (2.0 * math.pi)
