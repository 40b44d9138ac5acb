"""Seventeen-state synchronous machine with damper windings, stator, exciter and governor.

Also holds the slow-manifold approximations that collapse it to the damped
second-order model, and the numerical checks that those approximations
shrink at the expected rate as the fast time constants go to zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, fields, replace
from functools import lru_cache
from importlib import resources
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, fsolve

from .errors import ConfigError, DegenerateComposite, ModelError, SingularStatorAlgebra
from .integrate import check_finite, rk4_step
from .model import GeneratorParams, steady_theta13

COMPOSITE_FLOOR = 1e-14
STATE_NAMES = (
    "phi_q2", "phi_d1", "e_d_p", "e_q_p", "phi_q", "phi_d", "e_f", "u_f", "u_f_bar",
    "t_m", "p_u", "p_a1", "p_a2", "p_b1", "p_b2", "omega1", "delta1",
)


@dataclass(frozen=True)
class HighOrderParams:
    """Machine, exciter and governor constants in per-unit and seconds.

    Suffix ``_p`` marks a transient (single prime) quantity and ``_pp`` a
    subtransient one.  ``tau_a2`` defaults to tau5 tau6 / (tau5 + tau6).
    """

    x_q: float
    x_d: float
    x_q_p: float
    x_d_p: float
    x_q_pp: float
    x_d_pp: float
    x_k: float
    x_f: float
    r_s: float
    tau_q_p: float
    tau_q_pp: float
    tau_d_p: float
    tau_d_pp: float
    tau_f: float
    tau_u: float
    tau_u_bar: float
    tau_m: float
    tau1: float
    tau2: float
    tau3: float
    tau4: float
    tau5: float
    tau6: float
    k_f: float
    k_u: float
    k_u_bar: float
    kappa: float
    m: float
    d0_tilde: float
    r_d: float
    u_tilde: float
    v_r_minus_v1: float = 1.0
    omega0: float = 120.0 * math.pi
    tau_a2: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not math.isfinite(v):
                raise ConfigError("must be finite", f"high_order.{f.name}")
        for name in ("tau_q_p", "tau_q_pp", "tau_d_p", "tau_d_pp", "tau_f", "tau_u", "tau_u_bar", "tau_m",
                     "tau1", "tau2", "tau3", "tau4", "tau5", "tau6", "m", "r_d", "omega0", "k_f"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", f"high_order.{name}")
        for name in ("r_s", "d0_tilde", "k_u_bar", "kappa", "x_k"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"high_order.{name}")
        order = (
            ("x_q_p", "x_k"), ("x_d_p", "x_k"), ("x_q_p", "x_q_pp"), ("x_d_p", "x_d_pp"),
            ("x_q", "x_q_p"), ("x_d", "x_d_p"),
        )
        for big, small in order:
            if not getattr(self, big) > getattr(self, small):
                raise ConfigError(f"{big} must exceed {small}", f"high_order.{big}")
        derived = self.tau5 * self.tau6 / (self.tau5 + self.tau6)
        if self.tau_a2 is None:
            object.__setattr__(self, "tau_a2", derived)
        elif abs(self.tau_a2 - derived) > 1e-12:
            raise ConfigError(f"must equal tau5 tau6 / (tau5 + tau6) = {derived!r}", "high_order.tau_a2")

    @property
    def d0_bar(self) -> float:
        """Droop damping 1 / (R_D omega0)."""
        return 1.0 / (self.r_d * self.omega0)

    def with_(self, **changes) -> "HighOrderParams":
        if "tau5" in changes or "tau6" in changes:
            changes.setdefault("tau_a2", None)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HighOrderParams":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "high_order")
        missing = [f.name for f in fields(cls) if f.default is MISSING and f.name not in data]
        if missing:
            raise ConfigError("missing required field", f"high_order.{missing[0]}")
        return cls(**{k: float(v) if v is not None else None for k, v in data.items()})

    @classmethod
    def default(cls) -> "HighOrderParams":
        """Shipped non-published parameter set; see the data file for provenance notes."""
        raw = json.loads(resources.files("gensync").joinpath("data/default_high_order.json").read_text())
        return cls.from_dict(raw["params"])


class HighOrderState(NamedTuple):
    phi_q2: float
    phi_d1: float
    e_d_p: float
    e_q_p: float
    phi_q: float
    phi_d: float
    e_f: float
    u_f: float
    u_f_bar: float
    t_m: float
    p_u: float
    p_a1: float
    p_a2: float
    p_b1: float
    p_b2: float
    omega1: float
    delta1: float


def bus_voltages(delta1: float, v3: float, delta3: float) -> tuple[float, float]:
    """(V_q, V_d) = V3 (cos, sin)(delta1 - delta3)."""
    a = delta1 - delta3
    return v3 * math.cos(a), v3 * math.sin(a)


def ho_currents(state, hp: HighOrderParams) -> tuple[float, float]:
    """Stator currents (I_q, I_d) from the flux-current algebra."""
    if abs(hp.x_q_pp) < COMPOSITE_FLOOR or abs(hp.x_d_pp) < COMPOSITE_FLOOR:
        raise SingularStatorAlgebra("subtransient reactance vanishes")
    aq = (hp.x_q_p - hp.x_q_pp) / (hp.x_q_p - hp.x_k)
    bq = (hp.x_q_pp - hp.x_k) / (hp.x_q_p - hp.x_k)
    ad = (hp.x_d_p - hp.x_d_pp) / (hp.x_d_p - hp.x_k)
    bd = (hp.x_d_pp - hp.x_k) / (hp.x_d_p - hp.x_k)
    iq = (aq * state[0] - bq * state[2] - state[4]) / hp.x_q_pp
    i_d = (ad * state[1] + bd * state[3] - state[5]) / hp.x_d_pp
    return iq, i_d


def electrical_torque(state, hp: HighOrderParams) -> float:
    """Phi_d I_q - Phi_q I_d; the air-gap power in per-unit."""
    iq, i_d = ho_currents(state, hp)
    return state[5] * iq - state[4] * i_d


def ho_field(hp: HighOrderParams, u_tilde: Callable[[float], float] | None = None,
             bus: Callable[[float], tuple[float, float]] | None = None):
    """Closure ``f(t, y) -> dy`` over 17-tuples.

    ``u_tilde(t)`` is the governor setting (default constant) and ``bus(t)``
    returns (V3, delta3) (default the infinite bus (1, 0)).
    """
    if abs(hp.x_q_pp) < COMPOSITE_FLOOR or abs(hp.x_d_pp) < COMPOSITE_FLOOR:
        raise SingularStatorAlgebra("subtransient reactance vanishes")
    xq, xd, xqp, xdp, xqpp, xdpp, xk = hp.x_q, hp.x_d, hp.x_q_p, hp.x_d_p, hp.x_q_pp, hp.x_d_pp, hp.x_k
    aq, bq = (xqp - xqpp) / (xqp - xk), (xqpp - xk) / (xqp - xk)
    ad, bd = (xdp - xdpp) / (xdp - xk), (xdpp - xk) / (xdp - xk)
    cq = (xqp - xqpp) / (xqp - xk) ** 2
    cd = (xdp - xdpp) / (xdp - xk) ** 2
    w0, rs = hp.omega0, hp.r_s
    kf, ku, kub, tub = hp.k_f, hp.k_u, hp.k_u_bar, hp.tau_u_bar
    droop_gain = 1.0 / (hp.d0_bar * w0)
    vr = hp.v_r_minus_v1
    ut_const = hp.u_tilde
    sin, cos = math.sin, math.cos

    def f(t, y):
        phi_q2, phi_d1, edp, eqp, phi_q, phi_d, ef, uf, ufb, tm, pu, pa1, pa2, pb1, pb2, w1, d1 = y
        if bus is None:
            v3, d3 = 1.0, 0.0
        else:
            v3, d3 = bus(t)
        vq = v3 * cos(d1 - d3)
        vd = v3 * sin(d1 - d3)
        iq = (aq * phi_q2 - bq * edp - phi_q) / xqpp
        i_d = (ad * phi_d1 + bd * eqp - phi_d) / xdpp
        ut = ut_const if u_tilde is None else u_tilde(t)
        return (
            (-phi_q2 - (xqp - xk) * iq - edp) / hp.tau_q_pp,
            (-phi_d1 - (xdp - xk) * i_d + eqp) / hp.tau_d_pp,
            (-edp + (xq - xqp) * (iq - cq * (phi_q2 + (xqp - xk) * iq + edp))) / hp.tau_q_p,
            (-(xd - xdp) * (i_d - cd * (phi_d1 + (xdp - xk) * i_d - eqp)) + ef - eqp) / hp.tau_d_p,
            -w1 * phi_d + w0 * (vq + rs * iq),
            w1 * phi_q + w0 * (vd + rs * i_d),
            (-kf * ef + uf) / hp.tau_f,
            (-uf + ku * ufb - ku * kub / tub * ef + ku * vr) / hp.tau_u,
            (-ufb + kub / tub * ef) / tub,
            (-tm + pu) / hp.tau_m,
            pa1 + hp.tau4 * pa2,
            pa2,
            (-(pa1 - hp.kappa * (pb1 + hp.tau3 * pb2)) / (hp.tau5 + hp.tau6) - pa2) / hp.tau_a2,
            pb2,
            (-pb2 - (pb1 - droop_gain * (ut - pu) + (w1 - w0) / w0) / hp.tau1) / hp.tau2,
            (tm - phi_d * iq + phi_q * i_d - hp.d0_tilde * w1) / hp.m,
            w1 - w0,
        )

    return f


def ho_rhs(state, bus: tuple[float, float], hp: HighOrderParams) -> HighOrderState:
    """Derivative of the full state for a fixed bus voltage (V3, delta3)."""
    f = ho_field(hp, bus=lambda t: bus)
    return HighOrderState(*f(0.0, tuple(state)))


# ---------------------------------------------------------------- manifolds


@dataclass(frozen=True)
class SlowContext:
    """Slow quantities the manifolds are evaluated at.

    Unset E_d', E_q', E_f fall back to their own zero-order manifold values.
    """

    delta1: float
    omega1: float
    v3: float = 1.0
    delta3: float = 0.0
    v3_dot: float = 0.0
    delta3_dot: float = 0.0
    e_d_p: float | None = None
    e_q_p: float | None = None
    e_f: float | None = None

    def voltages(self, omega0: float) -> tuple[float, float, float, float]:
        """(V_q, V_d, dV_q/dt, dV_d/dt)."""
        a = self.delta1 - self.delta3
        rate = (self.omega1 - omega0) - self.delta3_dot
        c, s = math.cos(a), math.sin(a)
        vq, vd = self.v3 * c, self.v3 * s
        vd_dot = self.v3 * c * rate + self.v3_dot * s
        vq_dot = self.v3_dot * c - self.v3 * s * rate
        return vq, vd, vq_dot, vd_dot


@dataclass(frozen=True)
class ManifoldZero:
    phi_q: float
    phi_d: float
    phi_q2: float
    phi_d1: float
    e_f: float
    u_f: float
    u_f_bar: float
    p_u: float
    t_m: float
    e_q_p: float
    e_d_p: float
    p_a1: float = 0.0
    p_a2: float = 0.0
    p_b1: float = 0.0
    p_b2: float = 0.0


@dataclass(frozen=True)
class ManifoldFirst:
    phi_q2_1: float
    phi_d1_1: float
    e_d_p_1: float


@dataclass(frozen=True)
class Composites:
    nq: float
    dq: float
    nq_p: float
    dq_tilde: float
    nd: float
    dd: float
    dd_tilde: float
    c1_pp: float
    c1_p: float
    c1_pp_tilde: float
    c1_tilde: float
    c2_pp: float
    c2_p: float
    c2_pp_tilde: float
    c2_tilde: float
    c1: float
    c2: float


@lru_cache(maxsize=256)
def composites(hp: HighOrderParams) -> Composites:
    """Composite constants of the first-order manifolds and the damping coefficients C1, C2."""
    xq, xqp, xqpp, xk = hp.x_q, hp.x_q_p, hp.x_q_pp, hp.x_k
    xd, xdp, xdpp = hp.x_d, hp.x_d_p, hp.x_d_pp
    tqp, tqpp, tdp, tdpp = hp.tau_q_p, hp.tau_q_pp, hp.tau_d_p, hp.tau_d_pp
    nq = tqp * tqpp * xqp * xk * (xq - xqp) * (xqp - xqpp) * (xqp - xk)
    dq = tqp * xq * xqp ** 2 * (xqp - xk) ** 2 - tqpp * xq * xk ** 2 * (xq - xqp) * (xqp - xqpp)
    nq_p = tqp * xqp ** 3 * (xq - xqp) * (xqp - xk) ** 2
    dq_t = xq * dq
    nd = tdp * tdpp * xdp * xk * (xd - xdp) * (xdp - xdpp) * (xdp - xk)
    dd = tdp * xd * xdp ** 2 * (xdp - xk) ** 2 - tdpp * xd * xk ** 2 * (xd - xdp) * (xdp - xdpp)
    dd_t = xd * dd
    for name, v in (("D_q", dq), ("D~_q", dq_t), ("D_d", dd), ("D~_d", dd_t)):
        if abs(v) < COMPOSITE_FLOOR:
            raise DegenerateComposite(f"{name} = {v!r}")
    c1_pp = tqpp * (xqp - xqpp) / xqp ** 2
    c1_p = tqp * xqp * (xqp - xk)
    c1_pp_t = tqpp * xq * xk * (xqp - xqpp) / xqp
    c1_t = (xq - xqp) / dq_t
    c2_pp = tdpp * (xdp - xdpp) / xdp ** 2
    c2_p = tdp * xdp * (xdp - xk)
    c2_pp_t = tdpp * xd * xk * (xdp - xdpp) / xdp
    c2_t = (xd - xdp) / dd_t
    # the two coefficients are not symmetric in form; each matches its own substitution
    c1 = c1_pp + (c1_p + c1_pp_t) ** 2 * c1_t
    c2 = c2_pp + (c2_p + c2_pp_t) * c2_pp_t * c2_t
    return Composites(nq, dq, nq_p, dq_t, nd, dd, dd_t, c1_pp, c1_p, c1_pp_t, c1_t,
                      c2_pp, c2_p, c2_pp_t, c2_t, c1, c2)


def exciter_output_zero(hp: HighOrderParams) -> float:
    return hp.k_u * hp.v_r_minus_v1 / hp.k_f


def manifold_zero(ctx: SlowContext, hp: HighOrderParams) -> ManifoldZero:
    vq, vd, vq_dot, vd_dot = ctx.voltages(hp.omega0)
    cp = composites(hp)
    ef0 = exciter_output_zero(hp)
    e_d = (hp.x_q - hp.x_q_p) / hp.x_q * vd - cp.nq / cp.dq * vd_dot
    e_q = hp.x_d_p / hp.x_d * ef0 + (hp.x_d - hp.x_d_p) / hp.x_d * vq - cp.nd / cp.dd * vq_dot
    e_d_used = e_d if ctx.e_d_p is None else ctx.e_d_p
    e_q_used = e_q if ctx.e_q_p is None else ctx.e_q_p
    p_u = hp.u_tilde - hp.d0_bar * (ctx.omega1 - hp.omega0)
    return ManifoldZero(
        phi_q=-vd,
        phi_d=vq,
        phi_q2=-hp.x_k / hp.x_q_p * e_d_used - (hp.x_q_p - hp.x_k) / hp.x_q_p * vd,
        phi_d1=hp.x_k / hp.x_d_p * e_q_used + (hp.x_d_p - hp.x_k) / hp.x_d_p * vq,
        e_f=ef0,
        u_f=hp.k_f * ef0,
        u_f_bar=hp.k_u_bar / hp.tau_u_bar * ef0,
        p_u=p_u,
        t_m=p_u,
        e_q_p=e_q,
        e_d_p=e_d,
    )


def manifold_first(ctx: SlowContext, hp: HighOrderParams) -> ManifoldFirst:
    """First-order corrections; multiply by tau_q'', tau_d'', tau_q' respectively."""
    vq, vd, vq_dot, vd_dot = ctx.voltages(hp.omega0)
    cp = composites(hp)
    z = manifold_zero(ctx, hp)
    e_d = z.e_d_p if ctx.e_d_p is None else ctx.e_d_p
    e_q = z.e_q_p if ctx.e_q_p is None else ctx.e_q_p
    ef = z.e_f if ctx.e_f is None else ctx.e_f
    xq, xqp, xqpp, xk = hp.x_q, hp.x_q_p, hp.x_q_pp, hp.x_k
    xd, xdp, xdpp = hp.x_d, hp.x_d_p, hp.x_d_pp
    phi_q2_1 = (
        -xqpp * xk / (hp.tau_q_p * xqp ** 3) * (xq * e_d - (xq - xqp) * vd)
        + vd_dot * xqpp * (xqp - xk) / xqp ** 2
    )
    phi_d1_1 = (
        xdpp * xk / (hp.tau_d_p * xdp ** 3) * (xd * e_q - (xd - xdp) * vq)
        - xdpp * xk / (hp.tau_d_p * xdp ** 2) * ef
        - vq_dot * xdpp * (xdp - xk) / xdp ** 2
    )
    return ManifoldFirst(phi_q2_1, phi_d1_1, -cp.nq_p / cp.dq_tilde * vd_dot)


# ---------------------------------------------------------------- reduction


def reduce_to_damped(hp: HighOrderParams, **overrides) -> GeneratorParams:
    """Damped-model constants of the leader; other fields come from the shipped defaults.

    ``overrides`` may set follower constants, k or ell_bar.
    """
    cp = composites(hp)
    k1 = hp.k_u * hp.v_r_minus_v1 / (hp.k_f * hp.x_d)
    x1 = (hp.x_d - hp.x_q) / (2.0 * hp.x_q * hp.x_d)
    d1 = hp.d0_bar + hp.d0_tilde
    values = dict(k1=k1, x1=x1, c1=cp.c1, c2=cp.c2, d1_0=d1, omega0=hp.omega0, inertia=hp.m)
    values.update(overrides)
    return GeneratorParams.reference(**values)


def reduced_input(hp: HighOrderParams, u_tilde: float | None = None) -> float:
    """Governor input of the damped model, u~ + 1/R_D."""
    return (hp.u_tilde if u_tilde is None else u_tilde) + 1.0 / hp.r_d


def params_for_damped(base: HighOrderParams, k1: float, x1: float, d1_0: float,
                      c1: float | None = None, c2: float | None = None) -> HighOrderParams:
    """Adjust X_q, K_u and D~0 (and optionally tau_q', tau_d'') so the reduction yields the targets.

    X_d, K_f and R_D are kept.  C1 is matched through tau_q' and C2 through
    tau_d''; both are monotone in those constants over the bracket used.
    """
    inv_xq = 1.0 / base.x_d + 2.0 * x1
    if not inv_xq > 0:
        raise ModelError("x1 too negative for the given X_d")
    hp = base.with_(
        x_q=1.0 / inv_xq,
        k_u=k1 * base.k_f * base.x_d / base.v_r_minus_v1,
        d0_tilde=d1_0 - base.d0_bar,
    )
    if c1 is not None:
        hp = hp.with_(tau_q_p=_solve_tau(lambda v: composites(hp.with_(tau_q_p=v)).c1 - c1, hp.tau_q_pp * 1.01, 50.0))
    if c2 is not None:
        hp = hp.with_(tau_d_pp=_solve_tau(lambda v: composites(hp.with_(tau_d_pp=v)).c2 - c2, 1e-6, hp.tau_d_p * 0.5))
    return hp


def _solve_tau(fn, lo, hi):
    if fn(lo) * fn(hi) > 0:
        raise ModelError("target damping coefficient not reachable in the time-constant bracket")
    return brentq(fn, lo, hi, xtol=1e-15, rtol=1e-14)


# ---------------------------------------------------------------- equilibrium and runs


def ho_equilibrium(hp: HighOrderParams, v3: float = 1.0, delta3: float = 0.0, u_tilde: float | None = None) -> HighOrderState:
    """Steady state at omega1 = omega0: lossless closed form, then polished with R_s included."""
    ut = hp.u_tilde if u_tilde is None else u_tilde
    hp_u = hp.with_(u_tilde=ut)
    red = reduce_to_damped(hp_u)
    # lossless air-gap power is K1 sin + X1 sin 2 at V3 = 1; other V3 values rely on the polish
    te = ut - hp.d0_tilde * hp.omega0
    ang = steady_theta13(red, te)
    d1 = delta3 + ang
    vq, vd = bus_voltages(d1, v3, delta3)
    ef = exciter_output_zero(hp)
    iq = vd / hp.x_q
    i_d = (ef - vq) / hp.x_d
    e_d = (hp.x_q - hp.x_q_p) * iq
    e_q = ef - (hp.x_d - hp.x_d_p) * i_d
    guess = HighOrderState(
        phi_q2=-(hp.x_q_p - hp.x_k) * iq - e_d,
        phi_d1=e_q - (hp.x_d_p - hp.x_k) * i_d,
        e_d_p=e_d, e_q_p=e_q, phi_q=-vd, phi_d=vq,
        e_f=ef, u_f=hp.k_f * ef, u_f_bar=hp.k_u_bar / hp.tau_u_bar * ef,
        t_m=ut, p_u=ut, p_a1=0.0, p_a2=0.0, p_b1=0.0, p_b2=0.0,
        omega1=hp.omega0, delta1=d1,
    )
    f = ho_field(hp_u, bus=lambda t: (v3, delta3))
    sol, info, ier, msg = fsolve(lambda y: np.asarray(f(0.0, tuple(y))), np.asarray(guess), xtol=1e-14, full_output=True)
    state = HighOrderState(*(float(v) for v in sol))
    if ier != 1 and max(abs(v) for v in f(0.0, state)) > 1e-9:
        raise ModelError(f"equilibrium solve failed: {msg}")
    return state


def ho_jacobian(hp: HighOrderParams, state, h: float = 1e-7) -> np.ndarray:
    f = ho_field(hp)
    y0 = np.asarray(state, dtype=float)
    jac = np.empty((y0.size, y0.size))
    for j in range(y0.size):
        step = h * max(1.0, abs(y0[j]))
        yp, ym = y0.copy(), y0.copy()
        yp[j] += step
        ym[j] -= step
        jac[:, j] = (np.asarray(f(0.0, tuple(yp))) - np.asarray(f(0.0, tuple(ym)))) / (2 * step)
    return jac


def damped_infinite_bus_field(red: GeneratorParams, u1: Callable[[float], float]):
    """(delta1, omega1) of the damped model against a stiff bus at angle 0 rotating at omega0."""
    k1, x1, c1, c2, d10, m, w0 = red.k1, red.x1, red.c1, red.c2, red.d1_0, red.inertia, red.omega0
    sin, cos = math.sin, math.cos

    def f(t, y):
        d, w = y
        s, c = sin(d), cos(d)
        p = k1 * s + 2.0 * x1 * s * c + (c1 * c * c + c2 * s * s) * (w - w0)
        return (w - w0, (u1(t) - p - d10 * w) / m)

    return f


def fast_time_constant(hp: HighOrderParams) -> float:
    """Largest of the time constants treated as fast by the reduction."""
    return max(hp.tau_q_pp, hp.tau_q_p, hp.tau_d_pp, hp.tau_f, hp.tau_u, hp.tau_u_bar, hp.tau_m,
               hp.tau_a2, hp.tau1, hp.tau2, hp.tau5 + hp.tau6, 1.0 / hp.omega0)


@dataclass(frozen=True)
class ReductionComparison:
    t: np.ndarray
    omega_high: np.ndarray
    omega_damped: np.ndarray
    settle_time: float
    max_abs_diff: float
    max_rel_diff: float


def compare_with_damped(hp: HighOrderParams, du: float = 0.05, horizon: float = 10.0, dt: float = 1e-4,
                        settle_factor: float = 5.0, record_every: float = 0.01) -> ReductionComparison:
    """Step the power setting by ``du`` from equilibrium and compare omega1 of both models.

    Both start from the high-order equilibrium's (delta1, omega1).  The
    difference is measured after ``settle_factor`` fast time constants.
    """
    y = ho_equilibrium(hp)
    ut1 = hp.u_tilde + du
    f_ho = ho_field(hp.with_(u_tilde=ut1))
    red = reduce_to_damped(hp)
    u1 = reduced_input(hp, ut1)
    f_red = damped_infinite_bus_field(red, lambda t: u1)
    yr = (y.delta1, y.omega1)
    yh = tuple(y)
    n = int(round(horizon / dt))
    stride = max(1, int(round(record_every / dt)))
    ts, wh, wr = [0.0], [yh[15]], [yr[1]]
    for i in range(n):
        t = i * dt
        yh = rk4_step(f_ho, t, yh, dt)
        yr = rk4_step(f_red, t, yr, dt)
        if (i + 1) % stride == 0:
            check_finite((i + 1) * dt, yh, "high-order")
            ts.append((i + 1) * dt)
            wh.append(yh[15])
            wr.append(yr[1])
    t_arr, wh_arr, wr_arr = np.array(ts), np.array(wh), np.array(wr)
    settle = settle_factor * fast_time_constant(hp)
    mask = t_arr >= settle
    diff = float(np.max(np.abs(wh_arr[mask] - wr_arr[mask]))) if mask.any() else math.nan
    return ReductionComparison(t_arr, wh_arr, wr_arr, settle, diff, diff / hp.omega0)


def run_high_order(sc):
    """Single machine on a stiff 1 pu bus; the load profile moves the power setting.

    u~(t) = u~ + (ell(t) - ell(0)).  Follower columns are NaN and no
    connection is attempted.  theta3 = omega0 t is the bus angle.
    """
    from .sim import COLUMNS, MODE_PRE, Event, Trajectory

    hp = sc.high_order
    load = sc.load.evaluator()
    ell0 = load(0.0)[0]
    base = hp.u_tilde

    def u_tilde(t):
        return base + load(t)[0] - ell0

    f = ho_field(hp, u_tilde=u_tilde)
    y = tuple(ho_equilibrium(hp))
    w0 = hp.omega0
    nan = math.nan

    def row(t, y):
        te = electrical_torque(y, hp)
        th1 = y[16] + w0 * t
        return (t, th1, y[15], w0 * t, w0, nan, nan, nan, load(t)[0], 0.0, MODE_PRE,
                reduced_input(hp, u_tilde(t)), nan, te, nan, 0.0, y[16], nan)

    dt = sc.dt
    n_steps = int(round(sc.horizon / dt))
    stride = max(1, int(round(sc.record_every / dt)))
    rows = [row(0.0, y)]
    max_fdev = 0.0
    for n in range(n_steps):
        y = rk4_step(f, n * dt, y, dt)
        fd = abs(y[15] - w0)
        if fd > max_fdev:
            max_fdev = fd
        if (n + 1) % stride == 0 or n + 1 == n_steps:
            check_finite((n + 1) * dt, y, "high-order")
            rows.append(row((n + 1) * dt, y))
    arr = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
    data = {name: arr[:, i].copy() for i, name in enumerate(COLUMNS)}
    return Trajectory(data, [Event(n_steps * dt, "no_connection", (("allowed", False),))], None, None, max_fdev)


# ---------------------------------------------------------------- ratio tests


@dataclass(frozen=True)
class RatioResult:
    name: str
    scaled: str
    residual_zero: tuple[float, float]
    residual_first: tuple[float, float] | None

    @property
    def ratio_zero(self) -> float:
        return self.residual_zero[1] / self.residual_zero[0]

    @property
    def ratio_first(self) -> float | None:
        if self.residual_first is None:
            return None
        return self.residual_first[1] / self.residual_first[0]


# prescribed slow swing of the rotor angle used by all ratio tests
SWING_MEAN, SWING_AMP, SWING_FREQ = 0.6, 0.2, 2.0
RATIO_SKIP, RATIO_HORIZON = 3.0, 8.0
IVP_OPTS = dict(method="DOP853", rtol=1e-11, atol=1e-13)


def _swing(t, w0):
    d = SWING_MEAN + SWING_AMP * math.sin(SWING_FREQ * t)
    rate = SWING_AMP * SWING_FREQ * math.cos(SWING_FREQ * t)
    return d, w0 + rate


def _q_axis_residuals(hp: HighOrderParams, target: str):
    """Phi_q2 / E_d' subsystem with the stator on its zero-order manifold."""
    xq, xqp, xqpp, xk = hp.x_q, hp.x_q_p, hp.x_q_pp, hp.x_k
    aq, bq = (xqp - xqpp) / (xqp - xk), (xqpp - xk) / (xqp - xk)
    cq = (xqp - xqpp) / (xqp - xk) ** 2
    w0 = hp.omega0

    def rhs(t, y):
        phi_q2, edp = y
        d, _ = _swing(t, w0)
        vd = math.sin(d)
        iq = (aq * phi_q2 - bq * edp + vd) / xqpp
        return [
            (-phi_q2 - (xqp - xk) * iq - edp) / hp.tau_q_pp,
            (-edp + (xq - xqp) * (iq - cq * (phi_q2 + (xqp - xk) * iq + edp))) / hp.tau_q_p,
        ]

    d, w = _swing(0.0, w0)
    ctx = SlowContext(d, w)
    z, o = manifold_zero(ctx, hp), manifold_first(ctx, hp)
    e0 = z.e_d_p + hp.tau_q_p * o.e_d_p_1
    z = manifold_zero(SlowContext(d, w, e_d_p=e0), hp)
    o = manifold_first(SlowContext(d, w, e_d_p=e0), hp)
    y0 = [z.phi_q2 + hp.tau_q_pp * o.phi_q2_1, e0]
    ts = np.linspace(RATIO_SKIP, RATIO_HORIZON, 2001)
    sol = solve_ivp(rhs, (0.0, RATIO_HORIZON), y0, t_eval=ts, **IVP_OPTS)
    r0 = r1 = 0.0
    for t, phi_q2, edp in zip(sol.t, sol.y[0], sol.y[1]):
        d, w = _swing(t, w0)
        if target == "phi_q2":
            ctx = SlowContext(d, w, e_d_p=edp)
            z, o = manifold_zero(ctx, hp), manifold_first(ctx, hp)
            r0 = max(r0, abs(phi_q2 - z.phi_q2))
            r1 = max(r1, abs(phi_q2 - z.phi_q2 - hp.tau_q_pp * o.phi_q2_1))
        else:
            ctx = SlowContext(d, w)
            z, o = manifold_zero(ctx, hp), manifold_first(ctx, hp)
            r0 = max(r0, abs(edp - z.e_d_p))
            r1 = max(r1, abs(edp - z.e_d_p - hp.tau_q_p * o.e_d_p_1))
    return r0, r1


def _d_axis_residuals(hp: HighOrderParams):
    """Phi_d1 / E_q' subsystem with the stator on its zero-order manifold and E_f held."""
    xd, xdp, xdpp, xk = hp.x_d, hp.x_d_p, hp.x_d_pp, hp.x_k
    ad, bd = (xdp - xdpp) / (xdp - xk), (xdpp - xk) / (xdp - xk)
    cd = (xdp - xdpp) / (xdp - xk) ** 2
    w0 = hp.omega0
    ef = exciter_output_zero(hp)

    def rhs(t, y):
        phi_d1, eqp = y
        d, _ = _swing(t, w0)
        vq = math.cos(d)
        i_d = (ad * phi_d1 + bd * eqp - vq) / xdpp
        return [
            (-phi_d1 - (xdp - xk) * i_d + eqp) / hp.tau_d_pp,
            (-(xd - xdp) * (i_d - cd * (phi_d1 + (xdp - xk) * i_d - eqp)) + ef - eqp) / hp.tau_d_p,
        ]

    # E_q' is slow here; start it from a long pre-run so its own transient is gone
    d, w = _swing(0.0, w0)
    z = manifold_zero(SlowContext(d, w), hp)
    o = manifold_first(SlowContext(d, w), hp)
    y0 = [z.phi_d1 + hp.tau_d_pp * o.phi_d1_1, z.e_q_p]
    ts = np.linspace(RATIO_SKIP, RATIO_HORIZON, 2001)
    sol = solve_ivp(rhs, (0.0, RATIO_HORIZON), y0, t_eval=ts, **IVP_OPTS)
    r0 = r1 = 0.0
    for t, phi_d1, eqp in zip(sol.t, sol.y[0], sol.y[1]):
        d, w = _swing(t, w0)
        ctx = SlowContext(d, w, e_q_p=eqp, e_f=ef)
        z, o = manifold_zero(ctx, hp), manifold_first(ctx, hp)
        r0 = max(r0, abs(phi_d1 - z.phi_d1))
        r1 = max(r1, abs(phi_d1 - z.phi_d1 - hp.tau_d_pp * o.phi_d1_1))
    return r0, r1


def _stator_residual(hp: HighOrderParams, equilibrium: HighOrderState):
    """Phi_q, Phi_d with the rotor windings frozen at their equilibrium values."""
    xqp, xqpp, xk = hp.x_q_p, hp.x_q_pp, hp.x_k
    xdp, xdpp = hp.x_d_p, hp.x_d_pp
    aq, bq = (xqp - xqpp) / (xqp - xk), (xqpp - xk) / (xqp - xk)
    ad, bd = (xdp - xdpp) / (xdp - xk), (xdpp - xk) / (xdp - xk)
    q_src = aq * equilibrium.phi_q2 - bq * equilibrium.e_d_p
    d_src = ad * equilibrium.phi_d1 + bd * equilibrium.e_q_p
    w0, rs = hp.omega0, hp.r_s

    def rhs(t, y):
        phi_q, phi_d = y
        d, w1 = _swing(t, w0)
        vq, vd = math.cos(d), math.sin(d)
        iq = (q_src - phi_q) / xqpp
        i_d = (d_src - phi_d) / xdpp
        return [-w1 * phi_d + w0 * (vq + rs * iq), w1 * phi_q + w0 * (vd + rs * i_d)]

    d, _ = _swing(0.0, w0)
    ts = np.linspace(RATIO_SKIP, RATIO_HORIZON, 4001)
    sol = solve_ivp(rhs, (0.0, RATIO_HORIZON), [-math.sin(d), math.cos(d)], t_eval=ts, **IVP_OPTS)
    r0 = 0.0
    for t, phi_q, phi_d in zip(sol.t, sol.y[0], sol.y[1]):
        d, _ = _swing(t, w0)
        r0 = max(r0, abs(phi_q + math.sin(d)), abs(phi_d - math.cos(d)))
    return r0


def ratio_tests(hp: HighOrderParams) -> list[RatioResult]:
    """Residual of each manifold along a prescribed swing, before and after halving its time scale."""
    out = []
    half = hp.with_(tau_q_pp=hp.tau_q_pp / 2)
    a, b = _q_axis_residuals(hp, "phi_q2"), _q_axis_residuals(half, "phi_q2")
    out.append(RatioResult("phi_q2", "tau_q''", (a[0], b[0]), (a[1], b[1])))
    half = hp.with_(tau_d_pp=hp.tau_d_pp / 2)
    a, b = _d_axis_residuals(hp), _d_axis_residuals(half)
    out.append(RatioResult("phi_d1", "tau_d''", (a[0], b[0]), (a[1], b[1])))
    half = hp.with_(tau_q_p=hp.tau_q_p / 2, tau_q_pp=hp.tau_q_pp / 2)
    a, b = _q_axis_residuals(hp, "e_d_p"), _q_axis_residuals(half, "e_d_p")
    out.append(RatioResult("e_d_p", "tau_q', tau_q''", (a[0], b[0]), (a[1], b[1])))
    eq = ho_equilibrium(hp)
    half = hp.with_(r_s=hp.r_s / 2, omega0=hp.omega0 * 2)
    out.append(RatioResult("stator", "R_s, 1/omega0", (_stator_residual(hp, eq), _stator_residual(half, eq)), None))
    return out
