import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gensync.errors import ConfigError, EmptyDomain, GainTooSmall
from gensync.model import GeneratorParams
from gensync.phase_damping import (
    DampingProfile,
    KnownSignal,
    default_omega_box,
    iss_error_bound,
    iss_gain_phi,
    largest_singular_value,
    leader_initial_angle,
    ltv_constants,
    pd_equilibrium_delta,
    pd_error_rate,
    pd_follower_control,
    pd_leader_control,
    pd_leader_rhs,
    pd_nu,
    pd_shifted_rates,
    closed_form_singular_bound,
)
from gensync.signals import Disturbance, LoadProfile
from gensync.sim import Scenario, run

P = GeneratorParams.reference()
SIN = DampingProfile.sinusoidal(0.0531, 0.01)
TABLE = DampingProfile.table([0.0, 1.0, 2.5, 4.0, 5.5], [0.05, 0.06, 0.045, 0.055, 0.052])
PROFILES = [DampingProfile.constant(0.0531), SIN, TABLE]


@pytest.mark.parametrize("prof", PROFILES, ids=["constant", "sinusoidal", "table"])
def test_profile_invariants_dense(prof):
    r = np.linspace(-4 * math.pi, 4 * math.pi, 400_001)
    v = prof.d_fn(r)
    assert np.all(v >= prof.d_lower - 1e-15) and np.all(v <= prof.d_upper + 1e-15)
    assert prof.d_lower > 0
    assert np.max(np.abs(prof.d_prime(r))) <= prof.eps_deriv + 1e-12
    assert np.max(np.abs(prof.d_fn(r + 2 * math.pi) - v)) < 1e-12


@pytest.mark.parametrize("prof", PROFILES, ids=["constant", "sinusoidal", "table"])
def test_scalar_closures_match_vectorised(prof):
    d, dp = prof.scalar_fns()
    for r in np.linspace(-7.0, 13.0, 97):
        assert d(r) == pytest.approx(float(prof.d_fn(r)), abs=1e-14)
        assert dp(r) == pytest.approx(float(prof.d_prime(r)), abs=1e-12)


def test_profile_validation():
    with pytest.raises(ConfigError):
        DampingProfile.sinusoidal(0.05, 0.06)
    with pytest.raises(ConfigError):
        DampingProfile.table([0.0, 1.0], [0.1, 0.2])
    with pytest.raises(ConfigError):
        DampingProfile.table([0.0, 2.0, 1.0], [0.1, 0.2, 0.1])
    with pytest.raises(ConfigError):
        DampingProfile.table([0.0, 2.0, 4.0], [0.1, -0.2, 0.1])


def test_known_signals():
    s = KnownSignal.sinusoid(0.1, 0.2, 3.0)
    assert s.xi_dot_bound == pytest.approx(0.6)
    assert s.xi(0.0) == pytest.approx(0.1)
    ld = KnownSignal.from_load(LoadProfile(0.5, 0.01, 0.01, 5.0, "sinusoid"))
    assert ld.xi(0.0) == -0.5 and ld.xi_dot_bound == 0.01
    ts = np.linspace(0, 100, 5001)
    assert max(abs(ld.xi_dot(t)) for t in ts) <= ld.xi_dot_bound + 1e-15


def test_leader_rest_examples():
    c = DampingProfile.constant(0.0531)
    zero = KnownSignal.constant(0.0)
    assert pd_leader_rhs(0.3, P.omega0, 0.0531 * P.omega0, c, zero, 0.0)[1] == pytest.approx(0.0, abs=1e-13)
    # frozen equilibrium: omega1 = omega0 and delta1 = delta0 give omega1' = 0
    sig = KnownSignal.constant(-0.5)
    t = 7.0
    th = leader_initial_angle(SIN, sig, P) + P.omega0 * t
    delta = th - P.omega0 * t
    assert delta == pytest.approx(pd_equilibrium_delta(th, t, SIN, sig, P), abs=1e-9)
    u1 = pd_leader_control(th, t, P)
    assert pd_leader_rhs(th, P.omega0, u1, SIN, sig, t)[1] == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-50, 50), st.floats(0, 500))
def test_shifted_identity(wbar, dd, t):
    sig = KnownSignal.sinusoid(-0.5, 0.01, 1.0)
    th0 = pd_equilibrium_delta(P.omega0 * t, t, SIN, sig, P)
    delta1 = th0 + dd
    theta1 = delta1 + P.omega0 * t
    w1 = P.omega0 + wbar
    u1 = pd_leader_control(theta1, t, P)
    th_dot, w_dot = pd_leader_rhs(theta1, w1, u1, SIN, sig, t)
    # d/dt of (omega_bar, delta1 - delta0(theta1, t)) by the chain rule
    d_eq_dt = -(float(SIN.d_prime(theta1)) * th_dot * P.omega0 - sig.xi_dot(t)) / P.k
    want = np.array([w_dot, th_dot - P.omega0 - d_eq_dt])
    got = pd_shifted_rates(w1, delta1, t, SIN, sig, P)
    assert np.allclose(got, want, rtol=0, atol=1e-12 * max(1.0, abs(theta1)))
    # nu at omega1 = omega0 matches the drive term written out
    nu = pd_nu(theta1, P.omega0, t, SIN, sig, P)
    assert nu == pytest.approx((float(SIN.d_prime(theta1)) * P.omega0**2 - sig.xi_dot(t)) / P.k)


def test_follower_closed_loop_identity():
    rng = np.random.default_rng(5)
    sig = KnownSignal.sinusoid(-0.5, 0.01, 0.3)
    d2 = DampingProfile.constant(0.07)
    for _ in range(1000):
        th1, th2, d = rng.uniform(-6, 6, 3)
        w1, w2 = rng.uniform(370, 385, 2)
        t = rng.uniform(0, 600)
        u2 = pd_follower_control(th1 + d, w2, th2, t, SIN, d2, sig, P)
        w2_dot = u2 - float(d2.d_fn(th2)) * w2
        u1 = pd_leader_control(th1, t, P)
        want = -float(SIN.d_fn(th1 + d)) * w2 + u1 - P.k * d + sig.xi(t)
        assert abs(w2_dot - want) < 1e-12 * max(1.0, abs(P.k * P.omega0 * t), w2)
        # error dynamics
        w1_dot = u1 - float(SIN.d_fn(th1)) * w1 + sig.xi(t)
        e_dot = w2_dot - w1_dot
        assert e_dot == pytest.approx(pd_error_rate(w2 - w1, th1, w1, d, SIN, P), abs=1e-9)


def test_error_equilibrium_without_offset():
    assert pd_error_rate(0.0, 1.2, P.omega0, 0.0, SIN, P) == 0.0


def test_ltv_constant_damping_reference():
    c = ltv_constants(DampingProfile.constant(0.0531), P)
    assert c.beta2 == pytest.approx(2028.9, abs=1.0)
    assert c.L == pytest.approx(1.0014, abs=1e-3)
    assert c.mu_max == pytest.approx(3.0e-11, rel=0.01)
    assert c.mu_max == pytest.approx(c.beta1 / (2 * c.beta2**3), rel=1e-14)
    assert c.lambda_bar == pytest.approx(1.0 / c.beta2)
    assert c.lambda_bar > 0
    assert c.L_closed_form == pytest.approx(c.L, abs=1e-6)


@given(st.floats(1e-3, 0.5), st.floats(1e-3, 1.0))
def test_singular_value_against_svd(d, k):
    a = np.array([[-d, -k], [1.0, 0.0]])
    assert largest_singular_value(d, k) == pytest.approx(np.linalg.norm(a, 2), rel=1e-12)
    # dropping the k^2 corner moves the norm by at most k^2 / 2 over the norm itself
    assert abs(closed_form_singular_bound(d, k) - largest_singular_value(d, k)) <= k * k


def test_ltv_monotone_and_guards():
    cs = [ltv_constants(DampingProfile.sinusoidal(0.05, a), P).c for a in (0.0, 0.005, 0.01, 0.02)]
    assert all(x < y for x, y in zip(cs, cs[1:]))
    small = ltv_constants(SIN, P, mu=0.5 * ltv_constants(SIN, P).mu_max)
    assert small.lambda_bar > 0
    with pytest.raises(GainTooSmall):
        ltv_constants(DampingProfile.constant(0.3), P)
    with pytest.raises(ValueError):
        ltv_constants(SIN, P, mu=-1.0)


def test_phi_examples():
    c = DampingProfile.constant(0.0531)
    assert iss_gain_phi(c, 0.4, P).phi == pytest.approx(P.k * 0.4)
    assert iss_gain_phi(SIN, 0.0, P).phi == 0.0
    g = iss_gain_phi(SIN, 0.25 * math.pi, P)
    w = P.omega0 + math.pi
    assert g.omega_sup == pytest.approx(w)
    assert g.phi <= g.certified <= g.envelope + 1e-12
    assert g.envelope == pytest.approx((SIN.eps_deriv * w + P.k) * 0.25 * math.pi)
    # max |sin(x + r) - sin x| = 2 sin(r/2) for the sinusoidal profile
    exact = 0.01 * 2 * math.sin(0.125 * math.pi) * w + P.k * 0.25 * math.pi
    assert g.phi == pytest.approx(exact, rel=1e-5)
    assert g.phi <= exact + 1e-12
    with pytest.raises(EmptyDomain):
        iss_gain_phi(SIN, 0.1, P, omega_box=((1.0, 1.0), (0.0, 1.0)))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1.5), st.floats(0, 1.5))
def test_phi_nondecreasing(r1, r2):
    lo, hi = sorted((r1, r2))
    a = iss_gain_phi(TABLE, lo, P, resolution=1e-2)
    b = iss_gain_phi(TABLE, hi, P, resolution=1e-2)
    assert a.phi >= 0
    assert a.phi <= b.phi + TABLE.eps_deriv * 1e-2 * b.omega_sup
    assert b.phi <= b.envelope + 1e-12


def test_default_box():
    (a, b), (lo, hi) = default_omega_box(P)
    assert (a, b) == (0.0, 2 * math.pi)
    assert hi - lo == pytest.approx(2 * math.pi)
    assert iss_error_bound(SIN, 0.3, P) == pytest.approx(iss_gain_phi(SIN, 0.3, P).phi / SIN.d_lower)


def test_constant_damping_matched_start():
    # follower starts at the leader's speed, so e follows -kd/D (1 - exp(-D t)) exactly
    d = 0.25 * math.pi
    prof = DampingProfile.constant(0.0531)
    sig = KnownSignal.constant(-0.5)
    th1 = leader_initial_angle(prof, sig, P)
    sc = Scenario(P, LoadProfile(0.5), Disturbance("constant", d), horizon=60.0, model_kind="phase-damping",
                  damping=prof, signal=sig, initial=(th1, P.omega0, 0.0, 0.0, P.omega0))
    tr = run(sc)
    t = tr["t"]
    want = -(P.k * d / 0.0531) * (1 - np.exp(-0.0531 * t))
    assert np.max(np.abs(tr["e"] - want)) < 1e-9
    assert np.all(np.isnan(tr["p1"]))
    assert tr.events[-1].kind == "no_connection"
