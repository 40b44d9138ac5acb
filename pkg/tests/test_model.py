import math
from types import SimpleNamespace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gensync.errors import DegenerateDamping, ModelError, NonMonotoneBracket, NoRoot
from gensync.model import (
    GeneratorParams,
    PostSyncState,
    PreSyncState,
    eval_b,
    eval_b_prime,
    eval_d,
    flipped_small_signal,
    postsync_rhs,
    presync_bus_speed,
    presync_rhs,
    small_signal_jacobian,
    steady_theta13,
)

K1, X1, C1, C2 = 0.6434, 0.0742, 0.0656, 0.00548

# frozen values from a 40-digit mpmath evaluation
THETA_BAR = 0.7243583176063510
D_AT_07245 = 0.039192152383564
D_AT_THETA_BAR = 0.039200607081322
A_AT_THETA_BAR = -12.753115498219244
THETA_AT_QUARTER = 0.32452180171490321

angles = st.floats(-20.0, 20.0, allow_nan=False)


def mp_d(s):
    mp.mp.dps = 40
    s = mp.mpf(s)
    return C1 * mp.cos(s) ** 2 + C2 * mp.sin(s) ** 2


def test_eval_b_examples():
    assert eval_b(K1, X1, 0.0) == 0.0
    assert float(eval_b(K1, X1, 0.7245)) == pytest.approx(0.5, abs=1e-3)
    assert float(eval_b(1.0, 0.0, math.pi / 2)) == pytest.approx(1.0, abs=1e-15)


def test_eval_d_examples():
    assert float(eval_d(C1, C2, 0.0)) == pytest.approx(0.0656, abs=1e-15)
    assert float(eval_d(C1, C2, math.pi / 2)) == pytest.approx(0.00548, abs=1e-15)
    got = float(eval_d(C1, C2, 0.7245))
    assert got == pytest.approx(float(mp_d("0.7245")), abs=1e-15)
    assert got == pytest.approx(D_AT_07245, abs=1e-12)


def test_eval_d_listed_reference_value():
    # the listed 0.039222 disagrees with the high-precision oracle by 3e-5
    assert float(eval_d(C1, C2, 0.7245)) == pytest.approx(0.039222, abs=1e-5)


@given(angles, angles)
def test_b_lipschitz(s, t):
    lhs = abs(float(eval_b(K1, X1, s)) - float(eval_b(K1, X1, t)))
    assert lhs <= (K1 + 2 * X1) * abs(s - t) + 1e-12


@given(angles)
def test_d_bounds(s):
    v = float(eval_d(C1, C2, s))
    assert min(C1, C2) - 1e-15 <= v <= C1 + C2
    assert abs(float(eval_b(K1, X1, s))) <= K1 + X1 + 1e-15


def test_steady_theta13_examples(ref_params):
    assert steady_theta13(ref_params, 0.0) == 0.0
    th = steady_theta13(ref_params, 0.5)
    assert th == pytest.approx(0.7245, abs=1e-3)
    assert th == pytest.approx(THETA_BAR, abs=1e-12)
    q = steady_theta13(ref_params, 0.25)
    assert q == pytest.approx(THETA_AT_QUARTER, abs=1e-12)
    assert abs(float(ref_params.b1(q)) - 0.25) < 1e-10


def test_steady_theta13_errors(ref_params):
    with pytest.raises(NoRoot):
        steady_theta13(ref_params, K1 + X1 + 0.1)
    with pytest.raises(NonMonotoneBracket):
        steady_theta13(ref_params, 0.5, bracket=(0.2, 2.5))


def test_params_invariants():
    p = GeneratorParams.reference()
    assert p.theta13_bar == pytest.approx(THETA_BAR, abs=1e-12)
    assert p.inertia == 1.0
    for bad in (dict(k=0.0), dict(d1_0=0.0), dict(k1=-1.0), dict(x1=-0.1), dict(c1=0.0, c2=0.0),
                dict(theta13_bar=0.8), dict(omega0=math.inf)):
        with pytest.raises(ModelError):
            GeneratorParams.reference(**bad)
    # changing k1 recomputes the steady angle
    q = p.with_(k1=0.7)
    assert float(q.b1(q.theta13_bar)) == pytest.approx(0.5, abs=1e-10)


def test_presync_equilibrium_is_exact(ref_params):
    p = ref_params
    st0 = PreSyncState(1.0, p.omega0, p.theta13_bar, 0.0, 0.0)
    der = presync_rhs(st0, p.ell_bar + p.d1_0 * p.omega0, 0.0, p.ell_bar, p)
    assert der.omega1 == 0.0
    assert abs(der.theta13) < 1e-12
    assert der.theta1 == p.omega0


def test_presync_sign_off_equilibrium(ref_params):
    p = ref_params
    th = p.theta13_bar + 0.1
    der = presync_rhs(PreSyncState(0.0, p.omega0, th, 0.0, 0.0), 0.0, 0.0, p.ell_bar, p)
    expect = (p.ell_bar - float(p.b1(th))) / float(p.d1(th))
    assert der.theta13 == pytest.approx(expect, rel=1e-14)
    assert der.theta13 < 0


def test_presync_residual_random(ref_params):
    p = ref_params
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        th1, w1, th13, th2, w2 = rng.uniform(-5, 5, 5)
        ell = rng.uniform(0, 1)
        s = PreSyncState(th1, w1, th13, th2, w2)
        der = presync_rhs(s, 0.3, 0.1, ell, p)
        res = ell - float(p.b1(th13)) - float(p.d1(th13)) * der.theta13
        worst = max(worst, abs(res))
        w3 = presync_bus_speed(s, ell, p)
        assert w3 == pytest.approx(w1 - der.theta13, abs=1e-9)
    assert worst < 1e-12


def test_presync_degenerate_damping():
    p = GeneratorParams.reference(c2=0.0)
    with pytest.raises(DegenerateDamping):
        presync_rhs(PreSyncState(0.0, 0.0, math.pi / 2, 0.0, 0.0), 0.0, 0.0, 0.5, p)


def test_postsync_balanced_speed(ref_params):
    p = ref_params
    w = 376.0
    th13 = steady_theta13(p, 0.3)
    th23 = steady_theta13(SimpleNamespace(k1=p.k2, x1=p.x2), 0.2)
    s = PostSyncState(th13, w, th23, w, 0.0)
    r = postsync_rhs(s, 0.0, 0.0, 0.5, p)
    assert r.omega3 == pytest.approx(w, abs=1e-9)


def test_postsync_symmetric_share():
    p = GeneratorParams.reference(k2=0.6434, x2=0.0742)
    s = PostSyncState(0.4, 377.0, 0.4, 377.0, 0.0)
    r = postsync_rhs(s, 0.0, 0.0, 0.6, p)
    assert r.p1 == pytest.approx(r.p2, abs=1e-14)
    # algebraic speed makes the two outputs sum to the load
    assert r.p1 + r.p2 == pytest.approx(0.6, abs=1e-13)


def test_postsync_residual_random(ref_params):
    p = ref_params
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        th1, th2, th3 = rng.uniform(-3, 3, 3)
        w1, w2 = rng.uniform(370, 385, 2)
        ell = rng.uniform(0, 1)
        r = postsync_rhs(PostSyncState(th1, w1, th2, w2, th3), 0.0, 0.0, ell, p)
        a, b = th1 - th3, th2 - th3
        d13 = w1 - r.omega3
        d23 = w2 - r.omega3
        res = ell - float(p.b1(a)) - float(p.d1(a)) * d13 - float(p.b2(b)) - float(p.d2(b)) * d23
        worst = max(worst, abs(res))
        assert r.p1 + r.p2 == pytest.approx(ell, abs=1e-12)
    assert worst < 1e-12


def test_small_signal_examples(ref_params):
    ss = small_signal_jacobian(ref_params, 0.7245)
    assert ss.a == pytest.approx(-12.75, abs=0.05)
    assert ss.b == pytest.approx(25.50, abs=0.05)
    exact = small_signal_jacobian(ref_params)
    assert exact.a == pytest.approx(A_AT_THETA_BAR, rel=1e-10)
    assert exact.b == pytest.approx(1.0 / D_AT_THETA_BAR, rel=1e-10)
    # B1' = 0: the steady angle at the B1 peak gives a = 0
    q = GeneratorParams.reference(k1=1.0, x1=0.0, theta13_bar=math.pi / 2, ell_bar=1.0)
    assert small_signal_jacobian(q).a == pytest.approx(0.0, abs=1e-12)


def test_small_signal_augmented_form(ref_params):
    ss = small_signal_jacobian(ref_params)
    assert ss.state_matrix[1, 0] == pytest.approx(ss.a**2)
    assert np.allclose(ss.input_matrix, [[ss.b, 0.0], [ss.a * ss.b, ss.b]])


def test_flipped_small_signal_sign(ref_params):
    ss = small_signal_jacobian(ref_params)
    state, inputs = flipped_small_signal(ref_params)
    assert state[0, 0] == pytest.approx(ss.a)
    assert inputs[0, 0] == pytest.approx(-ss.b)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.65))
def test_jacobian_vs_finite_difference(ell):
    p = GeneratorParams.reference(ell_bar=ell)
    th = p.theta13_bar
    ss = small_signal_jacobian(p)

    def g(theta, load):
        return presync_rhs(PreSyncState(0.0, 0.0, theta, 0.0, 0.0), 0.0, 0.0, load, p).theta13

    h = 1e-6
    fd_a = (g(th + h, ell) - g(th - h, ell)) / (2 * h)
    fd_b = (g(th, ell + h) - g(th, ell - h)) / (2 * h)
    assert fd_a == pytest.approx(ss.a, rel=1e-6)
    assert fd_b == pytest.approx(ss.b, rel=1e-6)
