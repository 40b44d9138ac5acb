import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gensync.analysis import (
    BoundsReport,
    bounds_report,
    decay_constants,
    decay_constants_kd,
    empirical_overshoot,
    estimate_theta_bounds,
    lti_matrix,
    lti_matrix_kd,
    lyapunov_matrix,
    lyapunov_residual,
    refine_overshoot,
    regulation_bound,
    reports_to_csv,
    shifted_leader_norm,
    sync_error_bound,
    tail_sup,
)
from gensync.errors import GainTooSmall
from gensync.model import GeneratorParams
from gensync.signals import LoadProfile

PI = math.pi
C_ORACLE = 10.379631151176621  # 40-digit mpmath evaluation of the closed form
REG_ORACLE = 390.94655936635107


def mp_c(k, d):
    mp.mp.dps = 40
    k, d = mp.mpf(k), mp.mpf(d)
    s = mp.sqrt((k - 1) ** 2 + d**2)
    return float(mp.sqrt((k + 1 + s) / (k + 1 - s)))


def test_decay_constants_reference(ref_params):
    lam, c = decay_constants(ref_params)
    assert lam == pytest.approx(0.02655, abs=1e-12)
    assert c == pytest.approx(10.3796, abs=1e-3)
    assert c == pytest.approx(C_ORACLE, rel=1e-13)


def test_c_is_sqrt_condition_number_of_p(ref_params):
    # c^2 is the eigenvalue ratio of P, computed here by a different route
    ev = np.linalg.eigvalsh(lyapunov_matrix(ref_params))
    assert math.sqrt(ev[1] / ev[0]) == pytest.approx(decay_constants(ref_params)[1], rel=1e-10)


@given(st.floats(1e-3, 10.0), st.floats(1e-3, 1.0))
def test_c_matches_mpmath(k, d):
    if k <= d * d / 4 * (1 + 1e-6):
        with pytest.raises(GainTooSmall):
            decay_constants_kd(k, d * (1 + 1e-3) if k > d * d / 4 else d)
        return
    lam, c = decay_constants_kd(k, d)
    assert lam == d / 2
    assert c >= 1.0
    assert c == pytest.approx(mp_c(k, d), rel=1e-9)


def test_c_limits():
    assert decay_constants_kd(1.0, 1e-9)[1] == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(GainTooSmall):
        decay_constants_kd(0.0531**2 / 4, 0.0531)
    lam, c = decay_constants_kd(0.04, 0.0531)
    assert lyapunov_residual(0.04, 0.0531) < 1e-12


def test_lyapunov_identity_grid():
    ks = np.linspace(0.005, 2.0, 10)
    ds = np.linspace(0.01, 0.2, 10)
    worst = max(lyapunov_residual(k, d) for k in ks for d in ds)
    assert worst < 1e-12


@settings(max_examples=200)
@given(st.floats(1e-4, 100.0), st.floats(1e-4, 10.0))
def test_lyapunov_identity_random(k, d):
    assert lyapunov_residual(k, d) < 1e-12 * max(1.0, k, d * d)


def test_lti_matrix_examples(ref_params):
    ev = np.linalg.eigvals(lti_matrix(ref_params))
    assert np.allclose(ev.real, -0.02655, atol=1e-12)
    d = 0.0531
    a = lti_matrix_kd(d * d / 4, d)
    ev = np.linalg.eigvals(a)
    assert np.allclose(ev, -d / 2, atol=1e-6)


@given(st.floats(1e-4, 10.0), st.floats(1e-4, 1.0))
def test_lti_trace_det(k, d):
    a = lti_matrix_kd(k, d)
    assert np.trace(a) == pytest.approx(-d)
    assert np.linalg.det(a) == pytest.approx(k, rel=1e-9)
    assert np.max(np.linalg.eigvals(a).real) < 0


def test_regulation_bound(ref_params):
    assert regulation_bound(ref_params, 0.0) == 0.0
    r = regulation_bound(ref_params, 0.01)
    assert r == pytest.approx(390.9, abs=0.5)
    assert r == pytest.approx(REG_ORACLE, rel=1e-12)
    assert regulation_bound(ref_params, 0.02) == pytest.approx(2 * r, rel=1e-14)
    with pytest.raises(GainTooSmall):
        regulation_bound(GeneratorParams.reference(k=1e-4), 0.01)


def test_sync_error_bound_slope(ref_params):
    p = ref_params
    assert sync_error_bound(p, 0.0, 0.0, 0.0) == 0.0
    b1 = sync_error_bound(p, 0.125 * PI, 0.02, 0.02)
    b2 = sync_error_bound(p, 0.25 * PI, 0.02, 0.02)
    assert (b2 - b1) / PI == pytest.approx(0.02354, abs=1e-4)
    with pytest.raises(ValueError):
        sync_error_bound(p, -0.1, 0.0, 0.0)


@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 0.1), st.floats(0, 0.1))
def test_sync_error_bound_affine(d1, d2, dth, dthd):
    p = GeneratorParams.reference()
    diff = sync_error_bound(p, d2, dth, dthd) - sync_error_bound(p, d1, dth, dthd)
    assert diff == pytest.approx(p.k / p.d1_0 * (d2 - d1), abs=1e-12)


def test_theta_bounds_constant_load(ref_params):
    dth, dthd = estimate_theta_bounds(ref_params, LoadProfile(0.5), horizon=20.0, safety=1.0)
    # the steady angle itself is bisected to 1e-13
    assert dth == pytest.approx(0.0, abs=1e-12)
    assert dthd == pytest.approx(0.0, abs=1e-12)


def test_theta_bounds_grow_with_load_size(ref_params):
    devs = []
    for dl in (0.01, 0.04, 0.07, 0.1):
        prof = LoadProfile(0.5, dl, 0.01, 5.0, "sinusoid")
        devs.append(estimate_theta_bounds(ref_params, prof, horizon=80.0)[0])
    assert all(a < b for a, b in zip(devs, devs[1:]))


def test_theta_bounds_safety(ref_params):
    prof = LoadProfile(0.5, 0.01, 0.01, 5.0, "sinusoid")
    a = estimate_theta_bounds(ref_params, prof, horizon=30.0, safety=1.0)
    b = estimate_theta_bounds(ref_params, prof, horizon=30.0, safety=1.1)
    assert b[0] == pytest.approx(1.1 * a[0]) and b[1] == pytest.approx(1.1 * a[1])
    with pytest.raises(ValueError):
        estimate_theta_bounds(ref_params, prof, horizon=1.0, safety=0.5)


def test_theta_bounds_match_quasi_static_oracle(ref_params):
    # theta13 is fast (time constant ~ 1/12.75 s) so it tracks B1^{-1}(ell(t)) closely
    p = ref_params
    prof = LoadProfile(0.5, 0.01, 0.01, 5.0, "sinusoid")
    dth, dthd = estimate_theta_bounds(p, prof, horizon=30.0, safety=1.0)
    slope = float(p.b1(p.theta13_bar + 1e-7) - p.b1(p.theta13_bar - 1e-7)) / 2e-7
    assert dth == pytest.approx(0.01 / slope, rel=0.05)
    assert dthd == pytest.approx(0.01 / slope, rel=0.05)


def test_bounds_report_and_csv(ref_params):
    prof = LoadProfile(0.5, 0.01, 0.01, 5.0, "sinusoid")
    rep = bounds_report(ref_params, prof, 0.125 * PI, horizon=30.0)
    assert isinstance(rep, BoundsReport)
    assert rep.slope_in_d == pytest.approx(0.01 / 0.0531)
    text = rep.to_text()
    assert "lambda=0.02655" in text and "c=10.37963115" in text
    other = rep.with_d(0.5 * PI, ref_params)
    assert other.sync_error_bound - rep.sync_error_bound == pytest.approx(rep.slope_in_d * 0.375 * PI)
    csv = reports_to_csv([rep, other])
    lines = csv.strip().splitlines()
    assert lines[0].startswith("lambda,c,") and len(lines) == 3


def test_overshoot_helpers(ref_params):
    a = lti_matrix(ref_params)
    lam, c = decay_constants(ref_params)
    emp = empirical_overshoot(a, lam, n=2001)
    assert 1.0 <= emp <= c + 1e-9
    best, p = refine_overshoot(ref_params)
    assert best == pytest.approx(c, rel=1e-6)
    with pytest.raises(ValueError):
        refine_overshoot(ref_params, lam=1.0)


def test_tail_sup_and_shifted_norm(ref_params):
    t = np.linspace(0, 10, 11)
    x = np.arange(11.0) - 20
    assert tail_sup(t, x) == 12.0
    p = ref_params
    th1 = p.omega0 * t - (0.5 + p.d1_0 * p.omega0) / p.k
    n = shifted_leader_norm(t, th1, np.full_like(t, p.omega0), np.full_like(t, 0.5), p)
    assert np.max(n) < 1e-9 * np.max(np.abs(th1))
