import time

import numpy as np
import pytest

from blowup_lab.errors import DomainError, InvalidArgument, NotApplicable
from blowup_lab.grid import Params, StateField, lorentz_transform, make_grid
from blowup_lab.profile import (PhiProfile, TiltedProfile, asymptotic_fit, c_predicted,
                                constant_profile, default_initial_data, derivative_bound_audit,
                                phi_profile, solve_ode, tilted_profile, trajectory_phi)
from blowup_lab.spectral import kappa_d

R2 = np.sqrt(2.0)


def test_exact_power_law_solution(P3):
    t0 = time.perf_counter()
    tr = solve_ode(R2, R2, P3, f_enabled=False)
    assert time.perf_counter() - t0 < 1.0
    t = np.linspace(0, 0.99, 500)
    assert np.max(np.abs(tr.phi_at(t) * (1 - t) / R2 - 1)) <= 1e-8
    assert abs(tr.T_blowup - 1) <= 1e-6
    assert np.all(np.diff(tr.phi) > 0) and np.all(tr.dphi > 0)


def test_first_integral_with_f(P3):
    with pytest.warns(UserWarning):
        tr = solve_ode(R2, R2, P3, f_enabled=True)
    assert tr.first_integral_drift < 1e-8


def test_halving_tol_moves_T_little(P3):
    A, B = default_initial_data(P3)
    T1 = solve_ode(A, B, P3, True, tol=1e-10).T_blowup
    T2 = solve_ode(A, B, P3, True, tol=5e-11).T_blowup
    assert abs(T1 - T2) < 10 * 1e-10


def test_admissibility_errors(P3):
    with pytest.raises(InvalidArgument):
        solve_ode(2.0, 0.1, P3, False)
    with pytest.raises(InvalidArgument):
        solve_ode(-1.0, 1.0, P3, False)


@pytest.mark.parametrize("p", [1.5, 2.0, 5.0, 7.0])
def test_ode_T_matches_quadrature(p):
    P = Params(p, 2.0)
    A, B = default_initial_data(P)
    tr = solve_ode(A, B, P, True)
    prof = phi_profile(tr, P, s_max=60)
    assert abs(prof.meta["T_quadrature"] - tr.T_blowup) <= 1e-8 * tr.T_blowup


def test_f_off_profile_is_kappa0(P3):
    A, B = default_initial_data(P3, False)
    prof = phi_profile(solve_ode(A, B, P3, False), P3, s_max=200)
    s = np.linspace(prof.s_min, prof.s_max, 300)
    assert np.max(np.abs(prof.phi(s) - P3.kappa0)) <= 1e-7


def test_profile_properties(profile3, P3):
    prof = profile3
    s = np.linspace(prof.s_min + 0.5, 590, 100)
    assert np.all(prof.phi(s) > 0)
    assert np.max(np.abs(prof.ode76_residual(s))) < 1e-7
    assert np.all(prof.phi(np.linspace(20, 500, 50)) < P3.kappa0)
    assert abs(prof.dev(prof.s_max)) < abs(prof.dev(prof.s_min))
    with pytest.raises(DomainError):
        prof.phi(prof.s_max + 1)


def test_profile_agrees_with_trajectory(built):
    tr, prof = built
    s = np.linspace(prof.s_min + 1e-6, prof.s_min + 6, 50)
    assert np.max(np.abs(trajectory_phi(tr, s) - prof.phi(s))) <= 1e-7


def test_profile_extend_and_json(profile3):
    big = profile3.extend(700.0)
    assert big.s_max >= 700
    assert big.phi(400.0) == pytest.approx(profile3.phi(400.0), rel=1e-12)
    back = PhiProfile.from_json(profile3.to_json())
    assert back.phi(123.4) == profile3.phi(123.4)


def test_tail_cauchy(profile3, P3):
    for s in (100.0, 200.0):
        g1 = -profile3.dev(s) * s ** P3.a
        g2 = -profile3.dev(2 * s) * (2 * s) ** P3.a
        assert abs(g2 / g1 - 1) < 0.05


def test_asymptotic_fit(profile3, P3):
    t0 = time.perf_counter()
    fit = asymptotic_fit(profile3, 50, 500)
    assert abs(fit["slope"] + 2) <= 0.05
    assert abs(fit["prefactor"] / (R2 / 8) - 1) <= 0.1
    assert fit["c_predicted"] == pytest.approx(R2 / 8, rel=1e-15) == c_predicted(P3)
    short = asymptotic_fit(profile3, 20, 60)
    assert abs(short["slope"] + 2) <= 0.1
    assert np.isfinite(fit["dphi_sa_max"])
    assert time.perf_counter() - t0 < 30
    with pytest.raises(NotApplicable):
        asymptotic_fit(constant_profile(P3))


def test_tilted_profile_basics(profile3, P3, grid64):
    y = grid64.nodes
    tp0 = tilted_profile(profile3, 0.0)
    assert np.allclose(tp0.w1(y, 40.0), profile3.phi(40.0), rtol=0, atol=1e-15)
    flat = TiltedProfile(constant_profile(P3), 0.6)
    assert np.max(np.abs(flat.w1(y, 40.0) - kappa_d(0.6, grid64, P3))) <= 1e-7
    big = tilted_profile(profile3, 0.5)
    assert np.all(np.abs(big.w1(y, 200.0) / big.kappa(y) - 1) < 1e-4)
    with pytest.raises(InvalidArgument):
        tilted_profile(profile3, 1.0)


def test_tilted_matches_lorentz_of_flat_profile(profile3, P3, grid64):
    d, S = 0.5, 40.0
    lt = lorentz_transform(StateField(np.zeros(64), np.zeros(64)), d, grid64)
    pref = lt.state.w1  # zero; only the offsets are used
    y = grid64.nodes
    src = S + lt.time_offset
    boost = ((1 - d * d) ** (1 / (P3.p - 1)) * (1 + d * y) ** (-2 / (P3.p - 1)))
    expect = boost * profile3.phi(src)
    assert np.max(np.abs(tilted_profile(profile3, d).w1(y, S) - expect)) <= 1e-7
    assert np.all(pref == 0)


def test_tilted_derivatives_by_differences(profile3, grid64):
    y = grid64.nodes
    h = 1e-5
    for d in (0.0, 0.4, -0.8):
        tp = tilted_profile(profile3, d)
        s = 35.0
        fd_s = (tp.w1(y, s + h) - tp.w1(y, s - h)) / (2 * h)
        assert np.max(np.abs(tp.w2(y, s) - fd_s)) <= 1e-8
        fd_s2 = (tp.w2(y, s + h) - tp.w2(y, s - h)) / (2 * h)
        assert np.max(np.abs(tp.ds_w2(y, s) - fd_s2)) <= 1e-7
        tpp, tpm = tilted_profile(profile3, d + h), tilted_profile(profile3, d - h)
        fd_d = (tpp.w1(y, s) - tpm.w1(y, s)) / (2 * h)
        assert np.max(np.abs(tp.dd_w1(y, s) - fd_d)) <= 1e-7
        fd_d2 = (tpp.w2(y, s) - tpm.w2(y, s)) / (2 * h)
        assert np.max(np.abs(tp.dd_w2(y, s) - fd_d2)) <= 1e-7


def test_derivative_ratio_stable_within_factor_two(profile3, grid64):
    rep = derivative_bound_audit(tilted_profile(profile3, 0.0), grid64, [50, 100, 200])
    assert rep["ds_stable"], rep["ds_ratio"]


def test_derivative_bound_audit(profile3, P3, grid64):
    rep = derivative_bound_audit(tilted_profile(profile3, 0.0), grid64, [50, 100, 200])
    assert rep["ds_bounded"] and rep["dd_stable"]
    assert rep["ds_ratio"][-1] < rep["ds_ratio"][0]
    flat = derivative_bound_audit(TiltedProfile(constant_profile(P3), 0.3), grid64, [50, 100])
    assert flat["ds_ratio"] == [0.0, 0.0]
    b0 = derivative_bound_audit(tilted_profile(profile3, 0.0), grid64, [100])["dd_bound"]
    b9 = derivative_bound_audit(tilted_profile(profile3, 0.9), grid64, [100])["dd_bound"]
    assert b9 < 10 * max(b0, 1.0)


def test_exact_solution_residual_decreases_with_n(profile3, P3):
    from blowup_lab.evolve import rhs
    res = []
    # at d = 0.9 the pole of kappa at y = -1/d keeps the spatial error visible
    for n in (16, 24, 32):
        g = make_grid(n, P3)
        tp = tilted_profile(profile3, 0.9)
        st = tp.state(g, 30.0)
        r = rhs(st, 30.0, g, P3, True)
        res.append(np.max(np.abs(r.w2 - tp.ds_w2(g.nodes, 30.0))))
    assert res[0] > res[1] > res[2]
