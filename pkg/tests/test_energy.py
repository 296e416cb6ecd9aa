import numpy as np
import pytest

from blowup_lab.energy import (ENERGY_COLUMNS, E0, E_full, EnergyTrace, antiderivative_F, bound_window,
                               e0_monotonicity, energy_trace, lyapunov_H, monotonicity_audit,
                               nonincreasing_fraction)
from blowup_lab.errors import InvalidArgument
from blowup_lab.evolve import EvolveConfig, Trajectory, evolve
from blowup_lab.grid import Params, StateField, norm_H
from blowup_lab.profile import tilted_profile
from blowup_lab.spectral import kappa_d, random_state


def const_state(P, n=64):
    return StateField(np.full(n, P.kappa0), np.zeros(n))


def test_E0_values(grid64, P3):
    vals = [E0(StateField(kappa_d(d, grid64, P3), np.zeros(64)), grid64)
            for d in np.linspace(-0.9, 0.9, 9)]
    assert np.ptp(vals) < 1e-9
    assert E0(const_state(P3), grid64) == pytest.approx(4 / 3, abs=1e-12)
    assert E0(StateField.zeros(64), grid64) == 0


def test_E_full_components(grid64, P3, rng):
    q = random_state(grid64, rng)
    e = E_full(q, 5.0, grid64, f_enabled=False)
    assert e["I"] == 0
    e = E_full(q, 5.0, grid64)
    assert e["E"] == e["E0"] + e["I"] + e["J"]
    z = E_full(StateField.zeros(64), 5.0, grid64)
    assert all(v == 0 for v in z.values())
    with pytest.raises(InvalidArgument):
        E_full(q, 0.0, grid64)


def test_E_minus_E0_decays_like_s_power(profile3, grid64, P3):
    tp = tilted_profile(profile3, 0.0)
    C = []
    for s in (50.0, 100.0, 200.0):
        e = E_full(tp.state(grid64, s), s, grid64)
        C.append(abs(e["E"] - e["E0"]) * s ** P3.a)
    assert max(C) / min(C) < 2
    e200 = E0(tp.state(grid64, 200.0), grid64)
    assert abs(e200 / (4 / 3) - 1) < 0.01


def test_lyapunov_H_additive_theta_term(grid64, P3, rng):
    q = random_state(grid64, rng)
    s = 3.0
    H0 = lyapunov_H(q, s, 0.0, grid64)
    term = 1e3 * np.exp(-(P3.p + 1) * s / (P3.p - 1))
    assert lyapunov_H(q, s, 1e3, grid64) == pytest.approx(H0 + term, rel=1e-15, abs=4 * np.spacing(H0))
    with pytest.raises(InvalidArgument):
        lyapunov_H(q, s, -1.0, grid64)
    with pytest.raises(InvalidArgument):
        Params(3.0, 1.0)


def test_stationary_H_nonincreasing(grid64, P3):
    tr = evolve(const_state(P3), EvolveConfig(n=64, s0=2.0, s_end=4.0, sample_every=5, f_enabled=False),
                grid64, P3)
    trace = energy_trace(tr, grid64, f_enabled=False, theta_H=1.0)
    assert np.allclose(trace.E, trace.E0 + trace.I + trace.J, rtol=0, atol=1e-12)
    assert np.ptp(trace.E0) < 1e-10
    audit = monotonicity_audit(trace, P3)
    assert audit["ok"] and audit["theta_H"] == 1.0
    assert all(f == 1.0 for f in audit["fractions"].values())


def test_perturbed_run_audits(profile3, grid64, P3):
    tp = tilted_profile(profile3, 0.3)
    pert = random_state(grid64, np.random.default_rng(3))
    pert = pert * (1e-2 / norm_H(pert, grid64))
    tr = evolve(tp.state(grid64, 30.0) + pert,
                EvolveConfig(n=64, s0=30.0, s_end=33.0, sample_every=10), grid64, P3)
    trace = energy_trace(tr, grid64)
    audit = monotonicity_audit(trace, P3)
    assert audit["ok"] and audit["theta_H"] is not None
    win = bound_window(tr, grid64)
    assert win["positive"] and win["min"] > 0


def test_f_off_E0_monotone(grid64, P3):
    pert = random_state(grid64, np.random.default_rng(9))
    pert = pert * (5e-2 / norm_H(pert, grid64))
    tr = evolve(const_state(P3) + pert, EvolveConfig(n=64, s0=1.0, s_end=3.0, f_enabled=False),
                grid64, P3)
    assert e0_monotonicity(energy_trace(tr, grid64, f_enabled=False))["ok"]


def test_monotonicity_helpers():
    assert nonincreasing_fraction([3, 2, 2, 1], 0) == 1.0
    assert nonincreasing_fraction([1, 2, 1], 0) == 0.5
    assert nonincreasing_fraction([1.0], 0) == 1.0
    tr = EnergyTrace(np.array([1.0, 2.0]), np.array([1.0, 1.1]), *[np.zeros(2)] * 4, theta_H=1.0)
    assert not e0_monotonicity(tr)["ok"]


def test_bound_window_cases(grid64, P3):
    tr = Trajectory(np.array([0.0, 1.0]), [const_state(P3)] * 2)
    win = bound_window(tr, grid64)
    assert win["min"] == pytest.approx(P3.kappa0 * np.sqrt(2), rel=1e-12)
    assert win["max"] == pytest.approx(win["min"], rel=1e-14)
    zero = bound_window(Trajectory(np.array([0.0]), [StateField.zeros(64)]), grid64)
    assert zero["min"] == 0 and not zero["positive"]
    with pytest.raises(InvalidArgument):
        bound_window(Trajectory(np.array([]), []), grid64)


def test_csv_columns(grid64, P3, tmp_path):
    tr = Trajectory(np.array([1.0, 2.0]), [const_state(P3)] * 2)
    trace = energy_trace(tr, grid64)
    trace.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == ",".join(ENERGY_COLUMNS) and len(lines) == 3


def test_F_reexport(P3):
    assert antiderivative_F(0.0, P3) == 0.0
