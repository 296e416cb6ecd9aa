"""Acceptance criteria, one test each. Every test prints a single
`criterion N: PASS|FAIL ...` line, also when pytest captures output."""
import time

import numpy as np
import pytest

from blowup_lab import energy as en
from blowup_lab.evolve import default_ds, richardson_order, stationarity_residual, tracking_errors
from blowup_lab.experiments import e206_defect
from blowup_lab.grid import Params, StateField, integral_table, make_grid
from blowup_lab.profile import asymptotic_fit, build_profile, solve_ode
from blowup_lab.spectral import SpectralPack, kappa_d

R2 = np.sqrt(2.0)
D_SWEEP = (0.0, 0.5, -0.5, 0.9, -0.9)


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def check(trap, name):
    return next(c for c in trap["report"]["checks"] if c["name"] == name)


def test_criterion_01_ode_exact_solution(capsys):
    P = Params(3.0, 2.0)
    t0 = time.perf_counter()
    tr = solve_ode(R2, R2, P, f_enabled=False)
    t = np.linspace(0.0, 0.99, 1000)
    rel = float(np.max(np.abs(tr.phi_at(t) * (1 - t) / R2 - 1)))
    dT = abs(tr.T_blowup - 1)
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-8 and dT <= 1e-6 and elapsed < 1.0
    report(capsys, 1, ok, f"phi rel err {rel:.2e} (<=1e-8), |T-1| {dT:.2e} (<=1e-6), {elapsed:.2f} s (<1)")


def test_criterion_02_asymptotic_exponent_and_constant(capsys):
    P = Params(3.0, 2.0)
    t0 = time.perf_counter()
    _, prof = build_profile(P, True)
    full = asymptotic_fit(prof, 50, 500)
    short = asymptotic_fit(prof, 20, 60)
    elapsed = time.perf_counter() - t0
    pre_rel = abs(full["prefactor"] / (R2 / 8) - 1)
    ok = (abs(full["slope"] + 2) <= 0.05 and abs(short["slope"] + 2) <= 0.1 and pre_rel <= 0.1
          and elapsed < 30)
    report(capsys, 2, ok, f"slope[50,500] {full['slope']:.4f} (-2+-0.05), slope[20,60] {short['slope']:.4f} "
                          f"(-2+-0.1), prefactor {full['prefactor']:.5f} rel {pre_rel:.3f} (<=0.1), "
                          f"{elapsed:.1f} s (<30)")


def test_criterion_03_spectral_identities(capsys):
    P = Params(3.0, 2.0)
    t0 = time.perf_counter()
    g = make_grid(64, P)
    rng = np.random.default_rng(0)
    worst = {"F1": 0.0, "F0": 0.0, "bio": 0.0, "e206": 0.0}
    for d in D_SWEEP:
        pk = SpectralPack(d, g, P)
        res = pk.eigen_residuals()
        worst["F1"] = max(worst["F1"], res["F1"])
        worst["F0"] = max(worst["F0"], res["F0"])
        worst["bio"] = max(worst["bio"], float(np.max(np.abs(pk.biorthogonality() - np.eye(2)))))
        worst["e206"] = max(worst["e206"], e206_defect(pk, g, P, rng, 20))
    elapsed = time.perf_counter() - t0
    ok = (worst["F1"] <= 1e-6 and worst["F0"] <= 1e-6 and worst["bio"] <= 1e-8 and worst["e206"] <= 1e-6
          and elapsed < 10)
    report(capsys, 3, ok, f"||LF1-F1|| {worst['F1']:.1e}, ||LF0|| {worst['F0']:.1e} (<=1e-6), biorth "
                          f"{worst['bio']:.1e} (<=1e-8), dissipation identity {worst['e206']:.1e} (<=1e-6), "
                          f"{elapsed:.2f} s (<10)")


def test_criterion_04_stationarity_and_energy(capsys):
    P = Params(3.0, 2.0)
    t0 = time.perf_counter()
    g = make_grid(64, P)
    stat = max(stationarity_residual(d, g, P) for d in D_SWEEP)
    vals = [en.E0(StateField(kappa_d(d, g, P), np.zeros(64)), g) for d in np.linspace(-0.9, 0.9, 9)]
    spread = max(vals) - min(vals)
    gap = abs(vals[4] - 4 / 3)
    elapsed = time.perf_counter() - t0
    ok = stat <= 1e-6 and spread < 1e-9 and gap <= 1e-10 and elapsed < 5
    report(capsys, 4, ok, f"stationarity {stat:.1e} (<=1e-6), E0 spread over d {spread:.1e} (<1e-9), "
                          f"|E0-4/3| {gap:.1e} (<=1e-10), {elapsed:.2f} s (<5)")


def test_criterion_05_manufactured_tracking(capsys, profile3):
    P = Params(3.0, 2.0)
    g = make_grid(64, P)
    t0 = time.perf_counter()
    _, errs = tracking_errors(profile3, 0.4, g, P, s0=30.0, span=5.0)
    rich = richardson_order(profile3, 0.4, g, P, s0=30.0, span=5.0, ds=default_ds(64))
    elapsed = time.perf_counter() - t0
    order = rich["order_exact"]
    ok = errs.max() <= 1e-4 and order >= 3.5 and elapsed < 60
    report(capsys, 5, ok, f"sup tracking error {errs.max():.2e} (<=1e-4), Richardson order {order:.2f} "
                          f"(>=3.5; errors {rich['sup_error'][0]:.2e} -> {rich['sup_error'][1]:.2e}), "
                          f"{elapsed:.1f} s (<60)")


def test_criterion_06_trapping(capsys, trap_runs):
    a, small = trap_runs["a"], trap_runs["small"]
    names = ("modulation_solvable", "decay_rate_positive", "decay_fit_residual", "A_le_quarter_B",
             "f0_sandwich")
    passed = {n: check(a, n)["passed"] and check(small, n)["passed"] for n in names}
    Ca = a["report"]["metrics"]["decay"]["d_shift_constant"]
    Cs = small["report"]["metrics"]["decay"]["d_shift_constant"]
    ratio = max(Ca, Cs) / min(Ca, Cs)
    runtime = max(a["elapsed"], small["elapsed"])
    ok = all(passed.values()) and ratio < 2 and runtime < 300
    mu = check(a, "decay_rate_positive")["value"]
    res = check(a, "decay_fit_residual")["value"]
    failed = [n for n, v in passed.items() if not v]
    report(capsys, 6, ok, f"mu_hat {mu:.4f} (>0), fit residual {res:.1e} (<0.1), tail A<=B/4 and "
                          f"f0 sandwich {'hold' if not failed else 'fail: ' + ','.join(failed)}, "
                          f"C(1e-2) {Ca:.4f} C(1e-3) {Cs:.4f} ratio {ratio:.3f} (<2), {runtime:.1f} s (<300)")


def test_criterion_07_polynomial_envelope(capsys, trap_runs):
    c = check(trap_runs["a"], "polynomial_envelope")
    report(capsys, 7, c["passed"], f"block maxima of s^(3/4)||q||_H non-increasing, sup {c['value']}")


def test_criterion_08_lyapunov(capsys, trap_runs, cli_run, tmp_path):
    t0 = time.perf_counter()
    e = cli_run(tmp_path / "energy", "energy")
    mono = [c for c in e["report"]["checks"] if c["name"].startswith("E0_monotone_f_off")]
    scan = check(trap_runs["a"], "lyapunov_scan")
    elapsed = time.perf_counter() - t0 + trap_runs["a"]["elapsed"]
    ok = len(mono) == 3 and all(c["passed"] for c in mono) and scan["passed"] and elapsed < 120
    worst = max(c["value"] for c in mono)
    report(capsys, 8, ok, f"f-off E0 monotone on {len(mono)} runs (worst excess {worst:.1e} <= 0), "
                          f"theta_H {scan['value']} from scan with >=99% non-increasing H steps, "
                          f"{elapsed:.1f} s (<120)")


def test_criterion_09_integral_table(capsys):
    t0 = time.perf_counter()
    iii = [integral_table(0.0, 2.0, d)["scaled"] for d in (0.9, 0.99, 0.999)]
    one = [integral_table(1.0, 1.0, d)["scaled"] for d in (0.9, 0.99, 0.999)]
    s3, s1 = max(iii) / min(iii), max(one) / min(one)
    elapsed = time.perf_counter() - t0
    ok = s3 < 4 and s1 < 4 and elapsed < 1
    report(capsys, 9, ok, f"regime (iii) spread x{s3:.3f} (<4), regime (i) spread x{s1:.3f} (<4), "
                          f"{elapsed:.2f} s (<1)")


def test_criterion_10_determinism(capsys, trap_runs):
    a, b = trap_runs["a"], trap_runs["b"]
    files = ("modulation.csv", "energy.csv", "decay.csv")
    same = all((a["out"] / f).read_bytes() == (b["out"] / f).read_bytes() for f in files)
    ok = same and b["elapsed"] < 2 * a["elapsed"] + 1e-9 and a["code"] == b["code"] == 0
    report(capsys, 10, ok, f"{', '.join(files)} byte-identical: {same}, rerun {b['elapsed']:.1f} s "
                           f"(first run {a['elapsed']:.1f} s)")
