"""Run configuration and the pipelines behind each CLI subcommand."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import energy as en
from . import modulation as mo
from .errors import InvalidArgument
from .evolve import (EvolveConfig, evolve, max_stable_ds, richardson_order, save_snapshots,
                     stationarity_residual, tracking_errors)
from .grid import Params, integral_table, make_grid, norm_H
from .profile import (TiltedProfile, asymptotic_fit, build_profile, c_predicted, constant_profile,
                      solve_ode)
from .spectral import SpectralPack, bilinear_phi, dissipation_rhs, kappa_d, project, random_state

log = logging.getLogger(__name__)

REPORT_SCHEMA = "blowup_lab.report/1"
KINDS = ("profile", "spectral", "evolve", "trap", "energy")


class ConfigError(InvalidArgument):
    pass


@dataclass
class RunConfig:
    kind: str = "trap"
    p: float = 3.0
    a: float = 2.0
    n: int = 64
    ds: float | None = None
    ode_tol: float = 1e-11
    root_tol: float = mo.ROOT_TOL
    s0: float = 30.0
    span: float = 12.0
    sample_every: int = 10
    f_enabled: bool = True
    d_star: float = 0.3
    d_track: float = 0.4
    track_span: float = 5.0
    epsilon_star: float = 1e-2
    eta1: float = mo.DEFAULT_ETA1
    theta_H: float = 1.0
    omega_star: int = 1
    seed: int = 0
    n_modes: int = 10
    project_F0: bool = False
    shoot: bool = True
    shoot_iters: int = 8
    eps_gate: float = mo.DEFAULT_EPS_GATE
    s_tail: float | None = None
    decay_window: float = 1.0 / 3.0
    d_grid: list = field(default_factory=lambda: [-0.9, -0.5, 0.0, 0.5, 0.9])
    fit_window: list = field(default_factory=lambda: [50.0, 500.0])
    n_random: int = 20
    n_energy_runs: int = 3
    out: str = "runs"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.kind in KINDS, f"kind must be one of {KINDS}")
        for name in ("p", "a", "s0", "span", "d_star", "epsilon_star", "eta1", "theta_H",
                     "ode_tol", "root_tol", "eps_gate", "decay_window", "d_track", "track_span"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v),
                 f"{name} must be a finite number")
        need(1 < self.p <= 10, "p must lie in (1, 10]")
        need(1 < self.a <= 10, "a must lie in (1, 10]")
        need(isinstance(self.n, int) and 16 <= self.n <= 256, "n must be an integer in [16, 256]")
        if self.ds is not None:
            need(isinstance(self.ds, (int, float)) and 0 < self.ds <= max_stable_ds(self.n),
                 f"ds must lie in (0, {max_stable_ds(self.n):.4g}] for n={self.n}")
        need(self.s0 >= 10, "s0 must be >= 10")
        need(0 < self.span <= 100, "span must lie in (0, 100]")
        need(abs(self.d_track) < 0.99, "|d_track| must be < 0.99")
        need(0 < self.track_span <= 50, "track_span must lie in (0, 50]")
        need(isinstance(self.sample_every, int) and self.sample_every >= 1, "sample_every must be >= 1")
        need(abs(self.d_star) < 0.99, "|d_star| must be < 0.99")
        need(0 < self.epsilon_star <= 0.1, "epsilon_star must lie in (0, 0.1]")
        need(0 < self.eta1 < 1, "eta1 must lie in (0, 1)")
        need(self.theta_H > 0, "theta_H must be positive")
        need(self.omega_star in (1, -1), "omega_star must be +1 or -1")
        need(isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64, "seed must be a u64")
        need(isinstance(self.n_modes, int) and 1 <= self.n_modes <= self.n, "n_modes must lie in [1, n]")
        need(0 < self.ode_tol < 1e-4, "ode_tol must lie in (0, 1e-4)")
        need(0 < self.root_tol < 1e-4, "root_tol must lie in (0, 1e-4)")
        need(0 < self.decay_window <= 1, "decay_window must lie in (0, 1]")
        need(all(abs(d) < 1 for d in self.d_grid) and len(self.d_grid) > 0, "d_grid entries must satisfy |d| < 1")
        need(len(self.fit_window) == 2 and 10 <= self.fit_window[0] < self.fit_window[1],
             "fit_window must be [lo, hi] with 10 <= lo < hi")
        need(isinstance(self.n_random, int) and self.n_random >= 10, "n_random must be >= 10")
        need(isinstance(self.n_energy_runs, int) and self.n_energy_runs >= 1, "n_energy_runs must be >= 1")

    @property
    def params(self) -> Params:
        return Params(float(self.p), float(self.a))

    def as_dict(self):
        d = dataclasses.asdict(self)
        d["ds"] = self.ds if self.ds is not None else None
        return d


@dataclass
class RunReport:
    config: dict
    checks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    status: str = "ok"
    error: str | None = None

    def check(self, name, passed, value, tolerance, **detail):
        self.checks.append({"name": name, "passed": bool(passed), "value": _jsonable(value),
                            "tolerance": _jsonable(tolerance), **{k: _jsonable(v) for k, v in detail.items()}})
        return bool(passed)

    @property
    def all_passed(self):
        return all(c["passed"] for c in self.checks)

    def to_dict(self):
        return {"schema": REPORT_SCHEMA, "status": self.status, "error": self.error,
                "config": self.config, "checks": self.checks, "metrics": _jsonable(self.metrics),
                "manifest": self.manifest, "wall_clock_s": self.wall_clock_s}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in r])


# ---------------------------------------------------------------- pipelines

def run_profile(cfg: RunConfig, rep: RunReport, out: str):
    P = cfg.params
    t = time.perf_counter()
    exact_params = Params(3.0, P.a)
    r2 = np.sqrt(2.0)
    traj = solve_ode(r2, r2, exact_params, f_enabled=False, tol=cfg.ode_tol)
    tt = np.linspace(0.0, 0.99, 400)
    rel = np.max(np.abs(traj.phi_at(tt) * (1 - tt) / r2 - 1))
    rep.check("ode_exact_solution", rel <= 1e-8 and abs(traj.T_blowup - 1) <= 1e-6,
              {"phi_rel": rel, "T_minus_1": traj.T_blowup - 1}, {"phi_rel": 1e-8, "T": 1e-6},
              seconds=time.perf_counter() - t)
    traj, prof = build_profile(P, cfg.f_enabled, s_max=max(600.0, cfg.fit_window[1] + 10), tol=cfg.ode_tol)
    rep.metrics["ode"] = {"A": traj.A, "B": traj.B, "T_blowup": traj.T_blowup, "M0": traj.M0,
                          "steps": traj.n_steps, "rejected": traj.n_rejected,
                          "first_integral_drift": traj.first_integral_drift,
                          "T_quadrature": prof.meta.get("T_quadrature")}
    with open(os.path.join(out, "profile.json"), "w") as fh:
        fh.write(prof.to_json())
    rep.manifest.append("profile.json")
    if not cfg.f_enabled:
        return
    fits = {}
    for label, (lo, hi), tol in (("full", cfg.fit_window, 0.05), ("short", (20.0, 60.0), 0.1)):
        fit = asymptotic_fit(prof, lo, hi)
        fits[label] = fit
        rep.check(f"asymptotic_slope_{label}", abs(fit["slope"] + P.a) <= tol, fit["slope"],
                  {"target": -P.a, "abs": tol}, window=[lo, hi])
    cp = c_predicted(P)
    pref = fits["full"]["prefactor"]
    rep.check("asymptotic_prefactor", abs(pref / cp - 1) <= 0.1, pref, {"target": cp, "rel": 0.1},
              fixed_slope=fits["full"]["prefactor_fixed_slope"])
    rep.metrics["fits"] = fits
    s = np.geomspace(cfg.fit_window[0], cfg.fit_window[1], 200)
    write_csv(os.path.join(out, "profile_fit.csv"), ("log_s", "log_gap"),
              zip(np.log(s), np.log(-prof.dev(s))))
    rep.manifest.append("profile_fit.csv")


def e206_defect(pack: SpectralPack, grid, params, rng, count: int) -> float:
    """max |phi_d(q-, L_d q-) + (4/(p-1)) int q-_2^2 rho/(1-y^2)| over unit random q."""
    worst = 0.0
    for _ in range(count):
        q = random_state(grid, rng)
        q = q * (1.0 / norm_H(q, grid))
        qm = project(q, pack, grid).q_minus
        lhs = bilinear_phi(qm, pack.Ld(qm), pack, grid, params, form=1)
        worst = max(worst, abs(lhs - dissipation_rhs(qm, grid, params)))
    return worst


def run_spectral(cfg: RunConfig, rep: RunReport, out: str):
    P = cfg.params
    g = make_grid(cfg.n, P)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for d in cfg.d_grid:
        pk = SpectralPack(d, g, P)
        bio = float(np.max(np.abs(pk.biorthogonality() - np.eye(2))))
        res = pk.eigen_residuals()
        e206 = e206_defect(pk, g, P, rng, cfg.n_random)
        stat = stationarity_residual(d, g, P)
        rows.append((float(d), bio, res["F1"], res["F0"], e206, stat))
        rep.check(f"biorthogonality[d={d}]", bio <= 1e-8, bio, 1e-8)
        rep.check(f"eigen_F1[d={d}]", res["F1"] <= 1e-6, res["F1"], 1e-6)
        rep.check(f"eigen_F0[d={d}]", res["F0"] <= 1e-6, res["F0"], 1e-6)
        rep.check(f"dissipation_identity[d={d}]", e206 <= 1e-6, e206, 1e-6)
        rep.check(f"stationarity[d={d}]", stat <= 1e-6, stat, 1e-6)
    write_csv(os.path.join(out, "spectral.csv"),
              ("d", "biorth_err", "res_F1", "res_F0", "dissipation_err", "stationarity"), rows)
    rep.manifest.append("spectral.csv")
    regimes = {}
    for (al, be), ds_ in (((0.0, 2.0), (0.9, 0.99, 0.999)), ((1.0, 1.0), (0.9, 0.99, 0.999))):
        vals = [integral_table(al, be, d)["scaled"] for d in ds_]
        spread = max(vals) / min(vals)
        regimes[f"{al},{be}"] = vals
        rep.check(f"integral_table[alpha={al},beta={be}]", spread < 4, spread, 4)
    rep.metrics["integral_table"] = regimes


def run_evolve(cfg: RunConfig, rep: RunReport, out: str):
    P = cfg.params
    g = make_grid(cfg.n, P)
    _, prof = build_profile(P, cfg.f_enabled, tol=cfg.ode_tol)
    d = cfg.d_track
    traj, errs = tracking_errors(prof, d, g, P, cfg.s0, cfg.track_span, cfg.ds, cfg.f_enabled)
    sup = float(errs.max())
    rep.check("tracking_sup_error", sup <= 1e-4, sup, 1e-4, d=d)
    rich = richardson_order(prof, d, g, P, cfg.s0, cfg.track_span, cfg.ds, cfg.f_enabled)
    rep.check("richardson_order", rich["order_exact"] >= 3.5, rich["order_exact"], 3.5,
              order_self=rich["order_self"], sup_error=rich["sup_error"])
    rep.metrics["richardson"] = rich
    rep.metrics["evolve"] = traj.diagnostics
    write_csv(os.path.join(out, "evolve.csv"), ("s", "error_H"), zip(traj.s, errs))
    save_snapshots(traj, os.path.join(out, "snapshots.npz"), g, stride=max(1, len(traj) // 50))
    rep.manifest += ["evolve.csv", "snapshots.npz"]


def run_energy(cfg: RunConfig, rep: RunReport, out: str):
    P = cfg.params
    g = make_grid(cfg.n, P)
    vals = []
    for d in np.linspace(-0.9, 0.9, 9):
        vals.append(en.E0(_state(kappa_d(d, g, P)), g, P))
    spread = max(vals) - min(vals)
    rep.check("E0_d_independence", spread < 1e-9, spread, 1e-9)
    if P.p == 3:
        rep.check("E0_closed_form", abs(vals[4] - 4.0 / 3.0) <= 1e-10, vals[4], {"target": 4 / 3, "abs": 1e-10})
    stat = max(stationarity_residual(d, g, P) for d in cfg.d_grid)
    rep.check("stationarity", stat <= 1e-6, stat, 1e-6)
    rng = np.random.default_rng(cfg.seed)
    results = []
    trace0 = None
    prof0 = constant_profile(P)
    for k in range(cfg.n_energy_runs):
        d = float(rng.uniform(-0.5, 0.5))
        pert = random_state(g, rng, cfg.n_modes)
        pert = pert * (0.05 / norm_H(pert, g))
        init = TiltedProfile(prof0, d).state(g, cfg.s0) + pert
        ecfg = EvolveConfig(n=cfg.n, ds=cfg.ds, s0=cfg.s0, s_end=cfg.s0 + min(cfg.span, 3.0), f_enabled=False)
        traj = evolve(init, ecfg, g, P)
        tr = en.energy_trace(traj, g, P, f_enabled=False, theta_H=cfg.theta_H)
        mono = en.e0_monotonicity(tr)
        results.append({"d": d, **mono})
        rep.check(f"E0_monotone_f_off[run={k}]", mono["ok"], mono["worst_excess"], 0.0,
                  per_step_tol=en.E0_STEP_TOL)
        if trace0 is None:
            trace0 = tr
    rep.metrics["E0_runs"] = results
    trace0.to_csv(os.path.join(out, "energy.csv"))
    rep.manifest.append("energy.csv")


def _state(w):
    from .grid import StateField
    return StateField(np.asarray(w, dtype=float), np.zeros_like(w))


def trap_initial(cfg: RunConfig, prof, g, P):
    """omega* wbar(d*, ., s0) + perturbation of H-norm epsilon*, and the F1 direction."""
    tp = TiltedProfile(prof, cfg.d_star)
    rng = np.random.default_rng(cfg.seed)
    pert = random_state(g, rng, cfg.n_modes)
    pack = SpectralPack(cfg.d_star, g, P)
    if cfg.project_F0:
        pert = pert - pack.pi0(pert) * pack.F0
    pert = pert * (cfg.epsilon_star / norm_H(pert, g))
    return tp.state(g, cfg.s0) * cfg.omega_star, pert * cfg.omega_star, pack


def _final_alpha1(state, s, prof, d0, g, P, cfg):
    root = mo.solve_modulation(state, s, prof, d0, g, P, cfg.root_tol, eps_gate=None)
    pk = SpectralPack(root.d, g, P)
    q = state - TiltedProfile(prof, root.d).state(g, s)
    return pk.pi1(q)


def shoot_unstable(cfg: RunConfig, base, pert, pack, prof, g, P):
    """Coefficient c of F1 that cancels alpha1 at s0 + span (secant)."""
    ecfg = EvolveConfig(n=cfg.n, ds=cfg.ds, s0=cfg.s0, s_end=cfg.s0 + cfg.span, f_enabled=cfg.f_enabled,
                        sample_every=10 ** 9)
    om = cfg.omega_star

    def G(c):
        tr = evolve(base + pert + (om * c) * pack.F1, ecfg, g, P)
        return _final_alpha1(tr.states[-1] * om, tr.s[-1], prof, cfg.d_star, g, P, cfg)

    c0 = -pack.pi1(pert * om)
    f0 = G(c0)
    c1 = c0 + 1e-6
    f1 = G(c1)
    best = min((abs(f0), c0), (abs(f1), c1))
    history = [(c0, f0), (c1, f1)]
    for _ in range(cfg.shoot_iters):
        if f1 == f0:
            break
        c2 = c1 - f1 * (c1 - c0) / (f1 - f0)
        if c2 == c1:
            break
        c0, f0, c1 = c1, f1, c2
        f1 = G(c1)
        history.append((c1, f1))
        best = min(best, (abs(f1), c1))
        if abs(f1) < 1e-13:
            break
    return best[1], history


def run_trap(cfg: RunConfig, rep: RunReport, out: str, write: bool = True):
    P = cfg.params
    g = make_grid(cfg.n, P)
    _, prof = build_profile(P, cfg.f_enabled, tol=cfg.ode_tol)
    base, pert, pack = trap_initial(cfg, prof, g, P)
    c = 0.0
    if cfg.shoot:
        c, hist = shoot_unstable(cfg, base, pert, pack, prof, g, P)
        rep.metrics["shooting"] = {"c": c, "history": hist}
    init = base + pert + (cfg.omega_star * c) * pack.F1
    ecfg = EvolveConfig(n=cfg.n, ds=cfg.ds, s0=cfg.s0, s_end=cfg.s0 + cfg.span, f_enabled=cfg.f_enabled,
                        sample_every=cfg.sample_every)
    traj = evolve(init, ecfg, g, P)
    if cfg.omega_star == -1:
        traj.states = [-st for st in traj.states]
    mt = mo.track(traj, prof, cfg.d_star, g, P, cfg.eta1, cfg.f_enabled, cfg.root_tol, cfg.eps_gate)
    rep.check("modulation_solvable", True, len(mt), "every sample")
    a0 = np.abs(mt.column("alpha0"))
    rep.check("orthogonality_persistence", a0.max() <= 10 * cfg.root_tol, a0.max(), 10 * cfg.root_tol)
    iters = mt.column("newton_iters")
    frac = float(np.mean(iters <= 5))
    rep.check("warm_start_newton", frac >= 0.95, frac, 0.95)

    s = mt.column("s")
    qn = mt.column("q_norm_H")
    s_tail = cfg.s_tail if cfg.s_tail is not None else cfg.s0 + 0.5 * cfg.span
    aud = mo.audit_inequalities(mt, P, s_tail)
    rep.metrics["audit"] = aud
    for key in ("modulation_speed", "unstable_mode", "energy_barrier", "size_upper", "size_lower", "cross_term"):
        rep.check(f"audit_{key}", aud[key]["ok"], {k: v for k, v in aud[key].items() if k != "ok"}, "x2 slack")
    rep.check("A_le_quarter_B", aud["tail"]["A_le_B_over_4"], aud["tail"]["max_A_over_B"], 0.25,
              s_tail=s_tail)
    rep.check("f0_sandwich", aud["tail"]["f0_sandwich"], None, "1/2 f0 <= B <= 2 f0", s_tail=s_tail)

    s_fit = cfg.s0 + (1 - cfg.decay_window) * cfg.span
    rf = mo.fit_decay(s, qn, "exponential", P.a, s_lo=s_fit)
    rep.check("decay_rate_positive", rf.exponent > 0, rf.exponent, "> 0", window=rf.window)
    rep.check("decay_fit_residual", rf.residual < 0.1, rf.residual, 0.1)
    poly_ok = True
    try:
        pf = mo.fit_decay(s, qn, "polynomial", P.a, s_lo=s_tail)
        pdiag = dataclasses.asdict(pf)
    except mo.FitRejected as exc:
        poly_ok, pdiag = False, exc.diagnostics
    rep.check("polynomial_envelope", poly_ok, pdiag.get("prefactor", None), "non-increasing block maxima")
    tc = mo.theta_convergence(s, mt.column("theta"), mu=rf.exponent, a=P.a)
    d_inf = tc["d_inf"]
    C_d = abs(d_inf - cfg.d_star) / (cfg.epsilon_star * (1 - cfg.d_star ** 2))
    rep.metrics["decay"] = {"mu_hat": rf.exponent, "residual": rf.residual, "window": rf.window,
                            "theta_inf": tc["theta_inf"], "d_inf": d_inf, "tail_bound": tc["tail_bound"],
                            "d_shift_constant": C_d}

    et = en.energy_trace(traj, g, P, cfg.f_enabled, cfg.theta_H)
    ma = en.monotonicity_audit(et, P)
    rep.metrics["lyapunov"] = ma
    rep.check("lyapunov_scan", ma["ok"], ma["theta_H"], {"scan": list(en.THETA_SCAN), "fraction": 0.99})
    bw = en.bound_window(traj, g)
    rep.metrics["bound_window"] = bw
    rep.check("bound_window_positive", bw["positive"], bw["min"], "> 0")
    if write:
        mt.to_csv(os.path.join(out, "modulation.csv"))
        et.to_csv(os.path.join(out, "energy.csv"))
        write_csv(os.path.join(out, "decay.csv"), ("s", "log_q_norm_H"), zip(s, np.log(qn)))
        rep.manifest += ["modulation.csv", "energy.csv", "decay.csv"]
    return mt, et


PIPELINES = {"profile": run_profile, "spectral": run_spectral, "evolve": run_evolve,
             "trap": run_trap, "energy": run_energy}


def run_experiment(cfg: RunConfig, out: str | None = None) -> RunReport:
    """Run one pipeline into `out`; module errors end up in the report."""
    from .errors import LabError
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    rep = RunReport(config=cfg.as_dict())
    t0 = time.perf_counter()
    try:
        PIPELINES[cfg.kind](cfg, rep, out)
        rep.status = "ok" if rep.all_passed else "checks_failed"
    except (LabError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rep.status = "numeric_error"
        rep.error = f"{type(exc).__name__}: {exc}"
        log.error("%s", rep.error)
    rep.wall_clock_s = time.perf_counter() - t0
    emit_report(rep, out)
    return rep


def emit_report(rep: RunReport, out: str):
    if "report.json" not in rep.manifest:
        rep.manifest.append("report.json")
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=False)
        fh.write("\n")
