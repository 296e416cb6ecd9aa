"""Modulation d(s) by orthogonality to the zero mode, the decomposition of
q = w - wbar(d, ., s) into (alpha1, alpha0, alpha_-), the (A, B, f0)
bookkeeping, audits of the differential inequalities and decay fits."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .errors import FitRejected, InvalidArgument, ModulationFailure, NoLimit, ParameterSaturation
from .evolve import eval_perturbation_terms
from .grid import Params, StateField, WeightedGrid, norm_H
from .profile import PhiProfile, TiltedProfile
from .spectral import SpectralPack, inner_upsilon, project

D_SATURATION = 0.9999
THETA_MAX = float(np.arctanh(D_SATURATION))
ROOT_TOL = 1e-11
DEFAULT_ETA1 = 0.05
DEFAULT_EPS_GATE = 0.5
MODULATION_COLUMNS = ("s", "d", "theta", "alpha1", "alpha_minus", "A", "B", "f0", "q_norm_H")


class PackCache:
    """SpectralPack per d, keyed on the exact float; small LRU."""

    def __init__(self, grid: WeightedGrid, params: Params, size: int = 32):
        self.grid, self.params, self.size = grid, params, size
        self._store = {}

    def __call__(self, d: float) -> SpectralPack:
        d = float(d)
        pk = self._store.pop(d, None)
        if pk is None:
            pk = SpectralPack(d, self.grid, self.params)
        self._store[d] = pk
        if len(self._store) > self.size:
            self._store.pop(next(iter(self._store)))
        return pk


def modulation_function(state: StateField, d: float, s: float, profile: PhiProfile,
                        grid: WeightedGrid, pack_factory) -> float:
    """Phi(v, d, s) = Upsilon(v - wbar(d, ., s), W0^d)."""
    q = state - TiltedProfile(profile, d).state(grid, s)
    return inner_upsilon(pack_factory(d).W0, q, grid)


@dataclass
class RootResult:
    d: float
    theta: float
    residual: float
    iterations: int
    dphi_dtheta: list = field(default_factory=list)
    method: str = "newton"


def solve_modulation(state: StateField, s: float, profile: PhiProfile, d_init: float,
                     grid: WeightedGrid, params: Params | None = None, tol: float = ROOT_TOL,
                     pack_factory=None, eps_gate: float | None = DEFAULT_EPS_GATE,
                     max_iter: int = 30, polish: bool = True) -> RootResult:
    """Root of theta -> Phi(state, tanh theta, s), warm-started at artanh(d_init).

    Newton with a forward-difference slope and step halving; if that stalls,
    a bracket is grown around the start and handed to brentq.
    """
    params = params or grid.params
    if not abs(d_init) < 1:
        raise InvalidArgument("|d_init| must be < 1")
    pack_factory = pack_factory or PackCache(grid, params)
    if eps_gate is not None:
        dist = norm_H(state - TiltedProfile(profile, d_init).state(grid, s), grid)
        if dist > eps_gate:
            raise ModulationFailure(f"state is {dist:.3g} away from wbar(d_init) (gate {eps_gate})")

    def Psi(th):
        if abs(th) > THETA_MAX:
            raise ParameterSaturation(f"|d| reached {np.tanh(abs(th)):.6f}")
        return modulation_function(state, float(np.tanh(th)), s, profile, grid, pack_factory)

    th = float(np.arctanh(d_init))
    val = Psi(th)
    slopes = []
    it = 0
    h = 1e-6
    while abs(val) >= tol and it < max_iter:
        it += 1
        der = (Psi(th + h) - val) / h
        slopes.append(der)
        if not (np.isfinite(der) and der > 0):
            break
        step = -val / der
        for _ in range(30):
            th_new = th + step
            if abs(th_new) > THETA_MAX:
                raise ParameterSaturation(f"|d| would exceed {D_SATURATION}")
            v_new = Psi(th_new)
            if abs(v_new) < abs(val):
                break
            step *= 0.5
        else:
            break
        th, val = th_new, v_new
    if abs(val) < tol:
        if polish and val != 0:
            # one more step so that theta tracks Phi below tol instead of
            # sticking at the warm start; kept only if it lowers |Phi|
            der = (Psi(th + h) - val) / h
            if np.isfinite(der) and der > 0 and abs(th - val / der) <= THETA_MAX:
                v_new = Psi(th - val / der)
                if abs(v_new) < abs(val):
                    th, val = th - val / der, v_new
                    it += 1
        return RootResult(float(np.tanh(th)), th, float(val), it, slopes)
    return _bracket_solve(Psi, float(np.arctanh(d_init)), tol, it, slopes)


def _bracket_solve(Psi, th0, tol, it, slopes):
    lo, hi = th0 - 1e-3, th0 + 1e-3
    flo, fhi = Psi(lo), Psi(hi)
    width = 1e-3
    while np.sign(flo) == np.sign(fhi):
        width *= 2
        if width > 2 * THETA_MAX:
            raise ModulationFailure("no sign change of Phi in the expanded bracket")
        lo, hi = max(th0 - width, -THETA_MAX), min(th0 + width, THETA_MAX)
        flo, fhi = Psi(lo), Psi(hi)
    th, res = optimize.brentq(Psi, lo, hi, xtol=1e-15, rtol=4e-16, full_output=True)
    val = Psi(th)
    if abs(val) >= tol:
        raise ModulationFailure(f"bracketed root leaves |Phi| = {abs(val):.3e}")
    return RootResult(float(np.tanh(th)), float(th), float(val), it + res.iterations, slopes, "brentq")


@dataclass
class ModulationPoint:
    s: float
    d: float
    theta: float
    alpha1: float
    alpha0: float
    alpha_minus: float
    A: float
    B: float
    R_minus: float
    f0: float
    q_norm_H: float
    q1q2: float
    newton_iters: int


def decompose_point(state: StateField, s: float, d: float, profile: PhiProfile, pack_factory,
                    grid: WeightedGrid, params: Params | None = None, eta1: float = DEFAULT_ETA1,
                    f_enabled: bool = True, newton_iters: int = 0) -> ModulationPoint:
    params = params or grid.params
    tp = TiltedProfile(profile, d)
    q = state - tp.state(grid, s)
    dec = project(q, pack_factory(d), grid)
    terms = eval_perturbation_terms(q.w1, tp, s, grid, params, f_enabled)
    R = -grid.integrate(terms["H"]) - grid.integrate(terms["F_hat"])
    B = dec.alpha_minus ** 2 + 2 * R
    q1q2 = grid.integrate(q.w1 * q.w2)
    return ModulationPoint(float(s), float(d), float(np.arctanh(d)), float(dec.alpha1),
                           float(dec.alpha0), float(dec.alpha_minus), float(dec.alpha1 ** 2),
                           float(B), float(R), float(B + eta1 * q1q2), norm_H(q, grid),
                           float(q1q2), int(newton_iters))


@dataclass
class ModulationTrace:
    points: list
    eta1: float = DEFAULT_ETA1

    def __len__(self):
        return len(self.points)

    def column(self, name):
        return np.array([getattr(pt, name) for pt in self.points], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(MODULATION_COLUMNS)
            for pt in self.points:
                row = asdict(pt)
                wr.writerow([f"{row[c]:.17g}" for c in MODULATION_COLUMNS])


def track(trajectory, profile: PhiProfile, d0: float, grid: WeightedGrid, params: Params | None = None,
          eta1: float = DEFAULT_ETA1, f_enabled: bool = True, tol: float = ROOT_TOL,
          eps_gate: float | None = DEFAULT_EPS_GATE) -> ModulationTrace:
    """Modulate every sample of a trajectory, warm-starting from the previous d."""
    params = params or grid.params
    packs = PackCache(grid, params)
    d = d0
    pts = []
    for s, st in zip(trajectory.s, trajectory.states):
        root = solve_modulation(st, s, profile, d, grid, params, tol, packs, eps_gate)
        d = root.d
        pts.append(decompose_point(st, s, d, profile, packs, grid, params, eta1, f_enabled,
                                   root.iterations))
    return ModulationTrace(pts, eta1)


def _smallest_constant(lhs, rhs_unit):
    """Smallest C >= 0 with lhs <= C rhs_unit; points with lhs == 0 are free."""
    lhs = np.asarray(lhs, dtype=float)
    rhs_unit = np.asarray(rhs_unit, dtype=float)
    need = lhs > 0
    if not need.any():
        return 0.0
    if np.any(rhs_unit[need] <= 0):
        return float("inf")
    return float(np.max(lhs[need] / rhs_unit[need]))


def _fit_validate(lhs, rhs_unit, half, slack=2.0):
    C = _smallest_constant(lhs[:half], rhs_unit[:half])
    bound = slack * C * rhs_unit[half:]
    ok = bool(np.all(lhs[half:] <= bound + 1e-300)) if np.isfinite(C) else False
    worst = _smallest_constant(lhs[half:], rhs_unit[half:])
    return {"C_fit": C, "C_validation": worst, "slack": slack, "ok": ok}


def _fit_two_constants(lhs, u1, u2, half, slack=2.0):
    """(c, C) >= 0 with lhs <= c u1 + C u2 on the fit half, minimizing the mean bound.

    For fixed c the best C is max((lhs - c u1)/u2)^+, and the mean bound is
    convex piecewise linear in c, so the optimum sits at c = 0 or at one of
    the ratios lhs/u1.
    """
    l, a, b = lhs[:half], u1[:half], u2[:half]
    if np.all(l <= 0):
        c = C = 0.0
    else:
        if np.any(b <= 0):
            return {"c_fit": float("inf"), "C_fit": float("inf"), "slack": slack, "ok": False}
        cands = np.concatenate([[0.0], (l / np.where(a > 0, a, np.inf))[a > 0]])
        cands = cands[np.isfinite(cands) & (cands >= 0)]
        Cs = np.array([max(float(np.max((l - cc * a) / b)), 0.0) for cc in cands])
        cost = cands * a.mean() + Cs * b.mean()
        k = int(np.argmin(cost))
        c, C = float(cands[k]), float(Cs[k])
    bound = slack * (c * u1[half:] + C * u2[half:])
    return {"c_fit": c, "C_fit": C, "slack": slack, "ok": bool(np.all(lhs[half:] <= bound + 1e-300))}


Q_FLOOR = 1e-6


def audit_inequalities(trace: ModulationTrace, params: Params, s_tail: float | None = None,
                       q_floor: float = Q_FLOOR) -> dict:
    """Fit-on-half, validate-on-half audits and the literal tail checks.

    The fitted audits use interior samples with ||q||_H >= q_floor: below
    it the differenced alpha1 and theta sit at their round-off level
    (~1e-14 for |w| ~ 1 and the default sample spacing) while the
    quadratic right sides keep shrinking. The tail checks use every sample.
    """
    if len(trace) < 20:
        raise InvalidArgument("need at least 20 trace points")
    s = trace.column("s")
    th = trace.column("theta")
    a1 = trace.column("alpha1")
    am = trace.column("alpha_minus")
    A, B, f0 = trace.column("A"), trace.column("B"), trace.column("f0")
    qn2 = trace.column("q_norm_H") ** 2
    q1q2 = trace.column("q1q2")
    a = params.a
    X = A + am ** 2
    # resolved interior points for the centered differences
    sl = np.zeros(s.size, dtype=bool)
    sl[1:-1] = True
    resolved = sl & (qn2 >= q_floor ** 2)
    # a run that never leaves the floor (q = 0 up to round-off) is audited as is
    if resolved.sum() >= 20:
        sl = resolved
    dth = np.gradient(th, s)
    da1 = np.gradient(a1, s)
    # stride-halving check: the same derivatives from every other sample
    dth2 = np.interp(s, s[::2], np.gradient(th[::2], s[::2]))
    da12 = np.interp(s, s[::2], np.gradient(a1[::2], s[::2]))
    unit = X + np.sqrt(X) / s ** a
    half = int(sl.sum()) // 2
    out = {
        "modulation_speed": _fit_validate(np.abs(dth)[sl], unit[sl], half),
        "unstable_mode": _fit_validate(np.abs(da1 - a1)[sl], unit[sl], half),
        "energy_barrier": _fit_two_constants(A[sl], (am ** 2)[sl], (s ** (-(a + 1) / 2))[sl], half),
        "size_upper": _fit_validate(qn2[sl], (A + B)[sl], half),
        "size_lower": _fit_validate((A + B)[sl], qn2[sl], half),
        "cross_term": _fit_validate(np.abs(q1q2)[sl], (A + B)[sl], half),
    }

    def rel(u, v):
        u, v = u[sl], v[sl]
        big = np.abs(u) > 1e-3 * np.abs(u).max()
        if not big.any():
            return 0.0
        return float(np.median(np.abs(u - v)[big] / np.abs(u)[big]))

    out["stride_check"] = {"theta_prime": rel(dth, dth2), "alpha1_prime": rel(da1, da12)}
    out["fit_points"] = {"count": int(sl.sum()), "resolved": int(resolved.sum()), "q_floor": q_floor}
    if s_tail is None:
        s_tail = s[0] + 0.5 * (s[-1] - s[0])
    tail = s >= s_tail
    out["tail"] = {
        "s_tail": float(s_tail),
        "points": int(tail.sum()),
        "A_le_B_over_4": bool(np.all(A[tail] <= 0.25 * B[tail])),
        "f0_sandwich": bool(np.all((0.5 * f0[tail] <= B[tail]) & (B[tail] <= 2 * f0[tail]))),
        "max_A_over_B": float(np.max(A[tail] / np.where(B[tail] > 0, B[tail], np.nan)))
        if np.any(B[tail] > 0) else 0.0,
    }
    return out


@dataclass
class RateFit:
    kind: str
    exponent: float
    prefactor: float
    window: tuple
    residual: float
    diagnostics: dict = field(default_factory=dict)


def fit_decay(s, qnorm, mode: str = "exponential", a: float = 2.0, s_lo: float | None = None,
              n_blocks: int = 6, block_tol: float = 0.05) -> RateFit:
    """Exponential: least squares of log ||q|| against s, residual relative to the signal.
    Polynomial: block maxima of s^{(a+1)/4} ||q|| must not increase (within block_tol)."""
    s = np.asarray(s, dtype=float)
    qn = np.asarray(qnorm, dtype=float)
    if s_lo is not None:
        keep = s >= s_lo
        s, qn = s[keep], qn[keep]
    if s.size < 3:
        raise InvalidArgument("need at least 3 samples in the window")
    window = (float(s[0]), float(s[-1]))
    if mode == "exponential":
        if np.any(qn <= 0):
            raise FitRejected("non-positive norm in the window", {"min": float(qn.min())})
        slope, icpt = np.polyfit(s, np.log(qn), 1)
        model = np.exp(icpt + slope * s)
        resid = float(np.sqrt(np.mean((qn - model) ** 2)) / np.sqrt(np.mean(qn ** 2)))
        log_rms = float(np.sqrt(np.mean((np.log(qn) - np.log(model)) ** 2)))
        if not slope < 0:
            raise FitRejected("the norm does not decay", {"slope": float(slope), "residual": resid})
        return RateFit("exponential", float(-slope), float(np.exp(icpt)), window, resid,
                       {"log_rms": log_rms})
    if mode == "polynomial":
        e = (a + 1) / 4
        g = s ** e * qn
        blocks = np.array_split(np.arange(s.size), n_blocks)
        bmax = np.array([g[b].max() for b in blocks if b.size])
        rises = bmax[1:] / bmax[:-1] - 1
        diag = {"block_max": bmax.tolist(), "sup": float(g.max())}
        if np.any(rises > block_tol):
            raise FitRejected("s^{(a+1)/4} ||q|| has a rising envelope", diag)
        return RateFit("polynomial-bound", float(e), float(g.max()), window,
                       float(max(rises.max(), 0.0)) if rises.size else 0.0, diag)
    raise InvalidArgument(f"unknown mode {mode!r}")


def theta_convergence(s, theta, mu: float | None = None, a: float = 2.0, osc_tol: float = 1e-10) -> dict:
    """theta_inf by Aitken extrapolation on three equally spaced tail samples."""
    s = np.asarray(s, dtype=float)
    th = np.asarray(theta, dtype=float)
    if th.size < 3:
        raise InvalidArgument("need at least 3 samples")
    m = max(1, (th.size - 1) // 4)
    t0, t1, t2 = th[-1 - 2 * m], th[-1 - m], th[-1]
    d1, d2 = t1 - t0, t2 - t1
    scale = max(abs(t2), 1.0)
    if abs(d1) <= osc_tol * scale and abs(d2) <= osc_tol * scale:
        th_inf = t2
    elif d1 * d2 < 0 and abs(d2) > osc_tol * scale:
        raise NoLimit(f"theta oscillates on the tail (increments {d1:.3e}, {d2:.3e})")
    else:
        den = d2 - d1
        th_inf = t2 - d2 * d2 / den if abs(den) > 0 and abs(d2) < abs(d1) else t2
    dev = np.abs(th - th_inf)
    if mu is not None:
        weight = np.exp(0.5 * mu * s)
        regime = "exponential"
    else:
        weight = s ** ((a + 1) / 2)
        regime = "polynomial"
    tail = s >= s[th.size // 2]
    return {"theta_inf": float(th_inf), "d_inf": float(np.tanh(th_inf)), "regime": regime,
            "tail_bound": float(np.max(dev[tail] * weight[tail])), "deviation": dev}
