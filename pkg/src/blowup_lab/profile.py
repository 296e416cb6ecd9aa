"""Blow-up ODE phi'' = phi^p + f(phi), its similarity form phi(s), and the
tilted profile w1bar(d, y, s) = kappa(d, y) phi(s - log((1+dy)/sqrt(1-d^2))) / kappa0.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import nonlinearity as nl
from .errors import DomainError, FitRejected, InvalidArgument, NoBlowupDetected, NotApplicable
from .grid import Params, WeightedGrid

log = logging.getLogger(__name__)

PHI_STOP = 1e8
Z_STOP = 1e-6
PROFILE_FORMAT = "blowup_lab.phi_profile/1"

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _ratio_f(phi, params, f_enabled):
    """f(phi)/phi^p for phi > 0."""
    if not f_enabled:
        return 0.0
    return 1.0 / np.log(2.0 + phi * phi) ** params.a


def f_threshold(params: Params) -> float:
    """Smallest A with |f(xi)| <= xi^p/2 for every xi >= A."""
    # f/xi^p = log^{-a}(2+xi^2) is decreasing, so the bound is an equation
    return float(np.sqrt(max(np.exp(2.0 ** (1.0 / params.a)) - 2.0, 0.0)))


def default_initial_data(params: Params, f_enabled: bool = True):
    """A = max(10 kappa0, f-threshold), B chosen so the first integral is 0."""
    A = max(10.0 * params.kappa0, f_threshold(params))
    FA = nl.antiderivative_F(A, params) if f_enabled else 0.0
    B = np.sqrt(2.0 * A ** (params.p + 1) / (params.p + 1) + 2.0 * FA)
    return A, float(B)


@dataclass
class OdeTrajectory:
    """Samples of phi0(t) and phi0'(t) up to phi0 = PHI_STOP.

    Internally the state is (z, zeta) with z = phi^{-(p-1)/2} and
    zeta = phi' phi^{-(p+1)/2}; z vanishes linearly at the blow-up time.
    """

    t_samples: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    T_blowup: float
    M0: float
    f_enabled: bool
    params: Params
    A: float
    B: float
    n_steps: int = 0
    n_rejected: int = 0
    first_integral_drift: float = 0.0
    _spl: object = field(default=None, repr=False)

    @property
    def kap(self):
        return 0.5 * (self.params.p - 1.0)

    @property
    def phi(self):
        return self.z ** (-1.0 / self.kap)

    @property
    def dphi(self):
        return self.zeta * self.phi ** (0.5 * (self.params.p + 1.0))

    def _zspline(self):
        if self._spl is None:
            rhs = np.array([_rhs(0.0, np.array([z, q]), self.params, self.f_enabled)
                            for z, q in zip(self.z, self.zeta)])
            self._spl = (CubicHermiteSpline(self.t_samples, self.z, rhs[:, 0]),
                         CubicHermiteSpline(self.t_samples, self.zeta, rhs[:, 1]))
        return self._spl

    def phi_at(self, t):
        """Dense value of phi0 at t in [0, last sample]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_samples[-1]):
            raise DomainError("t outside the integrated range")
        return self._zspline()[0](t) ** (-1.0 / self.kap)

    def dphi_at(self, t):
        zs, qs = self._zspline()
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_samples[-1]):
            raise DomainError("t outside the integrated range")
        return qs(t) * zs(t) ** (-(self.params.p + 1.0) / (2.0 * self.kap))

    def first_integral(self):
        """dphi^2 - 2 phi^{p+1}/(p+1) - 2F(phi) at every sample."""
        p = self.params.p
        phi = self.phi
        Ft = nl.F_tilde(np.log(phi), self.params) if self.f_enabled else 0.0
        scaled = self.zeta ** 2 - 2.0 / (p + 1.0) - 2.0 * Ft
        return scaled * phi ** (p + 1.0)


def _rhs(t, y, params, f_enabled):
    z, q = y
    p = params.p
    kap = 0.5 * (p - 1.0)
    phi = z ** (-1.0 / kap)
    r = _ratio_f(phi, params, f_enabled)
    return np.array([-kap * q, (1.0 + r - 0.5 * (p + 1.0) * q * q) / z])


def solve_ode(A: float, B: float, params: Params, f_enabled: bool = True,
              tol: float = 1e-11, max_steps: int = 200000) -> OdeTrajectory:
    """Integrate phi'' = phi^p + f(phi), phi(0)=A, phi'(0)=B to blow-up.

    Dormand-Prince 5(4) with a PI step controller, run on the regularized
    pair (z, zeta). Stops once phi >= 1e8 and z <= 1e-6 (or once T - t is
    below the resolution of t), then extrapolates z linearly to 0.
    """
    p = params.p
    if not (A > 0 and B > 0):
        raise InvalidArgument("A and B must be positive")
    if B * B - A ** (p + 1) / (p + 1) < 0:
        raise InvalidArgument("admissibility B^2 - A^{p+1}/(p+1) >= 0 violated")
    if f_enabled and A < f_threshold(params):
        warnings.warn(f"A={A} is below the f-threshold {f_threshold(params):.4g}; "
                      "monotonicity still holds since f > 0 for u > 0", stacklevel=2)
    kap = 0.5 * (p - 1.0)
    FA = nl.antiderivative_F(A, params) if f_enabled else 0.0
    M0 = B * B - 2.0 * A ** (p + 1) / (p + 1) - 2.0 * FA
    y = np.array([A ** (-kap), B * A ** (-0.5 * (p + 1))])
    # for p < 3, phi = 1e8 still leaves z = phi^{-kap} large; also require z small
    z_stop = min(PHI_STOP ** (-kap), Z_STOP)
    t = 0.0
    # initial step from the linear time scale of z
    h = 1e-3 * y[0] / (kap * y[1])
    ts, zs, qs = [t], [y[0]], [y[1]]
    err_old = 1.0
    rhs = lambda tt, yy: _rhs(tt, yy, params, f_enabled)
    k1 = rhs(t, y)
    n_acc = n_rej = 0
    while y[0] > z_stop:
        # for large p the remaining time drops below the resolution of t first
        if t > 0 and y[0] / (kap * y[1]) < 1e-12 * t:
            break
        if n_acc + n_rej > max_steps:
            raise NoBlowupDetected("step budget exhausted before the blow-up threshold")
        if t + h == t:
            raise NoBlowupDetected(f"step size underflow at t={t:.6g}")
        # never step past the zero of z
        h = min(h, 0.9 * y[0] / (kap * max(y[1], 1e-300)))
        K = [k1]
        for i in range(1, 7):
            yi = y + h * sum(a * k for a, k in zip(_A[i], K))
            if yi[0] <= 0:
                break
            K.append(rhs(t + _C[i] * h, yi))
        if len(K) < 7:
            h *= 0.5
            n_rej += 1
            continue
        K = np.array(K)
        y_new = y + h * (_B5 @ K)
        err_vec = h * (_E @ K)
        sc = tol * (np.abs(y) + np.abs(y_new)) * 0.5 + 1e-300
        err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))
        if err <= 1.0:
            t += h
            y = y_new
            k1 = K[6]
            ts.append(t)
            zs.append(y[0])
            qs.append(y[1])
            n_acc += 1
            fac = 0.9 * max(err, 1e-10) ** (-0.7 / 5) * err_old ** (0.4 / 5)
            h *= min(5.0, max(0.2, fac))
            err_old = max(err, 1e-4)
        else:
            n_rej += 1
            h *= max(0.2, 0.9 * err ** (-1 / 5))
    T = t + y[0] / (kap * y[1])
    traj = OdeTrajectory(np.array(ts), np.array(zs), np.array(qs), float(T), float(M0),
                         bool(f_enabled), params, float(A), float(B), n_acc, n_rej)
    fi = traj.first_integral()
    scale = np.maximum(traj.dphi ** 2, max(abs(M0), 1e-300))
    traj.first_integral_drift = float(np.max(np.abs(fi - M0) / scale))
    return traj


class PhiProfile:
    """phi(s) on [s_min, s_max] from a table (s, phi - kappa0, phi').

    The table is built from the first integral of the blow-up ODE written
    in the scale-free variable L = log phi0 (see `_profile_table`), which
    resolves s far beyond the t-trajectory (T - t underflows for s > ~36).
    """

    def __init__(self, s, dev, dphi, params: Params, M0: float, f_enabled: bool,
                 meta: dict | None = None):
        self.params = params
        self.kappa0 = params.kappa0
        self.M0 = float(M0)
        self.f_enabled = bool(f_enabled)
        self.s_table = np.asarray(s, dtype=float)
        self.dev_table = np.asarray(dev, dtype=float)
        self.dphi_table = np.asarray(dphi, dtype=float)
        self.s_min = float(self.s_table[0])
        self.s_max = float(self.s_table[-1])
        self.meta = meta or {}
        self._spl = CubicHermiteSpline(self.s_table, self.dev_table, self.dphi_table)

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < self.s_min - 1e-12) or np.any(s > self.s_max + 1e-12) or not np.all(np.isfinite(s)):
            raise DomainError(f"s outside profile domain [{self.s_min:.4g}, {self.s_max:.4g}]")
        return np.clip(s, self.s_min, self.s_max)

    def dev(self, s):
        """phi(s) - kappa0, kept separately to avoid cancellation."""
        return self._spl(self._check(s))

    def phi(self, s):
        return self.kappa0 + self.dev(s)

    __call__ = phi

    def dphi(self, s):
        return self._spl(self._check(s), 1)

    def rel_power_m1(self, s):
        """(phi/kappa0)^{p-1} - 1."""
        return np.expm1((self.params.p - 1.0) * np.log1p(self.dev(s) / self.kappa0))

    def ddphi(self, s):
        """phi'' from the ODE -c phi' - beta phi + phi^p + scaled f."""
        P = self.params
        s = self._check(s)
        phi = self.kappa0 + self._spl(s)
        out = -P.damping * self._spl(s, 1) + P.beta * phi * self.rel_power_m1(s)
        if self.f_enabled:
            out = out + nl.scaled_source(phi, s, P)
        return out

    def ode76_residual(self, s):
        """phi' + 2phi/(p-1) - sqrt(2phi^{p+1}/(p+1) + 2G + M0 e^{-(p+1)s/kap})."""
        P = self.params
        s = np.asarray(s, dtype=float)
        phi = self.phi(s)
        kap = 0.5 * (P.p - 1.0)
        G = nl.scaled_G(phi, s, P) if self.f_enabled else 0.0
        X = 2 * phi ** (P.p + 1) / (P.p + 1) + 2 * G + self.M0 * np.exp(-(P.p + 1) * s / kap)
        return self.dphi(s) + phi / kap - np.sqrt(X)

    def extend(self, s_max: float) -> "PhiProfile":
        """Rebuild with a larger s_max (recomputes the table further toward T)."""
        traj_like = self.meta.get("source")
        if traj_like is None:
            raise DomainError("profile has no source trajectory to extend")
        return phi_profile(traj_like, self.params, s_max=s_max)

    def to_json(self) -> str:
        P = self.params
        return json.dumps({
            "format": PROFILE_FORMAT, "p": P.p, "a": P.a, "M0": self.M0,
            "f_enabled": self.f_enabled, "s": self.s_table.tolist(),
            "dev": self.dev_table.tolist(), "dphi": self.dphi_table.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "PhiProfile":
        d = json.loads(text)
        if d.get("format") != PROFILE_FORMAT:
            raise InvalidArgument("unknown profile format")
        return cls(d["s"], d["dev"], d["dphi"], Params(d["p"], d["a"]), d["M0"], d["f_enabled"])


def _profile_table(params: Params, L0: float, M0: float, f_enabled: bool,
                   s_max: float, ds: float = 0.02):
    """Similarity profile from the first integral.

    With L = log phi0 and g(L) = phi0' phi0^{-(p+1)/2}
    (g^2 = 2/(p+1) + 2Ft(L) + M0 e^{-(p+1)L}), the time to blow-up is
    tau = int_L^inf e^{-kap u}/g du. Writing tau = tau0(L)(1 + delta(L))
    with tau0 the f-free value gives
        phi = kappa0 (1+delta)^{1/kap},  s = kap L + log(kap g0) - log1p(delta),
    delta(L) = kap g0 int_0^inf e^{-kap v} h(L+v) dv,  h = 1/g - 1/g0.
    The integral is accumulated backwards from a far cutoff, where the
    factor e^{-kap v} makes each panel recursion contractive.
    """
    p = params.p
    kap = 0.5 * (p - 1.0)
    g0 = np.sqrt(2.0 / (p + 1.0))
    dL = ds / kap
    L_need = (s_max - np.log(kap * g0)) / kap + 1.0
    L_top = max(L_need, L0) + 40.0 / kap
    nL = int(np.ceil((L_top - L0) / dL))
    Ls = L0 + dL * np.arange(nL + 1)

    def hfun(u):
        m = M0 * np.exp(-(p + 1.0) * u)
        extra = (2.0 * nl.F_tilde(u, params) if f_enabled else 0.0) + m
        g = np.sqrt(g0 * g0 + extra)
        return -extra / (g * g0 * (g + g0))

    xg, wg = np.polynomial.legendre.leggauss(8)
    # panel integrals of e^{-kap(u - L_i)} h(u) over [L_i, L_{i+1}]
    u = Ls[:-1, None] + 0.5 * dL * (xg[None, :] + 1.0)
    panel = 0.5 * dL * np.sum(wg[None, :] * np.exp(-kap * (u - Ls[:-1, None])) * hfun(u), axis=1)
    K = np.empty(nL + 1)
    K[-1] = hfun(Ls[-1]) / kap
    decay = np.exp(-kap * dL)
    for i in range(nL - 1, -1, -1):
        K[i] = decay * K[i + 1] + panel[i]
    delta = kap * g0 * K
    s = kap * Ls + np.log(kap * g0) - np.log1p(delta)
    k0 = params.kappa0
    dev = k0 * np.expm1(np.log1p(delta) / kap)
    phi = k0 + dev
    # phi' from the first-order equation, rationalized against cancellation
    extra = (2.0 * phi ** (p + 1) * nl.F_tilde(Ls, params) if f_enabled else 0.0) \
        + M0 * np.exp(-(p + 1.0) * Ls) * phi ** (p + 1)
    num = phi * phi * (2.0 / (p + 1.0)) * params.beta * delta * (2.0 + delta) + extra
    X = 2.0 * phi ** (p + 1) / (p + 1) + extra
    dphi = num / (np.sqrt(X) + phi / kap)
    keep = s <= s_max + 2 * ds
    return s[keep], dev[keep], dphi[keep]


def phi_profile(traj: OdeTrajectory, params: Params | None = None, s_max: float = 600.0,
                ds: float = 0.02) -> PhiProfile:
    """phi(s) = e^{-2s/(p-1)} phi0(T - e^{-s}) on [-log T, s_max]."""
    params = params or traj.params
    if not np.isfinite(traj.T_blowup):
        raise InvalidArgument("trajectory has no detected blow-up")
    s, dev, dphi = _profile_table(params, np.log(traj.A), traj.M0, traj.f_enabled, s_max, ds)
    prof = PhiProfile(s, dev, dphi, params, traj.M0, traj.f_enabled,
                      meta={"source": traj, "T_blowup": traj.T_blowup})
    # the table's s_min is -log(tau(A)); it must agree with the ODE's blow-up time
    T_quad = np.exp(-prof.s_min)
    prof.meta["T_quadrature"] = float(T_quad)
    if abs(T_quad - traj.T_blowup) > 1e-6 * T_quad:
        log.warning("blow-up time mismatch: ODE %.12g vs quadrature %.12g", traj.T_blowup, T_quad)
    return prof


def trajectory_phi(traj: OdeTrajectory, s):
    """phi(s) straight from the t-trajectory (valid while T - t is resolved)."""
    s = np.asarray(s, dtype=float)
    tau = np.exp(-s)
    t = traj.T_blowup - tau
    if np.any(t < -1e-12) or np.any(t > traj.t_samples[-1]):
        raise DomainError("s outside the trajectory's resolved range")
    t = np.maximum(t, 0.0)
    z = traj._zspline()[0](t)
    return (tau / z) ** (1.0 / traj.kap)


def constant_profile(params: Params, s_min: float = 0.0, s_max: float = 600.0) -> PhiProfile:
    """The f-free profile phi = kappa0."""
    s = np.linspace(s_min, s_max, 3)
    return PhiProfile(s, np.zeros(3), np.zeros(3), params, 0.0, False)


def build_profile(params: Params, f_enabled: bool = True, s_max: float = 600.0, tol: float = 1e-11):
    A, B = default_initial_data(params, f_enabled)
    traj = solve_ode(A, B, params, f_enabled, tol)
    return traj, phi_profile(traj, params, s_max=s_max)


def c_predicted(params: Params) -> float:
    """Constant of the s^{-a} tail: kappa0 (p-1)^{a-1} / 4^a."""
    return params.kappa0 * (params.p - 1.0) ** (params.a - 1.0) / 4.0 ** params.a


def asymptotic_fit(profile: PhiProfile, s_lo: float = 50.0, s_hi: float = 500.0,
                   n_samples: int = 200) -> dict:
    """Log-log fit of kappa0 - phi(s) on [s_lo, s_hi]."""
    if not profile.f_enabled:
        raise NotApplicable("kappa0 - phi vanishes identically when f is off")
    if not (s_hi > s_lo >= 10):
        raise InvalidArgument("need s_hi > s_lo >= 10")
    P = profile.params
    s = np.geomspace(s_lo, s_hi, n_samples)
    gap = -profile.dev(s)
    if np.any(gap <= 0):
        raise FitRejected("kappa0 - phi changes sign in the window",
                          {"min_gap": float(gap.min())})
    slope, icpt = np.polyfit(np.log(s), np.log(gap), 1)
    resid = np.log(gap) - (slope * np.log(s) + icpt)
    scaled = gap * s ** P.a
    dscaled = np.abs(profile.dphi(s)) * s ** P.a
    return {
        "slope": float(slope),
        "prefactor": float(np.exp(icpt)),
        "prefactor_fixed_slope": float(scaled[-1]),
        "c_predicted": c_predicted(P),
        "fit_rms": float(np.sqrt(np.mean(resid ** 2))),
        "dphi_sa_max": float(dscaled.max()),
        "window": (float(s_lo), float(s_hi)),
    }


class TiltedProfile:
    """w1bar(d, y, s) and its s- and d-derivatives, closed forms in phi, phi', phi''."""

    def __init__(self, profile: PhiProfile, d: float):
        if not abs(d) < 1:
            raise InvalidArgument("|d| must be < 1")
        self.profile = profile
        self.d = float(d)
        self.params = profile.params

    def shift(self, y):
        d = self.d
        return -np.log((1 + d * np.asarray(y)) / np.sqrt(1 - d * d))

    def kappa(self, y):
        P, d = self.params, self.d
        y = np.asarray(y, dtype=float)
        return P.kappa0 * (1 - d * d) ** (1 / (P.p - 1)) / (1 + d * y) ** (2 / (P.p - 1))

    def dkappa_dd(self, y):
        P, d = self.params, self.d
        y = np.asarray(y, dtype=float)
        return -2.0 / (P.p - 1) * (y + d) / ((1 - d * d) * (1 + d * y)) * self.kappa(y)

    def _arg(self, y, s):
        return s + self.shift(y)

    def phi_tilde(self, y, s):
        return self.profile.phi(self._arg(y, s)) / self.params.kappa0

    def w1(self, y, s):
        return self.kappa(y) * self.phi_tilde(y, s)

    def w2(self, y, s):
        return self.kappa(y) * self.profile.dphi(self._arg(y, s)) / self.params.kappa0

    ds_w1 = w2

    def ds_w2(self, y, s):
        return self.kappa(y) * self.profile.ddphi(self._arg(y, s)) / self.params.kappa0

    def _dsig_dd(self, y):
        d = self.d
        y = np.asarray(y, dtype=float)
        return -(y + d) / ((1 + d * y) * (1 - d * d))

    def dd_w1(self, y, s):
        k0 = self.params.kappa0
        a = self._arg(y, s)
        return (self.dkappa_dd(y) * self.profile.phi(a)
                + self.kappa(y) * self.profile.dphi(a) * self._dsig_dd(y)) / k0

    def dd_w2(self, y, s):
        k0 = self.params.kappa0
        a = self._arg(y, s)
        return (self.dkappa_dd(y) * self.profile.dphi(a)
                + self.kappa(y) * self.profile.ddphi(a) * self._dsig_dd(y)) / k0

    def state(self, grid: WeightedGrid, s):
        from .grid import StateField
        y = grid.nodes
        return StateField(self.w1(y, s), self.w2(y, s))

    def dd_state(self, grid: WeightedGrid, s):
        from .grid import StateField
        y = grid.nodes
        return StateField(self.dd_w1(y, s), self.dd_w2(y, s))


def tilted_profile(profile: PhiProfile, d: float) -> TiltedProfile:
    return TiltedProfile(profile, d)


def derivative_bound_audit(tp: TiltedProfile, grid: WeightedGrid, s_list) -> dict:
    """sup_y |d_s w1bar| s^a / kappa and (1-d^2) sup_y |d_d w1bar| over s_list."""
    y = grid.nodes
    a = tp.params.a
    d = tp.d
    ds_ratio, dd_ratio = [], []
    for s in s_list:
        ds_ratio.append(float(np.max(np.abs(tp.ds_w1(y, s)) * s ** a / tp.kappa(y))))
        dd_ratio.append(float((1 - d * d) * np.max(np.abs(tp.dd_w1(y, s)))))

    def stable(v):
        v = np.asarray(v)
        if np.all(v == 0):
            return True
        return bool(v.min() > 0 and v.max() / v.min() < 2.0)

    def bounded(v):
        # weaker reading: the sequence may decay, it may not grow past 2x its first value
        v = np.asarray(v)
        return bool(np.all(v == 0) or (np.all(np.isfinite(v)) and v[0] > 0 and v.max() <= 2.0 * v[0]))

    return {"s": list(map(float, s_list)), "ds_ratio": ds_ratio, "dd_ratio": dd_ratio,
            "ds_stable": stable(ds_ratio), "dd_stable": stable(dd_ratio),
            "ds_bounded": bounded(ds_ratio), "dd_bound": float(max(dd_ratio))}
