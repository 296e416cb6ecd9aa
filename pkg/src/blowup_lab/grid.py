"""Weighted geometry of (-1, 1): Gauss-Jacobi quadrature, barycentric
differentiation, weighted norms and the boost (Lorentz) map."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import InvalidArgument, NumericError, UndefinedRatio


@dataclass(frozen=True)
class Params:
    """Exponents of the nonlinearity |u|^{p-1}u / log^a(2+u^2)."""

    p: float
    a: float
    kappa0: float = field(init=False)

    def __post_init__(self):
        p, a = float(self.p), float(self.a)
        if not (np.isfinite(p) and p > 1.0):
            raise InvalidArgument(f"p must be > 1, got {self.p}")
        if not (np.isfinite(a) and a > 1.0):
            raise InvalidArgument(f"a must be > 1, got {self.a}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "kappa0", self.beta ** (1.0 / (p - 1.0)))

    @property
    def alpha(self) -> float:
        """Exponent of the weight rho = (1-y^2)^alpha."""
        return 2.0 / (self.p - 1.0)

    @property
    def beta(self) -> float:
        """Mass coefficient 2(p+1)/(p-1)^2, equal to kappa0^{p-1}."""
        return 2.0 * (self.p + 1.0) / (self.p - 1.0) ** 2

    @property
    def damping(self) -> float:
        """Coefficient (p+3)/(p-1) of the damping term."""
        return (self.p + 3.0) / (self.p - 1.0)


class StateField:
    """Pair (w1, w2) of node values: position and s-velocity."""

    __slots__ = ("w1", "w2")

    def __init__(self, w1, w2):
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        if w1.shape != w2.shape or w1.ndim != 1:
            raise InvalidArgument("components must be 1-D arrays of equal length")
        self.w1 = w1
        self.w2 = w2

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def __len__(self):
        return self.w1.size

    def __add__(self, other):
        return StateField(self.w1 + other.w1, self.w2 + other.w2)

    def __sub__(self, other):
        return StateField(self.w1 - other.w1, self.w2 - other.w2)

    def __neg__(self):
        return StateField(-self.w1, -self.w2)

    def __mul__(self, c):
        return StateField(c * self.w1, c * self.w2)

    __rmul__ = __mul__

    def copy(self):
        return StateField(self.w1.copy(), self.w2.copy())

    def stacked(self):
        return np.concatenate([self.w1, self.w2])

    @classmethod
    def from_stacked(cls, x):
        n = x.size // 2
        return cls(x[:n].copy(), x[n:].copy())

    def __repr__(self):
        return f"StateField(n={self.w1.size})"


def _bary_log_weights(x):
    """Barycentric weights as (sign, log|w|), safe for large n."""
    n = x.size
    dx = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(dx, 1.0)
    logw = -np.sum(np.log(dx), axis=1)
    sign = np.where((n - 1 - np.arange(n)) % 2 == 0, 1.0, -1.0)
    return sign, logw - logw.max()


def interp_matrix(x, sign, logw, z):
    """Rows evaluate the polynomial interpolant on nodes x at points z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    w = sign * np.exp(logw)
    diff = z[:, None] - x[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    M = w[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = np.nonzero(hit.any(axis=1))[0]
    for r in rows:
        M[r] = hit[r].astype(float)
    return M


def diff_matrix(x, sign, logw):
    """First-derivative collocation matrix (negative-sum diagonal trick)."""
    ratio = sign[None, :] * sign[:, None] * np.exp(logw[None, :] - logw[:, None])
    X = x[:, None] - x[None, :]
    np.fill_diagonal(X, 1.0)
    D = ratio / X
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def jacobi_orthonormal(kmax, alpha, z):
    """Values of the rho-orthonormal Jacobi polynomials P_0..P_kmax at z."""
    z = np.asarray(z, dtype=float)
    k = np.arange(kmax + 1)
    logh = ((2 * alpha + 1) * np.log(2.0) - np.log(2 * k + 2 * alpha + 1)
            + 2 * special.gammaln(k + alpha + 1) - special.gammaln(k + 2 * alpha + 1)
            - special.gammaln(k + 1))
    V = special.eval_jacobi(k[None, :], alpha, alpha, z[:, None])
    return V * np.exp(-0.5 * logh)[None, :]


class WeightedGrid:
    """Gauss-Jacobi collocation grid for the weight rho = (1-y^2)^alpha.

    Besides the main rule, two auxiliary rules are kept:
    a Gauss-Jacobi rule with exponent alpha-1 for integrals against
    rho/(1-y^2), and a Gauss-Legendre rule for unweighted integrals.
    Both read grid fields through the global interpolant.
    """

    def __init__(self, n: int, params: Params, n_extra: int = 40):
        self.n = int(n)
        self.params = params
        al = params.alpha
        x, wq = special.roots_jacobi(self.n, al, al)
        self.nodes = x
        self.rho_weights = wq
        self._sign, self._logw = _bary_log_weights(x)
        self.diff = diff_matrix(x, self._sign, self._logw)
        self.diff2 = self.diff @ self.diff
        self.n_extra = int(n_extra)
        self.nodes.setflags(write=False)
        self.rho_weights.setflags(write=False)
        self.diff.setflags(write=False)
        self.diff2.setflags(write=False)

    # weighted-rule companions, built on first use
    @cached_property
    def aux(self):
        """(nodes, weights, interpolation) of the rule for rho/(1-y^2)."""
        al = self.params.alpha
        z, wz = special.roots_jacobi(self.n + self.n_extra, al - 1.0, al - 1.0)
        return z, wz, interp_matrix(self.nodes, self._sign, self._logw, z)

    @cached_property
    def legendre(self):
        """(nodes, weights, interpolation, derivative) of the unweighted rule."""
        z, wz = special.roots_legendre(self.n + self.n_extra)
        M = interp_matrix(self.nodes, self._sign, self._logw, z)
        return z, wz, M, M @ self.diff

    @cached_property
    def modes(self):
        """Node values of the rho-orthonormal polynomial basis (columns)."""
        return jacobi_orthonormal(self.n - 1, self.params.alpha, self.nodes)

    @cached_property
    def aux_modes(self):
        """The same basis evaluated at the nodes of the rho/(1-y^2) rule."""
        return jacobi_orthonormal(self.n - 1, self.params.alpha, self.aux[0])

    def interpolate(self, values, z):
        return interp_matrix(self.nodes, self._sign, self._logw, z) @ np.asarray(values)

    def integrate(self, g):
        """Quadrature of g*rho over (-1, 1)."""
        return float(np.dot(self.rho_weights, g))

    def integrate_over_1my2(self, g):
        """Integral of g*rho/(1-y^2), g given at the main nodes."""
        z, wz, M = self.aux
        return float(np.dot(wz, M @ np.asarray(g)))

    def lap(self, w):
        """(1-y^2)w'' - 2(alpha+1) y w'."""
        y = self.nodes
        return (1 - y * y) * (self.diff2 @ w) - 2.0 * (self.params.alpha + 1) * y * (self.diff @ w)

    def lap_divergence(self, w):
        """Divergence form rho^{-1} (rho (1-y^2) w')' as a cross-check."""
        y = self.nodes
        al = self.params.alpha
        flux = (1 - y * y) ** (al + 1) * (self.diff @ w)
        return (self.diff @ flux) / (1 - y * y) ** al


def make_grid(n: int, params: Params) -> WeightedGrid:
    if not isinstance(params, Params):
        raise InvalidArgument("params must be a Params instance")
    if int(n) != n or n < 4:
        raise InvalidArgument(f"n must be an integer >= 4, got {n}")
    return WeightedGrid(int(n), params)


def _finite(f):
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite field values")
    return f


def norm_L2rho(f, grid: WeightedGrid) -> float:
    f = _finite(f)
    return float(np.sqrt(grid.integrate(f * f)))


def norm_H0(f, grid: WeightedGrid) -> float:
    f = _finite(f)
    df = grid.diff @ f
    y = grid.nodes
    return float(np.sqrt(grid.integrate(df * df * (1 - y * y) + f * f)))


def norm_H(q: StateField, grid: WeightedGrid) -> float:
    w1 = _finite(q.w1)
    w2 = _finite(q.w2)
    h0 = norm_H0(w1, grid)
    return float(np.sqrt(h0 * h0 + grid.integrate(w2 * w2)))


def norm_Lp1rho(f, grid: WeightedGrid, params: Params | None = None) -> float:
    params = params or grid.params
    f = _finite(f)
    q = params.p + 1.0
    return float(grid.integrate(np.abs(f) ** q) ** (1.0 / q))


def norm_L2_over_1my2(f, grid: WeightedGrid) -> float:
    f = _finite(f)
    z, wz, M = grid.aux
    fz = M @ f
    return float(np.sqrt(np.dot(wz, fz * fz)))


def integral_table(alpha: float, beta: float, d: float) -> dict:
    """I(d) = int (1-y^2)^alpha / (1+dy)^beta dy and its growth regime.

    Computed after y = tanh(t), which turns the endpoint concentration
    for |d| -> 1 into a smooth bump at t ~ log(1-|d|)/2.
    """
    if not alpha > -1:
        raise InvalidArgument("alpha must exceed -1")
    if not abs(d) < 1:
        raise InvalidArgument("|d| must be < 1")
    ad = abs(d)

    def one_plus_dtanh(t):
        # 1 + d tanh t without cancellation near tanh t = -sign(d)
        if d >= 0:
            return (1 - ad) + 2 * ad * special.expit(2 * t)
        return (1 - ad) + 2 * ad * special.expit(-2 * t)

    def g(t):
        log_sech = np.log(2.0) - abs(t) - np.log1p(np.exp(-2 * abs(t)))
        return np.exp((2 * alpha + 2) * log_sech - beta * np.log(one_plus_dtanh(t)))

    t0 = 0.0 if ad == 0 else -np.sign(d) * 0.5 * np.log(2.0 / (1 - ad))
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    v1, e1 = integrate.quad(g, -np.inf, t0, **opts)
    v2, e2 = integrate.quad(g, t0, np.inf, **opts)
    value = v1 + v2
    if not np.isfinite(value) or (e1 + e2) > 1e-8 * abs(value) + 1e-300:
        raise NumericError(f"quadrature did not converge (err {e1 + e2:.2e})")
    gap = alpha + 1 - beta
    if gap > 0:
        regime, scaled = "i", value
    elif gap == 0:
        regime = "ii"
        scaled = value / abs(np.log1p(-d * d)) if d != 0 else np.nan
    else:
        regime, scaled = "iii", value * (1 - d * d) ** (-gap)
    return {"value": value, "regime": regime, "scaled": scaled}


@dataclass
class LorentzResult:
    state: StateField
    time_offset: np.ndarray
    continuity_ratio: float


def lorentz_transform(q: StateField, d: float, grid: WeightedGrid) -> LorentzResult:
    """Boost of a slice w(., S) by d.

    W(Y) = (1-d^2)^{1/(p-1)} (1+dY)^{-2/(p-1)} w(y), y = (Y+d)/(1+dY).
    The map also shifts time; `time_offset` holds the per-node shift
    -log((1+dY)/sqrt(1-d^2)) which a caller with access to w at other
    times must apply (s_source = S + time_offset).
    """
    if not abs(d) < 1:
        raise InvalidArgument("|d| must be < 1")
    p = grid.params.p
    Y = grid.nodes
    y = (Y + d) / (1 + d * Y)
    pref = (1 - d * d) ** (1 / (p - 1)) * (1 + d * Y) ** (-2 / (p - 1))
    M = interp_matrix(grid.nodes, grid._sign, grid._logw, y)
    out = StateField(pref * (M @ q.w1), pref * (M @ q.w2))
    offset = -np.log((1 + d * Y) / np.sqrt(1 - d * d))
    n0 = norm_H0(q.w1, grid)
    ratio = norm_H0(out.w1, grid) / n0 if n0 > 0 else np.nan
    return LorentzResult(out, offset, ratio)


def similarity_map(x0, T0, x, t):
    """(x, t) -> (y, s) with y = (x-x0)/(T0-t), s = -log(T0-t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= T0):
        raise InvalidArgument("t must be < T0")
    tau = T0 - t
    return (np.asarray(x) - x0) / tau, -np.log(tau)


def similarity_inverse(x0, T0, y, s):
    tau = np.exp(-np.asarray(s, dtype=float))
    return x0 + np.asarray(y) * tau, T0 - tau


def scale_u_to_w(u_value, T0, t, params: Params):
    t = np.asarray(t, dtype=float)
    if np.any(t >= T0):
        raise InvalidArgument("t must be < T0")
    return (T0 - t) ** (2 / (params.p - 1)) * np.asarray(u_value)


def hardy_sobolev_audit(f, grid: WeightedGrid, params: Params | None = None) -> dict:
    """Hardy-Sobolev type norms of f, raw and relative to ||f||_{H0}."""
    params = params or grid.params
    h0 = norm_H0(f, grid)
    if h0 == 0:
        raise UndefinedRatio("||f||_H0 = 0")
    y = grid.nodes
    norms = {
        "L2_rho_over_1my2": norm_L2_over_1my2(f, grid),
        "Lp1_rho": norm_Lp1rho(f, grid, params),
        "Linf_weighted": float(np.max(np.abs(f) * (1 - y * y) ** (1 / (params.p - 1)))),
    }
    return {"H0": h0, "norms": norms, "ratios": {k: v / h0 for k, v in norms.items()}}
