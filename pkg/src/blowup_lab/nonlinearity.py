"""The perturbation f(u) = |u|^{p-1}u / log^a(2+u^2), its antiderivative and
the similarity-scaled versions used at large s.

Everything at large s goes through logarithms: with sigma = 2s/(p-1),
e^{-p sigma} f(e^sigma w) = |w|^{p-1}w / Lg^a, Lg = log(2 + e^{2 sigma} w^2),
and Lg is evaluated as logaddexp(log 2, 2 sigma + 2 log|w|).

The antiderivative is handled through the scale-free quantity
    Ft(L) = F(e^L) / e^{(p+1)L} = int_0^1 u^p / log^a(2 + e^{2L} u^2) du,
tabulated on a uniform L grid (geometric in u) and continued by its
asymptotic series for large L.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import NumericError
from .grid import Params

LOG2 = np.log(2.0)
_L_LO = -12.0
_L_HI = 22.0
_DL = 0.01


def odd_power(w, p):
    """sign(w)|w|^p with |0|^p = 0."""
    w = np.asarray(w, dtype=float)
    return np.sign(w) * np.abs(w) ** p


def taylor_remainder(base, x, m, order):
    """(1+x)^m - sum_{k<order} binom(m, k) x^k, with (1+x)^m read as
    sign(1+x)|1+x|^m.

    Summed as a binomial series for |x| < 1/4, where the direct form loses
    all digits to cancellation, and directly otherwise. `base` is unused
    except for broadcasting.
    """
    x = np.broadcast_to(np.asarray(x, dtype=float), np.broadcast(base, x).shape)
    out = np.empty(x.shape)
    small = np.abs(x) < 0.25
    xs = x[small]
    coef = 1.0
    for k in range(order):
        coef *= (m - k) / (k + 1)
    term = coef * xs ** order
    acc = term.copy()
    for k in range(order, order + 60):
        term = term * (m - k) / (k + 1) * xs
        acc += term
        if not np.any(np.abs(term) > 1e-17 * np.abs(acc)):
            break
    out[small] = acc
    xl = x[~small]
    direct = odd_power(1.0 + xl, m)
    coef = 1.0
    for k in range(order):
        direct -= coef * xl ** k
        coef *= (m - k) / (k + 1)
    out[~small] = direct
    return out


def f(u, params: Params):
    u = np.asarray(u, dtype=float)
    return odd_power(u, params.p) / np.log(2.0 + u * u) ** params.a


def _log_sq(w):
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(np.abs(w))


def log_arg(w, s, params: Params):
    """log(2 + e^{4s/(p-1)} w^2) without overflow."""
    sig = 2.0 * s / (params.p - 1.0)
    return np.logaddexp(LOG2, 2.0 * sig + _log_sq(w))


def scaled_source(w, s, params: Params):
    """e^{-2ps/(p-1)} f(e^{2s/(p-1)} w)."""
    w = np.asarray(w, dtype=float)
    return odd_power(w, params.p) / log_arg(w, s, params) ** params.a


def scaled_dsource(w, s, params: Params):
    """e^{-2s} f'(e^{2s/(p-1)} w)."""
    p, a = params.p, params.a
    w = np.asarray(w, dtype=float)
    lg = log_arg(w, s, params)
    wp = np.abs(w) ** (p - 1.0)
    sig = 2.0 * s / (p - 1.0)
    # u^2/(2+u^2) written in w
    with np.errstate(over="ignore"):
        frac = 1.0 / (1.0 + 2.0 * np.exp(-2.0 * sig - _log_sq(w)))
    return p * wp / lg ** a - 2.0 * a * wp * frac / lg ** (a + 1.0)


def scaled_d2source(w, s, params: Params):
    """e^{-2(p+1)s/(p-1)} f''(e^{2s/(p-1)} w), odd in w."""
    p, a = params.p, params.a
    w = np.asarray(w, dtype=float)
    lg = log_arg(w, s, params)
    sig = 2.0 * s / (p - 1.0)
    with np.errstate(over="ignore"):
        frac = 1.0 / (1.0 + 2.0 * np.exp(-2.0 * sig - _log_sq(w)))
    # with Lg' = 2 frac / w and Lg'' = 2 frac (1 - 2 frac) / w^2
    bracket = (p * (p - 1.0) / lg ** a
               - (4.0 * a * p * frac + 2.0 * a * frac * (1.0 - 2.0 * frac)) / lg ** (a + 1.0)
               + 4.0 * a * (a + 1.0) * frac * frac / lg ** (a + 2.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sign(w) * np.abs(w) ** (p - 2.0) * bracket
    return np.where(w == 0, 0.0, out) if p >= 2 else out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
_GL_T = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def source_remainders(wb, q, s, params: Params):
    """f_hat = S(wb+q) - S(wb) - q S'(wb) and F_hat = G(wb+q) - G(wb) - q S(wb) - q^2 S'(wb)/2.

    Where |q| < wb/4 they are taken from the integral forms
    q^2 int_0^1 (1-t) S''(wb+tq) dt and q^3 int_0^1 (1-t)^2/2 S''(wb+tq) dt
    (12-point Gauss-Legendre, S'' is analytic on the segment); elsewhere
    the differences are formed directly.
    """
    wb, q = np.broadcast_arrays(np.asarray(wb, dtype=float), np.asarray(q, dtype=float))
    f_hat = np.empty(wb.shape)
    F_hat = np.empty(wb.shape)
    small = (wb > 0) & (np.abs(q) < 0.25 * wb)
    ws, qs = wb[small], q[small]
    d2 = scaled_d2source(ws[:, None] + _GL_T[None, :] * qs[:, None], s, params)
    f_hat[small] = qs ** 2 * (d2 @ (_GL_W * (1.0 - _GL_T)))
    F_hat[small] = qs ** 3 * (d2 @ (_GL_W * 0.5 * (1.0 - _GL_T) ** 2))
    big = ~small
    wl, ql = wb[big], q[big]
    S0 = scaled_source(wl, s, params)
    S1 = scaled_dsource(wl, s, params)
    f_hat[big] = scaled_source(wl + ql, s, params) - S0 - ql * S1
    F_hat[big] = scaled_G(wl + ql, s, params) - scaled_G(wl, s, params) - ql * S0 - 0.5 * ql * ql * S1
    return f_hat, F_hat


def _ft_quad(L, p, a):
    g = lambda u: u ** p / np.logaddexp(LOG2, 2.0 * L + 2.0 * np.log(u)) ** a if u > 0 else 0.0
    val, err = integrate.quad(g, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    if not np.isfinite(val) or err > 1e-10 * val:
        raise NumericError(f"antiderivative quadrature failed at L={L}")
    return val


def _ft_series(L, p, a):
    """sum_k (a)_k (2/((p+1) l))^k / ((p+1) l^a), l = 2L, optimally truncated."""
    L = np.asarray(L, dtype=float)
    ell = 2.0 * L
    x = 2.0 / ((p + 1.0) * ell)
    total = np.ones_like(L)
    term = np.ones_like(L)
    live = np.ones(L.shape, dtype=bool)
    for k in range(200):
        nxt = term * (a + k) * x
        live &= (np.abs(nxt) < np.abs(term)) & (np.abs(nxt) > 1e-18 * np.abs(total))
        if not live.any():
            break
        total = np.where(live, total + nxt, total)
        term = np.where(live, nxt, term)
    return total * ell ** (-a) / (p + 1.0)


@lru_cache(maxsize=16)
def _ft_table(p: float, a: float):
    Ls = np.arange(_L_LO, _L_HI + 0.5 * _DL, _DL)
    vals = np.array([_ft_quad(L, p, a) for L in Ls])
    return CubicSpline(Ls, np.log(vals))


def F_tilde(L, params: Params):
    """F(e^L)/e^{(p+1)L} for any real L (vectorized)."""
    p, a = params.p, params.a
    L = np.asarray(L, dtype=float)
    out = np.empty_like(L)
    lo = L < _L_LO
    hi = L > _L_HI
    mid = ~(lo | hi)
    if lo.any():
        e2 = np.exp(2.0 * L[lo])
        out[lo] = (1.0 / (p + 1.0) - a * e2 / (2.0 * LOG2 * (p + 3.0))) / LOG2 ** a
    if mid.any():
        out[mid] = np.exp(_ft_table(p, a)(L[mid]))
    if hi.any():
        out[hi] = _ft_series(L[hi], p, a)
    return out if out.ndim else float(out)


def antiderivative_F(u, params: Params):
    """F(u) = int_0^u f, an even function of u."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        L = np.log(np.abs(u))
    out = np.where(u == 0, 0.0, np.abs(u) ** (params.p + 1.0) * F_tilde(np.where(u == 0, 0.0, L), params))
    return out if out.ndim else float(out)


def scaled_G(w, s, params: Params):
    """e^{-2(p+1)s/(p-1)} F(e^{2s/(p-1)} w)."""
    w = np.asarray(w, dtype=float)
    sig = 2.0 * s / (params.p - 1.0)
    nz = w != 0
    L = np.where(nz, 0.5 * _log_sq(np.where(nz, w, 1.0)) + sig, 0.0)
    return np.where(nz, np.abs(w) ** (params.p + 1.0) * F_tilde(L, params), 0.0)
