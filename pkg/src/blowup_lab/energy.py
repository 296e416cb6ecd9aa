"""Energies E0, E = E0 + I + J, the Lyapunov candidate H and trajectory audits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nonlinearity as nl
from .errors import InvalidArgument
from .grid import Params, StateField, WeightedGrid
from .nonlinearity import antiderivative_F  # noqa: F401  (re-exported)

THETA_SCAN = (1.0, 10.0, 100.0, 1000.0)
H_STEP_TOL = 1e-9
E0_STEP_TOL = 1e-8
ENERGY_COLUMNS = ("s", "E0", "I", "J", "E", "H")


def E0(q: StateField, grid: WeightedGrid, params: Params | None = None) -> float:
    """int (v^2/2 + (1-y^2) w'^2/2 + (p+1)/(p-1)^2 w^2 - |w|^{p+1}/(p+1)) rho."""
    params = params or grid.params
    p = params.p
    y = grid.nodes
    w, v = q.w1, q.w2
    dw = grid.diff @ w
    g = (0.5 * v * v + 0.5 * dw * dw * (1 - y * y) + (p + 1) / (p - 1) ** 2 * w * w
         - np.abs(w) ** (p + 1) / (p + 1))
    return grid.integrate(g)


def E_full(q: StateField, s: float, grid: WeightedGrid, params: Params | None = None,
           f_enabled: bool = True) -> dict:
    """{E0, I, J, E} with I = -int G(w, s) rho and J = -s^{-(a+1)/2} int w w_s rho."""
    params = params or grid.params
    if not s > 0:
        raise InvalidArgument("s must be positive")
    e0 = E0(q, grid, params)
    I = -grid.integrate(nl.scaled_G(q.w1, s, params)) if f_enabled else 0.0
    J = -s ** (-(params.a + 1) / 2) * grid.integrate(q.w1 * q.w2)
    return {"E0": e0, "I": float(I), "J": float(J), "E": e0 + I + J}


def _check_a(params: Params):
    if not params.a > 1:
        raise InvalidArgument("H needs a > 1")


def h_prefactor(s, params: Params):
    return np.exp((params.p + 3) / ((params.a - 1) * s ** ((params.a - 1) / 2)))


def h_tail(s, params: Params):
    return np.exp(-(params.p + 1) * s / (params.p - 1))


def lyapunov_H(q: StateField, s: float, theta_H: float, grid: WeightedGrid,
               params: Params | None = None, f_enabled: bool = True) -> float:
    """exp((p+3)/((a-1) s^{(a-1)/2})) E + theta_H e^{-(p+1)s/(p-1)}."""
    params = params or grid.params
    _check_a(params)
    if theta_H < 0:
        raise InvalidArgument("theta_H must be >= 0")
    E = E_full(q, s, grid, params, f_enabled)["E"]
    return float(h_prefactor(s, params) * E + theta_H * h_tail(s, params))


@dataclass
class EnergyTrace:
    s: np.ndarray
    E0: np.ndarray
    I: np.ndarray
    J: np.ndarray
    E: np.ndarray
    H: np.ndarray
    theta_H: float
    window: dict = field(default_factory=dict)

    def H_for(self, theta_H: float, params: Params) -> np.ndarray:
        return h_prefactor(self.s, params) * self.E + theta_H * h_tail(self.s, params)

    def rows(self):
        return zip(self.s, self.E0, self.I, self.J, self.E, self.H)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(ENERGY_COLUMNS)
            for row in self.rows():
                wr.writerow([f"{x:.17g}" for x in row])


def energy_trace(trajectory, grid: WeightedGrid, params: Params | None = None,
                 f_enabled: bool = True, theta_H: float = 1.0) -> EnergyTrace:
    params = params or grid.params
    comp = [E_full(st, sk, grid, params, f_enabled) for sk, st in zip(trajectory.s, trajectory.states)]
    s = np.asarray(trajectory.s, dtype=float)
    cols = {k: np.array([c[k] for c in comp]) for k in ("E0", "I", "J", "E")}
    if params.a > 1:
        H = h_prefactor(s, params) * cols["E"] + theta_H * h_tail(s, params)
    else:
        H = np.full(s.size, np.nan)
    return EnergyTrace(s, cols["E0"], cols["I"], cols["J"], cols["E"], H, theta_H)


def nonincreasing_fraction(values, rel_tol: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 1.0
    ok = v[1:] <= v[:-1] + rel_tol * (1 + np.abs(v[:-1]))
    return float(ok.mean())


def monotonicity_audit(trace: EnergyTrace, params: Params, scan=THETA_SCAN,
                       required_fraction: float = 0.99, tol: float = H_STEP_TOL) -> dict:
    """Fraction of non-increasing H steps for each theta_H in the scan."""
    _check_a(params)
    fractions = {float(th): nonincreasing_fraction(trace.H_for(th, params), tol) for th in scan}
    passing = [th for th in sorted(fractions) if fractions[th] >= required_fraction]
    strict = [th for th in sorted(fractions) if fractions[th] == 1.0]
    return {
        "fractions": fractions,
        "theta_H": passing[0] if passing else None,
        "theta_H_strict": strict[0] if strict else None,
        "required_fraction": required_fraction,
        "tol": tol,
        "ok": bool(passing),
    }


def e0_monotonicity(trace: EnergyTrace, tol: float = E0_STEP_TOL) -> dict:
    """Per-step check E0_{k+1} <= E0_k + tol (1 + |E0_k|)."""
    v = trace.E0
    inc = v[1:] - v[:-1] - tol * (1 + np.abs(v[:-1]))
    return {"fraction": nonincreasing_fraction(v, tol),
            "worst_excess": float(inc.max()) if inc.size else 0.0,
            "ok": bool(inc.size == 0 or inc.max() <= 0)}


def unweighted_norm(q: StateField, grid: WeightedGrid) -> float:
    """||w||_{H1(-1,1)} + ||w_s||_{L2(-1,1)} by the Legendre rule."""
    _, wz, M, MD = grid.legendre
    w, dw, v = M @ q.w1, MD @ q.w1, M @ q.w2
    return float(np.sqrt(np.dot(wz, w * w + dw * dw)) + np.sqrt(np.dot(wz, v * v)))


def bound_window(trajectory, grid: WeightedGrid) -> dict:
    if len(trajectory.states) == 0:
        raise InvalidArgument("empty trajectory")
    vals = np.array([unweighted_norm(st, grid) for st in trajectory.states])
    lo, hi = float(vals.min()), float(vals.max())
    return {"min": lo, "max": hi, "positive": lo > 0}
