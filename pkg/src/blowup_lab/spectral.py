"""Linearized operator L_d around kappa(d, .), its eigenfields for lambda = 1, 0,
the adjoint eigenfields, the energy inner product and the quadratic form phi_d."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoercivityViolation, InvalidArgument, NumericError
from .grid import Params, StateField, WeightedGrid, norm_H

COERCIVITY_SLACK = 1e-8


def _check_d(d):
    if not abs(d) < 1:
        raise InvalidArgument("|d| must be < 1")


def kappa_d(d: float, grid_or_y, params: Params):
    """kappa0 (1-d^2)^{1/(p-1)} / (1+dy)^{2/(p-1)} at the nodes (or at given y)."""
    _check_d(d)
    y = grid_or_y.nodes if isinstance(grid_or_y, WeightedGrid) else np.asarray(grid_or_y, dtype=float)
    p = params.p
    return params.kappa0 * (1 - d * d) ** (1 / (p - 1)) / (1 + d * y) ** (2 / (p - 1))


def psi_d(kappa, params: Params):
    return params.p * kappa ** (params.p - 1) - params.beta


def eigen_F1(d, y, params: Params):
    al = params.alpha
    v = (1 - d * d) ** (params.p / (params.p - 1)) * (1 + d * y) ** (-al - 1)
    return StateField(v, v.copy())


def eigen_F0(d, y, params: Params):
    al = params.alpha
    v = (1 - d * d) ** (1 / (params.p - 1)) * (y + d) * (1 + d * y) ** (-al - 1)
    return StateField(v, np.zeros_like(v))


def _adjoint_r2(lam, d, y, al):
    """Unnormalized second component and its y-derivative."""
    base = (1 + d * y) ** (-al - 1)
    dbase = -(al + 1) * d * (1 + d * y) ** (-al - 2)
    if lam == 1:
        return (1 - y * y) * base, -2 * y * base + (1 - y * y) * dbase
    return (y + d) * base, base + (y + d) * dbase


def apply_Ld(q: StateField, d: float, grid: WeightedGrid, params: Params, psi=None) -> StateField:
    """(q2, Lap q1 + psi q1 - (p+3)/(p-1) q2 - 2y q2')."""
    if psi is None:
        psi = psi_d(kappa_d(d, grid, params), params)
    y = grid.nodes
    second = grid.lap(q.w1) + psi * q.w1 - params.damping * q.w2 - 2 * y * (grid.diff @ q.w2)
    return StateField(q.w2.copy(), second)


def inner_upsilon(q: StateField, r: StateField, grid: WeightedGrid, params: Params | None = None,
                  form: str = "ibp") -> float:
    """Energy inner product of H.

    form="ibp" uses int (q1' r1' (1-y^2) + q1 r1 + q2 r2) rho and is
    symmetric by construction; form="lap" uses q1(-Lap r1 + r1).
    """
    y = grid.nodes
    if form == "ibp":
        g = (grid.diff @ q.w1) * (grid.diff @ r.w1) * (1 - y * y) + q.w1 * r.w1 + q.w2 * r.w2
    elif form == "lap":
        g = q.w1 * (-grid.lap(r.w1) + r.w1) + q.w2 * r.w2
    else:
        raise InvalidArgument(f"unknown form {form!r}")
    return grid.integrate(g)


def solve_adjoint(d: float, lam: int, grid: WeightedGrid, params: Params):
    """Adjoint eigenfield W_lambda (lambda in {0, 1}) and its constant c_lambda.

    The second component is explicit. The first solves
        -Lap r + r = (lam - c) r2 - 2y r2' + (8/(p-1)) r2/(1-y^2)
    by Galerkin in the rho-orthonormal Jacobi basis, where -Lap + 1 is
    diagonal with entries 1 + k(k+2alpha+1). Load integrals are taken with
    the rule for rho/(1-y^2) applied to (1-y^2) * rhs, which is smooth.
    """
    _check_d(d)
    if lam not in (0, 1):
        raise InvalidArgument("lambda must be 0 or 1")
    al = params.alpha
    z, wz, _ = grid.aux
    r2z, dr2z = _adjoint_r2(lam, d, z, al)
    load = ((lam - params.damping) * r2z - 2 * z * dr2z) * (1 - z * z) + 4 * al * r2z
    Vz = grid.aux_modes
    b = Vz.T @ (wz * load)
    k = np.arange(grid.n)
    mu = 1.0 + k * (k + 2 * al + 1)
    coef = b / mu
    w1 = grid.modes @ coef
    w2, _ = _adjoint_r2(lam, d, grid.nodes, al)
    if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
        raise NumericError(f"adjoint solve failed (d={d}, condition {mu[-1] / mu[0]:.3g})")
    Wt = StateField(w1, w2)
    F = eigen_F1(d, grid.nodes, params) if lam == 1 else eigen_F0(d, grid.nodes, params)
    norm = inner_upsilon(Wt, F, grid, params)
    if norm == 0 or not np.isfinite(norm):
        raise NumericError("adjoint normalization is degenerate")
    c = 1.0 / norm
    return Wt * c, c


@dataclass
class Decomposition:
    alpha1: float
    alpha0: float
    q_minus: StateField
    alpha_minus: float
    phi_minus: float


class SpectralPack:
    """Everything spectral at a fixed d on a fixed grid."""

    def __init__(self, d: float, grid: WeightedGrid, params: Params | None = None):
        _check_d(d)
        params = params or grid.params
        self.d = float(d)
        self.grid = grid
        self.params = params
        y = grid.nodes
        self.kappa_field = kappa_d(d, grid, params)
        self.psi_field = psi_d(self.kappa_field, params)
        self.F1 = eigen_F1(d, y, params)
        self.F0 = eigen_F0(d, y, params)
        self.W1, self.c1 = solve_adjoint(d, 1, grid, params)
        self.W0, self.c0 = solve_adjoint(d, 0, grid, params)

    def Ld(self, q):
        return apply_Ld(q, self.d, self.grid, self.params, psi=self.psi_field)

    def pi1(self, q):
        return inner_upsilon(self.W1, q, self.grid)

    def pi0(self, q):
        return inner_upsilon(self.W0, q, self.grid)

    def biorthogonality(self):
        """[[Y(W0,F0), Y(W0,F1)], [Y(W1,F0), Y(W1,F1)]]."""
        g = self.grid
        return np.array([[inner_upsilon(self.W0, self.F0, g), inner_upsilon(self.W0, self.F1, g)],
                         [inner_upsilon(self.W1, self.F0, g), inner_upsilon(self.W1, self.F1, g)]])

    def eigen_residuals(self):
        g = self.grid
        return {"F1": norm_H(self.Ld(self.F1) - self.F1, g), "F0": norm_H(self.Ld(self.F0), g)}

    def phi(self, q, r, form: int = 1):
        return bilinear_phi(q, r, self, self.grid, self.params, form)


def bilinear_phi(q: StateField, r: StateField, pack: SpectralPack, grid: WeightedGrid,
                 params: Params | None = None, form: int = 1) -> float:
    """Second variation of E0 at kappa(d, .); form 1 (derivatives) or 2 (operator)."""
    y = grid.nodes
    psi = pack.psi_field
    if form == 1:
        g = (-psi * q.w1 * r.w1 + (grid.diff @ q.w1) * (grid.diff @ r.w1) * (1 - y * y)
             + q.w2 * r.w2)
    elif form == 2:
        g = -q.w1 * (grid.lap(r.w1) + psi * r.w1) + q.w2 * r.w2
    else:
        raise InvalidArgument("form must be 1 or 2")
    return grid.integrate(g)


def dissipation_rhs(q: StateField, grid: WeightedGrid, params: Params) -> float:
    """-(4/(p-1)) int q2^2 rho/(1-y^2)."""
    return -4.0 / (params.p - 1) * grid.integrate_over_1my2(q.w2 * q.w2)


def project(q: StateField, pack: SpectralPack, grid: WeightedGrid | None = None) -> Decomposition:
    grid = grid or pack.grid
    a1 = pack.pi1(q)
    a0 = pack.pi0(q)
    qm = q - a1 * pack.F1 - a0 * pack.F0
    ph = bilinear_phi(qm, qm, pack, grid)
    nq2 = norm_H(qm, grid) ** 2
    # a q- at the round-off level of q carries no sign information
    negligible = nq2 <= (1e-12 * norm_H(q, grid)) ** 2
    if ph < 0:
        if ph < -COERCIVITY_SLACK * nq2 and not negligible:
            raise CoercivityViolation(f"phi_d(q-, q-) = {ph:.3e} with ||q-||^2 = {nq2:.3e}")
        am = 0.0
    else:
        am = float(np.sqrt(ph))
    return Decomposition(a1, a0, qm, am, ph)


def random_state(grid: WeightedGrid, rng: np.random.Generator, n_modes: int = 10, scale: float = 1.0):
    """Seeded random combination of the first n_modes orthonormal modes per component."""
    V = grid.modes[:, :n_modes]
    c1 = rng.standard_normal(n_modes)
    c2 = rng.standard_normal(n_modes)
    return StateField(V @ c1, V @ c2) * scale


def norm_equivalence_audit(pack: SpectralPack, grid: WeightedGrid | None = None, n_samples: int = 100,
                           seed: int = 0, samples=None) -> dict:
    """Extremes of ||q-||_H / alpha_- and ||q||_H / (|alpha1| + alpha_-) over samples."""
    if n_samples < 10 and samples is None:
        raise InvalidArgument("need at least 10 samples")
    grid = grid or pack.grid
    rng = np.random.default_rng(seed)
    if samples is None:
        samples = [random_state(grid, rng) for _ in range(n_samples)]
    r_minus, r_full = [], []
    skipped = 0
    for q in samples:
        nq = norm_H(q, grid)
        if nq == 0:
            skipped += 1
            continue
        dec = project(q, pack, grid)
        nqm = norm_H(dec.q_minus, grid)
        if dec.alpha_minus > 0 and nqm > 1e-12 * nq:
            r_minus.append(nqm / dec.alpha_minus)
        denom = abs(dec.alpha1) + dec.alpha_minus
        if denom > 0:
            r_full.append(nq / denom)
    r_minus = np.array(r_minus)
    r_full = np.array(r_full)

    def ext(v):
        return (float(v.min()), float(v.max())) if v.size else (float("nan"), float("nan"))

    out = {"raw": ext(r_minus), "raw1": ext(r_full), "skipped": skipped,
           "count": len(samples) - skipped}
    out["ok"] = all(np.isfinite(x) and x > 0 for x in out["raw"] + out["raw1"]) if r_minus.size else \
        all(np.isfinite(x) and x > 0 for x in out["raw1"])
    return out
