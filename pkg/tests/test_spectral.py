import numpy as np
import pytest

from blowup_lab.errors import InvalidArgument
from blowup_lab.evolve import stationarity_residual
from blowup_lab.grid import Params, StateField, make_grid, norm_H
from blowup_lab.spectral import (SpectralPack, apply_Ld, bilinear_phi, dissipation_rhs, eigen_F0,
                                 inner_upsilon, kappa_d, norm_equivalence_audit, project,
                                 random_state, solve_adjoint)

D_SWEEP = (0.0, 0.5, -0.5, 0.9, -0.9)


@pytest.fixture(scope="module")
def packs(grid64, P3):
    return {d: SpectralPack(d, grid64, P3) for d in D_SWEEP}


def test_kappa_identities(grid64, P3):
    assert np.allclose(kappa_d(0.0, grid64, P3), P3.kappa0, rtol=0, atol=1e-15)
    y = grid64.nodes
    for d in D_SWEEP:
        k = kappa_d(d, grid64, P3)
        assert np.all(k > 0)
        inv = k * (1 + d * y) ** (2 / (P3.p - 1))
        assert np.allclose(inv, P3.kappa0 * (1 - d * d) ** (1 / (P3.p - 1)), rtol=1e-14)
        assert stationarity_residual(d, grid64, P3) < 1e-6
    with pytest.raises(InvalidArgument):
        kappa_d(1.0, grid64, P3)


def test_eigenfields(packs, grid64, P3):
    for d, pk in packs.items():
        res = pk.eigen_residuals()
        assert res["F1"] <= 1e-6 and res["F0"] <= 1e-6
        assert np.max(np.abs(pk.biorthogonality() - np.eye(2))) <= 1e-8
        assert np.isfinite(norm_H(pk.W1, grid64)) and np.isfinite(norm_H(pk.W0, grid64))
    z = apply_Ld(StateField.zeros(64), 0.3, grid64, P3)
    assert np.all(z.w1 == 0) and np.all(z.w2 == 0)


def test_adjoint_norms_bounded_over_d(packs, grid64):
    nrm = [max(norm_H(pk.W1, grid64), norm_H(pk.W0, grid64)) for pk in packs.values()]
    assert max(nrm) / min(nrm) < 50


def test_eigen_residuals_decrease_with_n(P3):
    for d in (0.0, 0.5, -0.9):
        res = [SpectralPack(d, make_grid(n, P3), P3).eigen_residuals()["F0"] for n in (16, 32, 64)]
        assert res[2] <= max(res[0], 1e-12)


def test_adjoint_rejects_bad_lambda(grid64, P3):
    with pytest.raises(InvalidArgument):
        solve_adjoint(0.1, 2, grid64, P3)


def test_upsilon_properties(grid64, P3, rng):
    for _ in range(10):
        q, r = random_state(grid64, rng), random_state(grid64, rng)
        assert inner_upsilon(q, q, grid64) == pytest.approx(norm_H(q, grid64) ** 2, rel=1e-12)
        assert inner_upsilon(q, r, grid64) == inner_upsilon(r, q, grid64)
        lap = inner_upsilon(q, r, grid64, form="lap") - inner_upsilon(r, q, grid64, form="lap")
        assert abs(lap) < 1e-8 * norm_H(q, grid64) * norm_H(r, grid64)
        assert inner_upsilon(StateField.zeros(64), r, grid64) == 0


def test_project_reassembly_and_membership(packs, grid64, rng):
    pk = packs[0.5]
    for _ in range(50):
        q = random_state(grid64, rng)
        dec = project(q, pk)
        back = dec.alpha1 * pk.F1 + dec.alpha0 * pk.F0 + dec.q_minus
        assert norm_H(back - q, grid64) < 1e-10
        assert abs(pk.pi1(dec.q_minus)) < 1e-9 and abs(pk.pi0(dec.q_minus)) < 1e-9
        assert dec.phi_minus >= -1e-8 * norm_H(dec.q_minus, grid64) ** 2


def test_project_special_cases(packs, grid64):
    pk = packs[-0.5]
    dec = project(pk.F1, pk)
    assert dec.alpha1 == pytest.approx(1, abs=1e-8)
    assert abs(dec.alpha0) < 1e-8 and norm_H(dec.q_minus, grid64) < 1e-8
    z = project(StateField.zeros(64), pk)
    assert (z.alpha1, z.alpha0, z.alpha_minus) == (0.0, 0.0, 0.0)


def test_bilinear_forms_and_identity(packs, grid64, P3, rng):
    for d in (0.0, 0.9):
        pk = packs[d]
        for _ in range(10):
            q, r = random_state(grid64, rng), random_state(grid64, rng)
            scale = norm_H(q, grid64) * norm_H(r, grid64)
            assert abs(bilinear_phi(q, r, pk, grid64, form=1) - bilinear_phi(q, r, pk, grid64, form=2)) \
                < 1e-8 * scale
            q = q * (1 / norm_H(q, grid64))
            qm = project(q, pk).q_minus
            lhs = bilinear_phi(qm, pk.Ld(qm), pk, grid64, P3)
            assert abs(lhs - dissipation_rhs(qm, grid64, P3)) <= 1e-6


def test_continuity_constant_stable(packs, grid64, P3):
    pk = packs[0.5]

    def sample(seed):
        g = np.random.default_rng(seed)
        c = []
        for _ in range(100):
            q, r = random_state(grid64, g), random_state(grid64, g)
            c.append(abs(pk.phi(q, r)) / (norm_H(q, grid64) * norm_H(r, grid64)))
        return max(c)

    c1, c2 = sample(1), sample(2)
    assert max(c1, c2) / min(c1, c2) < 2


def test_norm_equivalence_audit(packs, grid64):
    pk = packs[0.0]
    out = norm_equivalence_audit(pk, n_samples=100)
    assert out["ok"] and out["count"] == 100
    lo, hi = out["raw"]
    assert 0 < lo <= hi < np.inf
    f1 = norm_equivalence_audit(pk, samples=[pk.F1] + [StateField.zeros(64)])
    assert f1["skipped"] == 1
    assert f1["raw1"][0] == pytest.approx(norm_H(pk.F1, grid64), rel=1e-8)
    with pytest.raises(InvalidArgument):
        norm_equivalence_audit(pk, n_samples=5)


def test_F0_closed_form_and_d_direction(grid64, P3):
    y = grid64.nodes
    al = P3.alpha
    for d in D_SWEEP:
        F0 = eigen_F0(d, y, P3).w1
        lit = (1 - d * d) ** (1 / (P3.p - 1)) * (y + d) / (1 + d * y) ** (al + 1)
        assert np.max(np.abs(F0 - lit)) <= 1e-12
        h = 1e-6
        dk = (kappa_d(d + h, y, P3) - kappa_d(d - h, y, P3)) / (2 * h) * (1 - d * d)
        ratio = dk / F0
        mask = np.abs(F0) > 1e-3
        assert np.ptp(ratio[mask]) < 1e-6 * np.max(np.abs(ratio[mask]))
