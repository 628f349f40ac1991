"""Second-order eigenvalue expansion, correctors, densities, case labels."""

import numpy as np
import pytest

import scipy.sparse as sp

from weakloc import expansion, grids, models

LAM2_COS = -1.0 / (8.0 * np.pi ** 2)


def test_baseline_whole_space_exact(ws128):
    lam0, psi0 = expansion.ground_state_baseline(ws128)
    assert lam0 == 0.0
    assert np.abs(psi0 - psi0[0]).max() == 0.0
    assert abs(grids.norm(ws128, psi0) - 1.0) <= 1e-13


def test_baseline_layer_positive_normalized(layer_grid):
    lam0, psi0 = expansion.ground_state_baseline(layer_grid)
    assert psi0.min() > 0.0
    assert abs(grids.norm(layer_grid, psi0) - 1.0) <= 1e-12
    # width pi, Dirichlet walls: continuum ground energy 1, order h^2 off
    assert abs(lam0 - 1.0) <= 5e-3


def test_cos_fixture_expansion(cos_report, ws128):
    rep = cos_report
    assert abs(rep.lambda1) <= 1e-10
    assert abs(rep.lambda2 - LAM2_COS) <= 1e-3 * abs(LAM2_COS)
    x = ws128.coords()[0]
    psi1_exact = -np.cos(2 * np.pi * x) / (4 * np.pi ** 2) * rep.psi0[0]
    assert np.abs(rep.psi1 - psi1_exact).max() <= 1e-5
    assert grids.norm(ws128, rep.phi1 - rep.psi1) <= 1e-12
    assert abs(rep.eta - 1.0 / (8.0 * np.pi ** 2)) <= 1e-3 * abs(LAM2_COS)
    assert rep.case == expansion.CASE_QUADRATIC


def test_cos_lambda2_tightens_under_refinement():
    errs = []
    for m in (32, 64, 128):
        spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                              cell_lengths=(1.0,), mesh_lateral=m)
        g = grids.build_cell_grid(spec)
        mod = models.build_model("potential",
                                 {"w1": lambda x: np.cos(2 * np.pi * x)}, g)
        rep = expansion.expand(mod)
        errs.append(abs(rep.lambda2 - LAM2_COS))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] <= 1e-3 * abs(LAM2_COS)


def test_expansion_orthogonality_invariants(cos_report, ws128):
    for corr in (cos_report.psi1, cos_report.psi2):
        assert abs(grids.inner(ws128, corr, cos_report.psi0)) <= 1e-10


def test_linear_fixture_exact(linear_model):
    rep = expansion.expand(linear_model, b=0.0)
    assert abs(rep.lambda1 + 1.0) <= 1e-12
    assert np.abs(rep.psi1).max() <= 1e-12
    assert abs(rep.lambda2) <= 1e-12
    assert rep.case == expansion.CASE_LINEAR
    for d in (0.02, 0.07, 0.1):
        lam, _ = expansion.cell_eigenvalue(linear_model, None, d)
        assert abs(lam - (rep.lambda0 - d)) <= 1e-12


def test_cell_eigenvalue_matches_dense_oracle(cos_model, ws128):
    delta = 0.1
    lam, psi = expansion.cell_eigenvalue(cos_model, None, delta)
    op = (grids.assemble_h0(ws128).toarray()
          + delta * cos_model.order1.matrix.toarray())
    oracle = np.linalg.eigvalsh(op)[0]
    # both routes carry eps_mach * ||H|| ~ 1.5e-11 at this mesh
    assert abs(lam - oracle) <= 1e-11
    assert abs(lam - LAM2_COS * delta ** 2) <= 1e-5
    # phase alignment: overlap with the baseline is real positive
    _, psi0 = expansion.ground_state_baseline(ws128)
    ov = grids.inner(ws128, psi, psi0)
    assert ov.real > 0 and abs(ov.imag) <= 1e-12


def test_taylor_exact_for_linear_fixture(linear_model):
    tc = expansion.verify_taylor(linear_model, None,
                                 [2.0 ** -k for k in range(3, 10)])
    assert tc.value_exact
    assert tc.value_slope is None
    assert tc.value_residuals.max() <= 1e-12


def test_taylor_cubic_synthetic_third_order(ws128):
    ident = grids.SparseHermitian.from_matrix(
        sp.identity(ws128.n_nodes, format="csr"))
    tail = models.CubicTail(factory=lambda t: ident, lipschitz=0.0, sup=1.0)
    mod = models.build_model("potential",
                            {"w1": lambda x: np.cos(2 * np.pi * x)}, ws128,
                            cubic=tail)
    tc = expansion.verify_taylor(mod, None, [2.0 ** -k for k in range(3, 10)])
    assert tc.value_slope is not None
    assert 2.7 <= tc.value_slope <= 3.3
    keep = tc.value_residuals > tc.floor
    coeff = np.exp(np.polyfit(np.log(tc.deltas[keep]),
                              np.log(tc.value_residuals[keep]), 1)[1])
    # leading coefficient is the quadrature norm of the baseline, here 1
    assert abs(coeff - 1.0) <= 0.01


def test_taylor_cos_fixture_beats_third_order(cos_model):
    # the plain cosine is even in the coupling on this mesh, so the remainder
    # is quartic with the classical coefficient 7/(2048 pi^6)
    tc = expansion.verify_taylor(cos_model, None,
                                 [2.0 ** -k for k in range(1, 8)])
    assert tc.value_slope is not None
    assert tc.value_slope >= 3.5
    lead = tc.value_residuals[0] / tc.deltas[0] ** 4
    assert abs(lead - 7.0 / (2048.0 * np.pi ** 6)) <= 0.05 * lead


def test_minimizer_on_quadratic_fixture(cos_model):
    d_star, _, vals = expansion.minimizer_over_delta(cos_model, None, 0.05, 0.0)
    assert d_star == 0.05
    assert vals[-1] == vals.min()


def test_minimizer_flags_positive_lambda2(ws128):
    mod = models.build_model("potential",
                            {"w1": lambda x: np.cos(2 * np.pi * x),
                             "w2": lambda x: np.ones_like(x)}, ws128)
    rep = expansion.expand(mod, b=0.0)
    assert rep.lambda2 > 0
    assert rep.case == expansion.CASE_OTHER
    d_star, deltas, _ = expansion.minimizer_over_delta(mod, None, 0.05, 0.0)
    assert d_star == deltas[0] == 0.0


def test_magnetic_corrector_is_pure_imaginary(ws64):
    def bump(x):
        t = np.clip((x - 0.15) / 0.7, 0.0, 1.0)
        return np.sin(np.pi * t) ** 2
    mod = models.build_model("magnetic", {"a": [bump]}, ws64)
    rep = expansion.expand(mod, b=0.0)
    assert abs(rep.lambda1) == 0.0
    scale = np.abs(rep.psi1).max()
    if scale > 0:
        assert np.abs(rep.psi1.real).max() <= 1e-12 * max(1.0, scale)
    assert rep.lambda2 > 0
    assert rep.case == expansion.CASE_OTHER


def test_cross_term_real_nonpositive_on_quadratic_fixtures(cos_report,
                                                           shifted_cos_model):
    rep2 = expansion.expand(shifted_cos_model, b=0.0)
    for rep in (cos_report, rep2):
        assert abs(rep.cross_term.imag) <= 1e-8
        assert rep.cross_term.real <= 1e-8
    # the shifted fixture has a genuinely negative comparison term
    assert rep2.cross_term.real < -1e-4


def test_density_matches_direct_quotient_layer():
    spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                          mesh_lateral=24, width=np.pi, mesh_transversal=24)
    g = grids.build_cell_grid(spec)
    x0 = 0.05
    mod = models.build_model(
        "potential",
        {"w1": lambda x, z: np.cos(2 * np.pi * (x - x0)) * np.ones_like(z)}, g)
    rep = expansion.expand(mod, b=0.0)
    for face in grids.gamma_faces(g):
        val0, _ = grids.one_sided_face_data(g, rep.psi0, face)
        _, dnu1 = grids.one_sided_face_data(g, rep.psi1, face)
        direct = dnu1 / val0
        assert np.abs(rep.rho1[(face.axis, face.side)] - direct).max() <= 1e-8


def test_density_expansion_residual_order(shifted_cos_model):
    rep = expansion.expand(shifted_cos_model, b=0.0)
    x0 = 0.05
    # continuum check of the leading boundary density at the low face
    rho1 = rep.rho1[(0, 0)][0]
    assert abs(rho1 - np.sin(2 * np.pi * x0) / (2 * np.pi)) <= 2e-3
    dr = expansion.mezincescu_density(shifted_cos_model, None, 0.05, rep)
    assert dr.sup_res_order2 < dr.sup_res_order1
    ladder = [0.4 / 2 ** (k / 2) for k in range(7)]
    slope, res = expansion.density_residual_order(shifted_cos_model, None,
                                                  ladder, rep)
    assert slope is not None and slope >= 2.7
    assert res[-1] < res[0]


def test_matched_closure_reports_cell_minimum(cos_model):
    closure, lam = expansion.matched_closure(cos_model, None, 0.05)
    direct, _ = expansion.cell_eigenvalue(cos_model, None, 0.05)
    assert lam == direct
    dens = closure.density(cos_model.grid)
    assert set(dens) == {(0, 0), (0, 1)}


def test_not_simple_ground_state_rejected():
    # two decoupled identical wells: doubly degenerate minimum
    a = sp.block_diag([sp.diags([1.0, 2.0]), sp.diags([1.0, 2.0])]).tocsr()
    from weakloc.spectral import smallest_eigenpairs
    pairs = smallest_eigenpairs(a, k=2)
    assert abs(pairs[0].value - pairs[1].value) <= 1e-12
