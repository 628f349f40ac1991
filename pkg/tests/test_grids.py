"""Grid construction, quadrature, stencils and boundary closures."""

import numpy as np
import pytest

import scipy.sparse as sp

from weakloc import grids


def test_layer_cell_grid_counts_and_weight_sum():
    spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                          mesh_lateral=8, width=np.pi, mesh_transversal=8)
    g = grids.build_cell_grid(spec)
    assert g.n_nodes == 64
    assert abs(g.weight * g.n_nodes - np.pi) <= 1e-12 * np.pi
    assert abs(g.volume - np.pi) <= 1e-12 * np.pi


def test_whole_space_cell_grid_weight_sum():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=16)
    g = grids.build_cell_grid(spec)
    assert g.n_nodes == 16
    assert abs(g.weight * g.n_nodes - 1.0) <= 1e-12


def test_two_dim_layer_weight_sum():
    spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=2,
                          cell_lengths=(1.0, 1.0), mesh_lateral=8,
                          width=np.pi, mesh_transversal=8)
    g = grids.build_cell_grid(spec)
    # quadrature oracle: uniform weight times node count is the cell volume
    assert abs(g.weight * g.n_nodes - np.pi) <= 1e-12 * np.pi


def test_node_classes_partition():
    spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                          mesh_lateral=8, width=1.0, mesh_transversal=8)
    g = grids.build_cell_grid(spec)
    counts = np.bincount(g.node_class, minlength=3)
    assert counts.sum() == g.n_nodes
    # two lateral sheets of mz nodes; two transversal sheets of m_lat nodes
    assert counts[grids.TRANSVERSAL_BOUNDARY] == 2 * 8
    assert counts[grids.LATERAL_BOUNDARY] == 2 * 8 - 4  # corners are transversal


def test_spec_validation_errors():
    with pytest.raises(grids.GridError):
        grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                       cell_lengths=(1.0,), mesh_lateral=4)
    with pytest.raises(grids.GridError):
        grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                       mesh_lateral=8, width=0.0, mesh_transversal=8)
    with pytest.raises(grids.GridError):
        grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                       cell_lengths=(1.0,), mesh_lateral=8, mesh_transversal=8)
    with pytest.raises(grids.GridError):
        grids.GridSpec(mode=grids.LAYER, lateral_dim=3,
                       cell_lengths=(1.0, 1.0, 1.0), mesh_lateral=8,
                       width=1.0, mesh_transversal=8)


def test_dirichlet_axis_closed_form_smallest():
    # the cell-centered Dirichlet closure has eigenvalues
    # (2/h^2)(1 - cos(k pi h / d)); at m=4, h=1/4 the smallest is 32 - 16 sqrt(2)
    ax = grids.Axis(kind="transversal", length=1.0, n_nodes=4,
                    bc=(grids.DIRICHLET, grids.DIRICHLET))
    mat = grids._axis_second_difference(ax)
    vals = np.linalg.eigvalsh(mat.toarray())
    h = 0.25
    predicted = (2.0 / h ** 2) * (1.0 - np.cos(np.pi * h))
    assert abs(predicted - (32 - 16 * np.sqrt(2))) < 1e-12
    assert abs(vals[0] - predicted) <= 1e-12 * abs(predicted)


def test_dirichlet_closed_form_m64():
    ax = grids.Axis(kind="transversal", length=1.0, n_nodes=64,
                    bc=(grids.DIRICHLET, grids.DIRICHLET))
    vals = np.linalg.eigvalsh(grids._axis_second_difference(ax).toarray())
    h = 1.0 / 64
    predicted = (2.0 / h ** 2) * (1.0 - np.cos(np.pi * h))
    assert abs(vals[0] - predicted) <= 1e-10 * max(1.0, abs(predicted))


def test_constant_potential_shifts_spectrum_exactly():
    spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                          mesh_lateral=8, width=1.0, mesh_transversal=8)
    g = grids.build_cell_grid(spec)
    c = 0.7310529918
    base = np.linalg.eigvalsh(grids.assemble_h0(g).toarray())
    shifted = np.linalg.eigvalsh(
        grids.assemble_h0(g, v0=lambda z: c * np.ones_like(z)).toarray())
    scale = np.abs(base).max()
    assert np.abs(shifted - base - c).max() <= 1e-12 * max(1.0, scale)


def test_periodic_smallest_zero_with_constant_mode():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=16)
    g = grids.build_cell_grid(spec)
    h0 = grids.assemble_h0(g)
    vals, vecs = np.linalg.eigh(h0.toarray())
    assert abs(vals[0]) <= 1e-12 * np.abs(vals).max()
    ground = vecs[:, 0]
    assert np.abs(ground - ground.mean()).max() <= 1e-10


def test_box_single_cell_matches_cell_topology():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=16)
    cell = grids.build_cell_grid(spec)
    box = grids.build_box_grid(spec, (0,), 1, lateral_bc=grids.PERIODIC)
    assert box.n_nodes == cell.n_nodes
    assert box.shape == cell.shape
    assert abs(box.weight - cell.weight) <= 1e-15
    a = grids.assemble_h0(cell).toarray()
    b = grids.assemble_h0(box).toarray()
    assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()


def test_box_cell_partition_counts():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=8)
    box = grids.build_box_grid(spec, (0,), 4, lateral_bc=grids.PERIODIC)
    labels = box.cell_labels()
    assert len(labels) == 4
    seen = np.concatenate([box.cell_node_indices(k) for k in labels])
    assert len(seen) == box.n_nodes
    assert len(np.unique(seen)) == box.n_nodes

    spec2 = grids.GridSpec(mode=grids.LAYER, lateral_dim=2,
                           cell_lengths=(1.0, 1.0), mesh_lateral=8,
                           width=1.0, mesh_transversal=8)
    box2 = grids.build_box_grid(spec2, (0, 0), 3, lateral_bc=grids.PERIODIC)
    labels2 = box2.cell_labels()
    assert len(labels2) == 9
    per_cell = len(box2.cell_node_indices(labels2[0]))
    # counting oracle: disjoint cells of equal size tile the box
    assert box2.n_nodes == 9 * per_cell


@pytest.mark.parametrize("mode", ["whole", "layer"])
def test_green_identity_summation_by_parts(mode):
    if mode == "whole":
        spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                              cell_lengths=(1.0,), mesh_lateral=12)
    else:
        spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1,
                              cell_lengths=(1.0,), mesh_lateral=8, width=1.3,
                              mesh_transversal=10,
                              transversal_bc=(grids.NEUMANN, grids.NEUMANN))
    g = grids.build_cell_grid(spec)
    rng = np.random.default_rng(5)
    u = rng.standard_normal(g.n_nodes) + 1j * rng.standard_normal(g.n_nodes)
    v = rng.standard_normal(g.n_nodes) + 1j * rng.standard_normal(g.n_nodes)
    h0 = grids.assemble_h0(g)
    lhs = grids.inner(g, h0.matrix @ u, v)
    rhs = 0.0
    for axis in range(len(g.axes)):
        gr, w = grids.face_gradient(g, axis)
        rhs += np.sum(w * (gr @ u) * np.conj(gr @ v))
    scale = np.linalg.norm(u) * np.linalg.norm(v)
    assert abs(lhs - rhs) <= 1e-10 * scale


def test_dirichlet_dominates_periodic():
    for spec in (
        grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                       cell_lengths=(1.0,), mesh_lateral=12),
        grids.GridSpec(mode=grids.LAYER, lateral_dim=1, cell_lengths=(1.0,),
                       mesh_lateral=8, width=1.0, mesh_transversal=8),
    ):
        per = grids.build_box_grid(spec, (0,), 2, lateral_bc=grids.PERIODIC)
        dir_ = grids.build_box_grid(spec, (0,), 2, lateral_bc=grids.DIRICHLET)
        lam_p = np.linalg.eigvalsh(grids.assemble_h0(per).toarray())[0]
        lam_d = np.linalg.eigvalsh(grids.assemble_h0(dir_).toarray())[0]
        assert lam_d >= lam_p - 1e-12 * max(1.0, abs(lam_p))


def test_transversal_refinement_second_order():
    errs, hs = [], []
    for mz in (16, 32, 64, 128):
        spec = grids.GridSpec(mode=grids.LAYER, lateral_dim=1,
                              cell_lengths=(1.0,), mesh_lateral=8,
                              width=np.pi, mesh_transversal=mz)
        t, _ = grids.transversal_operator(spec)
        lam = np.linalg.eigvalsh(t.toarray())[0]
        errs.append(abs(lam - 1.0))
        hs.append(np.pi / mz)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_robin_closure_roundtrip_and_antisymmetry():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=16)
    g = grids.build_cell_grid(spec)
    c = 1.37
    h = g.axes[0].spacing
    rho = 2.0 * (c - 1.0) / (h * (c + 1.0))
    rho_inv = 2.0 * (1.0 / c - 1.0) / (h * (1.0 / c + 1.0))
    # opposite faces of adjacent cells must cancel: rho(c) + rho(1/c) = 0
    assert abs(rho + rho_inv) <= 1e-12
    closure = grids.RobinClosure(ratio={(0, 0): np.array([c]),
                                        (0, 1): np.array([1.0 / c])})
    dens = closure.density(g)
    assert abs(dens[(0, 0)][0] - rho) <= 1e-12
    back = grids.RobinClosure.from_density(g, dens)
    assert abs(back.ratio[(0, 0)][0] - c) <= 1e-12


def test_mezincescu_without_closure_raises():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=16)
    box = grids.build_box_grid(spec, (0,), 2, lateral_bc=grids.MEZINCESCU)
    with pytest.raises(grids.GridError):
        grids.assemble_h0(box)


def test_one_sided_face_data_exact_for_quadratics():
    spec = grids.GridSpec(mode=grids.WHOLE_SPACE, lateral_dim=1,
                          cell_lengths=(1.0,), mesh_lateral=16)
    g = grids.build_cell_grid(spec)
    x = g.coords()[0]
    a, b, c = 0.4, -1.1, 2.3
    u = a + b * x + c * x * x
    faces = grids.gamma_faces(g)
    low = next(f for f in faces if f.side == 0)
    high = next(f for f in faces if f.side == 1)
    val0, dnu0 = grids.one_sided_face_data(g, u, low)
    val1, dnu1 = grids.one_sided_face_data(g, u, high)
    # outward normal points in -x at the low face, +x at the high face
    assert abs(val0[0] - a) <= 1e-10
    assert abs(dnu0[0] - (-b)) <= 1e-9
    assert abs(val1[0] - (a + b + c)) <= 1e-10
    assert abs(dnu1[0] - (b + 2 * c)) <= 1e-9


def test_sparse_hermitian_validation():
    bad = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(grids.GridError):
        grids.SparseHermitian.from_matrix(bad)
    real = grids.SparseHermitian.from_matrix(
        sp.csr_matrix(np.array([[1.0, 2.0], [2.0, -1.0]])))
    assert real.is_real
    cplx = grids.SparseHermitian.from_matrix(
        sp.csr_matrix(np.array([[1.0, 2.0j], [-2.0j, -1.0]])))
    assert not cplx.is_real
