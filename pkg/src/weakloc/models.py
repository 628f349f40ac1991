"""Perturbation families acting on one periodicity cell.

A model packages the first- and second-order coupling operators L1, L2 (plus
an optional cubic-in-t tail) of a symmetric perturbation t L1 + t^2 L2 +
t^3 L3(t).  Five families are shipped:

* ``potential``   multiplication by W1, W2
* ``integral``    symmetric kernels K1, K2 applied through cell quadrature
* ``diffop``      second-order operators sum d_k Q_kj d_j + i (Q_j d_j +
                  d_j Q_j) + Q_0 per order
* ``magnetic``    L1 = 2i A . grad + i div A + W1, L2 = |A|^2 + W2, built in
                  face-staggered form so the first-order part is exactly
                  skew-compatible with the Laplacian stencil
* ``metric``      pure divergence-form sum d_j Q_jk d_k per order

Every assembled operator is validated Hermitian at build time; violating
inputs (asymmetric kernels, magnetic potentials that do not vanish on the
lateral cell boundary, complex data in a family declared real) raise
:class:`ModelError`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import grids
from .grids import CellGrid, SparseHermitian

KINDS = ("potential", "integral", "diffop", "magnetic", "metric")

_BOUNDARY_TOL = 1e-8
_SIGN_TOL = 1e-10


class ModelError(ValueError):
    """Invalid perturbation data."""


@dataclass(frozen=True)
class CubicTail:
    """Optional third-order part t^3 L3(t).

    ``factory(t)`` returns the symmetric operator L3(t); ``lipschitz`` bounds
    the W^{2,2}->L^2 operator increment per unit change of t, and ``sup``
    bounds the L^2 operator norm over the admissible coupling range.
    """

    factory: Callable[[float], SparseHermitian]
    lipschitz: float = 0.0
    sup: float = 0.0


@dataclass(frozen=True)
class BoundConstants:
    """Certified relative-bound triple for cutoff commutator estimates.

    Guarantees, for every cutoff phi of the declared mollified-ramp family
    with C^2 norm s and every order i:

        |(L_i u, phi u)|       <= c6 (phi grad u, grad u) + c7(s) ||u||^2
        ||L_i(phi u) - phi L_i u|| <= c8(s) ||u||_{W^{1,2}}

    c7 and c8 are affine and non-decreasing in s.
    """

    c6: float
    c7_const: float
    c7_slope: float
    c8_const: float
    c8_slope: float
    c5: float = 0.0                  # 3 / (shortest lattice step)
    c11: float = 2.0                 # 2 sup|V0| + 2

    def c7(self, s: float) -> float:
        return self.c7_const + self.c7_slope * max(s, 0.0)

    def c8(self, s: float) -> float:
        return self.c8_const + self.c8_slope * max(s, 0.0)


@dataclass(frozen=True)
class PerturbationModel:
    """Symmetric perturbation family on a cell grid."""

    kind: str
    grid: CellGrid
    order1: SparseHermitian
    order2: SparseHermitian
    cubic: CubicTail | None
    is_real: bool
    order2_nonpositive: bool
    form_bounds: tuple[tuple[float, float], ...]   # per order (gradient, mass)
    params: dict

    @property
    def dim(self) -> int:
        return self.order1.dim

    def operator(self, order: int):
        if order == 1:
            return self.order1
        if order == 2:
            return self.order2
        raise ModelError("operator() serves orders 1 and 2; use cubic_at for 3")

    def cubic_at(self, t: float) -> SparseHermitian:
        if self.cubic is None:
            raise ModelError("model has no cubic tail")
        return self.cubic.factory(t)


def apply_perturbation(model: PerturbationModel, t: float,
                       u: np.ndarray) -> np.ndarray:
    """Apply the full family t L1 + t^2 L2 + t^3 L3(t) to a cell field.

    Per-order access goes through ``model.operator(k)`` and
    ``model.cubic_at(t)``.
    """
    u = np.asarray(u)
    if u.shape[0] != model.dim:
        raise ModelError(f"field length {u.shape[0]} != grid size {model.dim}")
    if t == 0.0:
        return np.zeros_like(u)
    out = t * (model.order1.matrix @ u) + t * t * (model.order2.matrix @ u)
    if model.cubic is not None:
        out = out + t ** 3 * (model.cubic_at(t).matrix @ u)
    return out


def coupling_matrix(model: PerturbationModel, t: float) -> sp.csr_matrix:
    """The full perturbation t L1 + t^2 L2 (+ t^3 L3(t)) as one matrix."""
    m = t * model.order1.matrix + t * t * model.order2.matrix
    if model.cubic is not None:
        m = m + t ** 3 * model.cubic_at(t).matrix
    return sp.csr_matrix(m)


# ── field sampling ─────────────────────────────────────────────────────────


def _sample(fn, coord_arrays) -> np.ndarray:
    if np.isscalar(fn):
        return np.full(coord_arrays[0].shape, float(fn))
    vals = np.asarray(fn(*coord_arrays))
    return np.broadcast_to(vals, coord_arrays[0].shape).copy()


def sample_node_field(grid, fn) -> np.ndarray:
    return _sample(fn, grid.coords())


def _require_real(arr, what: str):
    if np.iscomplexobj(arr) and np.abs(arr.imag).max(initial=0.0) > 0.0:
        raise ModelError(f"{what} must be real for this family")
    return np.real(arr)


def _check_lateral_vanishing(grid, values_fn, what: str, scale: float):
    """Coefficients of gradient-bearing families must fade on the lateral
    cell boundary; sample each lateral face and compare against ``scale``."""
    for a in range(grid.spec.lateral_dim):
        ax = grid.axes[a]
        for x_face in (0.0, ax.length):
            pts = []
            for b, axb in enumerate(grid.axes):
                pts.append(np.full(3, x_face) if b == a else
                           np.linspace(0.25, 0.75, 3) * axb.length)
            vals = _sample(values_fn, [np.atleast_1d(p) for p in pts])
            if np.abs(vals).max(initial=0.0) > _BOUNDARY_TOL * (1.0 + scale):
                raise ModelError(f"{what} must vanish on the lateral cell boundary")


# ── centered differences (used by diffop / metric cross terms) ─────────────


def _axis_centered_difference(ax) -> sp.csr_matrix:
    m, h = ax.n_nodes, ax.spacing
    if ax.bc[0] == grids.PERIODIC:
        d = sp.lil_matrix((m, m))
        for j in range(m):
            d[j, (j + 1) % m] += 0.5 / h
            d[j, (j - 1) % m] -= 0.5 / h
        return sp.csr_matrix(d)
    d = sp.lil_matrix((m, m))
    for j in range(1, m - 1):
        d[j, j + 1] = 0.5 / h
        d[j, j - 1] = -0.5 / h
    # ghost closures at the transversal faces
    sgn0 = -1.0 if ax.bc[0] == grids.DIRICHLET else 1.0
    d[0, 1] = 0.5 / h
    d[0, 0] = -sgn0 * 0.5 / h
    sgn1 = -1.0 if ax.bc[1] == grids.DIRICHLET else 1.0
    d[m - 1, m - 2] = -0.5 / h
    d[m - 1, m - 1] = sgn1 * 0.5 / h
    return sp.csr_matrix(d)


def centered_gradient(grid, axis: int) -> sp.csr_matrix:
    mats = []
    for b, ax in enumerate(grid.axes):
        mats.append(_axis_centered_difference(ax) if b == axis
                    else sp.identity(ax.n_nodes, format="csr"))
    return sp.csr_matrix(reduce(sp.kron, mats))


def _divergence_form_term(grid, k: int, j: int, q_vals: np.ndarray) -> sp.csr_matrix:
    """Symmetric discretization of d_k q d_j.

    Diagonal pairs use the face-staggered form -G^T q_f G (exact
    summation-by-parts companion of the Laplacian stencil); mixed pairs use
    centered differences, symmetric whenever the coefficient fades at the
    boundary closures.
    """
    if k == j:
        g, w = grids.face_gradient(grid, k)
        avg = grids.face_average(grid, k)
        q_face = avg @ q_vals
        scaled = sp.diags(w * q_face) @ g
        return sp.csr_matrix(-(g.conjugate().T @ scaled) / grid.weight)
    dk = centered_gradient(grid, k)
    dj = centered_gradient(grid, j)
    return sp.csr_matrix(dk @ sp.diags(q_vals) @ dj)


# ── family builders ────────────────────────────────────────────────────────


def _hermitian(m, tol=1e-12) -> SparseHermitian:
    try:
        return SparseHermitian.from_matrix(m, tol=tol)
    except grids.GridError as e:
        raise ModelError(str(e)) from None


def _reject_strays(params, allowed, kind):
    # typos must not degrade into a silently trivial model
    stray = set(params) - allowed
    if stray:
        raise ModelError(f"unknown {kind}-model keys {sorted(stray)}")


def _build_potential(grid, params):
    _reject_strays(params, {"w1", "w2", "w3"}, "potential")
    w1 = _require_real(sample_node_field(grid, params.get("w1", 0.0)), "w1")
    w2 = _require_real(sample_node_field(grid, params.get("w2", 0.0)), "w2")
    m1 = _hermitian(sp.diags(w1, format="csr"))
    m2 = _hermitian(sp.diags(w2, format="csr"))
    s1, s2 = np.abs(w1).max(initial=0.0), np.abs(w2).max(initial=0.0)
    cubic = None
    s3 = 0.0
    if "w3" in params:
        w3 = _require_real(sample_node_field(grid, params["w3"]), "w3")
        mat3 = _hermitian(sp.diags(w3, format="csr"))
        cubic = CubicTail(lambda t: mat3, lipschitz=0.0, sup=float(np.abs(w3).max(initial=0.0)))
        s3 = cubic.sup
    bounds = ((0.0, float(s1)), (0.0, float(s2)), (0.0, float(s3)))
    nonpos = bool(w2.max(initial=0.0) <= _SIGN_TOL * (1.0 + s2))
    return m1, m2, cubic, True, nonpos, bounds


def _kernel_matrix(grid, kern) -> np.ndarray:
    coords = grid.coords()
    rows = [c[:, None] for c in coords]
    cols = [c[None, :] for c in coords]
    k = np.asarray(kern(*rows, *cols))
    return k * grid.weight


def _build_integral(grid, params):
    _reject_strays(params, {"k1", "k2", "k2_nonpositive"}, "integral")
    mats, sups = [], []
    for key in ("k1", "k2"):
        if key in params:
            k = _kernel_matrix(grid, params[key])
            defect = np.abs(k - k.conj().T).max()
            if defect > 1e-10 * max(1.0, np.abs(k).max()):
                raise ModelError(f"kernel {key} is not symmetric (defect {defect:.2e})")
            mats.append(_hermitian(sp.csr_matrix(k), tol=1e-10))
            sups.append(float(np.linalg.norm(k)))   # Hilbert-Schmidt norm
        else:
            n = grid.n_nodes
            mats.append(_hermitian(sp.csr_matrix((n, n))))
            sups.append(0.0)
    nonpos = False
    if params.get("k2_nonpositive"):
        top = float(np.linalg.eigvalsh(mats[1].toarray()).max()) if mats[1].matrix.nnz else 0.0
        if top > _SIGN_TOL * (1.0 + sups[1]):
            raise ModelError("k2 declared nonpositive but has positive spectrum")
        nonpos = True
    is_real = all(m.is_real for m in mats)
    bounds = ((0.0, sups[0]), (0.0, sups[1]), (0.0, 0.0))
    return mats[0], mats[1], None, is_real, nonpos, bounds


def _diffop_order(grid, spec_i, order_label):
    n_ax = len(grid.axes)
    op = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
    sup_q2 = sup_q1 = sup_q0 = 0.0
    n_lat = grid.spec.lateral_dim
    q2 = spec_i.get("q2", {})
    for (k, j), fn in q2.items():
        if not (0 <= k < n_ax and 0 <= j < n_ax):
            raise ModelError(f"q2 axis pair {(k, j)} out of range")
        vals = _require_real(sample_node_field(grid, fn), f"{order_label} q2")
        # only terms that differentiate laterally couple across cell faces
        if k < n_lat or j < n_lat:
            _check_lateral_vanishing(grid, fn, f"{order_label} q2[{k},{j}]",
                                     float(np.abs(vals).max(initial=0.0)))
        op = op + _divergence_form_term(grid, k, j, vals)
        sup_q2 = max(sup_q2, float(np.abs(vals).max(initial=0.0)))
    complex_part = False
    for j, fn in spec_i.get("q1", {}).items():
        vals = _require_real(sample_node_field(grid, fn), f"{order_label} q1")
        if j < n_lat:
            _check_lateral_vanishing(grid, fn, f"{order_label} q1[{j}]",
                                     float(np.abs(vals).max(initial=0.0)))
        d = centered_gradient(grid, j)
        op = op + 1j * (sp.diags(vals) @ d + d @ sp.diags(vals))
        sup_q1 = max(sup_q1, float(np.abs(vals).max(initial=0.0)))
        complex_part = True
    if "q0" in spec_i:
        vals = _require_real(sample_node_field(grid, spec_i["q0"]), f"{order_label} q0")
        op = op + sp.diags(vals)
        sup_q0 = max(sup_q0, float(np.abs(vals).max(initial=0.0)))
    a = n_ax * sup_q2 + sup_q1
    b = sup_q2 + 2.0 * sup_q1 + sup_q0
    return _hermitian(op, tol=1e-10), not complex_part, (a, b), (sup_q2, sup_q1, sup_q0)


def _build_diffop(grid, params, metric_only=False):
    allowed = {"order1", "order2", "order2_nonpositive"}
    stray = set(params) - allowed
    if stray:
        raise ModelError(f"unknown differential-model keys {sorted(stray)}; "
                         "coefficients nest under order1/order2")
    if not (params.get("order1") or params.get("order2")):
        raise ModelError("differential model needs at least one coefficient")
    built = []
    for key in ("order1", "order2"):
        spec_i = dict(params.get(key, {}))
        if metric_only and (spec_i.get("q1") or "q0" in spec_i):
            raise ModelError("metric family admits divergence-form terms only")
        built.append(_diffop_order(grid, spec_i, key))
    m1, real1, b1, _ = built[0]
    m2, real2, b2, sups2 = built[1]
    nonpos = False
    if params.get("order2_nonpositive"):
        top = float(np.linalg.eigvalsh(m2.toarray()).max()) if m2.matrix.nnz else 0.0
        if top > _SIGN_TOL * (1.0 + sum(sups2)):
            raise ModelError("order 2 declared nonpositive but has positive spectrum")
        nonpos = True
    bounds = (b1, b2, (0.0, 0.0))
    return m1, m2, None, real1 and real2, nonpos, bounds


def _build_magnetic(grid, params):
    _reject_strays(params, {"a", "w1", "w2"}, "magnetic")
    n_ax = len(grid.axes)
    a_fns = params.get("a")
    if a_fns is None or len(a_fns) != n_ax:
        raise ModelError("magnetic family needs one vector-potential component per axis")
    cross = sp.csr_matrix((grid.n_nodes, grid.n_nodes), dtype=complex)
    sq = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
    sup_a = 0.0
    sup_div = 0.0
    for ax in range(n_ax):
        fn = a_fns[ax]
        fc = grids.face_coords(grid, ax)
        a_face = _require_real(_sample(fn, fc), f"a[{ax}]")
        if grid.axes[ax].kind == "lateral":
            _check_lateral_vanishing(grid, fn, f"a[{ax}]",
                                     float(np.abs(a_face).max(initial=0.0)))
        g, w = grids.face_gradient(grid, ax)
        avg = grids.face_average(grid, ax)
        wa = sp.diags(w * a_face)
        y = (avg.conjugate().T @ wa @ g) / grid.weight
        cross = cross + 1j * (y - y.conjugate().T)
        sq = sq + (avg.conjugate().T @ sp.diags(w * a_face ** 2) @ avg) / grid.weight
        sup_a = max(sup_a, float(np.abs(a_face).max(initial=0.0)))
        h = grid.axes[ax].spacing
        sup_div += float(np.abs(np.diff(a_face)).max(initial=0.0)) / h
    w1 = _require_real(sample_node_field(grid, params.get("w1", 0.0)), "w1")
    w2 = _require_real(sample_node_field(grid, params.get("w2", 0.0)), "w2")
    m1 = _hermitian(cross + sp.diags(w1).astype(complex), tol=1e-10)
    m2 = _hermitian(sq + sp.diags(w2))
    sup_w1 = float(np.abs(w1).max(initial=0.0))
    sup_l2 = float(np.abs(sup_a ** 2 + np.abs(w2).max(initial=0.0)))
    bounds = ((sup_a, sup_a + sup_div + sup_w1), (0.0, sup_l2), (0.0, 0.0))
    return m1, m2, None, False, False, bounds


def build_model(kind: str, params: dict, grid: CellGrid,
                cubic: CubicTail | None = None) -> PerturbationModel:
    """Assemble and validate one perturbation family on a cell grid."""
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}")
    if kind == "potential":
        m1, m2, tail, is_real, nonpos, bounds = _build_potential(grid, params)
    elif kind == "integral":
        m1, m2, tail, is_real, nonpos, bounds = _build_integral(grid, params)
    elif kind == "magnetic":
        m1, m2, tail, is_real, nonpos, bounds = _build_magnetic(grid, params)
    else:
        m1, m2, tail, is_real, nonpos, bounds = _build_diffop(
            grid, params, metric_only=(kind == "metric"))
    if cubic is not None:
        tail = cubic
    return PerturbationModel(kind, grid, m1, m2, tail, is_real, nonpos, bounds,
                             dict(params))


# ── certified cutoff constants ─────────────────────────────────────────────


def bound_constants(model: PerturbationModel, v0_sup: float = 0.0
                    ) -> BoundConstants:
    """Relative-bound constants assembled from coefficient sup norms.

    Multiplication-type families commute with cutoffs, so their c6 and c8
    vanish; kernel families trade the commutator for a Hilbert-Schmidt bound;
    gradient-bearing families pay one power of the cutoff slope per
    derivative moved.  A 1.25 headroom factor guards the mesh-sampled sups.
    ``v0_sup`` feeds the background-potential constant c11.

    Multiplication and kernel constants are exact discrete sups, no slack;
    derivative-bearing families carry a 1.25 headroom on the coefficient
    estimates entering their integration-by-parts bounds.
    """
    head = 1.25
    c5 = 3.0 / min(ax.length for ax in
                   model.grid.axes[:model.grid.spec.lateral_dim])
    c11 = 2.0 * abs(v0_sup) + 2.0
    (a1, b1), (a2, b2), (a3, b3) = model.form_bounds
    if model.kind == "potential":
        return BoundConstants(0.0, max(b1, b2, b3), 0.0, 0.0, 0.0, c5, c11)
    if model.kind == "integral":
        hs = max(b1, b2)
        diam = float(np.sqrt(sum(ax.length ** 2 for ax in model.grid.axes)))
        return BoundConstants(0.0, hs, 0.0, 2.0 * hs, hs * diam, c5, c11)
    if model.kind == "magnetic":
        sup_a = a1
        c6 = 2.0 * sup_a
        c7 = b1 + b2
        return BoundConstants(c6, c7, c7, 0.0, 2.0 * sup_a, c5, c11)
    # diffop / metric: one derivative may land on the cutoff (slope term),
    # two land on it in the commutator (slope + curvature, affine majorant)
    n_ax = len(model.grid.axes)
    amax, bmax = max(a1, a2, a3), max(b1, b2, b3)
    c6 = head * (amax + n_ax * amax)
    base = head * (amax + bmax)
    return BoundConstants(c6, base, base, 0.0,
                          head * 2.0 * n_ax * (amax + bmax), c5, c11)
