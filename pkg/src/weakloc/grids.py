"""Cell-centered tensor-product grids for periodic layers and whole-space slabs.

The computational domain is a single periodicity cell (0, l_1) x ... x (0, l_n)
x (0, d), or a box of N^n such cells.  Two modes are supported:

* ``layer``: n lateral axes plus one transversal axis of width d.  The
  transversal boundary condition is Dirichlet or Neumann per side; lateral
  boundaries are periodic, Dirichlet, Neumann, or Robin with a prescribed
  log-derivative density (used for spectrally matched box truncations).
* ``whole-space``: lateral axes only, no transversal axis and no background
  potential; the unperturbed ground energy is exactly zero.

All grids are cell-centered: nodes sit at (j + 1/2) h, so no node lies on the
boundary, every node carries the identical quadrature weight prod(h_axis), and
the weight sum reproduces the cell volume exactly.  Second differences close at
boundaries through ghost nodes (odd reflection for Dirichlet, even for
Neumann, a rational ratio map for Robin), which keeps every assembled operator
symmetric with respect to the unweighted dot product.  The per-axis face
gradients returned by :func:`face_gradient` satisfy an exact
summation-by-parts identity with those stencils, so the discrete Green
identity holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

LAYER = "layer"
WHOLE_SPACE = "whole-space"

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
PERIODIC = "periodic"
MEZINCESCU = "mezincescu"

# node classes
INTERIOR = 0
TRANSVERSAL_BOUNDARY = 1
LATERAL_BOUNDARY = 2

_HERMITICITY_TOL = 1e-12


class GridError(ValueError):
    """Raised for invalid grid specifications or assembly requests."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry and mesh resolution of one periodicity cell.

    Parameters
    ----------
    mode : ``"layer"`` or ``"whole-space"``.
    lateral_dim : number of lateral (periodic-lattice) axes, 1 or 2.
    cell_lengths : lateral edge lengths of the cell.
    width : transversal width d (layer mode only).
    mesh_lateral : nodes per lateral cell edge (>= 8).
    mesh_transversal : nodes across the transversal width (>= 8 in layer
        mode, must be 1 in whole-space mode).
    transversal_bc : (bottom, top) boundary condition, each ``"dirichlet"``
        or ``"neumann"``.
    """

    mode: str
    lateral_dim: int
    cell_lengths: tuple[float, ...]
    mesh_lateral: int
    width: float = 0.0
    mesh_transversal: int = 1
    transversal_bc: tuple[str, str] = (DIRICHLET, DIRICHLET)

    def __post_init__(self):
        if self.mode not in (LAYER, WHOLE_SPACE):
            raise GridError(f"unknown mode {self.mode!r}")
        if self.lateral_dim not in (1, 2):
            raise GridError("lateral_dim must be 1 or 2")
        if len(self.cell_lengths) != self.lateral_dim:
            raise GridError("cell_lengths length must equal lateral_dim")
        if any(l <= 0 for l in self.cell_lengths):
            raise GridError("cell lengths must be positive")
        if self.mesh_lateral < 8:
            raise GridError("mesh_lateral must be >= 8")
        if self.mode == LAYER:
            if self.width <= 0:
                raise GridError("layer mode needs positive width")
            if self.mesh_transversal < 8:
                raise GridError("mesh_transversal must be >= 8 in layer mode")
            for bc in self.transversal_bc:
                if bc not in (DIRICHLET, NEUMANN):
                    raise GridError(f"bad transversal bc {bc!r}")
        else:
            if self.mesh_transversal != 1:
                raise GridError("whole-space mode requires mesh_transversal = 1")

    @property
    def cell_volume(self) -> float:
        vol = float(np.prod(self.cell_lengths))
        if self.mode == LAYER:
            vol *= self.width
        return vol


@dataclass(frozen=True)
class Axis:
    """One tensor factor of the grid: length, node count and closures."""

    kind: str               # "lateral" or "transversal"
    length: float
    n_nodes: int
    bc: tuple[str, str]     # closure at (low, high) end; ("periodic","periodic") for wrap

    @property
    def spacing(self) -> float:
        return self.length / self.n_nodes

    @property
    def coords(self) -> np.ndarray:
        h = self.spacing
        return (np.arange(self.n_nodes) + 0.5) * h


def _node_classes(shape, axes) -> np.ndarray:
    """Partition nodes into interior / transversal-boundary / lateral-boundary.

    Transversal sheets adjacent to the layer faces take precedence; remaining
    nodes adjacent to a lateral cell face form the lateral-boundary class.
    """
    cls = np.zeros(shape, dtype=np.int8)
    lateral_sel = np.zeros(shape, dtype=bool)
    for a, ax in enumerate(axes):
        if ax.kind != "lateral":
            continue
        idx = [slice(None)] * len(shape)
        idx[a] = [0, shape[a] - 1]
        lateral_sel[tuple(idx)] = True
    cls[lateral_sel] = LATERAL_BOUNDARY
    for a, ax in enumerate(axes):
        if ax.kind != "transversal":
            continue
        idx = [slice(None)] * len(shape)
        idx[a] = [0, shape[a] - 1]
        cls[tuple(idx)] = TRANSVERSAL_BOUNDARY
    return cls.ravel()


@dataclass(frozen=True)
class CellGrid:
    """Discretization of a single periodicity cell."""

    spec: GridSpec
    axes: tuple[Axis, ...]
    shape: tuple[int, ...]
    weight: float                 # identical quadrature weight of every node
    node_class: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_lateral(self) -> int:
        return self.spec.lateral_dim

    @property
    def volume(self) -> float:
        return self.weight * self.n_nodes

    def coords(self) -> list[np.ndarray]:
        """Per-axis node coordinates of every node, C-order flattened."""
        mesh = np.meshgrid(*[ax.coords for ax in self.axes], indexing="ij")
        return [m.ravel() for m in mesh]


@dataclass(frozen=True)
class BoxGrid:
    """Discretization of a box of ``n_cells`` cells per lateral axis."""

    spec: GridSpec
    axes: tuple[Axis, ...]
    shape: tuple[int, ...]
    weight: float
    node_class: np.ndarray = field(repr=False)
    alpha: tuple[int, ...] = ()
    n_cells: int = 1
    lateral_bc: str = PERIODIC

    n_nodes = CellGrid.n_nodes
    n_lateral = CellGrid.n_lateral
    volume = CellGrid.volume
    coords = CellGrid.coords

    def cell_labels(self) -> list[tuple[int, ...]]:
        """Lattice labels alpha + k of all cells, lexicographic."""
        n = self.spec.lateral_dim
        ranges = [range(self.alpha[a], self.alpha[a] + self.n_cells) for a in range(n)]
        out = [()]
        for r in ranges:
            out = [t + (i,) for t in out for i in r]
        return out

    def cell_node_indices(self, label: tuple[int, ...]) -> np.ndarray:
        """Flat indices of the nodes of cell ``label`` (C-order within the cell)."""
        m = self.spec.mesh_lateral
        sl = []
        for a in range(self.spec.lateral_dim):
            k = label[a] - self.alpha[a]
            if not 0 <= k < self.n_cells:
                raise GridError(f"cell {label} outside box")
            sl.append(slice(k * m, (k + 1) * m))
        if self.spec.mode == LAYER:
            sl.append(slice(None))
        return np.arange(self.n_nodes).reshape(self.shape)[tuple(sl)].ravel()


def build_cell_grid(spec: GridSpec) -> CellGrid:
    """Mesh one periodicity cell; lateral axes wrap periodically."""
    axes = [
        Axis("lateral", spec.cell_lengths[a], spec.mesh_lateral, (PERIODIC, PERIODIC))
        for a in range(spec.lateral_dim)
    ]
    if spec.mode == LAYER:
        axes.append(Axis("transversal", spec.width, spec.mesh_transversal, spec.transversal_bc))
    shape = tuple(ax.n_nodes for ax in axes)
    weight = float(np.prod([ax.spacing for ax in axes]))
    return CellGrid(spec, tuple(axes), shape, weight, _node_classes(shape, axes))


def build_box_grid(spec: GridSpec, alpha: Sequence[int], n_cells: int,
                   lateral_bc: str = PERIODIC) -> BoxGrid:
    """Mesh a box of ``n_cells`` cells per lateral axis anchored at ``alpha``."""
    if n_cells < 1:
        raise GridError("n_cells must be >= 1")
    if lateral_bc not in (PERIODIC, DIRICHLET, NEUMANN, MEZINCESCU):
        raise GridError(f"bad lateral bc {lateral_bc!r}")
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != spec.lateral_dim:
        raise GridError("alpha must have one entry per lateral axis")
    end = PERIODIC if lateral_bc == PERIODIC else lateral_bc
    axes = [
        Axis("lateral", spec.cell_lengths[a] * n_cells, spec.mesh_lateral * n_cells,
             (end, end))
        for a in range(spec.lateral_dim)
    ]
    if spec.mode == LAYER:
        axes.append(Axis("transversal", spec.width, spec.mesh_transversal, spec.transversal_bc))
    shape = tuple(ax.n_nodes for ax in axes)
    weight = float(np.prod([ax.spacing for ax in axes]))
    return BoxGrid(spec, tuple(axes), shape, weight, _node_classes(shape, axes),
                   alpha, n_cells, lateral_bc)


# ── sparse operator container ──────────────────────────────────────────────


@dataclass(frozen=True)
class SparseHermitian:
    """CSR matrix validated to be Hermitian at construction."""

    matrix: sp.csr_matrix
    is_real: bool

    @classmethod
    def from_matrix(cls, m, tol: float = _HERMITICITY_TOL) -> "SparseHermitian":
        m = sp.csr_matrix(m)
        scale = abs(m).max() if m.nnz else 1.0
        defect = abs(m - m.conjugate().T).max() if m.nnz else 0.0
        if defect > tol * max(scale, 1.0):
            raise GridError(f"hermiticity defect {defect:.3e} above tolerance")
        is_real = not np.iscomplexobj(m.data) or float(np.abs(m.data.imag).max(initial=0.0)) == 0.0
        if is_real and np.iscomplexobj(m.data):
            m = sp.csr_matrix(m.real)
        return cls(m, is_real)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, u):
        return self.matrix @ u


# ── one-dimensional stencil factory ────────────────────────────────────────


def _axis_second_difference(ax: Axis) -> sp.csr_matrix:
    """Negative second difference -u'' on one axis, ghost-closed per its bc."""
    m, h = ax.n_nodes, ax.spacing
    if ax.bc[0] == PERIODIC:
        main = np.full(m, 2.0)
        t = sp.diags([main, -np.ones(m - 1), -np.ones(m - 1)], [0, -1, 1], format="lil")
        t[0, m - 1] += -1.0
        t[m - 1, 0] += -1.0
        return sp.csr_matrix(t) / h ** 2
    main = np.full(m, 2.0)
    for side, i in ((0, 0), (1, m - 1)):
        bc = ax.bc[side]
        if bc == DIRICHLET:
            main[i] = 3.0       # odd ghost reflection
        elif bc in (NEUMANN, MEZINCESCU):
            main[i] = 1.0       # even ghost reflection; Robin handled as diagonal add
        else:
            raise GridError(f"bad closure {bc!r}")
    t = sp.diags([main, -np.ones(m - 1), -np.ones(m - 1)], [0, -1, 1], format="csr")
    return t / h ** 2


def _kron_embed(mats: list) -> sp.csr_matrix:
    return sp.csr_matrix(reduce(sp.kron, mats))


def _axis_embed(grid, a: int, t) -> sp.csr_matrix:
    mats = []
    for b, ax in enumerate(grid.axes):
        mats.append(t if b == a else sp.identity(ax.n_nodes, format="csr"))
    return _kron_embed(mats)


# ── Robin (spectrally matched) closures ────────────────────────────────────


@dataclass(frozen=True)
class RobinClosure:
    """Ghost ratios for the lateral box boundary.

    ``ratio[(axis, side)]`` holds, for every node on the boundary sheet of
    that face (C-order over the remaining axes of one cell), the prescribed
    ghost-to-node ratio c.  The equivalent outward log-derivative density is
    rho = 2 (c - 1) / (h (c + 1)); c = 1 recovers the Neumann closure.
    Ratios are stored per cell sheet and tile periodically along the face of
    a multi-cell box.
    """

    ratio: dict

    @classmethod
    def from_cell_ground_state(cls, grid: CellGrid, psi: np.ndarray) -> "RobinClosure":
        """Closure that makes the periodic extension of ``psi`` an exact
        eigenfunction of the truncated box: the ghost value demanded by
        periodic wrap, expressed as a multiple of the boundary-sheet value."""
        psi = np.asarray(psi)
        if np.iscomplexobj(psi) and np.abs(psi.imag).max() > 1e-10 * np.abs(psi).max():
            raise GridError("matched closure needs a real ground state")
        v = psi.real.reshape(grid.shape)
        ratio = {}
        for a in range(grid.spec.lateral_dim):
            first = np.take(v, 0, axis=a)
            last = np.take(v, v.shape[a] - 1, axis=a)
            if np.abs(first).min() == 0.0 or np.abs(last).min() == 0.0:
                raise GridError("ground state vanishes on a boundary sheet")
            ratio[(a, 0)] = (last / first).ravel()
            ratio[(a, 1)] = (first / last).ravel()
        return cls(ratio)

    @classmethod
    def from_density(cls, grid: CellGrid, rho: dict) -> "RobinClosure":
        """Closure from outward log-derivative densities per face."""
        ratio = {}
        for a in range(grid.spec.lateral_dim):
            h = grid.axes[a].spacing
            for side in (0, 1):
                r = np.asarray(rho[(a, side)], dtype=float).ravel()
                if np.abs(r).max(initial=0.0) * h >= 2.0:
                    raise GridError("Robin density too large for the mesh step")
                ratio[(a, side)] = (1.0 + h * r / 2.0) / (1.0 - h * r / 2.0)
        return cls(ratio)

    def density(self, grid) -> dict:
        """Outward log-derivative densities equivalent to the stored ratios."""
        out = {}
        for (a, side), c in self.ratio.items():
            h = grid.axes[a].spacing
            out[(a, side)] = 2.0 * (c - 1.0) / (h * (c + 1.0))
        return out


def _robin_diagonal(grid: BoxGrid, closure: RobinClosure) -> np.ndarray:
    """Diagonal correction converting Neumann closures into ratio closures."""
    diag = np.zeros(grid.shape)
    m = grid.spec.mesh_lateral
    for a in range(grid.spec.lateral_dim):
        h = grid.axes[a].spacing
        for side in (0, 1):
            c_cell = closure.ratio[(a, side)]
            sheet_shape = grid.shape[:a] + grid.shape[a + 1:]
            c_sheet = _tile_cell_sheet(grid, a, c_cell, sheet_shape, m)
            idx = [slice(None)] * len(grid.shape)
            idx[a] = 0 if side == 0 else grid.shape[a] - 1
            diag[tuple(idx)] += (1.0 - c_sheet) / h ** 2
    return diag.ravel()


def _tile_cell_sheet(grid, axis, values, sheet_shape, m) -> np.ndarray:
    """Tile a one-cell face sheet periodically over a box face."""
    cell_sheet_shape = []
    reps = []
    for b, ax in enumerate(grid.axes):
        if b == axis:
            continue
        if ax.kind == "lateral":
            cell_sheet_shape.append(m)
            reps.append(ax.n_nodes // m)
        else:
            cell_sheet_shape.append(ax.n_nodes)
            reps.append(1)
    v = np.asarray(values, dtype=float).reshape(cell_sheet_shape or (1,))
    if not cell_sheet_shape:
        return v[0]
    return np.tile(v, reps).reshape(sheet_shape)


# ── operator assembly ──────────────────────────────────────────────────────


def potential_values(grid, v0) -> np.ndarray:
    """Sample the transversal background potential on every node."""
    if v0 is None:
        return np.zeros(grid.n_nodes)
    if grid.spec.mode == WHOLE_SPACE:
        raise GridError("whole-space mode carries no background potential")
    z = grid.axes[-1].coords
    if callable(v0):
        vals = np.asarray(v0(z), dtype=float)
    elif np.isscalar(v0):
        vals = np.full(len(z), float(v0))
    else:
        vals = np.asarray(v0, dtype=float)
        if vals.shape != z.shape:
            raise GridError("v0 array must match the transversal mesh")
    lat = int(np.prod(grid.shape[:-1]))
    return np.tile(vals, lat)


def assemble_h0(grid, v0=None, closure: RobinClosure | None = None) -> SparseHermitian:
    """Assemble -Laplacian + V0(z) on a cell or box grid.

    The lateral closure comes from the grid (periodic on cells; on boxes
    whatever :func:`build_box_grid` was given).  A box built with the
    ``"mezincescu"`` lateral condition requires ``closure``.
    """
    needs_closure = isinstance(grid, BoxGrid) and grid.lateral_bc == MEZINCESCU
    if needs_closure and closure is None:
        raise GridError("mezincescu boundary requested without a closure density")
    parts = []
    for a in range(len(grid.axes)):
        parts.append(_axis_embed(grid, a, _axis_second_difference(grid.axes[a])))
    op = reduce(lambda x, y: x + y, parts)
    vdiag = potential_values(grid, v0)
    if needs_closure:
        vdiag = vdiag + _robin_diagonal(grid, closure)
    if vdiag.any():
        op = op + sp.diags(vdiag)
    return SparseHermitian.from_matrix(op)


def transversal_operator(spec: GridSpec, v0=None) -> tuple[sp.csr_matrix, np.ndarray]:
    """One-dimensional transversal operator -d^2/dz^2 + V0(z) and its nodes."""
    if spec.mode != LAYER:
        raise GridError("transversal operator exists in layer mode only")
    ax = Axis("transversal", spec.width, spec.mesh_transversal, spec.transversal_bc)
    t = _axis_second_difference(ax)
    z = ax.coords
    if v0 is not None:
        vals = np.asarray(v0(z), dtype=float) if callable(v0) else np.full(len(z), float(v0))
        t = t + sp.diags(vals)
    return sp.csr_matrix(t), z


# ── face gradients and inner products ──────────────────────────────────────


def _axis_face_gradient(ax: Axis) -> tuple[sp.csr_matrix, np.ndarray]:
    """Face-difference gradient on one axis plus face quadrature weights.

    With the matching ghost closures, (1/h) G^T W_f G reproduces the negative
    second difference exactly, which is what makes the discrete Green identity
    an identity instead of an approximation.
    """
    m, h = ax.n_nodes, ax.spacing
    if ax.bc[0] == PERIODIC:
        g = sp.lil_matrix((m, m))
        for j in range(m):
            g[j, (j + 1) % m] = 1.0 / h
            g[j, j] -= 1.0 / h
        return sp.csr_matrix(g), np.full(m, h)
    g = sp.lil_matrix((m + 1, m))
    w = np.full(m + 1, h)
    w[0] = w[-1] = h / 2.0
    for j in range(m - 1):
        g[j + 1, j] = -1.0 / h
        g[j + 1, j + 1] = 1.0 / h
    if ax.bc[0] == DIRICHLET:
        g[0, 0] = 2.0 / h
    if ax.bc[1] == DIRICHLET:
        g[m, m - 1] = -2.0 / h
    # Neumann / Robin boundary faces keep zero rows: their flux is carried by
    # the diagonal closure, not the gradient.
    return sp.csr_matrix(g), w


def _axis_face_average(ax: Axis) -> sp.csr_matrix:
    """Average of the two nodes adjacent to each face, ghost-closed."""
    m = ax.n_nodes
    if ax.bc[0] == PERIODIC:
        g = sp.lil_matrix((m, m))
        for j in range(m):
            g[j, (j + 1) % m] = 0.5
            g[j, j] += 0.5
        return sp.csr_matrix(g)
    g = sp.lil_matrix((m + 1, m))
    for j in range(m - 1):
        g[j + 1, j] = 0.5
        g[j + 1, j + 1] = 0.5
    if ax.bc[0] == NEUMANN:
        g[0, 0] = 1.0           # even ghost: face value equals the node value
    if ax.bc[1] == NEUMANN:
        g[m, m - 1] = 1.0
    # Dirichlet faces average to zero; leave those rows empty
    return sp.csr_matrix(g)


def face_average(grid, axis: int) -> sp.csr_matrix:
    """Node-to-face averaging companion of :func:`face_gradient`."""
    mats = []
    for b, ax in enumerate(grid.axes):
        mats.append(_axis_face_average(ax) if b == axis
                    else sp.identity(ax.n_nodes, format="csr"))
    return _kron_embed(mats)


def face_coords(grid, axis: int) -> list[np.ndarray]:
    """Coordinates of the face mesh of one axis (faces at j*h along it)."""
    pts = []
    for b, ax in enumerate(grid.axes):
        if b == axis:
            if ax.bc[0] == PERIODIC:
                # face row j couples nodes j and j+1, so it sits at (j+1) h;
                # wrap the seam face back to coordinate zero
                pts.append(((np.arange(ax.n_nodes) + 1) % ax.n_nodes) * ax.spacing)
            else:
                pts.append(np.arange(ax.n_nodes + 1) * ax.spacing)
        else:
            pts.append(ax.coords)
    mesh = np.meshgrid(*pts, indexing="ij")
    return [m.ravel() for m in mesh]


def face_gradient(grid, axis: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """Gradient onto the face mesh of one axis, with total face weights."""
    g1, w1 = _axis_face_gradient(grid.axes[axis])
    mats, wparts = [], []
    for b, ax in enumerate(grid.axes):
        if b == axis:
            mats.append(g1)
            wparts.append(w1)
        else:
            mats.append(sp.identity(ax.n_nodes, format="csr"))
            wparts.append(np.full(ax.n_nodes, ax.spacing))
    g = _kron_embed(mats)
    w = reduce(np.outer, wparts).ravel() if len(wparts) > 1 else wparts[0]
    return g, w


def inner(grid, u, v) -> complex:
    """Quadrature inner product (u, v) = sum w u conj(v)."""
    val = grid.weight * np.vdot(v, u)   # vdot conjugates its first argument
    return complex(val)


def norm(grid, u) -> float:
    return float(np.sqrt(inner(grid, u, u).real))


def gradient_norm_sq(grid, u) -> float:
    """Sum over axes of the face-weighted squared gradient."""
    total = 0.0
    for a in range(len(grid.axes)):
        g, w = face_gradient(grid, a)
        gu = g @ u
        total += float(np.sum(w * np.abs(gu) ** 2))
    return total


def sobolev_norm(grid, u, order: int = 1) -> float:
    """Discrete W^{1,2} (or W^{2,2}) norm built from the face stencils."""
    total = inner(grid, u, u).real + gradient_norm_sq(grid, u)
    if order >= 2:
        lap = assemble_h0(grid).matrix @ u
        total += inner(grid, lap, lap).real
    return float(np.sqrt(total))


# ── boundary sheets ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class GammaFace:
    """One lateral face of the cell: its axis, side and adjacent node sheet."""

    axis: int
    side: int                      # 0 = low face, 1 = high face
    sheet: np.ndarray              # flat node indices of the adjacent sheet
    perp_shape: tuple[int, ...]


def gamma_faces(grid) -> list[GammaFace]:
    """Lateral boundary faces with the node sheets used for one-sided data."""
    faces = []
    flat = np.arange(grid.n_nodes).reshape(grid.shape)
    for a in range(grid.spec.lateral_dim):
        perp_shape = grid.shape[:a] + grid.shape[a + 1:]
        for side in (0, 1):
            i = 0 if side == 0 else grid.shape[a] - 1
            sheet = np.take(flat, i, axis=a).ravel()
            faces.append(GammaFace(a, side, sheet, perp_shape))
    return faces


def one_sided_face_data(grid, u, face: GammaFace, n_points: int = 3):
    """Quadratically extrapolated value and outward derivative on a face.

    Uses the ``n_points`` node sheets nearest the face; the one-sided
    difference weights solve the Vandermonde system at the staggered offsets
    h/2, 3h/2, ...  Returns (value, normal_derivative) arrays over the face.
    """
    a, h = face.axis, grid.axes[face.axis].spacing
    v = np.asarray(u).reshape(grid.shape)
    m = grid.shape[a]
    if face.side == 0:
        sheets = [np.take(v, j, axis=a) for j in range(n_points)]
    else:
        sheets = [np.take(v, m - 1 - j, axis=a) for j in range(n_points)]
    offsets = (np.arange(n_points) + 0.5) * h
    vand = np.vander(offsets, n_points, increasing=True).T
    val_w = np.linalg.solve(vand, np.eye(n_points)[0])
    der_w = np.linalg.solve(vand, np.eye(n_points)[1])
    value = sum(wi * s for wi, s in zip(val_w, sheets))
    deriv = sum(wi * s for wi, s in zip(der_w, sheets))
    # both sides parameterize by distance into the domain, so the outward
    # normal derivative is the negated fit derivative at offset zero
    return value.ravel(), (-deriv).ravel()
