"""Second-order expansion of the lowest cell eigenvalue in the coupling.

For the periodic single-cell operator H(delta) = H0 + delta L1 + delta^2 L2
(+ delta^3 L3) with simple ground pair (Lambda0, Psi0), the engine computes

    Lambda1 = (L1 Psi0, Psi0)
    Psi1    solves (H0 - Lambda0) Psi1 = -L1 Psi0 + Lambda1 Psi0,  Psi1 ⊥ Psi0
    Lambda2 = (L2 Psi0, Psi0) + (Psi1, L1 Psi0)
    Psi2    solves the next corrector equation, Psi2 ⊥ Psi0

plus the Neumann comparison corrector Phi1 and the positivity functional

    eta = -(b + 1) Lambda2 + (1 - b) (Phi1 - Psi1, L1 Psi0)

used to classify the disorder regime: linear energy splitting when
Lambda1 < 0, quadratic splitting when Lambda1 = 0 and eta > 0.  All solves
ride on the deflated bordered system of :mod:`weakloc.spectral`, so the
expansion is exact perturbation theory for the assembled matrices; residuals
against the true cell eigenvalue then decay at third order in delta by
construction, which :func:`verify_taylor` fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grids, spectral
from .grids import CellGrid, GammaFace, RobinClosure, build_box_grid
from .models import PerturbationModel, coupling_matrix

CASE_LINEAR = "I"
CASE_QUADRATIC = "II"
CASE_OTHER = "other"

_IMAG_TOL = 1e-10
_CROSS_TOL = 1e-8
_GAP_TOL = 1e-10
_RESIDUAL_FLOOR = 1e-12


class ExpansionError(RuntimeError):
    """Raised when the expansion hypotheses fail on the given data."""


def case_tolerance(lambda0: float) -> float:
    return 1e-8 * (1.0 + abs(lambda0))


def ground_state_baseline(grid: CellGrid, v0=None) -> tuple[float, np.ndarray]:
    """Unperturbed ground pair (Lambda0, Psi0), laterally constant.

    Whole-space mode returns exactly (0, normalized constant).  Layer mode
    solves the one-dimensional transversal problem and extends the positive
    ground state laterally; the result is an exact discrete eigenvector of
    the periodic cell operator because the lateral ground mode is constant.
    """
    if grid.spec.mode == grids.WHOLE_SPACE:
        psi0 = np.full(grid.n_nodes, 1.0 / np.sqrt(grid.volume))
        return 0.0, psi0
    t, _ = grids.transversal_operator(grid.spec, v0)
    vals, vecs = np.linalg.eigh(t.toarray())
    gap = vals[1] - vals[0]
    if gap <= _GAP_TOL * (1.0 + abs(vals[0])):
        raise ExpansionError("transversal ground state is not simple")
    phi = vecs[:, 0]
    if phi.sum() < 0:
        phi = -phi
    if phi.min() <= 0:
        raise ExpansionError("transversal ground state failed positivity")
    lat = int(np.prod(grid.shape[:-1]))
    psi0 = np.tile(phi, lat)
    psi0 = psi0 / grids.norm(grid, psi0)
    return float(vals[0]), psi0


@dataclass(frozen=True)
class ExpansionReport:
    """Expansion coefficients, correctors and the regime classification."""

    lambda0: float
    lambda1: float
    lambda2: float
    eta: float
    case: str
    b: float
    tol_case: float
    cross_term: complex            # (Phi1 - Psi1, L1 Psi0)
    psi0: np.ndarray = field(repr=False)
    psi1: np.ndarray = field(repr=False)
    psi2: np.ndarray = field(repr=False)
    phi1: np.ndarray = field(repr=False)
    rho1: dict = field(repr=False)
    rho2: dict = field(repr=False)
    model_kind: str = ""

    def scalars(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "eta": self.eta,
            "case": self.case,
            "b": self.b,
            "tol_case": self.tol_case,
            "cross_term_real": self.cross_term.real,
            "cross_term_imag": self.cross_term.imag,
            "model_kind": self.model_kind,
        }


def _real_scalar(value: complex, what: str, scale: float) -> float:
    if abs(value.imag) > _IMAG_TOL * (1.0 + scale):
        raise ExpansionError(f"{what} has imaginary part {value.imag:.3e}")
    return float(value.real)


def _classify(lambda1: float, eta: float, b: float, tol: float) -> str:
    if lambda1 < -tol:
        return CASE_LINEAR
    if abs(lambda1) <= tol and b > -1.0 and eta > tol:
        return CASE_QUADRATIC
    return CASE_OTHER


def neumann_cell_operator(grid: CellGrid, v0=None):
    """The same cell with lateral Neumann walls (comparison operator)."""
    box = build_box_grid(grid.spec, (0,) * grid.spec.lateral_dim, 1,
                         lateral_bc=grids.NEUMANN)
    return grids.assemble_h0(box, v0)


def boundary_log_derivative(grid, num: np.ndarray, den_val: np.ndarray,
                            face: GammaFace) -> np.ndarray:
    """Outward derivative of ``num`` over face values of the reference state."""
    _, dnu = grids.one_sided_face_data(grid, num, face)
    return dnu / den_val


def expand(model: PerturbationModel, v0=None, b: float = 0.0) -> ExpansionReport:
    """Full second-order expansion with correctors and case classification."""
    grid = model.grid
    h0 = grids.assemble_h0(grid, v0)
    lam0, psi0 = ground_state_baseline(grid, v0)
    scale0 = 1.0 + abs(lam0)

    l1psi0 = model.order1.matrix @ psi0
    lam1 = _real_scalar(grids.inner(grid, l1psi0, psi0), "Lambda1", scale0)
    psi1 = spectral.solve_reduced(h0, lam0, psi0, -l1psi0 + lam1 * psi0)

    l2psi0 = model.order2.matrix @ psi0
    lam2 = _real_scalar(
        grids.inner(grid, l2psi0, psi0) + grids.inner(grid, psi1, l1psi0),
        "Lambda2", scale0)
    rhs2 = -(model.order1.matrix @ psi1) - l2psi0 + lam1 * psi1 + lam2 * psi0
    psi2 = spectral.solve_reduced(h0, lam0, psi0, rhs2)

    h0n = neumann_cell_operator(grid, v0)
    phi1 = spectral.solve_reduced(h0n, lam0, psi0, -l1psi0)

    cross = grids.inner(grid, phi1 - psi1, l1psi0)
    tol = case_tolerance(lam0)
    if abs(lam1) <= tol:
        if abs(cross.imag) > _CROSS_TOL * (1.0 + abs(cross)):
            raise ExpansionError("comparison cross term failed realness")
        if cross.real > _CROSS_TOL * (1.0 + abs(cross)):
            raise ExpansionError("comparison cross term must be nonpositive")
    eta = -(b + 1.0) * lam2 + (1.0 - b) * cross.real

    rho1, rho2 = {}, {}
    for f in grids.gamma_faces(grid):
        val0, _ = grids.one_sided_face_data(grid, psi0, f)
        val1, dnu1 = grids.one_sided_face_data(grid, psi1, f)
        _, dnu2 = grids.one_sided_face_data(grid, psi2, f)
        key = (f.axis, f.side)
        rho1[key] = dnu1 / val0
        rho2[key] = dnu2 / val0 - val1 * dnu1 / val0 ** 2
    return ExpansionReport(lam0, lam1, lam2, eta,
                           _classify(lam1, eta, b, tol), b, tol, cross,
                           psi0, psi1, psi2, phi1, rho1, rho2, model.kind)


def cell_eigenvalue(model: PerturbationModel, v0, delta: float,
                    method: str = "auto") -> tuple[float, np.ndarray]:
    """Lowest eigenpair of the perturbed periodic cell at coupling ``delta``.

    The eigenvector is unit-normalized and phase-aligned so its overlap with
    the unperturbed ground state is real positive.  Raises when the lowest
    eigenvalue is not simple at tolerance.
    """
    grid = model.grid
    op = grids.assemble_h0(grid, v0).matrix + coupling_matrix(model, delta)
    pairs = spectral.smallest_eigenpairs(op, k=min(2, op.shape[0]), method=method)
    if len(pairs) > 1:
        gap = pairs[1].value - pairs[0].value
        if gap <= _GAP_TOL * (1.0 + abs(pairs[0].value)):
            raise ExpansionError(f"lowest cell eigenvalue not simple (gap {gap:.3e})")
    _, psi0 = ground_state_baseline(grid, v0)
    psi = pairs[0].vector
    psi = psi / grids.norm(grid, psi)
    overlap = grids.inner(grid, psi, psi0)
    if abs(overlap) == 0.0:
        raise ExpansionError("perturbed ground state orthogonal to baseline")
    psi = psi * (overlap.conjugate() / abs(overlap))
    return pairs[0].value, psi


@dataclass(frozen=True)
class TaylorCheck:
    """Residual ladder of the second-order prediction along delta."""

    deltas: np.ndarray
    value_residuals: np.ndarray
    field_residuals: np.ndarray
    value_slope: float | None
    field_slope: float | None
    floor: float

    @property
    def value_exact(self) -> bool:
        return bool(np.all(self.value_residuals <= self.floor))


def _fit_slope(x: np.ndarray, y: np.ndarray, floor: float) -> float | None:
    """Log-log slope over the clean head of a descending ladder.

    A power-law residual decreases strictly along decreasing x; the first
    uptick or dip under the floor marks where the eigensolver noise takes
    over, and everything from there on is excluded.  Needs three clean
    points, otherwise the slope is undefined (None).
    """
    keep: list[int] = []
    for i, r in enumerate(y):
        if r <= floor or (keep and r >= y[keep[-1]]):
            break
        keep.append(i)
    if len(keep) < 3:
        return None
    k = np.asarray(keep)
    return float(np.polyfit(np.log(x[k]), np.log(y[k]), 1)[0])


def verify_taylor(model: PerturbationModel, v0, deltas) -> TaylorCheck:
    """Third-order decay check of value and field residuals in delta."""
    rep = expand(model, v0)
    grid = model.grid
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    floor = _RESIDUAL_FLOOR * (1.0 + abs(rep.lambda0))
    val_res, fld_res = [], []
    for d in deltas:
        lam, psi = cell_eigenvalue(model, v0, d)
        val_res.append(abs(lam - (rep.lambda0 + d * rep.lambda1 + d * d * rep.lambda2)))
        u = psi / grids.inner(grid, psi, rep.psi0)
        pred = rep.psi0 + d * rep.psi1 + d * d * rep.psi2
        fld_res.append(grids.norm(grid, u - pred))
    val_res = np.asarray(val_res)
    fld_res = np.asarray(fld_res)
    return TaylorCheck(deltas, val_res, fld_res,
                       _fit_slope(deltas, val_res, floor),
                       _fit_slope(deltas, fld_res, floor), floor)


def minimizer_over_delta(model: PerturbationModel, v0, epsilon: float,
                         b: float, samples: int = 33):
    """Grid minimizer of the cell eigenvalue over [epsilon b, epsilon]."""
    if samples < 2:
        raise ExpansionError("need at least two delta samples")
    lo = epsilon * b
    deltas = np.linspace(lo, epsilon, samples)
    vals = np.array([cell_eigenvalue(model, v0, d)[0] for d in deltas])
    i = int(np.argmin(vals))
    return float(deltas[i]), deltas, vals


@dataclass(frozen=True)
class DensityReport:
    """Boundary log-derivative of the perturbed cell ground state."""

    epsilon: float
    lambda_eps: float
    rho_eps: dict
    rho1: dict
    rho2: dict
    sup_res_order1: float
    sup_res_order2: float


def mezincescu_density(model: PerturbationModel, v0, epsilon: float,
                       report: ExpansionReport | None = None) -> DensityReport:
    """Face densities rho^eps with their expansion residuals.

    rho^eps is the outward log-derivative of the perturbed cell ground state
    on the lateral boundary, evaluated by one-sided quadratic face fits; the
    comparison fields rho1, rho2 come from the expansion correctors with the
    matching discrete quotients, so the residual after subtracting
    eps rho1 + eps^2 rho2 decays at third order.
    """
    rep = report if report is not None else expand(model, v0)
    grid = model.grid
    lam, psi = cell_eigenvalue(model, v0, epsilon)
    if np.iscomplexobj(psi) and np.abs(psi.imag).max() > 1e-8 * np.abs(psi).max():
        raise ExpansionError("boundary density needs a real ground state")
    psi = psi.real if np.iscomplexobj(psi) else psi
    rho_eps = {}
    r1 = r2 = 0.0
    for f in grids.gamma_faces(grid):
        val, dnu = grids.one_sided_face_data(grid, psi, f)
        if np.abs(val).min() <= 0.0:
            raise ExpansionError("perturbed ground state vanishes at the boundary")
        key = (f.axis, f.side)
        rho_eps[key] = dnu / val
        r1 = max(r1, float(np.abs(rho_eps[key] - epsilon * rep.rho1[key]).max()))
        r2 = max(r2, float(np.abs(rho_eps[key] - epsilon * rep.rho1[key]
                                  - epsilon ** 2 * rep.rho2[key]).max()))
    return DensityReport(epsilon, lam, rho_eps, rep.rho1, rep.rho2, r1, r2)


def density_residual_order(model: PerturbationModel, v0, eps_list,
                           report: ExpansionReport | None = None):
    """Fit of the second-order density residual along an epsilon ladder.

    Returns (slope, residuals); slope is None when every residual sits below
    the rounding floor (symmetric models produce exactly zero densities).
    """
    rep = report if report is not None else expand(model, v0)
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    res = np.array([mezincescu_density(model, v0, e, rep).sup_res_order2
                    for e in eps])
    # face-fit noise sits near 1/h times the eigenvector rounding error,
    # two orders below this floor at desk meshes
    floor = 1e-11 * (1.0 + abs(rep.lambda0))
    return _fit_slope(eps, res, floor), res


def matched_closure(model: PerturbationModel, v0, epsilon: float
                    ) -> tuple[RobinClosure, float]:
    """Robin closure matched to the perturbed cell ground state.

    Boxes truncated with this closure reproduce the periodic cell minimum
    exactly at full coupling, which is the design property the finite-volume
    lower bounds rest on.
    """
    lam, psi = cell_eigenvalue(model, v0, epsilon)
    return RobinClosure.from_cell_ground_state(model.grid, psi), lam
