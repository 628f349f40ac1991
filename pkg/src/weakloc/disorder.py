"""Disorder laws, sampling, and the probabilistic verification suite.

The random operators couple one i.i.d. variable to each lattice cell.  This
module owns the single-site law (density, moments, Sobolev data), the
counter-based sampler that makes parallel and serial runs agree bit for bit,
and the Monte-Carlo checks built on top:

  * relative-bound constants for the coupling and for the vector-field
    combination sum_k omega_k d/d omega_k applied to it,
  * the eigenvalue-counting (Wegner) estimate on finite boxes,
  * the initial-scale resolvent-decay event and its success frequency,
  * the energy-window arithmetic that combines the expansion with the
    vector-field regime, and the kinetic-rate feasibility report.

Counting events near a probe energy and resolvent block norms are exact
dense-spectral computations per sample; only the sampling itself is random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg as sla
import scipy.sparse as sp

from . import boxes, expansion, grids, models
from .boxes import Configuration
from .grids import BoxGrid, CellGrid
from .models import PerturbationModel

__all__ = [
    "DisorderLaw", "DisorderError", "RegimeViolation", "DegenerateLaw",
    "sample_configuration", "wegner_constants", "WegnerConstants",
    "vector_field_check", "wegner_empirical", "WegnerReport",
    "ise_empirical", "IseReport", "resolvent_decay_event",
    "localization_window", "LocalizationWindow",
    "hk_feasibility", "HkReport", "wilson_interval", "Z99",
]

#: z-score of the two-sided 99% normal interval, Phi^{-1}(0.995).
Z99 = 2.5758293035489004

_MASS_TOL = 1e-10
_MOMENT_TOL = 1e-8
_CDF_GRID = 8193
_QUOTIENT_SLACK = 1e-8
_DERIV_STEP = 1e-5


class DisorderError(RuntimeError):
    """Invalid disorder data or a failed probabilistic verification."""


class RegimeViolation(DisorderError):
    """Probe energy or coupling outside the certified regime."""


class DegenerateLaw(DisorderError):
    """Law without usable randomness (zero variance)."""


# ---------------------------------------------------------------------------
# single-site law


@dataclass(frozen=True)
class DisorderLaw:
    """Absolutely continuous single-site law on the interval [b, 1].

    ``density`` is the probability density, vanishing outside [b, 1];
    ``mean_abs`` and ``mean_deficit`` are E|omega| and E(1 - omega);
    ``sobolev_norm`` is the W^{1,1}(R) norm of the density, i.e. the L^1 mass
    plus the total variation including the jumps at both support endpoints.
    Declared values are validated against quadrature at construction.
    """

    density: Callable[[np.ndarray], np.ndarray]
    b: float
    mean_abs: float
    mean_deficit: float
    sobolev_norm: float
    variance: float = field(default=0.0)
    _grid: np.ndarray = field(default=None, repr=False, compare=False)
    _cdf_values: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not -1.0 <= self.b < 1.0:
            raise DisorderError(f"support endpoint b={self.b} outside [-1, 1)")
        x = np.linspace(self.b, 1.0, _CDF_GRID)
        h = np.asarray(self.density(x), dtype=float)
        if h.shape != x.shape:
            raise DisorderError("density must evaluate elementwise")
        if np.any(h < -1e-12):
            raise DisorderError("density takes negative values on [b, 1]")
        h = np.clip(h, 0.0, None)
        mass = float(np.trapezoid(h, x))
        if abs(mass - 1.0) > 1e-6:
            raise DisorderError(f"density mass {mass:.8f} is not 1 on [b, 1]")
        edge = max(2, _CDF_GRID // 20)
        if np.trapezoid(h[:edge], x[:edge]) <= 0.0:
            raise DisorderError("no mass near the left support endpoint")
        if np.trapezoid(h[-edge:], x[-edge:]) <= 0.0:
            raise DisorderError("no mass near the right support endpoint")
        quad = _law_quadrature(self.density, self.b)
        if abs(quad["mass"] - 1.0) > _MASS_TOL:
            raise DisorderError(
                f"density integrates to {quad['mass']!r}, not 1")
        for name, declared in (("mean_abs", self.mean_abs),
                               ("mean_deficit", self.mean_deficit)):
            if abs(declared - quad[name]) > _MOMENT_TOL:
                raise DisorderError(
                    f"declared {name}={declared} disagrees with quadrature "
                    f"{quad[name]}")
        tv = _total_variation(h, x)
        sob = quad["l1"] + tv
        if abs(self.sobolev_norm - sob) > 1e-4 * (1.0 + sob):
            raise DisorderError(
                f"declared sobolev_norm={self.sobolev_norm} disagrees with "
                f"the measured L1+TV value {sob}")
        cdf = scipy.integrate.cumulative_trapezoid(h, x, initial=0.0)
        cdf /= cdf[-1]
        object.__setattr__(self, "variance", quad["variance"])
        object.__setattr__(self, "_grid", x)
        object.__setattr__(self, "_cdf_values", cdf)

    @classmethod
    def from_density(cls, density, b: float) -> "DisorderLaw":
        """Build a law from a density alone, measuring the declared fields."""
        quad = _law_quadrature(density, b)
        x = np.linspace(b, 1.0, _CDF_GRID)
        h = np.clip(np.asarray(density(x), dtype=float), 0.0, None)
        sob = quad["l1"] + _total_variation(h, x)
        return cls(density, b, quad["mean_abs"], quad["mean_deficit"], sob)

    @classmethod
    def uniform(cls, b: float = 0.0) -> "DisorderLaw":
        """Uniform law on [b, 1] with closed-form moments."""
        if not -1.0 <= b < 1.0:
            raise DisorderError(f"support endpoint b={b} outside [-1, 1)")
        width = 1.0 - b
        if b >= 0.0:
            mean_abs = (1.0 + b) / 2.0
        else:
            mean_abs = (1.0 + b * b) / (2.0 * width)
        # L1 = 1, two endpoint jumps of height 1/width, flat interior.
        sob = 1.0 + 2.0 / width

        def dens(x):
            x = np.asarray(x, dtype=float)
            return np.where((x >= b) & (x <= 1.0), 1.0 / width, 0.0)

        return cls(dens, b, mean_abs, width / 2.0, sob)

    def cdf(self, x) -> np.ndarray:
        """Cumulative distribution, linear interpolation on the dense grid."""
        return np.interp(np.asarray(x, dtype=float), self._grid,
                         self._cdf_values, left=0.0, right=1.0)

    def ppf(self, u) -> np.ndarray:
        """Inverse CDF by interpolation; maps [0,1) into [b, 1]."""
        return np.interp(np.asarray(u, dtype=float), self._cdf_values,
                         self._grid)


def _law_quadrature(density, b: float) -> dict:
    kink = [0.0] if b < 0.0 else None

    def moment(fn):
        val, _ = scipy.integrate.quad(lambda x: fn(x) * float(density(np.asarray(x))),
                                      b, 1.0, limit=200, points=kink)
        return val

    mass = moment(lambda x: 1.0)
    mean = moment(lambda x: x)
    second = moment(lambda x: x * x)
    return {
        "mass": mass,
        "l1": mass,                  # density is non-negative
        "mean_abs": moment(abs),
        "mean_deficit": mass - mean,
        "variance": second - mean * mean,
    }


def _total_variation(h: np.ndarray, x: np.ndarray) -> float:
    # Density vanishes off [b,1], so both endpoint values are jumps.
    return float(np.abs(np.diff(h)).sum() + h[0] + h[-1])


# ---------------------------------------------------------------------------
# sampling


_LABEL_BITS = 21


def _encode_label(label) -> int:
    """Pack a (possibly negative) lattice label into one stream key.

    Zig-zag per coordinate, 21 bits each: keys depend on the absolute label
    only, so overlapping boxes and restrictions share the same draws.
    """
    key = 0
    for li in tuple(label):
        li = int(li)
        z = 2 * li if li >= 0 else -2 * li - 1
        if z >= 1 << _LABEL_BITS:
            raise DisorderError(f"cell label {label} out of keyable range")
        key = (key << _LABEL_BITS) | z
    return key


def sample_configuration(law: DisorderLaw, box: BoxGrid, seed: int
                         ) -> Configuration:
    """Draw one i.i.d. cell configuration on the box.

    Each cell gets its own counter-based stream keyed by (seed, cell index),
    so the result does not depend on evaluation order: chunked parallel
    sampling and this serial loop produce identical bits.
    """
    if not 0 <= int(seed) < 2 ** 63:
        raise DisorderError("seed must be a non-negative 63-bit integer")
    n_lat = box.spec.lateral_dim
    shape = (box.n_cells,) * n_lat
    values = np.empty(shape, dtype=float)
    flat = values.reshape(-1)
    for pos, label in enumerate(box.cell_labels()):
        key = _encode_label(label)
        bits = np.random.Philox(key=np.array([seed, key], dtype=np.uint64))
        u = np.random.Generator(bits).random()
        flat[pos] = float(law.ppf(u))
    return Configuration(box.alpha, box.n_cells, values, b=law.b)


# ---------------------------------------------------------------------------
# vector-field combination and relative-bound constants


def _order3_prime(model: PerturbationModel, s: float) -> sp.spmatrix | None:
    if model.cubic is None:
        return None
    dt = _DERIV_STEP * (1.0 + abs(s))
    hi = model.cubic_at(s + dt).matrix
    lo = model.cubic_at(s - dt).matrix
    diff = hi - lo
    if sp.issparse(diff) and diff.nnz == 0:
        return None
    return diff / (2.0 * dt)


def scaled_derivative_matrix(model: PerturbationModel, s: float) -> sp.spmatrix:
    """Cell matrix of s d/ds L(s) - L(s) = s^2 L2 + 2 s^3 L3(s) + s^4 L3'(s).

    This is the single-cell building block of the vector-field combination:
    with s = epsilon * omega_k it carries an explicit epsilon^2 factor.
    """
    m = s * s * model.order2.matrix
    if model.cubic is not None:
        m = m + 2.0 * s ** 3 * model.cubic_at(s).matrix
        prime = _order3_prime(model, s)
        if prime is not None:
            m = m + s ** 4 * prime
    return m


def _sym_norm(mat) -> float:
    dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    if dense.size == 0 or not np.any(dense):
        return 0.0
    return float(np.abs(sla.eigvalsh(dense)).max())


def _relative_norm(mat, ref) -> float:
    dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    if not np.any(dense):
        return 0.0
    vals = sla.eigvalsh(dense, ref)
    return float(np.abs(vals).max())


@dataclass(frozen=True)
class WegnerConstants:
    """Relative-bound constants entering the eigenvalue-counting estimate.

    ``d_constant`` is 8x the two-sided bound of the vector-field combination
    per coupling^2; the admissible probe energies sit below
    Lambda0 - d_constant * epsilon^p with p = 3 when the second-order part is
    non-positive (``cubic_regime``) and p = 2 otherwise.  ``c_b`` is the
    numerically maximised mass constant of the quarter-relative form bound of
    the coupling; ``c_b_analytic`` is the certified cell-wise upper bound it
    is checked against.
    """

    epsilon: float
    d_constant: float
    c_b: float
    c_b_analytic: float
    d_b: float
    cubic_regime: bool

    @property
    def regime_power(self) -> int:
        return 3 if self.cubic_regime else 2

    def regime_edge(self, lambda0: float) -> float:
        return lambda0 - self.d_constant * self.epsilon ** self.regime_power

    def __iter__(self):
        return iter((self.d_constant, self.c_b))

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "D": self.d_constant,
            "C_b": self.c_b,
            "C_b_analytic": self.c_b_analytic,
            "D_b": self.d_b,
            "cubic_regime": self.cubic_regime,
        }


def _analytic_quarter_bound(model: PerturbationModel, epsilon: float,
                            v0_sup: float) -> float:
    """Cell-wise mass constant of |(phi, L phi)| <= 1/4 (phi, H phi) + C."""
    (a1, b1), (a2, b2), (a3, b3) = model.form_bounds
    e = abs(epsilon)
    a = e * a1 + e * e * a2 + e ** 3 * a3
    bmass = e * b1 + e * e * b2 + e ** 3 * b3
    if a > 0.25:
        raise RegimeViolation(
            f"gradient form bound {a:.3g} exceeds 1/4 at coupling {epsilon}; "
            "reduce the coupling")
    return bmass + a * v0_sup


def _probe_patterns(n_cells: int, n_lat: int, b: float) -> list[np.ndarray]:
    shape = (n_cells,) * n_lat
    ones = np.ones(shape)
    pats = [ones, np.full(shape, b)]
    flat = np.arange(np.prod(shape)).reshape(shape)
    parity = np.where(flat % 2 == 0, 1.0, b)
    pats.append(parity)
    pats.append(np.where(flat % 2 == 0, b, 1.0))
    return pats


def wegner_constants(model: PerturbationModel, epsilon: float,
                     law: DisorderLaw, grid: CellGrid, *, v0=None,
                     v0_sup: float = 0.0, t_cap: float = boxes.T0_MAX
                     ) -> WegnerConstants:
    """Measure the coupling and vector-field relative-bound constants.

    The coupling constant ``c_b`` is maximised over endpoint and alternating
    cell patterns on a two-cell Neumann reference box and checked against the
    certified cell-wise value.  The vector-field constant is measured on a
    single cell: the combination acts cell-diagonally, so the box norm is the
    worst cell norm.  Unpacks as ``(D, C_b)``.
    """
    if abs(epsilon) > t_cap:
        raise RegimeViolation(
            f"coupling {epsilon} beyond the configured cap {t_cap}")
    c_b_analytic = _analytic_quarter_bound(model, epsilon, v0_sup)
    boxes._require_wrap_free(model)

    spec = grid.spec
    box = grids.build_box_grid(spec, _zero_alpha(spec), 2, grids.NEUMANN)
    h0 = grids.assemble_h0(box, v0).matrix.toarray()
    c_b = 0.0
    cache: dict[float, sp.spmatrix] = {}
    for pattern in _probe_patterns(2, spec.lateral_dim, law.b):
        xi = Configuration(box.alpha, 2, pattern, b=law.b)

        def cell_matrix(label):
            t = epsilon * xi.value(label)
            if t == 0.0:
                return None
            if t not in cache:
                cache[t] = models.coupling_matrix(model, t)
            return cache[t]

        coup = boxes.scatter_cells(box, cell_matrix).toarray()
        if not np.any(coup):
            continue
        for sign in (1.0, -1.0):
            top = float(sla.eigvalsh(sign * coup - 0.25 * h0).max())
            c_b = max(c_b, top)
    tol = 1e-9 * (1.0 + abs(c_b_analytic))
    if c_b > c_b_analytic + tol:
        raise DisorderError(
            f"measured quarter-bound constant {c_b} exceeds the certified "
            f"cell-wise value {c_b_analytic}")

    # Vector-field part.  The scaled-derivative matrix acts within each cell,
    # so its box operator norm equals the worst single-cell norm over the
    # coupling range epsilon * [b, 1].
    has_gradient_order2 = model.form_bounds[1][0] > 0.0
    d_b = 0.0
    for omega in (1.0, law.b):
        s = epsilon * omega
        mat = scaled_derivative_matrix(model, s)
        if has_gradient_order2:
            href = expansion.neumann_cell_operator(grid, v0).matrix.toarray()
            ref = href + (1.0 + v0_sup) * np.eye(href.shape[0])
            d_b = max(d_b, _relative_norm(mat, ref))
        else:
            d_b = max(d_b, _sym_norm(mat))
    d_b /= epsilon * epsilon if epsilon != 0.0 else 1.0
    return WegnerConstants(epsilon, 8.0 * d_b, c_b, c_b_analytic, d_b,
                           model.order2_nonpositive)


def _zero_alpha(spec):
    return (0,) * spec.lateral_dim


def vector_field_check(model: PerturbationModel, epsilon: float,
                       omega: Configuration, e0: float, box: BoxGrid, *,
                       v0=None, v0_sup: float = 0.0) -> float:
    """Largest Rayleigh quotient of the vector-field combination vs H - E0.

    Requires ``e0`` at or below the regime edge Lambda0 - D eps^p and asserts
    the quotient stays below 1/4; both failures raise.
    """
    law = DisorderLaw.uniform(max(omega.b, -0.999))
    consts = wegner_constants(model, epsilon, law, model.grid, v0=v0,
                              v0_sup=v0_sup)
    lam0, psi0 = expansion.ground_state_baseline(model.grid, v0)
    edge = consts.regime_edge(lam0)
    if e0 > edge + 1e-12 * (1.0 + abs(edge)):
        raise RegimeViolation(
            f"E0={e0} above the regime edge {edge} "
            f"(power {consts.regime_power})")

    closure = None
    if box.lateral_bc == grids.MEZINCESCU:
        closure = grids.RobinClosure.from_cell_ground_state(model.grid, psi0)
    h0 = grids.assemble_h0(box, v0, closure).matrix.toarray()
    cache: dict[float, sp.spmatrix] = {}

    def cell_matrix(label):
        s = epsilon * omega.value(label)
        if s not in cache:
            cache[s] = sp.csr_matrix(scaled_derivative_matrix(model, s))
        mat = cache[s]
        return mat if mat.nnz else None

    combo = boxes.scatter_cells(box, cell_matrix).toarray()
    ref = h0 - e0 * np.eye(h0.shape[0])
    ref_floor = float(sla.eigvalsh(ref, subset_by_index=[0, 0])[0])
    if ref_floor <= 0.0:
        raise RegimeViolation(
            f"H - E0 not positive on the box (bottom {ref_floor + e0})")
    if not np.any(combo):
        return 0.0
    if np.iscomplexobj(combo):
        ref = ref.astype(complex)
    top = float(sla.eigvalsh(combo, ref, subset_by_index=[combo.shape[0] - 1,
                                                          combo.shape[0] - 1])[0])
    if top > 0.25 + _QUOTIENT_SLACK:
        raise DisorderError(
            f"vector-field quotient {top} exceeds 1/4 inside the regime")
    return top


# ---------------------------------------------------------------------------
# Wilson intervals


def wilson_interval(count: int, n: int, z: float = Z99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise DisorderError("empty sample")
    phat = count / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# empirical Wegner estimate


@dataclass(frozen=True)
class WegnerReport:
    """Monte-Carlo eigenvalue-counting check on one (E, kappa) probe."""

    epsilon: float
    energy: float
    kappa: float
    regime_edge: float
    samples: int
    empirical_count: int
    empirical_upper_ci: float
    theoretical_bound: float
    constants: dict
    passed: bool
    count_half_kappa: int
    ratio: float | None
    ratio_ok: bool | None
    seed: int

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "E": self.energy,
            "kappa": self.kappa,
            "regime_edge": self.regime_edge,
            "samples": self.samples,
            "empirical_count": self.empirical_count,
            "empirical_upper_ci": self.empirical_upper_ci,
            "theoretical_bound": self.theoretical_bound,
            "constants": dict(self.constants),
            "pass": self.passed,
            "count_half_kappa": self.count_half_kappa,
            "ratio": self.ratio,
            "ratio_ok": self.ratio_ok,
            "seed": self.seed,
        }


def wegner_empirical(model: PerturbationModel, epsilon: float,
                     law: DisorderLaw, energy: float, kappa: float,
                     alpha, n_cells: int, samples: int, seed: int, *,
                     v0=None, v0_sup: float = 0.0,
                     c_weyl: float | None = None) -> WegnerReport:
    """Estimate P(dist(spectrum, E) <= kappa) and compare with the bound.

    Boxes carry the spectrally matched walls, so the unperturbed box bottom
    equals the cell minimum and the counting bound's energy denominator is
    exact.  Runs the paired kappa/2 count on the same draws for the linearity
    diagnostic.  Passes when the Wilson upper bound stays below the
    theoretical one, or when the latter is vacuous (>= 1).
    """
    if samples < 200:
        raise DisorderError("need at least 200 samples for a stable interval")
    if law.variance <= 1e-12:
        raise DegenerateLaw("law has no variance; counting statistics "
                            "degenerate")
    consts = wegner_constants(model, epsilon, law, model.grid, v0=v0,
                              v0_sup=v0_sup)
    lam0, psi0 = expansion.ground_state_baseline(model.grid, v0)
    edge = consts.regime_edge(lam0)
    tol = 1e-12 * (1.0 + abs(edge))
    if consts.d_constant > 0.0:
        if energy > edge + tol:
            raise RegimeViolation(f"E={energy} above the regime edge {edge}")
        kappa_cap = (consts.d_constant
                     * epsilon ** consts.regime_power) / 4.0
    else:
        if energy >= lam0 - tol:
            raise RegimeViolation(f"E={energy} not below the box bottom "
                                  f"{lam0}")
        kappa_cap = (lam0 - energy) / 4.0
    if kappa > kappa_cap * (1.0 + 1e-12):
        raise RegimeViolation(f"kappa={kappa} above the cap {kappa_cap}")

    closure = grids.RobinClosure.from_cell_ground_state(model.grid, psi0)
    box = grids.build_box_grid(model.grid.spec, alpha, n_cells,
                               grids.MEZINCESCU)
    count = 0
    count_half = 0
    for k in range(samples):
        omega = sample_configuration(law, box, _mix_seed(seed, k))
        op = boxes.assemble_box_operator(model, alpha, n_cells, epsilon,
                                         omega, grids.MEZINCESCU, v0,
                                         closure)
        vals = op.spectrum()
        dist = float(np.abs(vals - energy).min())
        if dist <= kappa:
            count += 1
        if dist <= kappa / 2.0:
            count_half += 1

    n_lat = model.grid.spec.lateral_dim
    volume_factor = model.grid.spec.cell_volume * n_cells ** n_lat
    q1 = (24.0 * _resolve_weyl(c_weyl, model.grid.spec) * law.sobolev_norm
          / (lam0 - energy)
          * (1.0 + (4.0 * consts.c_b + v0_sup) ** ((n_lat + 1) / 2.0)
             * volume_factor))
    bound = q1 * kappa * n_cells ** n_lat
    upper = wilson_interval(count, samples)[1]
    passed = upper <= bound or bound >= 1.0
    ratio = None
    ratio_ok = None
    if count >= 20 and count_half >= 20:
        ratio = count / count_half
        ratio_ok = 1.5 <= ratio <= 2.5
    constants = consts.to_dict()
    constants["Q_I"] = q1
    return WegnerReport(epsilon, energy, kappa, edge, samples, count, upper,
                        bound, constants, passed, count_half, ratio, ratio_ok,
                        seed)


def _resolve_weyl(c_weyl, spec) -> float:
    if c_weyl is not None:
        return float(c_weyl)
    return boxes.calibrate_weyl(spec)


def _mix_seed(seed: int, k: int) -> int:
    # Distinct per-sample keys without overlapping the per-cell counters.
    return (int(seed) * 1_000_003 + k) % (2 ** 63)


# ---------------------------------------------------------------------------
# initial-scale resolvent-decay events


@dataclass(frozen=True)
class IseReport:
    """Success statistics of the initial-scale resolvent-decay event."""

    epsilon: float
    n_cells: int
    tau: float
    case: str
    j_lower_reference: float
    j_lower: float
    j_upper: float
    endpoint_scale: float
    e_width: float
    e_width_reference: float
    threshold: float
    c2_fit: float
    c1_fit: float | None
    samples: int
    successes: int
    success_freq: float
    freq_lower_ci: float
    prob_floor_shape: float | None
    seed: int
    grid_points_mean: float

    @property
    def membership(self) -> dict:
        return {"epsilon": self.epsilon, "lower": self.j_lower,
                "upper": self.j_upper,
                "member": self.j_lower <= self.epsilon <= self.j_upper}

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "N": self.n_cells, "tau": self.tau,
            "case": self.case,
            "interval": self.membership,
            "j_lower_reference": self.j_lower_reference,
            "endpoint_scale": self.endpoint_scale,
            "e_width": self.e_width,
            "e_width_reference": self.e_width_reference,
            "threshold": self.threshold,
            "c2_fit": self.c2_fit, "c1_fit": self.c1_fit,
            "samples": self.samples, "successes": self.successes,
            "success_freq": self.success_freq,
            "freq_lower_ci": self.freq_lower_ci,
            "prob_floor_shape": self.prob_floor_shape,
            "seed": self.seed,
            "grid_points_mean": self.grid_points_mean,
        }


def coupling_interval(report: expansion.ExpansionReport, law: DisorderLaw,
                      n_cells: int, tau: float, c0: float,
                      endpoint_scale: float = 1.0
                      ) -> tuple[float, float, float]:
    """Admissible coupling interval for the initial-scale event at size N.

    Returns (reference lower endpoint, scaled lower endpoint, upper
    endpoint).  The reference endpoint carries the worst-case union-bound
    prefactor; desk-scale runs shrink it by ``endpoint_scale`` and record the
    scale in the report.
    """
    n = float(n_cells)
    if report.case == expansion.CASE_LINEAR:
        lower_ref = 8.0 / math.sqrt(abs(report.lambda1) * law.mean_abs) \
            / math.sqrt(n)
        upper = c0 * n ** (-2.0 / tau)
    elif report.case == expansion.CASE_QUADRATIC:
        lower_ref = math.sqrt(2.0) / math.sqrt(report.eta * law.mean_abs) \
            / n ** 0.25
        upper = c0 * n ** (-4.0 / tau)
    else:
        raise expansion.ExpansionError(
            "coupling interval needs a linear or quadratic splitting case")
    return lower_ref, endpoint_scale * lower_ref, upper


def _certified_energy_grid(e_top: float, width: float, min_sigma: float,
                           threshold: float) -> np.ndarray | None:
    """Ascending energy grid reaching the tail-certificate point.

    Below the last grid point the raw resolvent bound 1/(min_sigma - E)
    stays under the threshold, so no further checks are needed there.
    Returns None when the window top touches the spectrum (instant failure).
    """
    if e_top >= min_sigma - 1e-12:
        return None
    fine = np.linspace(e_top - width, e_top, 17)
    e_tail = min_sigma - 1.0 / threshold if threshold > 0 else -np.inf
    pts = [fine[0]]
    e = fine[0]
    while e > e_tail:
        gap = min_sigma - e
        step = max(width / 16.0, 0.5 * threshold * gap * gap)
        e = e - step
        pts.append(e)
    return np.concatenate((np.array(pts[::-1]), fine[1:]))


def _event_holds(vals: np.ndarray, vecs: np.ndarray, idx_a: np.ndarray,
                 idx_b: np.ndarray, e_top: float, width: float,
                 threshold: float) -> tuple[bool, int]:
    """Certified check of block(E) <= threshold for every E <= e_top.

    Grid-point norms must clear the threshold and so must the interval
    certificates max(endpoints) + half-step times the Lipschitz constant
    1 / gap^2 of the resolvent on that interval.
    """
    min_sigma = float(vals[0])
    grid = _certified_energy_grid(e_top, width, min_sigma, threshold)
    if grid is None:
        return False, 0
    norms = _block_norms(vals, vecs, idx_a, idx_b, grid)
    if not np.all(norms <= threshold):
        return False, len(grid)
    gaps_hi = min_sigma - grid[1:]
    if np.any(gaps_hi <= 0.0):
        return False, len(grid)
    cert = (np.maximum(norms[:-1], norms[1:])
            + 0.5 * np.diff(grid) / gaps_hi ** 2)
    return bool(np.all(cert <= threshold)), len(grid)


def resolvent_decay_event(op: boxes.FiniteVolumeOperator, e_top: float,
                          width: float, threshold: float
                          ) -> tuple[bool, int]:
    """Certified decay check between the two extreme cells of a box.

    True when the resolvent block stays below the threshold for every
    energy up to ``e_top``, including the Lipschitz and tail certificates.
    Returns the grid size actually inspected alongside the verdict.
    """
    box = op.grid
    first = boxes.nodes_of_labels(box, [box.cell_labels()[0]])
    last = boxes.nodes_of_labels(box, [box.cell_labels()[-1]])
    vals, vecs = sla.eigh(op.operator.matrix.toarray())
    return _event_holds(vals, vecs, first, last, e_top, width, threshold)


def _block_norms(vals: np.ndarray, vecs: np.ndarray, idx_a: np.ndarray,
                 idx_b: np.ndarray, energies: np.ndarray) -> np.ndarray:
    va = vecs[idx_a, :]
    vb = vecs[idx_b, :]
    out = np.empty(energies.shape, dtype=float)
    for i, e in enumerate(energies):
        gaps = vals - e
        if np.abs(gaps).min() < 1e-13:
            out[i] = np.inf
            continue
        block = (va / gaps) @ vb.conj().T
        out[i] = np.linalg.norm(block, 2)
    return out


def ise_empirical(model: PerturbationModel, epsilon: float, law: DisorderLaw,
                  n_cells: int, tau: float | None, samples: int, seed: int, *,
                  c0: float, v0=None, alpha=None,
                  endpoint_scale: float = 1.0,
                  e_width: float | None = None,
                  c2_scale: float = 1.0) -> IseReport:
    """Success frequency of the resolvent-decay event on random boxes.

    Event per sample: for every energy up to the cell minimum plus the
    window width, the resolvent block between the two extreme cells stays
    below 2 sqrt(N) exp(-c2 dist / sqrt(N)).  Energies form a certified
    grid: 16 points per window width near the top, Lipschitz-certified
    steps below, and a tail bound past the last point.  c2 comes from the
    deterministic all-ones decay profile; c1 is fitted from the observed
    failure rate.
    """
    rep = expansion.expand(model, v0, law.b)
    if tau is None:
        tau = 5.0 if rep.case == expansion.CASE_LINEAR else 17.0
    lower_ref, lower, upper = coupling_interval(rep, law, n_cells, tau, c0,
                                                endpoint_scale)
    if not lower <= epsilon <= upper:
        raise RegimeViolation(
            f"coupling {epsilon} outside the admissible interval "
            f"[{lower:.6g}, {upper:.6g}] at N={n_cells}")

    spec = model.grid.spec
    if alpha is None:
        alpha = _zero_alpha(spec)
    if spec.lateral_dim != 1:
        raise DisorderError("decay events are implemented for one lateral "
                            "dimension")
    _, lam_eps = expansion.matched_closure(model, v0, epsilon)
    width_ref = 1.0 / (2.0 * math.sqrt(n_cells))
    width = width_ref if e_width is None else float(e_width)
    e_top = lam_eps + width

    box = grids.build_box_grid(spec, alpha, n_cells, grids.DIRICHLET)
    first = boxes.nodes_of_labels(box, [box.cell_labels()[0]])
    last = boxes.nodes_of_labels(box, [box.cell_labels()[-1]])
    cell_len = spec.cell_lengths[0]
    dist = (n_cells - 2) * cell_len
    if dist <= 0:
        raise DisorderError("need at least three cells between the blocks")

    # Deterministic all-ones profile pins the decay rate per unit distance.
    ones = Configuration.ones(alpha, n_cells, law.b)
    det = boxes.assemble_box_operator(model, alpha, n_cells, epsilon, ones,
                                      grids.DIRICHLET, v0)
    det_bottom = float(det.spectrum()[0])
    fit_energy = min(lam_eps - width, det_bottom - width)
    profile = boxes.combes_thomas_profile(det, fit_energy)
    c2 = c2_scale * profile.rate * math.sqrt(n_cells)
    threshold = 2.0 * math.sqrt(n_cells) * math.exp(-c2 * dist
                                                    / math.sqrt(n_cells))

    successes = 0
    grid_sizes = []
    for k in range(samples):
        omega = sample_configuration(law, box, _mix_seed(seed, k))
        op = boxes.assemble_box_operator(model, alpha, n_cells, epsilon,
                                         omega, grids.DIRICHLET, v0)
        vals, vecs = sla.eigh(op.operator.matrix.toarray())
        ok, n_grid = _event_holds(vals, vecs, first, last, e_top, width,
                                  threshold)
        grid_sizes.append(n_grid)
        if ok:
            successes += 1

    freq = successes / samples
    lo_ci, _ = wilson_interval(successes, samples)
    fail_upper = wilson_interval(samples - successes, samples)[1]
    n_pow = float(n_cells) ** (1.0 - 1.0 / tau)
    c1 = None
    floor = None
    if fail_upper > 0.0:
        # Invert fail <= N^{n(1-1/tau)} exp(-c1 N^{n/tau}) for c1.
        c1 = -math.log(fail_upper / n_pow) / float(n_cells) ** (1.0 / tau)
        if c1 > 0:
            floor = 1.0 - n_pow * math.exp(-c1 * float(n_cells)
                                           ** (1.0 / tau))
    return IseReport(epsilon, n_cells, float(tau), rep.case, lower_ref,
                     lower, upper, endpoint_scale, width, width_ref,
                     threshold, c2, c1, samples, successes, freq, lo_ci,
                     floor, seed, float(np.mean(grid_sizes)))


# ---------------------------------------------------------------------------
# localization window arithmetic


@dataclass(frozen=True)
class LocalizationWindow:
    """Energy window where the counting and decay regimes overlap."""

    lower: float
    upper: float
    nonempty: bool
    case: str
    width: float
    regime_edge: float
    crossover: float

    def __iter__(self):
        return iter(((self.lower, self.upper), self.nonempty))

    def to_dict(self) -> dict:
        return {
            "interval": [self.lower, self.upper],
            "nonempty": self.nonempty,
            "case": self.case,
            "width": self.width,
            "regime_edge": self.regime_edge,
            "crossover": self.crossover,
        }


def localization_window(model: PerturbationModel, epsilon: float,
                        constants: Mapping, *, v0=None, b: float = 0.0
                        ) -> LocalizationWindow:
    """Intersect the expansion window with the vector-field regime.

    ``constants`` carries ``D`` (vector-field constant), the law's
    ``mean_abs`` moment, and optionally ``cubic_regime``.  The window starts
    at the cell minimum; its certified length comes from the decay-event
    endpoint constants per splitting case.  The nonempty flag is the
    sufficient half-gap arithmetic, conservative near the crossover.
    """
    rep = expansion.expand(model, v0, b)
    if rep.case == expansion.CASE_OTHER:
        raise expansion.ExpansionError(
            "window arithmetic needs a linear or quadratic splitting case")
    d_const = float(constants["D"])
    mean_abs = float(constants["mean_abs"])
    power = 3 if constants.get("cubic_regime") else 2
    _, lam_eps = expansion.matched_closure(model, v0, epsilon)
    edge = rep.lambda0 - d_const * epsilon ** power

    if rep.case == expansion.CASE_LINEAR:
        # Tight endpoint constant 8 / sqrt(|Lambda1| E|omega|) caps the
        # certified width at epsilon / (4 c1~).
        c1t = 8.0 / math.sqrt(abs(rep.lambda1) * mean_abs)
        width = epsilon / (4.0 * c1t)
        lead_half = abs(rep.lambda1) * epsilon / 2.0
        if d_const == 0.0:
            crossover = math.inf
        elif power == 2:
            crossover = abs(rep.lambda1) / (2.0 * d_const)
        else:
            crossover = math.sqrt(abs(rep.lambda1) / (2.0 * d_const))
    else:
        c2t = math.sqrt(2.0) / math.sqrt(rep.eta * mean_abs)
        width = epsilon ** 2 / (8.0 * c2t * c2t)
        lead_half = abs(rep.lambda2) * epsilon ** 2 / 2.0
        if d_const == 0.0:
            crossover = math.inf
        elif power == 3:
            crossover = abs(rep.lambda2) / (2.0 * d_const)
        else:
            crossover = math.inf if abs(rep.lambda2) / 2.0 > d_const else 0.0
    nonempty = lead_half > d_const * epsilon ** power
    upper = min(edge, lam_eps + width)
    return LocalizationWindow(lam_eps, upper, nonempty, rep.case, width,
                              edge, crossover)


# ---------------------------------------------------------------------------
# kinetic-rate feasibility


@dataclass(frozen=True)
class HkReport:
    """Feasibility of the disorder condition under a kinetic decay rate."""

    rate_kind: str
    rate_constant: float
    sup_a_sq: float
    feasible: bool
    eps_upper: float | None
    boundary: bool
    fixed_window_empty: bool
    note: str

    def to_dict(self) -> dict:
        return {
            "rate_kind": self.rate_kind,
            "rate_constant": self.rate_constant,
            "sup_A_sq": self.sup_a_sq,
            "feasible": self.feasible,
            "eps_upper": self.eps_upper,
            "boundary": self.boundary,
            "fixed_window_empty": self.fixed_window_empty,
            "note": self.note,
        }


def hk_feasibility(rate_kind: str, rate_constant: float, sup_a_sq: float
                   ) -> HkReport:
    """Check the magnetic smallness condition against a kinetic decay rate.

    Linear rates leave a nonempty coupling interval (0, c/(4 sup|A|^2)];
    quadratic rates are coupling-independent and feasible only when
    4 sup|A|^2 <= c.  Either way, reading the underlying bound over a fixed
    coupling-independent interval would empty the window, which the report
    flags as a diagnostic.
    """
    if rate_kind not in ("linear", "quadratic"):
        raise DisorderError(f"unknown rate kind {rate_kind!r}")
    if rate_constant <= 0.0:
        raise DisorderError("rate constant must be positive")
    if sup_a_sq < 0.0:
        raise DisorderError("sup |A|^2 cannot be negative")
    note = ("the window shrinks with the coupling; a coupling-independent "
            "interval yields an empty window in the weak-coupling limit")
    if rate_kind == "linear":
        if sup_a_sq == 0.0:
            return HkReport(rate_kind, rate_constant, sup_a_sq, True,
                            math.inf, False, True, note)
        eps_upper = rate_constant / (4.0 * sup_a_sq)
        return HkReport(rate_kind, rate_constant, sup_a_sq, True, eps_upper,
                        False, True, note)
    lhs = 4.0 * sup_a_sq
    tol = 1e-12 * (1.0 + abs(rate_constant))
    feasible = lhs <= rate_constant + tol
    boundary = abs(lhs - rate_constant) <= tol
    return HkReport(rate_kind, rate_constant, sup_a_sq, feasible, None,
                    boundary, True, note)
